use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::stats::CorrelationReport;
use crate::experiment::sweep::{ExperimentRecord, Status};
use crate::iic::{IicBreakdown, V0Method};

pub const RECORD_COLUMNS: [&str; 17] = [
    "d",
    "p",
    "iic_total",
    "reg_term",
    "sharpness_term",
    "ambient_constant",
    "tau_star",
    "log_det_gram",
    "sum_log_abs_theta",
    "log_v0",
    "v0_method",
    "support_size",
    "certificate_margin",
    "train_mse",
    "test_mse",
    "status",
    "failure_reason",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` selects JSON, anything else CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Csv,
        }
    }
}

/// 17 significant digits, enough to round-trip every `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

enum Cell {
    Int(usize),
    Float(f64),
    Text(String),
    Empty,
}

fn cells(r: &ExperimentRecord) -> Vec<Cell> {
    let f = |v: Option<f64>| v.map_or(Cell::Empty, Cell::Float);
    let b = r.iic.as_ref();
    vec![
        Cell::Int(r.d),
        Cell::Float(r.p),
        f(b.map(|b| b.total)),
        f(b.map(|b| b.reg_term)),
        f(b.map(|b| b.sharpness_term)),
        f(b.map(|b| b.ambient_constant)),
        f(b.map(|b| b.tau_star)),
        f(b.map(|b| b.log_det_gram)),
        f(b.and_then(|b| b.sum_log_abs_theta)),
        f(b.and_then(|b| b.log_v0)),
        b.and_then(|b| b.v0_method).map_or(Cell::Empty, |m| Cell::Text(m.as_str().into())),
        r.support_size.map_or(Cell::Empty, Cell::Int),
        f(r.certificate_margin),
        f(r.train_mse),
        f(r.test_mse),
        Cell::Text(r.status.as_str().into()),
        r.failure_reason.clone().map_or(Cell::Empty, Cell::Text),
    ]
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

pub fn write_records_csv<W: Write>(records: &[ExperimentRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_COLUMNS).map_err(csv_err)?;
    for r in records {
        let row: Vec<String> = cells(r)
            .into_iter()
            .map(|c| match c {
                Cell::Int(v) => v.to_string(),
                Cell::Float(v) => fmt_f64(v),
                Cell::Text(s) => s,
                Cell::Empty => String::new(),
            })
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn json_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// JSON array of objects keyed by the CSV column names; absent values are `null`.
pub fn write_records_json<W: Write>(records: &[ExperimentRecord], mut out: W) -> Result<()> {
    out.write_all(b"[")?;
    for (i, r) in records.iter().enumerate() {
        out.write_all(if i == 0 { b"\n  {" } else { b",\n  {" })?;
        for (k, (name, c)) in RECORD_COLUMNS.iter().zip(cells(r)).enumerate() {
            let v = match c {
                Cell::Int(v) => v.to_string(),
                Cell::Float(v) if v.is_finite() => fmt_f64(v),
                Cell::Float(_) | Cell::Empty => "null".into(),
                Cell::Text(s) => json_string(&s),
            };
            write!(out, "{}\"{name}\": {v}", if k == 0 { "" } else { ", " })?;
        }
        out.write_all(b"}")?;
    }
    out.write_all(if records.is_empty() { b"]\n" } else { b"\n]\n" })?;
    Ok(())
}

pub fn emit_records(records: &[ExperimentRecord], format: Format, path: &Path) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    match format {
        Format::Csv => write_records_csv(records, file),
        Format::Json => write_records_json(records, file),
    }
}

pub fn emit_reports(reports: &[CorrelationReport], format: Format, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut file, reports).map_err(|e| Error::Io(e.to_string()))?;
            file.write_all(b"\n")?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(file);
            w.write_record(["pair", "rho", "ci_low", "ci_high", "n_points", "n_resamples", "skipped", "seed", "method"])
                .map_err(csv_err)?;
            for r in reports {
                w.write_record([
                    r.pair.clone(),
                    fmt_f64(r.rho),
                    fmt_f64(r.ci_low),
                    fmt_f64(r.ci_high),
                    r.n_points.to_string(),
                    r.n_resamples.to_string(),
                    r.skipped.to_string(),
                    r.seed.to_string(),
                    r.method.to_string(),
                ])
                .map_err(csv_err)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

fn parse_opt<T: std::str::FromStr>(tok: &str, row: usize, column: &str) -> Result<Option<T>> {
    if tok.is_empty() {
        return Ok(None);
    }
    tok.parse().map(Some).map_err(|_| Error::ParseError { row, column: column.into(), token: tok.into() })
}

fn required<T>(v: Option<T>, row: usize, column: &str) -> Result<T> {
    v.ok_or_else(|| Error::ParseError { row, column: column.into(), token: String::new() })
}

/// Reads a record CSV written by [`write_records_csv`]. `wall_time` is not stored and
/// comes back as zero.
pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != RECORD_COLUMNS {
        return Err(Error::BadSize(format!("unexpected record header: {}", header.join(","))));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 1;
        let t = |k: usize| rec.get(k).unwrap_or("");
        let fl = |k: usize| parse_opt::<f64>(t(k), row, RECORD_COLUMNS[k]);
        let d = required(parse_opt::<usize>(t(0), row, "d")?, row, "d")?;
        let p = required(fl(1)?, row, "p")?;
        let status = match t(15) {
            "ok" => Status::Ok,
            "error" => Status::Error,
            other => return Err(Error::ParseError { row, column: "status".into(), token: other.into() }),
        };
        let v0_method = match t(10) {
            "" => None,
            s => Some(V0Method::parse(s).ok_or_else(|| Error::ParseError {
                row,
                column: "v0_method".into(),
                token: s.into(),
            })?),
        };
        let iic = match fl(2)? {
            None => None,
            Some(total) => Some(IicBreakdown {
                p,
                total,
                reg_term: required(fl(3)?, row, "reg_term")?,
                sharpness_term: required(fl(4)?, row, "sharpness_term")?,
                ambient_constant: required(fl(5)?, row, "ambient_constant")?,
                tau_star: required(fl(6)?, row, "tau_star")?,
                log_det_gram: required(fl(7)?, row, "log_det_gram")?,
                sum_log_abs_theta: fl(8)?,
                log_v0: fl(9)?,
                v0_method,
            }),
        };
        out.push(ExperimentRecord {
            d,
            p,
            iic,
            support_size: parse_opt(t(11), row, "support_size")?,
            certificate_margin: fl(12)?,
            train_mse: fl(13)?,
            test_mse: fl(14)?,
            status,
            failure_reason: Some(t(16).to_string()).filter(|s| !s.is_empty()),
            wall_time: 0.0,
        });
    }
    Ok(out)
}

/// Paired values of two numeric columns from any CSV with a header. Rows where either
/// cell is empty are skipped, as are rows whose `status` column (if any) is not `ok`.
pub fn read_column_pair(path: &Path, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let find = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| Error::TargetMissing(name.into()));
    let (ix, iy) = (find(x)?, find(y)?);
    let status = header.iter().position(|h| h == "status");
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if status.is_some_and(|s| rec.get(s) != Some("ok")) {
            continue;
        }
        let (tx, ty) = (rec.get(ix).unwrap_or(""), rec.get(iy).unwrap_or(""));
        if let (Some(u), Some(v)) = (parse_opt::<f64>(tx, i + 1, x)?, parse_opt::<f64>(ty, i + 1, y)?) {
            a.push(u);
            b.push(v);
        }
    }
    Ok((a, b))
}
