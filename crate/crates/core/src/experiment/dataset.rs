use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::features::standard_normals;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub x0: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Names of the columns of `x0`.
    pub columns: Vec<String>,
}

impl Dataset {
    pub fn new(name: &str, x0: DMatrix<f64>, y: DVector<f64>, columns: Vec<String>) -> Result<Self> {
        if x0.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x0.nrows(), got: y.len() });
        }
        if columns.len() != x0.ncols() {
            return Err(Error::DimensionMismatch { expected: x0.ncols(), got: columns.len() });
        }
        if y.len() < 3 {
            return Err(Error::TooFew { needed: 3, got: y.len() });
        }
        if x0.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Dataset { name: name.to_string(), x0, y, columns })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn subset(&self, rows: &[usize], suffix: &str) -> Dataset {
        Dataset {
            name: format!("{}{suffix}", self.name),
            x0: self.x0.select_rows(rows),
            y: DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i])),
            columns: self.columns.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IngestOptions {
    /// Target column; the last column when `None`.
    pub target: Option<String>,
    /// Drop unparseable rows (reported) instead of failing on the first one.
    pub skip_bad_rows: bool,
}

/// A rejected cell. `row` counts data rows from 1, excluding the header.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    pub row: usize,
    pub column: String,
    pub token: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejected: Vec<RowIssue>,
}

pub fn ingest_csv(path: &Path, opts: &IngestOptions) -> Result<Ingested> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.display().to_string()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)
        .map_err(|e| Error::Io(e.to_string()))?;
    let header: Vec<String> = rdr.headers().map_err(|e| Error::Io(e.to_string()))?.iter().map(String::from).collect();
    if header.is_empty() {
        return Err(Error::BadSize("csv has no columns".into()));
    }
    let target = match &opts.target {
        Some(t) => header.iter().position(|h| h == t).ok_or_else(|| Error::TargetMissing(t.clone()))?,
        None => header.len() - 1,
    };
    let features: Vec<usize> = (0..header.len()).filter(|&j| j != target).collect();

    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut rejected = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let row = r + 1;
        let mut vals = Vec::with_capacity(header.len());
        let mut bad = None;
        for (j, name) in header.iter().enumerate() {
            let tok = rec.get(j).unwrap_or("");
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => vals.push(v),
                _ => {
                    bad = Some(RowIssue { row, column: name.clone(), token: tok.to_string() });
                    break;
                }
            }
        }
        match bad {
            Some(issue) if opts.skip_bad_rows => rejected.push(issue),
            Some(issue) => {
                return Err(Error::ParseError { row: issue.row, column: issue.column, token: issue.token })
            }
            None => {
                xs.extend(features.iter().map(|&j| vals[j]));
                ys.push(vals[target]);
            }
        }
    }
    let n = ys.len();
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dataset = Dataset::new(
        &name,
        DMatrix::from_row_slice(n, features.len(), &xs),
        DVector::from_vec(ys),
        features.iter().map(|&j| header[j].clone()).collect(),
    )?;
    Ok(Ingested { dataset, rejected })
}

/// Seeded uniform permutation; the first `n_train` rows train, the rest test.
pub fn split(dataset: &Dataset, n_train: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let total = dataset.len();
    if n_train == 0 || n_train >= total {
        return Err(Error::BadSize(format!("n_train must lie in [1, {}), got {n_train}", total)));
    }
    let perm = permutation(total, seed);
    Ok((dataset.subset(&perm[..n_train], "/train"), dataset.subset(&perm[n_train..], "/test")))
}

pub(crate) fn permutation(len: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    perm
}

pub fn mse(pred: &DVector<f64>, actual: &DVector<f64>) -> Result<f64> {
    if pred.len() != actual.len() {
        return Err(Error::DimensionMismatch { expected: actual.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::TooFew { needed: 1, got: 0 });
    }
    Ok((pred - actual).norm_squared() / pred.len() as f64)
}

/// `x ~ N(0, I_d0)` and `y = sin(3 x_1) + noise * eps`.
pub fn synthetic_sine(rows: usize, d0: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if d0 == 0 {
        return Err(Error::BadSize("d0 must be positive".into()));
    }
    let mut x0 = DMatrix::<f64>::zeros(rows, d0);
    let mut y = DVector::<f64>::zeros(rows);
    for i in 0..rows {
        let g = standard_normals(seed, i as u64, d0 + 1);
        for j in 0..d0 {
            x0[(i, j)] = g[j];
        }
        y[i] = (3.0 * g[0]).sin() + noise * g[d0];
    }
    let columns = (1..=d0).map(|j| format!("x{j}")).collect();
    Dataset::new("synthetic_sine", x0, y, columns)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(".csv").tempfile().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn ingest_basic() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let opts = IngestOptions { target: Some("y".into()), ..Default::default() };
        let ds = ingest_csv(f.path(), &opts).unwrap().dataset;
        assert_eq!(ds.x0, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 4.0, 5.0, 7.0, 8.0]));
        assert_eq!(ds.y, DVector::from_vec(vec![3.0, 6.0, 9.0]));
        assert_eq!(ds.columns, vec!["a", "b"]);
        // last column is the default target
        assert_eq!(ingest_csv(f.path(), &IngestOptions::default()).unwrap().dataset, ds);
    }

    #[test]
    fn ingest_target_in_middle() {
        let f = write_tmp("a,y,b\n1,2,3\n4,5,6\n7,8,9\n");
        let opts = IngestOptions { target: Some("y".into()), ..Default::default() };
        let ds = ingest_csv(f.path(), &opts).unwrap().dataset;
        assert_eq!(ds.y, DVector::from_vec(vec![2.0, 5.0, 8.0]));
        assert_eq!(ds.columns, vec!["a", "b"]);
    }

    #[test]
    fn ingest_rejects_na() {
        let f = write_tmp("a,b,y\n1,2,3\n4,NA,6\n7,8,9\n");
        let err = ingest_csv(f.path(), &IngestOptions::default()).unwrap_err();
        assert_eq!(err, Error::ParseError { row: 2, column: "b".into(), token: "NA".into() });
    }

    #[test]
    fn ingest_skip_mode_reports_rows() {
        let f = write_tmp("a,y\n1,2\n,3\n4,5\n6,7\nx,1\n");
        let opts = IngestOptions { skip_bad_rows: true, ..Default::default() };
        let out = ingest_csv(f.path(), &opts).unwrap();
        assert_eq!(out.dataset.len(), 3);
        assert_eq!(out.rejected.iter().map(|r| r.row).collect::<Vec<_>>(), vec![2, 5]);
        assert_eq!(out.rejected[0].token, "");
    }

    #[test]
    fn ingest_errors() {
        let f = write_tmp("a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
        let opts = IngestOptions { target: Some("z".into()), ..Default::default() };
        assert_eq!(ingest_csv(f.path(), &opts).unwrap_err(), Error::TargetMissing("z".into()));
        let missing = Path::new("/nonexistent/data.csv");
        assert!(matches!(ingest_csv(missing, &IngestOptions::default()), Err(Error::FileNotFound(_))));
        let short = write_tmp("a,y\n1,2\n3,4\n");
        assert!(matches!(ingest_csv(short.path(), &IngestOptions::default()), Err(Error::TooFew { .. })));
    }

    fn toy(n: usize) -> Dataset {
        let x0 = DMatrix::from_fn(n, 1, |i, _| i as f64);
        let y = DVector::from_fn(n, |i, _| 10.0 * i as f64);
        Dataset::new("toy", x0, y, vec!["x".into()]).unwrap()
    }

    #[test]
    fn split_golden_permutation() {
        // pinned output of the seeded shuffle
        assert_eq!(permutation(8, 42), GOLDEN_42);
        let (tr, te) = split(&toy(8), 3, 42).unwrap();
        let want: Vec<f64> = GOLDEN_42[..3].iter().map(|&i| i as f64).collect();
        assert_eq!(tr.x0.column(0).iter().copied().collect::<Vec<_>>(), want);
        assert_eq!(te.len(), 5);
    }

    const GOLDEN_42: [usize; 8] = [4, 7, 3, 5, 6, 1, 0, 2];

    #[test]
    fn split_partitions_rows() {
        let ds = toy(11);
        let (tr, te) = split(&ds, 4, 7).unwrap();
        let mut all: Vec<f64> = tr.x0.iter().chain(te.x0.iter()).copied().collect();
        all.sort_by(f64::total_cmp);
        assert_eq!(all, (0..11).map(|i| i as f64).collect::<Vec<_>>());
        // rows keep their targets
        for i in 0..tr.len() {
            assert_eq!(tr.y[i], 10.0 * tr.x0[(i, 0)]);
        }
        assert_eq!(split(&ds, 4, 7).unwrap(), (tr, te));
    }

    #[test]
    fn split_bad_size() {
        assert!(matches!(split(&toy(5), 5, 0), Err(Error::BadSize(_))));
        assert!(matches!(split(&toy(5), 0, 0), Err(Error::BadSize(_))));
    }

    #[test]
    fn mse_examples() {
        let a = DVector::from_vec(vec![0.5, -1.0, 3.0]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a.add_scalar(1.0), &a).unwrap(), 1.0);
        let p = DVector::from_vec(vec![0.0, 2.0]);
        let q = DVector::from_vec(vec![1.0, 1.0]);
        assert_eq!(mse(&p, &q).unwrap(), 1.0);
        assert!(mse(&p, &a).is_err());
    }

    #[test]
    fn synthetic_is_reproducible() {
        let a = synthetic_sine(50, 3, 0.1, 1).unwrap();
        assert_eq!(a, synthetic_sine(50, 3, 0.1, 1).unwrap());
        assert_ne!(a.y, synthetic_sine(50, 3, 0.1, 2).unwrap().y);
        let clean = synthetic_sine(50, 3, 0.0, 1).unwrap();
        for i in 0..50 {
            assert!((clean.y[i] - (3.0 * clean.x0[(i, 0)]).sin()).abs() < 1e-15);
        }
    }
}
