use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use serde_json::json;

use iic_lab::experiment::{
    bootstrap_ci, emit_records, ingest_csv, read_column_pair, run_sweep, split, synthetic_sine, Dataset, Format,
    IngestOptions, SweepConfig,
};
use iic_lab::iic::{iic_ridge, iic_smooth, iic_sparse, v0_closed, v0_monte_carlo, MC_DIM_LIMIT};
use iic_lab::interpolate::{min_norm, SolverOptions};
use iic_lab::linalg::{validate_design, DesignMatrix};
use iic_lab::oracle::{
    dual_prior_numeric, dual_prior_residue_n1, dual_prior_ridge_asymptotic, dual_prior_smooth_asymptotic,
    dual_prior_sparse_asymptotic, free_energy_numeric_min, log_grid, Budget, NumericMethod,
};
use iic_lab::{Error, Result};

#[derive(Parser)]
#[command(name = "iic-lab", version, about = "Minimum-norm interpolators and the interpolating information criterion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Data source shared by the single-instance commands.
#[derive(clap::Args)]
struct DataArgs {
    /// CSV with a header row.
    #[arg(long)]
    csv: PathBuf,
    /// Target column (defaults to the last column).
    #[arg(long)]
    target: Option<String>,
    /// Use only a seeded random subset of this many rows.
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum V0Choice {
    Closed,
    Mc,
    Auto,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OracleMode {
    Numeric,
    Ridge,
    Smooth,
    Sparse,
    Residue,
    TauMin,
}

#[derive(Clone, Copy, ValueEnum)]
enum QuadChoice {
    Quadrature,
    Mc,
    Auto,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the minimum l_p-norm interpolator.
    Solve {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        p: f64,
    },
    /// Evaluate the criterion and its breakdown.
    Iic {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        p: f64,
        /// Volume strategy for p = 1.
        #[arg(long, value_enum, default_value = "auto")]
        v0: V0Choice,
        #[arg(long, default_value_t = 1_000_000)]
        mc_samples: usize,
    },
    /// Dual prior by direct integration or an asymptotic formula, or the tau check.
    Oracle {
        #[arg(long, value_enum)]
        mode: OracleMode,
        #[arg(long)]
        p: f64,
        /// Prior scale (not used by tau-min).
        #[arg(long)]
        tau: Option<f64>,
        /// Design rows: entries separated by ',' and rows by ';', e.g. "2,1".
        #[arg(long, conflicts_with = "csv")]
        x: Option<String>,
        /// Targets separated by ','.
        #[arg(long, requires = "x")]
        y: Option<String>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        target: Option<String>,
        #[arg(long, value_enum, default_value = "auto")]
        method: QuadChoice,
        /// Largest accepted absolute error in log units.
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
        #[arg(long, default_value_t = 200_000)]
        mc_samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// tau-min grid: lower end, upper end, point count.
        #[arg(long, default_value_t = 1e-4)]
        tau_lo: f64,
        #[arg(long, default_value_t = 1e4)]
        tau_hi: f64,
        #[arg(long, default_value_t = 161)]
        grid_points: usize,
    },
    /// Run a dimension sweep described by a TOML file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output path; a `.json` extension selects JSON.
        #[arg(long)]
        out: PathBuf,
    },
    /// Spearman correlation of two columns with a bootstrap interval.
    Corr {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        #[arg(long, default_value_t = 1000)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the synthetic sine dataset as CSV.
    Synth {
        #[arg(long, default_value_t = 500)]
        rows: usize,
        #[arg(long, default_value_t = 3)]
        d0: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Sweep TOML: the sweep settings plus where the data comes from.
/// Unknown keys fall through to `SweepConfig`, which rejects them.
#[derive(serde::Deserialize)]
struct SweepFile {
    data: Option<PathBuf>,
    target: Option<String>,
    #[serde(default)]
    skip_bad_rows: bool,
    synthetic_rows: Option<usize>,
    #[serde(default = "default_synth_d0")]
    synthetic_d0: usize,
    #[serde(default = "default_synth_noise")]
    synthetic_noise: f64,
    #[serde(default)]
    synthetic_seed: u64,
    #[serde(flatten)]
    sweep: toml::Table,
}

fn default_synth_d0() -> usize {
    3
}
fn default_synth_noise() -> f64 {
    0.1
}

fn load(data: &DataArgs) -> Result<(DesignMatrix, DVector<f64>)> {
    let opts = IngestOptions { target: data.target.clone(), skip_bad_rows: false };
    let mut ds = ingest_csv(&data.csv, &opts)?.dataset;
    if let Some(n) = data.n_train {
        ds = split(&ds, n, data.seed)?.0;
    }
    Ok((validate_design(ds.x0)?, ds.y))
}

fn parse_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| Error::InvalidArgument(format!("bad {what} entry '{t}'"))))
        .collect()
}

fn oracle_instance(x: &Option<String>, y: &Option<String>, csv: &Option<PathBuf>, target: &Option<String>) -> Result<(DesignMatrix, DVector<f64>)> {
    if let Some(path) = csv {
        let opts = IngestOptions { target: target.clone(), skip_bad_rows: false };
        let ds = ingest_csv(path, &opts)?.dataset;
        return Ok((validate_design(ds.x0)?, ds.y));
    }
    let (Some(x), Some(y)) = (x, y) else {
        return Err(Error::InvalidArgument("oracle needs --x and --y, or --csv".into()));
    };
    let rows: Vec<Vec<f64>> = x.split(';').map(|r| parse_list(r, "x")).collect::<Result<_>>()?;
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("rows of --x have different lengths".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let yv = parse_list(y, "y")?;
    if yv.len() != rows.len() {
        return Err(Error::DimensionMismatch { expected: rows.len(), got: yv.len() });
    }
    Ok((validate_design(DMatrix::from_row_slice(rows.len(), d, &flat))?, DVector::from_vec(yv)))
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Io(e.to_string()))?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        // a closed pipe (e.g. `| head`) is not an error
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io(e.to_string())),
        _ => Ok(()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Solve { data, p } => {
            let (design, y) = load(&data)?;
            let opts = SolverOptions { seed: data.seed, ..SolverOptions::default() };
            let it = min_norm(&design, &y, p, &opts)?;
            print_json(&json!({
                "p": it.p,
                "n": design.n(),
                "d": design.d(),
                "theta": it.theta.as_slice(),
                "norm_p_to_p": it.norm_p_to_p(),
                "support": it.support,
                "signs": it.signs,
                "residual": it.residual,
                "stationarity": it.stationarity,
                "iterations": it.iterations,
                "certificate": it.certificate,
            }))
        }
        Command::Iic { data, p, v0, mc_samples } => {
            let (design, y) = load(&data)?;
            let opts = SolverOptions { seed: data.seed, ..SolverOptions::default() };
            let it = min_norm(&design, &y, p, &opts)?;
            let out = if p == 1.0 {
                let mc = || v0_monte_carlo(&design, &it.support, &it.signs, mc_samples, data.seed, MC_DIM_LIMIT);
                let vol = match v0 {
                    V0Choice::Closed => v0_closed(&design, &it.support, &it.signs)?,
                    V0Choice::Mc => mc()?,
                    V0Choice::Auto if it.support.len() == design.n() => v0_closed(&design, &it.support, &it.signs)?,
                    V0Choice::Auto => mc()?,
                };
                iic_sparse(&design, &it, &vol)?
            } else if p == 2.0 {
                iic_ridge(&design, &it)?
            } else {
                iic_smooth(&design, &it, p)?
            };
            print_json(&out)
        }
        Command::Oracle { mode, p, tau, x, y, csv, target, method, tolerance, mc_samples, seed, tau_lo, tau_hi, grid_points } => {
            let (design, yv) = oracle_instance(&x, &y, &csv, &target)?;
            if mode == OracleMode::TauMin {
                if !(tau_lo > 0.0 && tau_hi > tau_lo) || grid_points < 3 {
                    return Err(Error::InvalidArgument("need 0 < tau-lo < tau-hi and grid-points >= 3".into()));
                }
                let r = free_energy_numeric_min(&design, &yv, p, &log_grid(tau_lo, tau_hi, grid_points))?;
                return print_json(&r);
            }
            let tau = tau.ok_or_else(|| Error::InvalidArgument("--tau is required for this mode".into()))?;
            let est = match mode {
                OracleMode::Numeric => {
                    let budget = Budget { tolerance, mc_samples, seed, ..Budget::default() };
                    let m = match method {
                        QuadChoice::Quadrature => NumericMethod::Quadrature,
                        QuadChoice::Mc => NumericMethod::MonteCarlo,
                        QuadChoice::Auto => NumericMethod::Auto,
                    };
                    dual_prior_numeric(&design, &yv, p, tau, m, &budget)?
                }
                OracleMode::Ridge => dual_prior_ridge_asymptotic(&design, &yv, tau)?,
                OracleMode::Smooth => dual_prior_smooth_asymptotic(&design, &yv, p, tau)?,
                OracleMode::Sparse => {
                    let it = min_norm(&design, &yv, 1.0, &SolverOptions::default())?;
                    let vol = v0_closed(&design, &it.support, &it.signs)?;
                    dual_prior_sparse_asymptotic(&design, it.norm_p_to_p(), tau, &vol)?
                }
                OracleMode::Residue => {
                    if design.n() != 1 {
                        return Err(Error::InvalidArgument("residue mode needs a single row".into()));
                    }
                    let row: Vec<f64> = design.x().row(0).iter().copied().collect();
                    dual_prior_residue_n1(&row, yv[0], tau)?
                }
                OracleMode::TauMin => unreachable!(),
            };
            print_json(&est)
        }
        Command::Sweep { config, out } => {
            let text = std::fs::read_to_string(&config).map_err(|_| Error::FileNotFound(config.display().to_string()))?;
            let file: SweepFile = toml::from_str(&text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
            let cfg: SweepConfig =
                file.sweep.clone().try_into().map_err(|e: toml::de::Error| Error::ConfigInvalid(e.to_string()))?;
            let ds = sweep_data(&file, config.parent().unwrap_or(Path::new(".")))?;
            let records = run_sweep(&ds, &cfg)?;
            emit_records(&records, Format::from_path(&out), &out)?;
            let ok = records.iter().filter(|r| r.status == iic_lab::experiment::Status::Ok).count();
            eprintln!("{} cells ({ok} ok) written to {}", records.len(), out.display());
            Ok(())
        }
        Command::Corr { input, x, y, resamples, seed } => {
            let (a, b) = read_column_pair(&input, &x, &y)?;
            let mut r = bootstrap_ci(&a, &b, resamples, seed)?;
            r.pair = format!("{x} vs {y}");
            print_json(&r)
        }
        Command::Synth { rows, d0, noise, seed, out } => {
            let ds = synthetic_sine(rows, d0, noise, seed)?;
            write_dataset(&ds, &out)
        }
    }
}

fn sweep_data(file: &SweepFile, base: &Path) -> Result<Dataset> {
    match (&file.data, file.synthetic_rows) {
        (Some(path), None) => {
            let path = if path.is_absolute() { path.clone() } else { base.join(path) };
            let opts = IngestOptions { target: file.target.clone(), skip_bad_rows: file.skip_bad_rows };
            let ing = ingest_csv(&path, &opts)?;
            for r in &ing.rejected {
                eprintln!("skipped row {}: column '{}' token '{}'", r.row, r.column, r.token);
            }
            Ok(ing.dataset)
        }
        (None, Some(rows)) => synthetic_sine(rows, file.synthetic_d0, file.synthetic_noise, file.synthetic_seed),
        _ => Err(Error::ConfigInvalid("set exactly one of `data` and `synthetic_rows`".into())),
    }
}

fn write_dataset(ds: &Dataset, out: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Io(e.to_string()))?;
    let mut header = ds.columns.clone();
    header.push("y".into());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.x0.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        row.push(format!("{:.16e}", ds.y[i]));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
