use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::experiment::dataset::{mse, permutation, Dataset};
use crate::features::{PolyMap, RffConfig, RffMap};
use crate::iic::{iic_ridge, iic_smooth, iic_sparse, v0_closed, v0_monte_carlo, IicBreakdown};
use crate::interpolate::{min_norm, Interpolator, SolverOptions};
use crate::linalg::{validate_design, DesignMatrix};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "IIC_LAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Rff,
    Polynomial,
}

fn default_degree() -> usize {
    12
}
fn default_mc_samples() -> usize {
    200_000
}
fn default_mc_dim_limit() -> usize {
    crate::iic::MC_DIM_LIMIT
}

/// Sweep settings. Mirrors the flat TOML document read by the CLI.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub feature_map: FeatureKind,
    /// RFF bandwidth; median pairwise distance when absent.
    #[serde(default)]
    pub sigma: Option<f64>,
    /// Degree cap for polynomial features.
    #[serde(default = "default_degree")]
    pub poly_degree: usize,
    pub d_grid: Vec<usize>,
    pub p_list: Vec<f64>,
    pub n_train: usize,
    pub master_seed: u64,
    #[serde(default = "default_mc_samples")]
    pub v0_mc_samples: usize,
    #[serde(default = "default_mc_dim_limit")]
    pub v0_mc_dim_limit: usize,
}

impl SweepConfig {
    pub fn validate(&self, n_total: usize) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.d_grid.is_empty() || self.p_list.is_empty() {
            return bad("d_grid and p_list must be nonempty".into());
        }
        if self.d_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("d_grid must be strictly increasing".into());
        }
        if self.n_train == 0 || self.n_train >= n_total {
            return bad(format!("n_train must lie in [1, {n_total}), got {}", self.n_train));
        }
        if let Some(&d) = self.d_grid.iter().find(|&&d| d <= self.n_train) {
            return bad(format!("every d must exceed n_train = {}, got {d}", self.n_train));
        }
        if self.feature_map == FeatureKind::Rff && self.d_grid.iter().any(|&d| (d / 2) * 2 <= self.n_train) {
            return bad("rff uses 2 floor(d/2) columns, which must exceed n_train".into());
        }
        if let Some(&p) = self.p_list.iter().find(|&&p| !(p == 1.0 || p >= 2.0) || !p.is_finite()) {
            return bad(format!("p must be 1 or >= 2, got {p}"));
        }
        let mut ps = self.p_list.clone();
        ps.sort_by(f64::total_cmp);
        if ps.windows(2).any(|w| w[0] == w[1]) {
            return bad("p_list has duplicates".into());
        }
        if matches!(self.sigma, Some(s) if !(s > 0.0) || !s.is_finite()) {
            return bad("sigma must be positive".into());
        }
        if self.poly_degree == 0 || self.v0_mc_samples == 0 {
            return bad("poly_degree and v0_mc_samples must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    Error,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Error => "error",
        }
    }
}

/// One `(d, p)` cell. Optional fields are absent when the cell failed before
/// producing them or when they do not apply to `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord {
    /// Number of feature columns actually used.
    pub d: usize,
    pub p: f64,
    pub iic: Option<IicBreakdown>,
    pub support_size: Option<usize>,
    pub certificate_margin: Option<f64>,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub status: Status,
    pub failure_reason: Option<String>,
    /// Seconds spent on the cell; not part of the emitted tables.
    pub wall_time: f64,
}

impl ExperimentRecord {
    fn failed(d: usize, p: f64, err: &Error) -> Self {
        ExperimentRecord {
            d,
            p,
            iic: None,
            support_size: None,
            certificate_margin: None,
            train_mse: None,
            test_mse: None,
            status: Status::Error,
            failure_reason: Some(err.to_string()),
            wall_time: 0.0,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one cell, a function of `(master, d, p)` only.
pub fn cell_seed(master: u64, d: usize, p: f64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ d as u64) ^ p.to_bits())
}

// fixed salts keep the split and feature streams apart from the cell seeds
fn split_seed(master: u64) -> u64 {
    splitmix64(master ^ 0x5350_4c49_5400_0000)
}
fn feature_seed(master: u64) -> u64 {
    splitmix64(master ^ 0x4645_4154_0000_0000)
}

/// Thread count from `IIC_LAB_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t: &usize| t > 0)
}

pub fn run_sweep(dataset: &Dataset, cfg: &SweepConfig) -> Result<Vec<ExperimentRecord>> {
    run_sweep_with_threads(dataset, cfg, threads_from_env())
}

/// Runs every `(d, p)` cell on a dedicated pool of `threads` workers (machine
/// parallelism when `None`). Records come back ordered by `(d, p)`.
pub fn run_sweep_with_threads(
    dataset: &Dataset,
    cfg: &SweepConfig,
    threads: Option<usize>,
) -> Result<Vec<ExperimentRecord>> {
    cfg.validate(dataset.len())?;
    let perm = permutation(dataset.len(), split_seed(cfg.master_seed));
    let (train, test) = perm.split_at(cfg.n_train);
    let setup = Setup { dataset, cfg, train, test };

    let mut ps = cfg.p_list.clone();
    ps.sort_by(f64::total_cmp);
    let cells: Vec<(usize, f64)> = cfg.d_grid.iter().flat_map(|&d| ps.iter().map(move |&p| (d, p))).collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    let mut records: Vec<ExperimentRecord> = pool.install(|| cells.par_iter().map(|&(d, p)| setup.cell(d, p)).collect());
    records.sort_by(|a, b| a.d.cmp(&b.d).then(a.p.total_cmp(&b.p)));
    Ok(records)
}

struct Setup<'a> {
    dataset: &'a Dataset,
    cfg: &'a SweepConfig,
    train: &'a [usize],
    test: &'a [usize],
}

/// Everything a successful solve produces, kept so partial failures still report it.
struct Solved {
    design: DesignMatrix,
    interp: Interpolator,
    train_mse: f64,
    test_mse: f64,
}

impl Setup<'_> {
    /// Feature matrix for all rows. Maps are fitted on the full row set; centering
    /// polynomial columns on the training rows alone would make those rows sum to zero
    /// and the training design rank deficient.
    fn features(&self, d: usize) -> Result<DMatrix<f64>> {
        let x0 = &self.dataset.x0;
        let fm = match self.cfg.feature_map {
            FeatureKind::Rff => {
                let rcfg = RffConfig { target_dim: d, sigma: self.cfg.sigma, seed: feature_seed(self.cfg.master_seed) };
                RffMap::fit(x0, &rcfg)?.transform(x0)?
            }
            FeatureKind::Polynomial => PolyMap::fit(x0, self.cfg.poly_degree, d)?.transform(x0)?,
        };
        Ok(fm.z)
    }

    fn cell(&self, d: usize, p: f64) -> ExperimentRecord {
        let start = Instant::now();
        let seed = cell_seed(self.cfg.master_seed, d, p);
        let d_eff = match self.cfg.feature_map {
            FeatureKind::Rff => 2 * (d / 2),
            FeatureKind::Polynomial => d,
        };
        let mut rec = match self.solve(d, d_eff, p, seed) {
            Err(e) => ExperimentRecord::failed(d_eff, p, &e),
            Ok(solved) => self.evaluate(d_eff, p, seed, solved),
        };
        rec.wall_time = start.elapsed().as_secs_f64();
        rec
    }

    fn solve(&self, d: usize, d_eff: usize, p: f64, seed: u64) -> Result<Solved> {
        let n = self.train.len();
        if p > 2.0 {
            // no criterion exists past the dimension bound; skip the solve
            crate::iic::k1(p, d_eff, n)?;
        }
        let z = self.features(d)?;
        let z_train = z.select_rows(self.train);
        let z_test = z.select_rows(self.test);
        let y_train = DVector::from_iterator(n, self.train.iter().map(|&i| self.dataset.y[i]));
        let y_test = DVector::from_iterator(self.test.len(), self.test.iter().map(|&i| self.dataset.y[i]));
        let design = validate_design(z_train)?;
        let opts = SolverOptions { seed, ..SolverOptions::default() };
        let interp = min_norm(&design, &y_train, p, &opts)?;
        let train_mse = mse(&(design.x() * &interp.theta), &y_train)?;
        let test_mse = mse(&(&z_test * &interp.theta), &y_test)?;
        let mean = y_train.mean();
        let var = y_train.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        if !(train_mse <= 1e-10 * var) {
            return Err(Error::Numerical(format!(
                "interpolation gate: train mse {train_mse:e} above 1e-10 var(y) = {:e}",
                1e-10 * var
            )));
        }
        Ok(Solved { design, interp, train_mse, test_mse })
    }

    fn evaluate(&self, d: usize, p: f64, seed: u64, s: Solved) -> ExperimentRecord {
        let mut rec = ExperimentRecord {
            d,
            p,
            iic: None,
            support_size: Some(s.interp.support.len()),
            certificate_margin: s.interp.certificate.as_ref().map(|c| c.margin),
            train_mse: Some(s.train_mse),
            test_mse: Some(s.test_mse),
            status: Status::Ok,
            failure_reason: None,
            wall_time: 0.0,
        };
        let iic = if p == 1.0 {
            self.sparse(&s, seed)
        } else if p == 2.0 {
            iic_ridge(&s.design, &s.interp)
        } else {
            iic_smooth(&s.design, &s.interp, p)
        };
        match iic {
            Ok(b) => rec.iic = Some(b),
            Err(e) => {
                rec.status = Status::Error;
                rec.failure_reason = Some(e.to_string());
            }
        }
        rec
    }

    /// Certified support with `|S| = n` uses the closed-form volume; smaller supports
    /// fall back to Monte Carlo when the kernel is small enough.
    fn sparse(&self, s: &Solved, seed: u64) -> Result<IicBreakdown> {
        let it = &s.interp;
        match &it.certificate {
            Some(c) if c.unique => {}
            _ => return Err(Error::Numerical("l1 solution has no uniqueness certificate".into())),
        }
        let v0 = if it.support.len() == s.design.n() {
            v0_closed(&s.design, &it.support, &it.signs)?
        } else {
            v0_monte_carlo(&s.design, &it.support, &it.signs, self.cfg.v0_mc_samples, seed, self.cfg.v0_mc_dim_limit)?
        };
        iic_sparse(&s.design, it, &v0)
    }
}
