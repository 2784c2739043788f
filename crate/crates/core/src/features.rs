//! Feature maps that lift a low-dimensional dataset into the overparameterized regime.
//!
//! Both maps are fitted once and then applied to any rows, so test rows see exactly the
//! frequencies (or standardization) used for training rows.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Name of the Gaussian source, echoed in provenance strings.
pub const GENERATOR: &str = "chacha20/box-muller";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Rff,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub z: DMatrix<f64>,
    pub kind: MapKind,
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RffConfig {
    pub target_dim: usize,
    /// Bandwidth; `None` selects the median pairwise distance of the fitting rows.
    pub sigma: Option<f64>,
    pub seed: u64,
}

/// Median Euclidean distance over distinct row pairs.
pub fn median_pairwise_distance(x0: &DMatrix<f64>) -> Result<f64> {
    let n = x0.nrows();
    if n < 2 {
        return Err(Error::TooFew { needed: 2, got: n });
    }
    let mut dist = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            dist.push((x0.row(i) - x0.row(j)).norm());
        }
    }
    dist.sort_by(f64::total_cmp);
    let k = dist.len();
    let med = if k % 2 == 1 { dist[k / 2] } else { 0.5 * (dist[k / 2 - 1] + dist[k / 2]) };
    Ok(med)
}

/// `dim` standard normals from stream `stream` of the seeded generator.
pub(crate) fn standard_normals(seed: u64, stream: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut out = Vec::with_capacity(dim + 1);
    while out.len() < dim {
        // 1 - u keeps the logarithm finite
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        out.push(r * (2.0 * PI * u2).cos());
        out.push(r * (2.0 * PI * u2).sin());
    }
    out.truncate(dim);
    out
}

/// Fitted random Fourier feature map with `d_h = floor(d / 2)` frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct RffMap {
    /// `d_h x d0`, one frequency per row.
    freqs: DMatrix<f64>,
    sigma: f64,
    seed: u64,
}

impl RffMap {
    pub fn fit(x0: &DMatrix<f64>, cfg: &RffConfig) -> Result<Self> {
        let d0 = x0.ncols();
        if d0 == 0 {
            return Err(Error::BadShape { n: x0.nrows(), d: 0 });
        }
        let dh = cfg.target_dim / 2;
        if dh == 0 {
            return Err(Error::InvalidArgument(format!("rff target_dim must be >= 2, got {}", cfg.target_dim)));
        }
        let sigma = match cfg.sigma {
            Some(s) => s,
            None => median_pairwise_distance(x0)?,
        };
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("rff bandwidth must be positive, got {sigma}")));
        }
        // frequency k always comes from stream k, so wider maps extend narrower ones
        let mut freqs = DMatrix::<f64>::zeros(dh, d0);
        for k in 0..dh {
            for (j, g) in standard_normals(cfg.seed, k as u64, d0).into_iter().enumerate() {
                freqs[(k, j)] = g / sigma;
            }
        }
        Ok(RffMap { freqs, sigma, seed: cfg.seed })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn output_dim(&self) -> usize {
        2 * self.freqs.nrows()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
        if x.ncols() != self.freqs.ncols() {
            return Err(Error::DimensionMismatch { expected: self.freqs.ncols(), got: x.ncols() });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let dh = self.freqs.nrows();
        let scale = 1.0 / (dh as f64).sqrt();
        let proj = x * self.freqs.transpose();
        let z = DMatrix::from_fn(x.nrows(), 2 * dh, |i, c| {
            let a = proj[(i, c / 2)];
            scale * if c % 2 == 0 { a.cos() } else { a.sin() }
        });
        Ok(FeatureMatrix {
            z,
            kind: MapKind::Rff,
            provenance: format!("rff d_h={dh} sigma={:e} seed={} generator={GENERATOR}", self.sigma, self.seed),
        })
    }
}

pub fn rff_map(x0: &DMatrix<f64>, cfg: &RffConfig) -> Result<FeatureMatrix> {
    RffMap::fit(x0, cfg)?.transform(x0)
}

/// Exponent vectors of total degree `deg` over `d0` variables, in lexicographic order
/// of the sorted index tuples (`x1^2, x1 x2, x2^2`, ...).
fn monomials_of_degree(d0: usize, deg: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut idx = vec![0usize; deg];
    loop {
        let mut e = vec![0u32; d0];
        for &i in &idx {
            e[i] += 1;
        }
        out.push(e);
        // next nondecreasing tuple
        let Some(pos) = (0..deg).rev().find(|&k| idx[k] + 1 < d0) else {
            return out;
        };
        let v = idx[pos] + 1;
        for slot in &mut idx[pos..] {
            *slot = v;
        }
    }
}

fn eval_monomial(x: &DMatrix<f64>, i: usize, e: &[u32]) -> f64 {
    e.iter().enumerate().filter(|(_, &k)| k > 0).map(|(j, &k)| x[(i, j)].powi(k as i32)).product()
}

/// Graded monomial map with column standardization fitted on the rows passed to `fit`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMap {
    exponents: Vec<Vec<u32>>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    max_degree: usize,
}

impl PolyMap {
    /// Keeps the first `target_dim` non-constant monomials of degree `1..=degree`.
    pub fn fit(x0: &DMatrix<f64>, degree: usize, target_dim: usize) -> Result<Self> {
        let (n, d0) = x0.shape();
        if d0 == 0 || n == 0 {
            return Err(Error::BadShape { n, d: d0 });
        }
        if degree == 0 || target_dim < d0 {
            return Err(Error::InvalidArgument(format!(
                "need degree >= 1 and target_dim >= {d0}, got degree {degree}, target_dim {target_dim}"
            )));
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let mut exponents = Vec::with_capacity(target_dim);
        let (mut mean, mut sd) = (Vec::new(), Vec::new());
        let mut available = 0;
        'outer: for deg in 1..=degree {
            for e in monomials_of_degree(d0, deg) {
                let col: Vec<f64> = (0..n).map(|i| eval_monomial(x0, i, &e)).collect();
                let mu = col.iter().sum::<f64>() / n as f64;
                let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
                let s = var.sqrt();
                let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                if !(s > 1e-12 * scale.max(f64::MIN_POSITIVE)) || !s.is_finite() {
                    continue;
                }
                available += 1;
                exponents.push(e);
                mean.push(mu);
                sd.push(s);
                if exponents.len() == target_dim {
                    break 'outer;
                }
            }
        }
        if exponents.len() < target_dim {
            return Err(Error::DegreeExhausted { available, degree, target: target_dim });
        }
        Ok(PolyMap { exponents, mean, sd, max_degree: degree })
    }

    /// Exponent vectors of the kept columns.
    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<FeatureMatrix> {
        let d0 = self.exponents[0].len();
        if x.ncols() != d0 {
            return Err(Error::DimensionMismatch { expected: d0, got: x.ncols() });
        }
        let z = DMatrix::from_fn(x.nrows(), self.exponents.len(), |i, c| {
            (eval_monomial(x, i, &self.exponents[c]) - self.mean[c]) / self.sd[c]
        });
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(FeatureMatrix {
            z,
            kind: MapKind::Polynomial,
            provenance: format!("polynomial degree<={} columns={}", self.max_degree, self.exponents.len()),
        })
    }
}

pub fn poly_map(x0: &DMatrix<f64>, degree: usize, target_dim: usize) -> Result<FeatureMatrix> {
    PolyMap::fit(x0, degree, target_dim)?.transform(x0)
}
