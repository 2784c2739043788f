use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 1000;
/// Redraws allowed for a resample whose ranks are all tied.
const REDRAWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    pub pair: String,
    pub rho: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_points: usize,
    pub n_resamples: usize,
    /// Resamples dropped after repeated zero rank variance.
    pub skipped: usize,
    pub seed: u64,
    pub method: &'static str,
}

/// Average ranks, 1-based; ties share the mean of their positions.
pub fn midranks(a: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..a.len()).collect();
    idx.sort_by(|&i, &j| a[i].total_cmp(&a[j]));
    let mut ranks = vec![0.0; a.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && a[idx[end]] == a[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn check_pair(a: &[f64], b: &[f64], needed: usize) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    if a.len() < needed {
        return Err(Error::TooFew { needed, got: a.len() });
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_pair(a, b, 3)?;
    pearson(&midranks(a), &midranks(b)).ok_or(Error::ZeroVariance)
}

/// Linear interpolation between order statistics.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Paired bootstrap percentile interval (2.5%, 97.5%) for Spearman's rho.
pub fn bootstrap_ci(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> Result<CorrelationReport> {
    check_pair(a, b, 4)?;
    if n_resamples == 0 {
        return Err(Error::InvalidArgument("n_resamples must be positive".into()));
    }
    let rho = spearman(a, b)?;
    let n = a.len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(n_resamples);
    let mut skipped = 0;
    let (mut ra, mut rb) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..n_resamples {
        let mut got = None;
        for _ in 0..=REDRAWS {
            for k in 0..n {
                let i = rng.random_range(0..n);
                ra[k] = a[i];
                rb[k] = b[i];
            }
            if let Some(r) = pearson(&midranks(&ra), &midranks(&rb)) {
                got = Some(r);
                break;
            }
        }
        match got {
            Some(r) => stats.push(r),
            None => skipped += 1,
        }
    }
    if stats.is_empty() {
        return Err(Error::ZeroVariance);
    }
    stats.sort_by(f64::total_cmp);
    // the percentile interval need not cover the point estimate; widen it so it does
    let ci_low = quantile(&stats, 0.025).min(rho);
    let ci_high = quantile(&stats, 0.975).max(rho);
    Ok(CorrelationReport {
        pair: String::new(),
        rho,
        ci_low,
        ci_high,
        n_points: n,
        n_resamples,
        skipped,
        seed,
        method: "bootstrap_percentile",
    })
}
