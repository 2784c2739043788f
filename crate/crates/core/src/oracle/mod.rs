//! Independent numerical checks of the closed forms.
//!
//! The central object is the dual prior
//! `pi*(Y) = c_{p,tau} det(X X^T)^{-1/2} \int exp(-||X^+ Y + Q w||_p^p / tau) dw`,
//! the zero-noise limit of the marginal likelihood. It is integrated directly
//! (adaptive quadrature or importance sampling), evaluated exactly for a single
//! observation with `p = 1`, and compared with the small-`tau` asymptotics.

mod quadrature;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::iic::{tau_star, v0_closed, V0Result};
use crate::interpolate::{detect_support, lp_norm_pow, min_norm_lp, SolverOptions};
use crate::linalg::{kernel_basis, log_det_gram, log_det_spd, pinv_apply, DesignMatrix};
use crate::lp::{maximize, LpOutcome};

use quadrature::Nested;

/// Integrand cutoff: the domain keeps everything within `TRUNCATION / tau` of the peak
/// exponent, i.e. down to `e^-40` of the maximum.
const TRUNCATION: f64 = 40.0;

pub const QUADRATURE_DIM_LIMIT: usize = 3;
pub const MC_DIM_LIMIT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMethod {
    Quadrature,
    MonteCarlo,
    RidgeAsymptotic,
    SmoothAsymptotic,
    /// Laplace approximation with the exact kernel Hessian determinant.
    SmoothLaplace,
    SparseAsymptotic,
    ResidueExact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DualPriorEstimate {
    pub log_value: f64,
    pub method: PriorMethod,
    /// Absolute error bound on `log_value`.
    pub abs_error_estimate: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NumericMethod {
    Quadrature,
    MonteCarlo,
    /// Quadrature up to three kernel dimensions, sampling above.
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Budget {
    /// Bisections allowed on the outermost quadrature axis.
    pub max_subdivisions: usize,
    pub inner_subdivisions: usize,
    /// Relative accuracy requested from the quadrature.
    pub rel_tol: f64,
    /// Largest acceptable `abs_error_estimate`.
    pub tolerance: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            max_subdivisions: 2000,
            inner_subdivisions: 400,
            rel_tol: 1e-10,
            tolerance: 1e-6,
            mc_samples: 200_000,
            seed: 0,
        }
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    Ok(())
}

fn check_p(p: f64) -> Result<()> {
    if p == 1.0 || p >= 2.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("p must be 1 or >= 2, got {p}")))
    }
}

/// `log c_{p,tau}`, the generalized Gaussian normalizer in `d` dimensions.
pub fn log_prior_normalizer(p: f64, tau: f64, d: usize) -> f64 {
    let df = d as f64;
    -df * ((2.0f64).ln() + ln_gamma(1.0 / p + 1.0)) - df / p * tau.ln()
}

/// Minimizer of `||theta0 + Q w||_1` by an LP, independent of the ADMM solver.
fn l1_minimizer(theta0: &DVector<f64>, q: &DMatrix<f64>) -> Result<DVector<f64>> {
    let (d, m) = q.shape();
    // theta0 + Q w bounded by |theta0| + s componentwise; maximize -sum s
    let vars = m + d;
    let mut g = DMatrix::<f64>::zeros(2 * d, vars);
    let mut h = DVector::<f64>::zeros(2 * d);
    for j in 0..d {
        for k in 0..m {
            g[(2 * j, k)] = q[(j, k)];
            g[(2 * j + 1, k)] = -q[(j, k)];
        }
        g[(2 * j, m + j)] = -1.0;
        g[(2 * j + 1, m + j)] = -1.0;
        h[2 * j] = theta0[j].abs() - theta0[j];
        h[2 * j + 1] = theta0[j].abs() + theta0[j];
    }
    let mut c = DVector::<f64>::zeros(vars);
    for j in 0..d {
        c[m + j] = -1.0;
    }
    match maximize(&c, &g, &h)? {
        LpOutcome::Optimal { y, .. } => Ok(theta0 + q * y.rows(0, m)),
        LpOutcome::Unbounded => Err(Error::Numerical("l1 objective unbounded below".into())),
    }
}

/// Exact axis-aligned box around `{u : ||theta* + Q u||_1 <= ||theta*||_1 + delta}`.
fn l1_sublevel_box(theta: &DVector<f64>, q: &DMatrix<f64>, delta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d, m) = q.shape();
    let vars = m + d;
    let rows = 2 * d + 1;
    let mut g = DMatrix::<f64>::zeros(rows, vars);
    let mut h = DVector::<f64>::zeros(rows);
    for j in 0..d {
        for k in 0..m {
            g[(2 * j, k)] = q[(j, k)];
            g[(2 * j + 1, k)] = -q[(j, k)];
        }
        g[(2 * j, m + j)] = -1.0;
        g[(2 * j + 1, m + j)] = -1.0;
        h[2 * j] = theta[j].abs() - theta[j];
        h[2 * j + 1] = theta[j].abs() + theta[j];
        g[(rows - 1, m + j)] = 1.0;
    }
    h[rows - 1] = delta;
    let mut lo = vec![0.0; m];
    let mut hi = vec![0.0; m];
    for k in 0..m {
        for sign in [1.0, -1.0] {
            let mut c = DVector::<f64>::zeros(vars);
            c[k] = sign;
            match maximize(&c, &g, &h)? {
                LpOutcome::Optimal { value, .. } => {
                    if sign > 0.0 {
                        hi[k] = value;
                    } else {
                        lo[k] = -value;
                    }
                }
                LpOutcome::Unbounded => return Err(Error::UnboundedBody),
            }
        }
    }
    Ok((lo, hi))
}

/// `int_1^inf s^{m-1} e^{-lambda s} ds`.
fn radial_tail(m: usize, lambda: f64) -> f64 {
    let mut sum = 0.0;
    let mut coef = 1.0; // (m-1)! / (m-1-k)!
    for k in 0..m {
        sum += coef / lambda.powi(k as i32 + 1);
        coef *= (m - 1 - k) as f64;
    }
    (-lambda).exp() * sum
}

/// Shared setup: minimizer `theta*` of the kernel problem and the kernel basis.
struct Problem {
    theta: DVector<f64>,
    q: DMatrix<f64>,
    h_min: f64,
    log_det: f64,
    /// Kernel coordinate of `theta*` (`Q^T theta*`).
    w_star: DVector<f64>,
    theta0_norm2: f64,
}

fn setup(design: &DesignMatrix, y: &DVector<f64>, p: f64) -> Result<Problem> {
    let theta0 = pinv_apply(design, y)?;
    let q = kernel_basis(design).q;
    let theta = if q.ncols() == 0 {
        theta0.clone()
    } else if p == 1.0 {
        l1_minimizer(&theta0, &q)?
    } else {
        min_norm_lp(design, y, p, &SolverOptions::default())?.theta
    };
    let w_star = q.transpose() * &theta;
    Ok(Problem {
        h_min: lp_norm_pow(&theta, p),
        log_det: log_det_gram(design)?,
        theta0_norm2: theta0.norm_squared(),
        theta,
        q,
        w_star,
    })
}

/// Log of `c_{p,tau} det^{-1/2} \int exp(-||theta||_p^p / tau) dw` by direct integration.
pub fn dual_prior_numeric(
    design: &DesignMatrix,
    y: &DVector<f64>,
    p: f64,
    tau: f64,
    method: NumericMethod,
    budget: &Budget,
) -> Result<DualPriorEstimate> {
    check_p(p)?;
    check_tau(tau)?;
    let m = design.kernel_dim();
    let use_quad = match method {
        NumericMethod::Quadrature => {
            if m > QUADRATURE_DIM_LIMIT {
                return Err(Error::DimensionTooHigh { dim: m, limit: QUADRATURE_DIM_LIMIT });
            }
            true
        }
        NumericMethod::MonteCarlo => {
            if m > MC_DIM_LIMIT {
                return Err(Error::DimensionTooHigh { dim: m, limit: MC_DIM_LIMIT });
            }
            false
        }
        NumericMethod::Auto => {
            if m > MC_DIM_LIMIT {
                return Err(Error::DimensionTooHigh { dim: m, limit: MC_DIM_LIMIT });
            }
            m <= QUADRATURE_DIM_LIMIT
        }
    };
    let prob = setup(design, y, p)?;
    let base = log_prior_normalizer(p, tau, design.d()) - 0.5 * prob.log_det - prob.h_min / tau;
    if m == 0 {
        return Ok(DualPriorEstimate {
            log_value: base,
            method: if use_quad { PriorMethod::Quadrature } else { PriorMethod::MonteCarlo },
            abs_error_estimate: 0.0,
            tau,
        });
    }
    let (lo, hi) = integration_box(&prob, p, tau)?;
    let (log_int, err) = if use_quad {
        integrate_quadrature(&prob, p, tau, &lo, &hi, budget)?
    } else {
        integrate_mc(&prob, p, tau, &lo, &hi, budget)?
    };
    let est = DualPriorEstimate {
        log_value: base + log_int,
        method: if use_quad { PriorMethod::Quadrature } else { PriorMethod::MonteCarlo },
        abs_error_estimate: err,
        tau,
    };
    if !(err <= budget.tolerance) {
        return Err(Error::BudgetExhausted { log_value: est.log_value, error: err, tolerance: budget.tolerance });
    }
    Ok(est)
}

/// Box in `u = w - w*` coordinates containing `{h <= h_min + 40 tau}`.
fn integration_box(prob: &Problem, p: f64, tau: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = prob.q.ncols();
    let delta = TRUNCATION * tau;
    if p == 1.0 {
        return l1_sublevel_box(&prob.theta, &prob.q, delta);
    }
    // power-mean bound ||theta||_p^p >= d^{1 - p/2} ||theta||_2^p with
    // ||theta||_2^2 = ||theta0||^2 + ||w||^2 gives a ball in w
    let d = prob.theta.len() as f64;
    let r2 = ((prob.h_min + delta) * d.powf(p / 2.0 - 1.0)).powf(2.0 / p) - prob.theta0_norm2;
    let r = r2.max(0.0).sqrt() * (1.0 + 1e-12) + 1e-300;
    let lo = (0..m).map(|k| -r - prob.w_star[k]).collect();
    let hi = (0..m).map(|k| r - prob.w_star[k]).collect();
    Ok((lo, hi))
}

fn exponent(prob: &Problem, p: f64, tau: f64, u: &[f64]) -> f64 {
    let (d, m) = prob.q.shape();
    let mut h = 0.0;
    for j in 0..d {
        let mut t = prob.theta[j];
        for (k, uk) in u.iter().enumerate().take(m) {
            t += prob.q[(j, k)] * uk;
        }
        h += if p == 1.0 {
            t.abs()
        } else if p == 2.0 {
            t * t
        } else {
            t.abs().powf(p)
        };
    }
    (h - prob.h_min) / tau
}

/// Coordinates along axis `k` where the slice through `prefix` meets a vertex of the
/// arrangement `{theta_j = 0}`; the marginal integrand is smooth between them.
fn kink_breaks(prob: &Problem, k: usize, prefix: &[f64]) -> Vec<f64> {
    let (d, m) = prob.q.shape();
    let r = m - k;
    let offset: Vec<f64> = (0..d)
        .map(|j| prob.theta[j] + (0..k).map(|i| prob.q[(j, i)] * prefix[i]).sum::<f64>())
        .collect();
    let mut out = Vec::new();
    if r > d || r == 0 {
        return out;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        let a = DMatrix::from_fn(r, r, |row, col| prob.q[(idx[row], k + col)]);
        let b = DVector::from_fn(r, |row, _| -offset[idx[row]]);
        let lu = a.lu();
        let scale = a_norm(&prob.q, &idx, k, r);
        if lu.determinant().abs() > 1e-12 * scale {
            if let Some(v) = lu.solve(&b) {
                out.push(v[0]);
            }
        }
        if !next_combination(&mut idx, d) {
            return out;
        }
    }
}

/// Advances `idx` to the next increasing `r`-subset of `0..d`.
fn next_combination(idx: &mut [usize], d: usize) -> bool {
    let r = idx.len();
    let mut i = r;
    while i > 0 {
        i -= 1;
        if idx[i] < d - r + i {
            idx[i] += 1;
            for j in i + 1..r {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

fn a_norm(q: &DMatrix<f64>, idx: &[usize], k: usize, r: usize) -> f64 {
    let mut s = 1.0;
    for &row in idx {
        let mut n = 0.0;
        for c in 0..r {
            n += q[(row, k + c)] * q[(row, k + c)];
        }
        s *= n.sqrt().max(1e-300);
    }
    s
}

fn integrate_quadrature(
    prob: &Problem,
    p: f64,
    tau: f64,
    lo: &[f64],
    hi: &[f64],
    budget: &Budget,
) -> Result<(f64, f64)> {
    let m = lo.len();
    let f = |u: &[f64]| (-exponent(prob, p, tau, u)).exp();
    let breaks = |k: usize, prefix: &[f64]| kink_breaks(prob, k, prefix);
    let nest = Nested {
        lo,
        hi,
        integrand: &f,
        breaks: &breaks,
        rel_tol: budget.rel_tol,
        abs_floor: 0.0,
        outer_max_sub: budget.max_subdivisions,
        inner_max_sub: budget.inner_subdivisions,
    };
    let est = nest.integrate();
    if !(est.value > 0.0) {
        return Err(Error::Numerical("quadrature returned a nonpositive integral".into()));
    }
    let box_vol: f64 = (0..m).map(|k| hi[k] - lo[k]).product();
    let tail = m as f64 * box_vol * radial_tail(m, TRUNCATION);
    Ok((est.value.ln(), (est.error + tail) / est.value))
}

fn integrate_mc(
    prob: &Problem,
    p: f64,
    tau: f64,
    lo: &[f64],
    hi: &[f64],
    budget: &Budget,
) -> Result<(f64, f64)> {
    let m = lo.len();
    // product-Laplace proposal centred at the peak
    let scales: Vec<f64> = if p == 1.0 {
        (0..m).map(|k| (hi[k] - lo[k]) / 20.0).collect()
    } else {
        let lam = prob.theta.map(|v| p * (p - 1.0) * v.abs().powf(p - 2.0));
        let hess = prob.q.transpose() * DMatrix::from_diagonal(&lam) * &prob.q;
        match hess.clone().cholesky() {
            Some(c) => {
                let inv = c.inverse();
                (0..m).map(|k| 2.0 * (tau * inv[(k, k)]).sqrt()).collect()
            }
            None => (0..m).map(|k| (hi[k] - lo[k]) / 20.0).collect(),
        }
    };
    if scales.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::Numerical("degenerate proposal scale".into()));
    }
    let log_norm: f64 = scales.iter().map(|b| (2.0 * b).ln()).sum();
    let mut rng = ChaCha20Rng::seed_from_u64(budget.seed);
    let n = budget.mc_samples.max(2);
    let mut logw = Vec::with_capacity(n);
    let mut u = vec![0.0; m];
    for _ in 0..n {
        let mut lq = -log_norm;
        for k in 0..m {
            let v: f64 = rng.random::<f64>() - 0.5;
            let e = -scales[k] * v.signum() * (1.0 - 2.0 * v.abs()).max(f64::MIN_POSITIVE).ln();
            u[k] = e;
            lq -= e.abs() / scales[k];
        }
        logw.push(-exponent(prob, p, tau, &u) - lq);
    }
    let mx = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ws: Vec<f64> = logw.iter().map(|l| (l - mx).exp()).collect();
    let mean = ws.iter().sum::<f64>() / n as f64;
    let var = ws.iter().map(|w| (w - mean) * (w - mean)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    Ok((mx + mean.ln(), se / mean))
}

fn asymptotic(log_value: f64, method: PriorMethod, tau: f64) -> DualPriorEstimate {
    DualPriorEstimate { log_value, method, abs_error_estimate: 0.0, tau }
}

pub fn dual_prior_ridge_asymptotic(design: &DesignMatrix, y: &DVector<f64>, tau: f64) -> Result<DualPriorEstimate> {
    check_tau(tau)?;
    let n = design.n() as f64;
    let theta = pinv_apply(design, y)?;
    let v = -n / 2.0 * (PI * tau).ln() - 0.5 * log_det_gram(design)? - theta.norm_squared() / tau;
    Ok(asymptotic(v, PriorMethod::RidgeAsymptotic, tau))
}

fn smooth_theta(design: &DesignMatrix, y: &DVector<f64>, p: f64) -> Result<DVector<f64>> {
    if !(p >= 2.0) {
        return Err(Error::InvalidArgument(format!("smooth asymptotic needs p >= 2, got {p}")));
    }
    let theta = min_norm_lp(design, y, p, &SolverOptions::default())?.theta;
    if p > 2.0 {
        let (support, _) = detect_support(&theta, None);
        if let Some(index) = (0..theta.len()).find(|j| !support.contains(j)) {
            return Err(Error::ZeroCoordinate { index });
        }
    }
    Ok(theta)
}

/// Small-`tau` expansion for `p >= 2` with the curvature written as `prod |theta_j|^{p-2}`.
pub fn dual_prior_smooth_asymptotic(
    design: &DesignMatrix,
    y: &DVector<f64>,
    p: f64,
    tau: f64,
) -> Result<DualPriorEstimate> {
    check_tau(tau)?;
    let theta = smooth_theta(design, y, p)?;
    let (d, n) = (design.d() as f64, design.n() as f64);
    let m = d - n;
    let sum_log = if p > 2.0 { theta.iter().map(|v| v.abs().ln()).sum::<f64>() } else { 0.0 };
    let v = m / 2.0 * (2.0 * PI * tau).ln() - d / p * tau.ln() - m / 2.0 * (p * (p - 1.0)).ln()
        - d * ((2.0f64).ln() + ln_gamma(1.0 / p + 1.0))
        - 0.5 * log_det_gram(design)?
        - lp_norm_pow(&theta, p) / tau
        - (p - 2.0) / 2.0 * sum_log;
    Ok(asymptotic(v, PriorMethod::SmoothAsymptotic, tau))
}

/// Laplace approximation with `det(Q^T Lambda Q)` evaluated directly, where
/// `Lambda = diag |theta_j|^{p-2}`. It coincides with [`dual_prior_smooth_asymptotic`]
/// exactly when `det(Q^T Lambda Q) = prod |theta_j|^{p-2}`, e.g. when all `|theta_j|`
/// are equal or `p = 2`.
pub fn dual_prior_smooth_laplace(
    design: &DesignMatrix,
    y: &DVector<f64>,
    p: f64,
    tau: f64,
) -> Result<DualPriorEstimate> {
    check_tau(tau)?;
    let theta = smooth_theta(design, y, p)?;
    let q = kernel_basis(design).q;
    let m = q.ncols();
    let lam = theta.map(|v| v.abs().powf(p - 2.0));
    let log_det_h = if m == 0 {
        0.0
    } else {
        let h = q.transpose() * DMatrix::from_diagonal(&lam) * &q;
        log_det_spd(&h)?
    };
    let mf = m as f64;
    let v = log_prior_normalizer(p, tau, design.d()) - 0.5 * log_det_gram(design)? - lp_norm_pow(&theta, p) / tau
        + mf / 2.0 * (2.0 * PI * tau).ln()
        - mf / 2.0 * (p * (p - 1.0)).ln()
        - 0.5 * log_det_h;
    Ok(asymptotic(v, PriorMethod::SmoothLaplace, tau))
}

/// Small-`tau` expansion for `p = 1`. `theta_l1` is `||theta*||_1`.
pub fn dual_prior_sparse_asymptotic(
    design: &DesignMatrix,
    theta_l1: f64,
    tau: f64,
    v0: &V0Result,
) -> Result<DualPriorEstimate> {
    check_tau(tau)?;
    let (d, n) = (design.d(), design.n());
    if d == n {
        return Err(Error::EmptyKernel);
    }
    let v = -(d as f64) * (2.0f64).ln() + ln_gamma((d - n) as f64 + 1.0) - n as f64 * tau.ln()
        - 0.5 * log_det_gram(design)?
        - theta_l1 / tau
        + v0.log_value;
    Ok(asymptotic(v, PriorMethod::SparseAsymptotic, tau))
}

/// Exact dual prior for one observation and `p = 1` as a signed sum over coordinates.
pub fn dual_prior_residue_n1(x: &[f64], y: f64, tau: f64) -> Result<DualPriorEstimate> {
    check_tau(tau)?;
    if !y.is_finite() {
        return Err(Error::NonFinite);
    }
    if x.is_empty() {
        return Err(Error::BadShape { n: 1, d: 0 });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    if x.iter().all(|&v| v == 0.0) {
        return Err(Error::RankDeficient { rank: 0, n: 1 });
    }
    for j in 0..x.len() {
        for k in j + 1..x.len() {
            let (a, b) = (x[j] * x[j], x[k] * x[k]);
            if (a - b).abs() <= 1e-12 * a.max(b) {
                return Err(Error::DegenerateCoordinates { j, k });
            }
        }
    }
    let abs: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let ya = y.abs();
    let mut logs = Vec::with_capacity(x.len());
    let mut signs = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let xk = abs[k];
        let mut l = -(2.0 * tau).ln() - xk.ln() - ya / (xk * tau);
        let mut s = 1.0;
        for (j, &xj) in abs.iter().enumerate() {
            if j != k {
                let diff = (xk - xj) * (xk + xj);
                l += 2.0 * xk.ln() - diff.abs().ln();
                if diff < 0.0 {
                    s = -s;
                }
            }
        }
        logs.push(l);
        signs.push(s);
    }
    let mx = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().zip(&signs).map(|(l, s)| s * (l - mx).exp()).sum();
    if !(sum > 0.0) {
        return Err(Error::Numerical("residue sum cancelled to a nonpositive value".into()));
    }
    Ok(DualPriorEstimate {
        log_value: mx + sum.ln(),
        method: PriorMethod::ResidueExact,
        abs_error_estimate: 0.0,
        tau,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyMin {
    pub tau_min: f64,
    /// `(2/n)` times the minimal free energy.
    pub scaled_min: f64,
    pub tau_star: f64,
    /// Additive constant that the criterion drops from `(2/n) F(tau*)`:
    /// `log(2 pi e)` for `p = 2`, `2` for `p = 1`, `0` for `p > 2`.
    pub dropped_constant: f64,
}

type Energy<'a> = Box<dyn Fn(f64) -> Result<f64> + 'a>;

/// Minimizes the asymptotic free energy `-log pi*(tau)` over a grid, refines the grid
/// minimum by golden-section search in `log tau`, and checks the result against the
/// closed-form `tau*`.
pub fn free_energy_numeric_min(
    design: &DesignMatrix,
    y: &DVector<f64>,
    p: f64,
    tau_grid: &[f64],
) -> Result<FreeEnergyMin> {
    check_p(p)?;
    if tau_grid.len() < 3 {
        return Err(Error::InvalidArgument("tau grid needs at least 3 points".into()));
    }
    if tau_grid.iter().any(|&t| !(t > 0.0)) || tau_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("tau grid must be positive and increasing".into()));
    }
    let (n, d) = (design.n(), design.d());
    let (energy, closed, dropped): (Energy<'_>, f64, f64) = if p == 2.0 {
        let theta = pinv_apply(design, y)?;
        let ts = tau_star(2.0, d, n, theta.norm_squared())?;
        (
            Box::new(move |t| Ok(-dual_prior_ridge_asymptotic(design, y, t)?.log_value)),
            ts,
            (2.0 * PI * std::f64::consts::E).ln(),
        )
    } else if p > 2.0 {
        let theta = smooth_theta(design, y, p)?;
        let ts = tau_star(p, d, n, lp_norm_pow(&theta, p))?;
        (Box::new(move |t| Ok(-dual_prior_smooth_asymptotic(design, y, p, t)?.log_value)), ts, 0.0)
    } else {
        let it = crate::interpolate::min_norm_l1(design, y, &SolverOptions::default())?;
        let v0 = v0_closed(design, &it.support, &it.signs)?;
        let l1 = it.norm_p_to_p();
        let ts = tau_star(1.0, d, n, l1)?;
        (Box::new(move |t| Ok(-dual_prior_sparse_asymptotic(design, l1, t, &v0)?.log_value)), ts, 2.0)
    };
    let vals: Vec<f64> = tau_grid.iter().map(|&t| energy(t)).collect::<Result<_>>()?;
    let i = (0..vals.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap_or(0);
    if i == 0 || i == vals.len() - 1 {
        return Err(Error::MinimumAtBoundary { index: i });
    }
    let (mut a, mut b) = (tau_grid[i - 1].ln(), tau_grid[i + 1].ln());
    let g = |s: f64| energy(s.exp());
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut e = a + phi * (b - a);
    let (mut fc, mut fe) = (g(c)?, g(e)?);
    while b - a > 1e-11 {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - phi * (b - a);
            fc = g(c)?;
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + phi * (b - a);
            fe = g(e)?;
        }
    }
    let tau_min = (0.5 * (a + b)).exp();
    if (tau_min - closed).abs() > 1e-4 * closed {
        return Err(Error::TauMismatch { numeric: tau_min, closed });
    }
    Ok(FreeEnergyMin {
        tau_min,
        scaled_min: 2.0 / n as f64 * energy(tau_min)?,
        tau_star: closed,
        dropped_constant: dropped,
    })
}

/// Log-spaced grid of `count` points from `lo` to `hi`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::iic::{iic_ridge, iic_smooth, iic_sparse};
    use crate::interpolate::{min_norm_l1, min_norm_l2};
    use crate::linalg::design_from_rows;
    use approx::assert_relative_eq;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn quad(design: &DesignMatrix, y: f64, p: f64, tau: f64) -> DualPriorEstimate {
        dual_prior_numeric(design, &v(&[y]), p, tau, NumericMethod::Quadrature, &Budget::default()).unwrap()
    }

    #[test]
    fn ridge_asymptotic_value() {
        let d = design_from_rows(&[&[3.0, 4.0]]).unwrap();
        let e = dual_prior_ridge_asymptotic(&d, &v(&[5.0]), 1.0).unwrap();
        assert_relative_eq!(e.log_value, -0.5 * PI.ln() - 0.5 * 25f64.ln() - 1.0, epsilon = 1e-12);
        assert_relative_eq!(e.log_value, -3.1818, epsilon = 1e-4);
    }

    #[test]
    fn ridge_is_exact_for_p2() {
        // p = 2 is Gaussian in w, so quadrature must reproduce the closed form
        let d = design_from_rows(&[&[3.0, 4.0]]).unwrap();
        for tau in [0.02, 0.05, 1.0] {
            let a = dual_prior_ridge_asymptotic(&d, &v(&[5.0]), tau).unwrap();
            let q = quad(&d, 5.0, 2.0, tau);
            assert!((a.log_value - q.log_value).abs() < 1e-8, "tau {tau}: {a:?} {q:?}");
        }
    }

    #[test]
    fn smooth_reduces_to_ridge_at_p2() {
        let d = design_from_rows(&[&[1.0, 2.0, -1.0], &[0.5, 0.0, 3.0]]).unwrap();
        let y = v(&[1.0, -2.0]);
        for tau in [0.1, 2.0] {
            let a = dual_prior_ridge_asymptotic(&d, &y, tau).unwrap().log_value;
            let b = dual_prior_smooth_asymptotic(&d, &y, 2.0, tau).unwrap().log_value;
            let c = dual_prior_smooth_laplace(&d, &y, 2.0, tau).unwrap().log_value;
            assert!((a - b).abs() < 1e-10 && (a - c).abs() < 1e-10);
        }
    }

    #[test]
    fn smooth_symmetric_instance_converges() {
        let d = design_from_rows(&[&[1.0, 1.0]]).unwrap();
        let mut last = f64::INFINITY;
        for tau in [0.2, 0.1, 0.05, 0.02] {
            let a = dual_prior_smooth_asymptotic(&d, &v(&[2.0]), 4.0, tau).unwrap();
            let q = quad(&d, 2.0, 4.0, tau);
            let err = (a.log_value - q.log_value).abs();
            assert!(err < last, "tau {tau}: {err} after {last}");
            if tau == 0.05 {
                assert!(err <= 0.05);
            }
            last = err;
        }
        assert!(last <= 0.02);
    }

    #[test]
    fn residue_values() {
        let want = 0.5 * (2.0 / 3.0 * (-1.0f64).exp() - 1.0 / 3.0 * (-2.0f64).exp());
        let e = dual_prior_residue_n1(&[2.0, 1.0], 2.0, 1.0).unwrap();
        assert_relative_eq!(e.log_value.exp(), want, epsilon = 1e-15);
        assert_relative_eq!(e.log_value.exp(), 0.100070, epsilon = 1e-6);
        let f = dual_prior_residue_n1(&[2.0, 1.0], -2.0, 1.0).unwrap();
        assert_eq!(e.log_value, f.log_value);
        assert!(matches!(
            dual_prior_residue_n1(&[1.0, 2.0, -1.0], 1.0, 1.0),
            Err(Error::DegenerateCoordinates { .. })
        ));
    }

    #[test]
    fn residue_matches_quadrature() {
        let d = design_from_rows(&[&[2.0, 1.0]]).unwrap();
        for tau in [0.1, 1.0] {
            let r = dual_prior_residue_n1(&[2.0, 1.0], 2.0, tau).unwrap();
            let q = quad(&d, 2.0, 1.0, tau);
            assert!((r.log_value - q.log_value).abs() < 1e-8, "{r:?} {q:?}");
        }
        let d = design_from_rows(&[&[1.5, -0.7, 0.4, 1.1]]).unwrap();
        let r = dual_prior_residue_n1(&[1.5, -0.7, 0.4, 1.1], -0.8, 0.3).unwrap();
        let q = quad(&d, -0.8, 1.0, 0.3);
        assert!((r.log_value - q.log_value).abs() < 1e-8, "{r:?} {q:?}");
    }

    #[test]
    fn sparse_asymptotic_matches_dominant_residue_term() {
        let d = design_from_rows(&[&[2.0, 1.0]]).unwrap();
        let v0 = v0_closed(&d, &[0], &[1.0]).unwrap();
        for tau in [0.1, 0.02] {
            let a = dual_prior_sparse_asymptotic(&d, 1.0, tau, &v0).unwrap();
            // (1/(2 tau)) (1/2) e^{-1/tau} (4/3)
            let dominant = (-1.0 / tau).exp() / (3.0 * tau);
            assert_relative_eq!(a.log_value, dominant.ln(), epsilon = 1e-12);
            let r = dual_prior_residue_n1(&[2.0, 1.0], 2.0, tau).unwrap();
            if tau == 0.02 {
                assert!((a.log_value - r.log_value).abs() <= 0.01);
            }
        }
        let sq = design_from_rows(&[&[2.0]]).unwrap();
        assert_eq!(dual_prior_sparse_asymptotic(&sq, 1.0, 0.1, &v0), Err(Error::EmptyKernel));
    }

    #[test]
    fn empty_kernel_is_point_evaluation() {
        let d = design_from_rows(&[&[2.0, 0.0], &[0.0, 1.0]]).unwrap();
        let tau = 0.5;
        for p in [1.0, 2.0, 3.0] {
            let e = dual_prior_numeric(&d, &v(&[1.0, -1.0]), p, tau, NumericMethod::Auto, &Budget::default()).unwrap();
            let want = log_prior_normalizer(p, tau, 2) - 0.5 * 4f64.ln() - lp_norm_pow(&v(&[0.5, -1.0]), p) / tau;
            assert_relative_eq!(e.log_value, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn monte_carlo_agrees_with_quadrature() {
        let d = design_from_rows(&[&[1.0, 0.4, -0.3]]).unwrap();
        let y = v(&[1.0]);
        for p in [1.0, 3.0] {
            let q = dual_prior_numeric(&d, &y, p, 0.2, NumericMethod::Quadrature, &Budget::default()).unwrap();
            let b = Budget { tolerance: 1.0, ..Budget::default() };
            let mc = dual_prior_numeric(&d, &y, p, 0.2, NumericMethod::MonteCarlo, &b).unwrap();
            assert!((q.log_value - mc.log_value).abs() <= 4.0 * mc.abs_error_estimate + 1e-3, "{q:?} {mc:?}");
        }
    }

    #[test]
    fn budget_is_monotone() {
        let d = design_from_rows(&[&[1.0, 0.4, -0.3]]).unwrap();
        let y = v(&[1.0]);
        let mut last = f64::INFINITY;
        for sub in [1, 2, 4, 8, 16, 32] {
            let b = Budget { max_subdivisions: sub, tolerance: f64::INFINITY, ..Budget::default() };
            let e = dual_prior_numeric(&d, &y, 1.0, 0.05, NumericMethod::Quadrature, &b).unwrap();
            assert!(e.abs_error_estimate <= last);
            last = e.abs_error_estimate;
        }
    }

    #[test]
    fn dimension_limits() {
        let d = design_from_rows(&[&[1.0, 0.5, 0.4, 0.3, 0.2]]).unwrap();
        let r = dual_prior_numeric(&d, &v(&[1.0]), 2.0, 0.1, NumericMethod::Quadrature, &Budget::default());
        assert!(matches!(r, Err(Error::DimensionTooHigh { dim: 4, limit: 3 })));
    }

    #[test]
    fn free_energy_minimizers() {
        let grid = log_grid(1e-3, 1e3, 61);
        let d = design_from_rows(&[&[3.0, 4.0]]).unwrap();
        let fe = free_energy_numeric_min(&d, &v(&[5.0]), 2.0, &grid).unwrap();
        assert!((fe.tau_min - 2.0).abs() <= 1e-4 * 2.0);
        let iic = iic_ridge(&d, &min_norm_l2(&d, &v(&[5.0])).unwrap()).unwrap();
        assert!((fe.scaled_min - fe.dropped_constant - iic.total).abs() <= 1e-6);

        let d = design_from_rows(&[&[2.0, 1.0]]).unwrap();
        let fe = free_energy_numeric_min(&d, &v(&[2.0]), 1.0, &grid).unwrap();
        assert!((fe.tau_min - 1.0).abs() <= 1e-4);
        let it = min_norm_l1(&d, &v(&[2.0]), &SolverOptions::default()).unwrap();
        let iic = iic_sparse(&d, &it, &v0_closed(&d, &it.support, &it.signs).unwrap()).unwrap();
        assert!((fe.scaled_min - fe.dropped_constant - iic.total).abs() <= 1e-6);

        let d = design_from_rows(&[&[3.0, 4.0]]).unwrap();
        let fe = free_energy_numeric_min(&d, &v(&[5.0]), 3.0, &grid).unwrap();
        let it = min_norm_lp(&d, &v(&[5.0]), 3.0, &SolverOptions::default()).unwrap();
        let iic = iic_smooth(&d, &it, 3.0).unwrap();
        assert!((fe.tau_min - iic.tau_star).abs() <= 1e-4 * iic.tau_star);
        assert!((fe.scaled_min - fe.dropped_constant - iic.total).abs() <= 1e-6);

        let narrow = log_grid(10.0, 100.0, 5);
        let d = design_from_rows(&[&[3.0, 4.0]]).unwrap();
        assert!(matches!(
            free_energy_numeric_min(&d, &v(&[5.0]), 2.0, &narrow),
            Err(Error::MinimumAtBoundary { index: 0 })
        ));
    }
}
