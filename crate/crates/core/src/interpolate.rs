//! Minimum-norm interpolators: `min ||theta||_p` subject to `X theta = Y`.
//!
//! `p = 2` is the pseudoinverse, `p > 2` is a damped Newton iteration over the
//! kernel coordinates, and `p = 1` (basis pursuit) is ADMM on the split LP followed
//! by an exact support polish and a dual certificate.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{kernel_basis, pinv_apply, DesignMatrix, RANK_TOL};
use crate::lp::{maximize, LpOutcome};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Support threshold relative to `||theta||_inf`.
    pub tol_support_rel: f64,
    /// Required slack in `||X_C^T mu||_inf < 1`.
    pub cert_margin_tol: f64,
    /// Accepted duality gap relative to `max(1, ||theta||_1)`.
    pub gap_tol_rel: f64,
    /// Newton acceptance: `||g||_inf <= stationarity_tol_rel * max(1, ||theta||_p^p)`.
    pub stationarity_tol_rel: f64,
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Iterations between polish attempts.
    pub polish_every: usize,
    /// Seed for the random ADMM starting point.
    pub seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 10_000,
            tol_support_rel: 1e-8,
            cert_margin_tol: 1e-6,
            gap_tol_rel: 1e-8,
            stationarity_tol_rel: 1e-10,
            rho: 1.0,
            polish_every: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateReport {
    pub mu: Vec<f64>,
    pub max_abs_offsupport: f64,
    pub unique: bool,
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interpolator {
    pub theta: DVector<f64>,
    pub p: f64,
    pub support: Vec<usize>,
    pub signs: Vec<f64>,
    /// `||X theta - Y||_2`.
    pub residual: f64,
    /// Kernel-projected gradient for `p >= 2`, duality gap for `p = 1`.
    pub stationarity: f64,
    pub iterations: usize,
    pub certificate: Option<CertificateReport>,
}

impl Interpolator {
    /// `||theta||_p^p`.
    pub fn norm_p_to_p(&self) -> f64 {
        lp_norm_pow(&self.theta, self.p)
    }
}

pub fn lp_norm_pow(theta: &DVector<f64>, p: f64) -> f64 {
    if p == 1.0 {
        theta.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        theta.norm_squared()
    } else {
        theta.iter().map(|v| v.abs().powf(p)).sum()
    }
}

fn residual_norm(design: &DesignMatrix, theta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (design.x() * theta - y).norm()
}

fn check_y(design: &DesignMatrix, y: &DVector<f64>) -> Result<()> {
    if y.len() != design.n() {
        return Err(Error::DimensionMismatch { expected: design.n(), got: y.len() });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(())
}

/// Indices with `|theta_j| > tol` and their signs. The default tolerance is
/// `1e-8 * ||theta||_inf`.
pub fn detect_support(theta: &DVector<f64>, tol_support: Option<f64>) -> (Vec<usize>, Vec<f64>) {
    let tol = tol_support.unwrap_or(1e-8 * theta.amax());
    let support: Vec<usize> = (0..theta.len()).filter(|&j| theta[j].abs() > tol).collect();
    let signs = support.iter().map(|&j| theta[j].signum()).collect();
    (support, signs)
}

pub fn min_norm_l2(design: &DesignMatrix, y: &DVector<f64>) -> Result<Interpolator> {
    check_y(design, y)?;
    let theta = pinv_apply(design, y)?;
    let (support, signs) = detect_support(&theta, None);
    let q = kernel_basis(design);
    let stationarity = if q.dim() == 0 { 0.0 } else { (q.q.transpose() * (2.0 * &theta)).amax() };
    Ok(Interpolator {
        residual: residual_norm(design, &theta, y),
        theta,
        p: 2.0,
        support,
        signs,
        stationarity,
        iterations: 0,
        certificate: None,
    })
}

/// Gradient of `sum |theta_j|^p` with respect to theta.
fn grad_theta(theta: &DVector<f64>, p: f64) -> DVector<f64> {
    theta.map(|v| p * v.abs().powf(p - 1.0) * v.signum())
}

pub fn min_norm_lp(
    design: &DesignMatrix,
    y: &DVector<f64>,
    p: f64,
    opts: &SolverOptions,
) -> Result<Interpolator> {
    if !(p >= 2.0) || !p.is_finite() {
        return Err(Error::InvalidArgument(format!("min_norm_lp needs p >= 2, got {p}")));
    }
    check_y(design, y)?;
    let theta0 = pinv_apply(design, y)?;
    let q = kernel_basis(design);
    let m = q.dim();
    let scale = theta0.amax();
    if m == 0 || scale == 0.0 {
        let (support, signs) = detect_support(&theta0, None);
        return Ok(Interpolator {
            residual: residual_norm(design, &theta0, y),
            theta: theta0,
            p,
            support,
            signs,
            stationarity: 0.0,
            iterations: 0,
            certificate: None,
        });
    }
    // work on the normalized problem, ||theta0||_inf = 1
    let base = &theta0 / scale;
    let qm = &q.q;
    let h = |w: &DVector<f64>| lp_norm_pow(&(&base + qm * w), p);
    let mut w = DVector::<f64>::zeros(m);
    let mut theta = base.clone();
    let mut hv = h(&w);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        let g = qm.transpose() * grad_theta(&theta, p);
        if g.amax() <= opts.stationarity_tol_rel * hv.max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let singular = p > 2.0 && theta.iter().any(|v| v.abs() < 1e-12);
        let newton = if singular {
            None
        } else {
            let lam = theta.map(|v| p * (p - 1.0) * v.abs().powf(p - 2.0));
            let qs = DMatrix::from_fn(qm.nrows(), m, |i, j| qm[(i, j)] * lam[i]);
            let hess = qm.transpose() * qs;
            hess.cholesky().map(|c| -c.solve(&g))
        };
        let is_newton = newton.is_some();
        let dir = newton.unwrap_or_else(|| -&g);
        let slope = g.dot(&dir);
        if is_newton && -slope <= 1e-8 * hv.max(1.0) {
            // inside the quadratic region the decrease in h is below rounding; take the full step
            w += &dir;
            theta = &base + qm * &w;
            hv = h(&w);
            continue;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = &w + step * &dir;
            let hc = h(&cand);
            if hc <= hv + 1e-4 * step * slope {
                accepted = Some((cand, hc));
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some((cand, hc)) => {
                w = cand;
                hv = hc;
                theta = &base + qm * &w;
            }
            None => {
                // at the rounding floor of h; take the full step only if it shrinks the gradient
                let cand = &w + &dir;
                let tc = &base + qm * &cand;
                let gc = qm.transpose() * grad_theta(&tc, p);
                if gc.amax() < g.amax() {
                    w = cand;
                    theta = tc;
                    hv = h(&w);
                } else {
                    converged = g.amax() <= 1e3 * opts.stationarity_tol_rel * hv.max(1.0);
                    break;
                }
            }
        }
    }
    if !converged {
        return Err(Error::MaxIterations { iterations });
    }
    let theta = theta * scale;
    let stationarity = (qm.transpose() * grad_theta(&theta, p)).amax();
    let (support, signs) = detect_support(&theta, Some(opts.tol_support_rel * theta.amax()));
    Ok(Interpolator {
        residual: residual_norm(design, &theta, y),
        theta,
        p,
        support,
        signs,
        stationarity,
        iterations,
        certificate: None,
    })
}

fn full_column_rank(a: &DMatrix<f64>) -> bool {
    let (r, c) = a.shape();
    if c == 0 {
        return true;
    }
    if c > r {
        return false;
    }
    let sv = a.singular_values();
    let smax = sv.max();
    smax > 0.0 && sv.iter().all(|&s| s > RANK_TOL * smax * r.max(c) as f64)
}

pub fn uniqueness_certificate(
    design: &DesignMatrix,
    support: &[usize],
    signs: &[f64],
) -> Result<CertificateReport> {
    uniqueness_certificate_with(design, support, signs, SolverOptions::default().cert_margin_tol)
}

/// Dual certificate for the support `S` with sign pattern `s`.
///
/// `mu` is the minimum-norm solution of `X_S^T mu = s`. When `|S| < n` that system has
/// a family of solutions, and the one minimizing `||X_C^T mu||_inf` is found by a small LP.
pub fn uniqueness_certificate_with(
    design: &DesignMatrix,
    support: &[usize],
    signs: &[f64],
    cert_margin_tol: f64,
) -> Result<CertificateReport> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support".into()));
    }
    if support.len() != signs.len() {
        return Err(Error::DimensionMismatch { expected: support.len(), got: signs.len() });
    }
    let n = design.n();
    let xs = design.columns(support);
    if !full_column_rank(&xs) {
        return Err(Error::SupportRankDeficient);
    }
    let off: Vec<usize> = (0..design.d()).filter(|j| !support.contains(j)).collect();
    let xc = design.columns(&off);
    let s = DVector::from_column_slice(signs);
    let gs = xs.transpose() * &xs;
    let chol = gs.cholesky().ok_or(Error::SupportRankDeficient)?;
    let mut mu = &xs * chol.solve(&s);
    let mut max_off = if off.is_empty() { 0.0 } else { (xc.transpose() * &mu).amax() };

    if support.len() < n && !off.is_empty() && max_off > 0.0 {
        if let Some(better) = refine_certificate(&xs, &xc, &mu, max_off)? {
            let val = (xc.transpose() * &better).amax();
            if val < max_off {
                mu = better;
                max_off = val;
            }
        }
    }
    let margin = 1.0 - max_off;
    Ok(CertificateReport {
        mu: mu.iter().copied().collect(),
        max_abs_offsupport: max_off,
        unique: max_off < 1.0 - cert_margin_tol,
        margin,
    })
}

/// Minimizes `||X_C^T (mu0 + N nu)||_inf` over `nu`, where `N` spans `ker X_S^T`.
fn refine_certificate(
    xs: &DMatrix<f64>,
    xc: &DMatrix<f64>,
    mu0: &DVector<f64>,
    t0: f64,
) -> Result<Option<DVector<f64>>> {
    let n = xs.nrows();
    let k = xs.ncols();
    let svd = xs.clone().svd(true, false);
    let u = svd.u.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    // left singular vectors beyond the column rank span ker X_S^T
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let full_u = complete_basis(&u, &order[..k], n);
    let nb = full_u.columns(k, n - k).into_owned();
    let a = xc.transpose() * &nb; // |C| x (n-k)
    let b = xc.transpose() * mu0;
    let rows = 2 * a.nrows();
    let vars = nb.ncols() + 1;
    let mut g = DMatrix::<f64>::zeros(rows, vars);
    let mut h = DVector::<f64>::zeros(rows);
    for j in 0..a.nrows() {
        for c in 0..nb.ncols() {
            g[(2 * j, c)] = a[(j, c)];
            g[(2 * j + 1, c)] = -a[(j, c)];
        }
        g[(2 * j, vars - 1)] = 1.0;
        g[(2 * j + 1, vars - 1)] = 1.0;
        h[2 * j] = (t0 - b[j]).max(0.0);
        h[2 * j + 1] = (t0 + b[j]).max(0.0);
    }
    let mut c = DVector::<f64>::zeros(vars);
    c[vars - 1] = 1.0;
    match maximize(&c, &g, &h)? {
        LpOutcome::Optimal { y, .. } => {
            let nu = y.rows(0, nb.ncols()).into_owned();
            Ok(Some(mu0 + nb * nu))
        }
        LpOutcome::Unbounded => Ok(None),
    }
}

/// Orthonormal basis of R^n whose first columns span the selected columns of `u`.
fn complete_basis(u: &DMatrix<f64>, keep: &[usize], n: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = keep.iter().map(|&i| u.column(i).into_owned()).collect();
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = DVector::<f64>::zeros(n);
        v[e] = 1.0;
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&v);
                v -= d * c;
            }
        }
        let nv = v.norm();
        if nv > 1e-8 {
            cols.push(v / nv);
        }
    }
    DMatrix::from_columns(&cols)
}

struct Polished {
    theta: DVector<f64>,
    support: Vec<usize>,
    signs: Vec<f64>,
    cert: CertificateReport,
    gap: f64,
}

/// Re-solves on the dominant support of an iterate and evaluates the certificate.
fn polish(
    design: &DesignMatrix,
    b: &DVector<f64>,
    iterate: &DVector<f64>,
    opts: &SolverOptions,
) -> Option<Polished> {
    let n = design.n();
    let top = iterate.amax();
    if top == 0.0 {
        return None;
    }
    let mut cand: Vec<usize> = (0..iterate.len()).filter(|&j| iterate[j].abs() > 1e-6 * top).collect();
    cand.sort_by(|&a, &c| iterate[c].abs().total_cmp(&iterate[a].abs()).then(a.cmp(&c)));
    cand.truncate(n);
    cand.sort_unstable();
    let xs = design.columns(&cand);
    if !full_column_rank(&xs) {
        return None;
    }
    let ts = if cand.len() == n {
        xs.clone().lu().solve(b)?
    } else {
        let chol = (xs.transpose() * &xs).cholesky()?;
        chol.solve(&(xs.transpose() * b))
    };
    let mut theta = DVector::<f64>::zeros(design.d());
    for (k, &j) in cand.iter().enumerate() {
        theta[j] = ts[k];
    }
    if residual_norm(design, &theta, b) > 1e-10 * b.norm().max(1.0) {
        return None;
    }
    let (support, signs) = detect_support(&theta, Some(opts.tol_support_rel * theta.amax()));
    if support.is_empty() {
        return None;
    }
    let cert = uniqueness_certificate_with(design, &support, &signs, opts.cert_margin_tol).ok()?;
    let mu = DVector::from_column_slice(&cert.mu);
    let dual_scale = (design.x().transpose() * &mu).amax().max(1.0);
    let l1 = lp_norm_pow(&theta, 1.0);
    let gap = l1 - b.dot(&mu) / dual_scale;
    Some(Polished { theta, support, signs, cert, gap })
}

pub fn min_norm_l1(design: &DesignMatrix, y: &DVector<f64>, opts: &SolverOptions) -> Result<Interpolator> {
    check_y(design, y)?;
    let (n, d) = (design.n(), design.d());
    let scale = pinv_apply(design, y)?.amax();
    if scale == 0.0 {
        return Ok(Interpolator {
            theta: DVector::zeros(d),
            p: 1.0,
            support: vec![],
            signs: vec![],
            residual: y.norm(),
            stationarity: 0.0,
            iterations: 0,
            certificate: None,
        });
    }
    let b = y / scale;
    let x = design.x();
    let chol = design.gram_cholesky()?;
    // x-update projects onto {[X, -X] v = b}; ([X,-X][X,-X]^T)^{-1} = (2 X X^T)^{-1}
    let project = |v: &DVector<f64>| -> DVector<f64> {
        let (vp, vm) = (v.rows(0, d), v.rows(d, d));
        let r = x * (vp - vm) - &b;
        let lam = chol.solve(&r) * 0.5;
        let corr = x.transpose() * lam;
        let mut out = v.clone();
        for j in 0..d {
            out[j] -= corr[j];
            out[d + j] += corr[j];
        }
        out
    };
    let mut rng = ChaCha20Rng::seed_from_u64(opts.seed);
    let mut z = DVector::from_fn(2 * d, |_, _| rng.random::<f64>());
    let mut u = DVector::<f64>::zeros(2 * d);
    let mut rho = opts.rho;
    let ones = DVector::<f64>::from_element(2 * d, 1.0);
    let mut last_margin = f64::NAN;
    let mut iter = 0;
    while iter < opts.max_iter {
        iter += 1;
        let xv = project(&(&z - &u - &ones / rho));
        let z_prev = z.clone();
        z = (&xv + &u).map(|v| v.max(0.0));
        u += &xv - &z;
        let r_primal = (&xv - &z).norm();
        let r_dual = rho * (&z - &z_prev).norm();

        let converged = r_primal <= 1e-13 * (1.0 + z.norm()) && r_dual <= 1e-13 * (1.0 + z.norm());
        if iter % opts.polish_every == 0 || converged || iter == opts.max_iter {
            let iterate = DVector::from_fn(d, |j, _| z[j] - z[d + j]);
            if let Some(pol) = polish(design, &b, &iterate, opts) {
                last_margin = pol.cert.margin;
                let l1 = lp_norm_pow(&pol.theta, 1.0);
                if pol.gap.abs() <= opts.gap_tol_rel * l1.max(1.0) && pol.cert.max_abs_offsupport <= 1.0 + 1e-9 {
                    if !pol.cert.unique {
                        return Err(Error::NotUnique { objective: l1 * scale, margin: pol.cert.margin });
                    }
                    let theta = pol.theta * scale;
                    let gap = pol.gap.abs() * scale;
                    return Ok(Interpolator {
                        residual: residual_norm(design, &theta, y),
                        theta,
                        p: 1.0,
                        support: pol.support,
                        signs: pol.signs,
                        stationarity: gap,
                        iterations: iter,
                        certificate: Some(pol.cert),
                    });
                }
            }
            if converged {
                let objective = lp_norm_pow(&iterate, 1.0) * scale;
                return Err(Error::NotUnique { objective, margin: last_margin });
            }
        }
        if iter % 50 == 0 && n > 0 {
            if r_primal > 10.0 * r_dual {
                rho *= 2.0;
                u /= 2.0;
            } else if r_dual > 10.0 * r_primal {
                rho /= 2.0;
                u *= 2.0;
            }
        }
    }
    Err(Error::MaxIterations { iterations: iter })
}

/// Dispatches on `p`: 1 goes to basis pursuit, 2 to the pseudoinverse, larger to Newton.
pub fn min_norm(design: &DesignMatrix, y: &DVector<f64>, p: f64, opts: &SolverOptions) -> Result<Interpolator> {
    if p == 1.0 {
        min_norm_l1(design, y, opts)
    } else if p == 2.0 {
        min_norm_l2(design, y)
    } else if p > 2.0 {
        min_norm_lp(design, y, p, opts)
    } else {
        Err(Error::InvalidArgument(format!("p must be 1 or >= 2, got {p}")))
    }
}
