//! Small dense simplex solver.
//!
//! Solves `max c^T y  s.t.  G y <= h` with free `y` and `h >= 0`, so the origin is a
//! feasible starting vertex and no phase one is needed. Problems here have at most a
//! few hundred rows, so a full tableau is fine.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const PIVOT_EPS: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { y: DVector<f64>, value: f64 },
    Unbounded,
}

pub fn maximize(c: &DVector<f64>, g: &DMatrix<f64>, h: &DVector<f64>) -> Result<LpOutcome> {
    let (rows, k) = g.shape();
    if c.len() != k {
        return Err(Error::DimensionMismatch { expected: k, got: c.len() });
    }
    if h.len() != rows {
        return Err(Error::DimensionMismatch { expected: rows, got: h.len() });
    }
    if h.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::InvalidArgument("lp right-hand side must be nonnegative".into()));
    }
    // columns: y+ (k), y- (k), slacks (rows), rhs
    let ncols = 2 * k + rows;
    let mut t = DMatrix::<f64>::zeros(rows + 1, ncols + 1);
    for i in 0..rows {
        for j in 0..k {
            t[(i, j)] = g[(i, j)];
            t[(i, k + j)] = -g[(i, j)];
        }
        t[(i, 2 * k + i)] = 1.0;
        t[(i, ncols)] = h[i];
    }
    // objective row stores reduced costs c_j - z_j
    for j in 0..k {
        t[(rows, j)] = c[j];
        t[(rows, k + j)] = -c[j];
    }
    let mut basis: Vec<usize> = (2 * k..2 * k + rows).collect();
    let scale = c.amax().max(1.0);

    let max_iter = 50 * (ncols + rows).max(10);
    let mut stall = 0usize;
    let mut last_obj = f64::NEG_INFINITY;
    for _ in 0..max_iter {
        let bland = stall > 20;
        let entering = if bland {
            (0..ncols).find(|&j| t[(rows, j)] > PIVOT_EPS * scale)
        } else {
            let mut best = None;
            let mut best_val = PIVOT_EPS * scale;
            for j in 0..ncols {
                if t[(rows, j)] > best_val {
                    best_val = t[(rows, j)];
                    best = Some(j);
                }
            }
            best
        };
        let Some(e) = entering else {
            let mut z = DVector::<f64>::zeros(ncols);
            for (i, &b) in basis.iter().enumerate() {
                z[b] = t[(i, ncols)];
            }
            let y = DVector::from_fn(k, |j, _| z[j] - z[k + j]);
            let value = c.dot(&y);
            return Ok(LpOutcome::Optimal { y, value });
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..rows {
            let a = t[(i, e)];
            if a > PIVOT_EPS {
                let r = t[(i, ncols)] / a;
                let better = match leave {
                    None => true,
                    Some(l) => r < best_ratio - 1e-14 || (r <= best_ratio + 1e-14 && basis[i] < basis[l]),
                };
                if better {
                    best_ratio = r;
                    leave = Some(i);
                }
            }
        }
        let Some(l) = leave else {
            return Ok(LpOutcome::Unbounded);
        };
        pivot(&mut t, l, e);
        basis[l] = e;
        let obj = -t[(rows, ncols)];
        if obj > last_obj + 1e-13 * scale {
            stall = 0;
            last_obj = obj;
        } else {
            stall += 1;
        }
    }
    Err(Error::MaxIterations { iterations: max_iter })
}

fn pivot(t: &mut DMatrix<f64>, r: usize, c: usize) {
    let p = t[(r, c)];
    let ncols = t.ncols();
    for j in 0..ncols {
        t[(r, j)] /= p;
    }
    let prow = t.row(r).clone_owned();
    for i in 0..t.nrows() {
        if i != r {
            let f = t[(i, c)];
            if f != 0.0 {
                for j in 0..ncols {
                    t[(i, j)] -= f * prow[j];
                }
            }
        }
    }
    t[(r, c)] = 1.0;
}
