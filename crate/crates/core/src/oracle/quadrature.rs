//! Nested adaptive Gauss-Kronrod (7/15) quadrature over boxes of dimension <= 3.
//!
//! Every axis is integrated adaptively; the integrand of an outer axis is the inner
//! integral, and inner error estimates are carried outward with the same weights.

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7]
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Piece {
    a: f64,
    b: f64,
    val: f64,
    err: f64,
}

/// Value and error estimate of the integral of `f` over `[a, b]`. `f` returns
/// `(value, error)` pairs so that inner-level errors propagate.
fn gk15(f: &mut dyn FnMut(f64) -> (f64, f64), a: f64, b: f64) -> Piece {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut k = 0.0;
    let mut g = 0.0;
    let mut inner = 0.0;
    let mut abs = 0.0;
    for i in 0..8 {
        let nodes: &[f64] = if i == 7 { &[0.0] } else { &[-XGK[i], XGK[i]] };
        for &x in nodes {
            let (v, e) = f(c + h * x);
            k += WGK[i] * v;
            inner += WGK[i] * e;
            abs += WGK[i] * v.abs();
            if i % 2 == 1 {
                g += WG[i / 2] * v;
            }
        }
    }
    let val = h * k;
    let err = (h * (k - g)).abs() + h.abs() * inner + 1e-15 * h.abs() * abs;
    Piece { a, b, val, err }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Adaptive bisection of the worst piece until `err <= max(rel * |value|, abs_floor)`
/// or `max_sub` bisections have been spent. Returns the lowest-error state seen,
/// so a larger `max_sub` can never report a larger error.
pub(crate) fn adaptive(
    f: &mut dyn FnMut(f64) -> (f64, f64),
    a: f64,
    b: f64,
    breaks: &[f64],
    rel: f64,
    abs_floor: f64,
    max_sub: usize,
) -> Estimate {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup_by(|x, y| (*x - *y).abs() <= 1e-14 * (b - a));
    pts.extend(inner);
    pts.push(b);
    let mut pieces: Vec<Piece> = pts.windows(2).map(|w| gk15(f, w[0], w[1])).collect();
    let total = |ps: &[Piece]| {
        ps.iter().fold(Estimate { value: 0.0, error: 0.0 }, |acc, p| Estimate {
            value: acc.value + p.val,
            error: acc.error + p.err,
        })
    };
    let mut best = total(&pieces);
    for _ in 0..max_sub {
        let cur = total(&pieces);
        if cur.error < best.error {
            best = cur;
        }
        if cur.error <= (rel * cur.value.abs()).max(abs_floor) {
            break;
        }
        let worst = (0..pieces.len()).max_by(|&i, &j| pieces[i].err.total_cmp(&pieces[j].err)).unwrap();
        let p = pieces.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            break;
        }
        pieces.push(gk15(f, p.a, mid));
        pieces.push(gk15(f, mid, p.b));
    }
    let cur = total(&pieces);
    if cur.error < best.error {
        best = cur;
    }
    best
}

pub(crate) struct Nested<'a> {
    pub lo: &'a [f64],
    pub hi: &'a [f64],
    pub integrand: &'a dyn Fn(&[f64]) -> f64,
    /// Breakpoints for axis `k` given the fixed outer coordinates.
    pub breaks: &'a dyn Fn(usize, &[f64]) -> Vec<f64>,
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub outer_max_sub: usize,
    pub inner_max_sub: usize,
}

impl Nested<'_> {
    pub fn integrate(&self) -> Estimate {
        let mut prefix = Vec::with_capacity(self.lo.len());
        self.level(0, &mut prefix, 1.0)
    }

    fn level(&self, k: usize, prefix: &mut Vec<f64>, outer_vol: f64) -> Estimate {
        let m = self.lo.len();
        let bp = (self.breaks)(k, prefix);
        let rel = self.rel_tol * 0.1f64.powi(k as i32);
        let floor = self.abs_floor * 0.1f64.powi(k as i32) / outer_vol;
        let max_sub = if k == 0 { self.outer_max_sub } else { self.inner_max_sub };
        let width = self.hi[k] - self.lo[k];
        let mut f = |x: f64| {
            prefix.push(x);
            let r = if k + 1 == m {
                ((self.integrand)(prefix), 0.0)
            } else {
                let e = self.level(k + 1, prefix, outer_vol * width);
                (e.value, e.error)
            };
            prefix.pop();
            r
        };
        adaptive(&mut f, self.lo[k], self.hi[k], &bp, rel, floor, max_sub)
    }
}
