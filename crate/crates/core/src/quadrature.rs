//! Globally adaptive Gauss–Kronrod (7/15) quadrature for matrix-valued integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{invalid, Error, Result};
use crate::linalg::RealMatrix;

/// Hard cap on the number of subintervals.
pub const MAX_SUBINTERVALS: usize = 1 << 20;

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
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subintervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_subintervals: MAX_SUBINTERVALS,
        }
    }
}

impl QuadOptions {
    pub fn with_rel_tol(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult {
    pub value: RealMatrix,
    /// Frobenius-norm error estimate (sum over subintervals of ‖K15 − G7‖).
    pub error: f64,
    pub subintervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: RealMatrix,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> RealMatrix>(f: &F, a: f64, b: f64) -> Piece {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let sum = f(center - dx) + f(center + dx);
        kron += &sum * WGK[j];
        if j % 2 == 1 {
            gauss += &sum * WG[j / 2];
        }
    }
    kron *= half;
    gauss *= half;
    let error = (&kron - &gauss).norm();
    Piece {
        a,
        b,
        value: kron,
        error,
    }
}

/// `∫_a^b f(t) dt` to `max(abs_tol, rel_tol·‖I‖_F)`.
pub fn integrate<F: Fn(f64) -> RealMatrix>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<QuadResult> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(invalid(format!("bad integration interval [{a}, {b}]")));
    }
    let first = kronrod(&f, a, b);
    if b == a {
        return Ok(QuadResult {
            value: first.value * 0.0,
            error: 0.0,
            subintervals: 1,
        });
    }
    let mut total = first.value.clone();
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);
    loop {
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        if total_err <= target {
            break;
        }
        if heap.len() >= opts.max_subintervals {
            return Err(Error::Numeric(format!(
                "quadrature budget of {} subintervals exhausted (error {total_err:e}, target {target:e})",
                opts.max_subintervals
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Interval at floating-point resolution; accept its estimate.
            total_err -= worst.error;
            heap.push(Piece { error: 0.0, ..worst });
            continue;
        }
        let left = kronrod(&f, worst.a, mid);
        let right = kronrod(&f, mid, worst.b);
        total += &left.value + &right.value - &worst.value;
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed the drift of incremental updates.
    let mut value = total * 0.0;
    let mut error = 0.0;
    let subintervals = heap.len();
    for p in heap.into_iter() {
        value += p.value;
        error += p.error;
    }
    Ok(QuadResult {
        value,
        error,
        subintervals,
    })
}

/// Integrates across consecutive `breaks` (sorted, covering `[a, b]`) so that
/// piecewise-smooth integrands never straddle a discontinuity.
pub fn integrate_piecewise<F: Fn(f64) -> RealMatrix>(f: F, breaks: &[f64], opts: QuadOptions) -> Result<QuadResult> {
    if breaks.len() < 2 {
        return Err(invalid("need at least two break points"));
    }
    let mut value: Option<RealMatrix> = None;
    let mut error = 0.0;
    let mut subintervals = 0;
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let piece = integrate(&f, w[0], w[1], opts)?;
        value = Some(match value {
            Some(v) => v + piece.value,
            None => piece.value,
        });
        error += piece.error;
        subintervals += piece.subintervals;
    }
    let value = value.unwrap_or_else(|| f(breaks[0]) * 0.0);
    Ok(QuadResult {
        value,
        error,
        subintervals,
    })
}
