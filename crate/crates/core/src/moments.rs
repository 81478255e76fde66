//! First and second moments of the controlled mean-field SDE, and the scalar
//! closed forms built on them.

use crate::analysis::MeanFieldSystem;
use crate::error::{invalid, Error, Result};
use crate::linalg::{matrix_exponential, GaussianLaw, RealMatrix, RealVector, SYMMETRY_TOL};
use crate::ode::{self, OdeOptions};
use crate::quadrature::{integrate_piecewise, QuadOptions};
use crate::signal::ControlSignal;

/// Below this `|a·T|` the removable singularities are evaluated by series.
pub const SERIES_THRESHOLD: f64 = 1e-6;

/// Output time grid for [`integrate_moments`].
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    /// `points` equally spaced times from 0 to T (at least 2).
    Uniform(usize),
    /// Strictly increasing times starting at 0 and ending at T.
    Explicit(Vec<f64>),
}

impl GridSpec {
    pub fn times(&self, horizon: f64) -> Result<Vec<f64>> {
        match self {
            GridSpec::Uniform(points) => {
                if *points < 2 {
                    return Err(invalid("a moment grid needs at least 2 points"));
                }
                Ok(uniform_grid(horizon, points - 1))
            }
            GridSpec::Explicit(times) => {
                if times.len() < 2 {
                    return Err(invalid("a moment grid needs at least 2 points"));
                }
                if times[0] != 0.0 || *times.last().expect("non-empty") != horizon {
                    return Err(invalid("explicit grid must start at 0 and end at T"));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(invalid("explicit grid must be strictly increasing"));
                }
                Ok(times.clone())
            }
        }
    }
}

/// `steps + 1` equally spaced times on `[0, T]` with exact end points.
pub fn uniform_grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps)
        .map(|i| {
            if i == steps {
                horizon
            } else {
                horizon * i as f64 / steps as f64
            }
        })
        .collect()
}

/// Mean and covariance trajectories on a time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentPath {
    pub grid: Vec<f64>,
    pub means: Vec<RealVector>,
    pub covariances: Vec<RealMatrix>,
}

impl MomentPath {
    pub fn terminal_mean(&self) -> &RealVector {
        self.means.last().expect("grid has at least two points")
    }

    pub fn terminal_covariance(&self) -> &RealMatrix {
        self.covariances.last().expect("grid has at least two points")
    }

    pub fn terminal_law(&self) -> GaussianLaw {
        GaussianLaw {
            mean: self.terminal_mean().clone(),
            covariance: self.terminal_covariance().clone(),
        }
    }

    /// CSV with columns `t, mean_1..mean_d, cov_11..cov_dd` (full matrix, row-major).
    pub fn to_csv(&self) -> String {
        let d = self.means.first().map_or(0, |m| m.len());
        let mut out = String::from("t");
        for i in 1..=d {
            out.push_str(&format!(",mean_{i}"));
        }
        for i in 1..=d {
            for j in 1..=d {
                out.push_str(&format!(",cov_{i}{j}"));
            }
        }
        out.push('\n');
        for ((t, m), c) in self.grid.iter().zip(&self.means).zip(&self.covariances) {
            out.push_str(&format_float(*t));
            for x in m.iter() {
                out.push(',');
                out.push_str(&format_float(*x));
            }
            for i in 0..d {
                for j in 0..d {
                    out.push(',');
                    out.push_str(&format_float(c[(i, j)]));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

fn pack(m: &RealVector, c: &RealMatrix, y: &mut [f64]) {
    let d = m.len();
    y[..d].copy_from_slice(m.as_slice());
    y[d..].copy_from_slice(c.as_slice());
}

fn unpack(y: &[f64], d: usize) -> (RealVector, RealMatrix) {
    (
        RealVector::from_column_slice(&y[..d]),
        RealMatrix::from_column_slice(d, d, &y[d..]),
    )
}

fn check_control(sys: &MeanFieldSystem, control: &ControlSignal) -> Result<()> {
    if control.dim() != sys.control_dim() {
        return Err(invalid(format!(
            "control has dimension {} but the system expects {}",
            control.dim(),
            sys.control_dim()
        )));
    }
    let t = sys.horizon();
    let tol = 1e-12 * t;
    if (control.start()).abs() > tol || (control.end() - t).abs() > tol {
        return Err(invalid(format!(
            "control covers [{}, {}] but the horizon is [0, {t}]",
            control.start(),
            control.end()
        )));
    }
    Ok(())
}

/// Merged sorted breakpoints of `grid` and the control segments.
fn merged_breaks(grid: &[f64], control: &ControlSignal) -> Vec<f64> {
    let horizon = *grid.last().expect("non-empty grid");
    let mut all: Vec<f64> = grid.to_vec();
    all.extend(control.breakpoints().into_iter().filter(|&b| b > 0.0 && b < horizon));
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// Solves `dm = ((A1+A2) m + (B1+B2) v) dt` and
/// `dCov = (A1 Cov + Cov A1^* + g g^*) dt` with `g = C m + (D1+D2) v`.
pub fn integrate_moments(
    sys: &MeanFieldSystem,
    x0: &GaussianLaw,
    control: &ControlSignal,
    grid: &GridSpec,
) -> Result<MomentPath> {
    integrate_moments_with(sys, x0, control, grid, &OdeOptions::default())
}

pub fn integrate_moments_with(
    sys: &MeanFieldSystem,
    x0: &GaussianLaw,
    control: &ControlSignal,
    grid: &GridSpec,
    opts: &OdeOptions,
) -> Result<MomentPath> {
    let d = sys.state_dim();
    if x0.dim() != d {
        return Err(invalid(format!(
            "initial law has dimension {} but the system has {d}",
            x0.dim()
        )));
    }
    check_control(sys, control)?;
    let times = grid.times(sys.horizon())?;
    let a_mean = sys.mean_generator();
    let b_mean = sys.mean_input();
    let g_in = sys.noise_input();
    let a1 = &sys.a1;
    let c = &sys.c;

    let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
        let (m, cov) = unpack(y, d);
        let v = control.eval(t);
        let dm = &a_mean * &m + &b_mean * &v;
        let g = c * &m + &g_in * &v;
        let a1c = a1 * &cov;
        let mut dc = &a1c + a1c.transpose() + &g * g.transpose();
        dc = (&dc + dc.transpose()) * 0.5;
        pack(&dm, &dc, dy);
    };

    let mut state = vec![0.0; d + d * d];
    pack(&x0.mean, &x0.covariance, &mut state);
    let breaks = merged_breaks(&times, control);
    let mut means = Vec::with_capacity(times.len());
    let mut covariances = Vec::with_capacity(times.len());
    let mut record = |state: &[f64]| -> Result<()> {
        let (m, cov) = unpack(state, d);
        let scale = cov.amax();
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
            return Err(Error::Numeric(format!("covariance lost symmetry ({asym:e})")));
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        if !m.iter().chain(cov.iter()).all(|x| x.is_finite()) {
            return Err(Error::Numeric("moment ODE produced non-finite values".into()));
        }
        means.push(m);
        covariances.push(cov);
        Ok(())
    };
    record(&state)?;
    let mut next_out = 1;
    for w in breaks.windows(2) {
        // Evaluate the control strictly inside the piece so a switch at the
        // right end point never leaks into this interval.
        let (lo, hi) = (w[0], w[1]);
        let seg = |t: f64, y: &[f64], dy: &mut [f64]| rhs(t.clamp(lo, hi - (hi - lo) * 1e-15), y, dy);
        ode::integrate(seg, lo, hi, &mut state, opts)?;
        if next_out < times.len() && times[next_out] == hi {
            record(&state)?;
            next_out += 1;
        }
    }
    debug_assert_eq!(next_out, times.len());
    Ok(MomentPath {
        grid: times,
        means,
        covariances,
    })
}

/// `∫_0^T e^{(T−t)A1} G v(t) v(t)^* G^* e^{(T−t)A1^*} dt` with `G = D1 + D2`:
/// the terminal covariance from a deterministic initial state.
///
/// Requires `C = 0` (otherwise the diffusion depends on the mean and the
/// covariance is not a pure function of the control).
pub fn terminal_covariance(sys: &MeanFieldSystem, control: &ControlSignal) -> Result<RealMatrix> {
    check_control(sys, control)?;
    if sys.c.iter().any(|&x| x != 0.0) {
        return Err(invalid(
            "terminal_covariance needs C = 0; use integrate_moments for mean-dependent diffusion",
        ));
    }
    let horizon = sys.horizon();
    let g_in = sys.noise_input();
    let a1 = &sys.a1;
    matrix_exponential(a1, horizon)?;
    let breaks = control.breakpoints();
    let integrand = |t: f64| {
        let e = matrix_exponential(a1, horizon - t).expect("validated generator");
        let col = e * (&g_in * control.eval(t.min(horizon)));
        &col * col.transpose()
    };
    // Keep evaluations inside each piece so switches are honoured.
    let mut total = RealMatrix::zeros(sys.state_dim(), sys.state_dim());
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let piece = integrate_piecewise(
            |t: f64| integrand(t.clamp(lo, hi - (hi - lo) * 1e-15)),
            &[lo, hi],
            QuadOptions {
                rel_tol: 1e-13,
                abs_tol: 1e-300,
                ..QuadOptions::default()
            },
        )?;
        total += piece.value;
    }
    Ok((&total + total.transpose()) * 0.5)
}

/// `(1 − e^{−x})/x`-type helper: returns `(1 − e^{−2 a s}) / (2a)`, continuous at `a = 0`.
pub(crate) fn decay_window(a: f64, s: f64) -> f64 {
    let x = 2.0 * a * s;
    if x.abs() < SERIES_THRESHOLD {
        s * (1.0 - x / 2.0 + x * x / 6.0)
    } else {
        -(-x).exp_m1() / (2.0 * a)
    }
}

/// `ψ(T) = (e^{−a2 T} − e^{−2 a2 T}) / (2 a2)`, equal to `T/2` at `a2 = 0`.
pub fn psi_factor(a2: f64, horizon: f64) -> f64 {
    let x = a2 * horizon;
    if x.abs() < SERIES_THRESHOLD {
        horizon / 2.0 * (1.0 - 1.5 * x + 7.0 / 6.0 * x * x)
    } else {
        // e^{−x}(1 − e^{−x}) / (2 a2) without cancellation.
        -(-x).exp() * (-x).exp_m1() / (2.0 * a2)
    }
}

/// Scalar system `dX = (a1 X + a2 E[X] + b E[u]) dt + δ E[u] dW`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scalar1DSystem {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub delta: f64,
    pub horizon: f64,
}

impl Scalar1DSystem {
    pub fn new(a1: f64, a2: f64, b: f64, delta: f64, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon T must be positive and finite"));
        }
        if ![a1, a2, b, delta].iter().all(|x| x.is_finite()) {
            return Err(invalid("scalar coefficients must be finite"));
        }
        Ok(Self {
            a1,
            a2,
            b,
            delta,
            horizon,
        })
    }

    pub fn to_system(&self) -> MeanFieldSystem {
        let s = |x: f64| RealMatrix::from_element(1, 1, x);
        MeanFieldSystem::builder(1, 1, self.horizon)
            .a1(s(self.a1))
            .a2(s(self.a2))
            .b2(s(self.b))
            .d2(s(self.delta))
            .build()
            .expect("validated scalar system")
    }

    /// `(α − x0 e^{(a1+a2)T}) / (T b)`, the constant part of the mean-steering family.
    pub(crate) fn mean_gap(&self, x0: f64, alpha: f64) -> f64 {
        let gap = alpha - x0 * ((self.a1 + self.a2) * self.horizon).exp();
        if gap == 0.0 {
            0.0
        } else {
            gap / (self.horizon * self.b)
        }
    }
}

/// Smallest terminal variance reachable with terminal mean `alpha` from `x0`:
/// `δ² ψ(T) · 4/(1 + e^{−a2 T}) · ((α − x0 e^{(a1+a2)T})/(T b))²`.
pub fn min_reachable_variance_1d(s: &Scalar1DSystem, x0: f64, alpha: f64) -> Result<f64> {
    let gap = alpha - x0 * ((s.a1 + s.a2) * s.horizon).exp();
    if gap == 0.0 {
        return Ok(0.0);
    }
    if s.b == 0.0 {
        return Err(Error::InfeasibleMean(format!(
            "b = 0 leaves the mean at {} but {alpha} was requested",
            alpha - gap
        )));
    }
    if s.delta == 0.0 {
        return Ok(0.0);
    }
    let k = s.mean_gap(x0, alpha);
    let psi = psi_factor(s.a2, s.horizon);
    Ok(s.delta * s.delta * psi * 4.0 / (1.0 + (-s.a2 * s.horizon).exp()) * k * k)
}

/// Lower bound on `E[X(T)²]` over all deterministic controls:
/// `D² z² / (B² F + D²)` with `z = e^{(a1+a2)T} x0` and `F = (e^{2 a2 T} − 1)/(2 a2)`.
pub fn null_reach_lower_bound_1d(s: &Scalar1DSystem, x0: f64) -> Result<f64> {
    if s.delta == 0.0 {
        return Err(invalid("the null-reach bound needs a non-zero noise coefficient"));
    }
    let z = ((s.a1 + s.a2) * s.horizon).exp() * x0;
    // (e^{2 a2 T} − 1)/(2 a2) = e^{2 a2 T} · decay_window(a2, T).
    let f = (2.0 * s.a2 * s.horizon).exp() * decay_window(s.a2, s.horizon);
    let d2 = s.delta * s.delta;
    Ok(d2 * z * z / (s.b * s.b * f + d2))
}
