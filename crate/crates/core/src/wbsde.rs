//! One-dimensional Wasserstein set-valued BSDE.
//!
//! With deterministic `z`, the time-`s` mean and variance of `Y` satisfy
//!
//! ```text
//! σ(s) = e^{−2a1(T−s)} σ(T) − ∫_s^T e^{−2a1(r−s)} z²(r) dr
//! y(s) = e^{−(a1+a2)(T−s)} y(T) − b ∫_s^T e^{−(a1+a2)(r−s)} z(r) dr
//! ```
//!
//! and the laws reachable backwards from a Gaussian `μ` form the set
//! `{N(y, σ) : σ ∈ [0, e^{−2a1(T−s)} Var μ], y ∈ [y_min(σ), y_max(σ)]}`.

use crate::error::{invalid, Error, Result};
use crate::linalg::GaussianLaw;
use crate::moments::{format_float, SERIES_THRESHOLD};

/// `f(s) = (1 − e^{−2 a2 s}) / (2 a2)`, and `s` at `a2 = 0`.
pub fn f_factor(a2: f64, s: f64) -> f64 {
    let x = a2 * s;
    if x.abs() < SERIES_THRESHOLD {
        s * (1.0 - x + 2.0 / 3.0 * x * x)
    } else {
        -(-2.0 * x).exp_m1() / (2.0 * a2)
    }
}

/// `∫_0^L e^{κ u} du`, continuous at `κ = 0`.
fn exp_integral(kappa: f64, len: f64) -> f64 {
    let x = kappa * len;
    if x.abs() < SERIES_THRESHOLD {
        len * (1.0 + x / 2.0 + x * x / 6.0)
    } else {
        len * x.exp_m1() / x
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Wbsde1DParams {
    pub a1: f64,
    pub a2: f64,
    pub b: f64,
    pub horizon: f64,
    /// Terminal law of `Y(T)`.
    pub mu: GaussianLaw,
}

impl Wbsde1DParams {
    pub fn new(a1: f64, a2: f64, b: f64, horizon: f64, mu: GaussianLaw) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon T must be positive and finite"));
        }
        if ![a1, a2, b].iter().all(|x| x.is_finite()) {
            return Err(invalid("coefficients must be finite"));
        }
        if mu.dim() != 1 {
            return Err(invalid("the terminal law must be one-dimensional"));
        }
        Ok(Self { a1, a2, b, horizon, mu })
    }

    pub fn terminal_mean(&self) -> f64 {
        self.mu.mean[0]
    }

    pub fn terminal_variance(&self) -> f64 {
        self.mu.covariance[(0, 0)]
    }

    fn check_time(&self, s: f64) -> Result<()> {
        if !(s >= 0.0 && s < self.horizon) {
            return Err(invalid(format!(
                "query time s = {s} must lie in [0, T = {})",
                self.horizon
            )));
        }
        Ok(())
    }
}

/// Backward reachable Gaussian laws at time `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachableLawSet1D {
    pub s: f64,
    /// `e^{−2a1(T−s)} Var(μ)`.
    pub sigma_max: f64,
    /// `e^{−(a1+a2)(T−s)} mean(μ)`.
    pub center: f64,
    /// `|b| √f(T−s)`.
    pub width_scale: f64,
}

/// Membership tolerance on the boundary.
pub const BOUNDARY_TOL: f64 = 1e-12;

impl ReachableLawSet1D {
    fn half_width(&self, sigma: f64) -> Result<f64> {
        if !(sigma >= 0.0 && sigma <= self.sigma_max) {
            return Err(Error::InfeasibleVariance {
                requested: sigma,
                max: self.sigma_max,
            });
        }
        Ok(self.width_scale * (self.sigma_max - sigma).sqrt())
    }

    pub fn y_min(&self, sigma: f64) -> Result<f64> {
        Ok(self.center - self.half_width(sigma)?)
    }

    pub fn y_max(&self, sigma: f64) -> Result<f64> {
        Ok(self.center + self.half_width(sigma)?)
    }

    /// Whether `N(y, sigma)` belongs to the set, up to [`BOUNDARY_TOL`].
    pub fn contains(&self, y: f64, sigma: f64) -> bool {
        let tol_s = BOUNDARY_TOL * self.sigma_max.max(1.0);
        if !(sigma >= -tol_s && sigma <= self.sigma_max + tol_s) {
            return false;
        }
        let hw = self.width_scale * (self.sigma_max - sigma).max(0.0).sqrt();
        let tol_y = BOUNDARY_TOL * self.center.abs().max(hw).max(1.0);
        (y - self.center).abs() <= hw + tol_y
    }

    /// CSV with columns `sigma,y_min,y_max` on the given variance grid.
    pub fn boundary_csv(&self, sigmas: &[f64]) -> Result<String> {
        let mut out = String::from("sigma,y_min,y_max\n");
        for &sigma in sigmas {
            out.push_str(&format!(
                "{},{},{}\n",
                format_float(sigma),
                format_float(self.y_min(sigma)?),
                format_float(self.y_max(sigma)?)
            ));
        }
        Ok(out)
    }

    /// `n` equally spaced variances from 0 to `sigma_max`.
    pub fn sigma_grid(&self, n: usize) -> Vec<f64> {
        if n < 2 {
            return vec![0.0];
        }
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    self.sigma_max
                } else {
                    self.sigma_max * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }
}

pub fn backward_reachable_set_1d(p: &Wbsde1DParams, s: f64) -> Result<ReachableLawSet1D> {
    p.check_time(s)?;
    let tau = p.horizon - s;
    Ok(ReachableLawSet1D {
        s,
        sigma_max: (-2.0 * p.a1 * tau).exp() * p.terminal_variance(),
        center: (-(p.a1 + p.a2) * tau).exp() * p.terminal_mean(),
        width_scale: p.b.abs() * f_factor(p.a2, tau).sqrt(),
    })
}

/// `z(r) = amplitude · e^{rate (r − origin)}` on `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZPiece {
    pub start: f64,
    pub end: f64,
    pub amplitude: f64,
    pub rate: f64,
    pub origin: f64,
}

impl ZPiece {
    pub fn constant(start: f64, end: f64, value: f64) -> Self {
        Self {
            start,
            end,
            amplitude: value,
            rate: 0.0,
            origin: start,
        }
    }

    fn eval(&self, r: f64) -> f64 {
        self.amplitude * (self.rate * (r - self.origin)).exp()
    }

    /// `∫ e^{−k(r−t0)} z(r)^power dr` over `[lo, hi] ∩ [start, end]`, in closed form.
    fn weighted_integral(&self, k: f64, t0: f64, power: i32, lo: f64, hi: f64) -> f64 {
        let l = self.start.max(lo);
        let h = self.end.min(hi);
        if !(h > l) || self.amplitude == 0.0 {
            return 0.0;
        }
        let p = power as f64;
        let at_l = (-k * (l - t0)).exp() * self.amplitude.powi(power) * (p * self.rate * (l - self.origin)).exp();
        at_l * exp_integral(p * self.rate - k, h - l)
    }
}

/// Deterministic piecewise-exponential `z` on an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ZSignal {
    pieces: Vec<ZPiece>,
}

impl ZSignal {
    pub fn new(pieces: Vec<ZPiece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(invalid("a z signal needs at least one piece"));
        }
        for (k, p) in pieces.iter().enumerate() {
            if !(p.end > p.start) {
                return Err(invalid(format!("piece {k} is empty or reversed")));
            }
            if ![p.start, p.end, p.amplitude, p.rate, p.origin]
                .iter()
                .all(|x| x.is_finite())
            {
                return Err(invalid(format!("piece {k} has non-finite parameters")));
            }
            if k > 0 && pieces[k - 1].end != p.start {
                return Err(invalid(format!("pieces {} and {k} do not abut", k - 1)));
            }
        }
        Ok(Self { pieces })
    }

    /// Piecewise-constant `z` with `values[k]` on `[breaks[k], breaks[k+1])`.
    pub fn piecewise_constant(breaks: &[f64], values: &[f64]) -> Result<Self> {
        if breaks.len() != values.len() + 1 {
            return Err(invalid("need one more break point than values"));
        }
        Self::new(
            values
                .iter()
                .enumerate()
                .map(|(k, &v)| ZPiece::constant(breaks[k], breaks[k + 1], v))
                .collect(),
        )
    }

    pub fn pieces(&self) -> &[ZPiece] {
        &self.pieces
    }

    pub fn start(&self) -> f64 {
        self.pieces[0].start
    }

    pub fn end(&self) -> f64 {
        self.pieces[self.pieces.len() - 1].end
    }

    /// Value at `r`; the final end point belongs to the last piece.
    pub fn eval(&self, r: f64) -> f64 {
        let idx = self.pieces.partition_point(|p| p.end <= r).min(self.pieces.len() - 1);
        self.pieces[idx].eval(r.clamp(self.start(), self.end()))
    }

    /// `∫_lo^hi e^{−k(r−t0)} z(r)^power dr` (zero outside the support).
    pub fn weighted_integral(&self, k: f64, t0: f64, power: i32, lo: f64, hi: f64) -> f64 {
        self.pieces
            .iter()
            .map(|p| p.weighted_integral(k, t0, power, lo, hi))
            .sum()
    }
}

/// `z_α(r) = (−1_{[s, s+α(T−s))} + 1_{[s+α(T−s), T]}) c e^{(a1−a2)(r−s)}` with `c`
/// chosen so that `∫_s^T e^{−2a1(r−s)} z_α² dr = sigma_max − sigma_target`.
///
/// For `b > 0`, `α = 0` produces `y_min` and `α = 1` produces `y_max`.
pub fn z_alpha_signal(p: &Wbsde1DParams, s: f64, sigma_target: f64, alpha: f64) -> Result<ZSignal> {
    let set = backward_reachable_set_1d(p, s)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(invalid(format!("alpha = {alpha} must lie in [0, 1]")));
    }
    if !(sigma_target >= 0.0 && sigma_target <= set.sigma_max) {
        return Err(Error::InfeasibleVariance {
            requested: sigma_target,
            max: set.sigma_max,
        });
    }
    let tau = p.horizon - s;
    let c = ((set.sigma_max - sigma_target) / f_factor(p.a2, tau)).sqrt();
    let rate = p.a1 - p.a2;
    let piece = |start: f64, end: f64, sign: f64| ZPiece {
        start,
        end,
        amplitude: sign * c,
        rate,
        origin: s,
    };
    let switch = s + alpha * tau;
    let pieces = if alpha == 0.0 || !(switch > s) {
        vec![piece(s, p.horizon, 1.0)]
    } else if alpha == 1.0 || !(switch < p.horizon) {
        vec![piece(s, p.horizon, -1.0)]
    } else {
        vec![piece(s, switch, -1.0), piece(switch, p.horizon, 1.0)]
    };
    ZSignal::new(pieces)
}

/// Moves `(y, σ)` from time `from` to time `to > from` under `z`.
pub fn propagate_moments(p: &Wbsde1DParams, y: f64, sigma: f64, z: &ZSignal, from: f64, to: f64) -> Result<(f64, f64)> {
    if !(to >= from) {
        return Err(invalid("propagation runs forward in time"));
    }
    check_cover(z, from, to)?;
    let tau = to - from;
    let sq = z.weighted_integral(2.0 * p.a1, from, 2, from, to);
    let lin = z.weighted_integral(p.a1 + p.a2, from, 1, from, to);
    let sigma_to = (2.0 * p.a1 * tau).exp() * (sigma + sq);
    let y_to = ((p.a1 + p.a2) * tau).exp() * (y + p.b * lin);
    Ok((y_to, sigma_to))
}

fn check_cover(z: &ZSignal, from: f64, to: f64) -> Result<()> {
    let tol = 1e-12 * to.abs().max(1.0);
    if z.start() > from + tol || z.end() < to - tol {
        return Err(invalid(format!(
            "z is defined on [{}, {}] but [{from}, {to}] is required",
            z.start(),
            z.end()
        )));
    }
    Ok(())
}

/// Forward form of the moment relations: terminal `(y_T, σ_T)` from time-`s` moments.
pub fn forward_moments_check(p: &Wbsde1DParams, y_s: f64, sigma_s: f64, z: &ZSignal, s: f64) -> Result<(f64, f64)> {
    propagate_moments(p, y_s, sigma_s, z, s, p.horizon)
}

/// Time-`s` `(y, σ)` reached backwards from `μ` under `z`.
pub fn backward_moments(p: &Wbsde1DParams, z: &ZSignal, s: f64) -> Result<(f64, f64)> {
    p.check_time(s)?;
    check_cover(z, s, p.horizon)?;
    let tau = p.horizon - s;
    let sq = z.weighted_integral(2.0 * p.a1, s, 2, s, p.horizon);
    let lin = z.weighted_integral(p.a1 + p.a2, s, 1, s, p.horizon);
    let sigma = (-2.0 * p.a1 * tau).exp() * p.terminal_variance() - sq;
    let y = (-(p.a1 + p.a2) * tau).exp() * p.terminal_mean() - p.b * lin;
    Ok((y, sigma))
}

/// The three constructions for `dY = z dW` on `[0, 1]` with `Y(1) ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnitBsdeVariant {
    /// `Y(0) = 0`, `z = 1_{[0,t0]} − 1_{(t0,1]}`.
    Switching { t0: f64 },
    /// `Y(0) = 0`, `z = √(σ/s0) 1_{[0,s0]} + √((1−σ)/(1−s0)) 1_{(s0,1]}`; `Y(s0) ~ N(0, σ)`.
    TwoPhase { sigma: f64, s0: f64 },
    /// `Y(0) ~ N(0, σ)`, `z = √(1 − σ)`.
    RandomStart { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitBsdeCase {
    pub params: Wbsde1DParams,
    pub initial: GaussianLaw,
    pub z: ZSignal,
    /// Law at an intermediate time, when the construction pins one.
    pub intermediate: Option<(f64, GaussianLaw)>,
}

pub fn unit_bsde_case(variant: UnitBsdeVariant) -> Result<UnitBsdeCase> {
    let params = Wbsde1DParams::new(0.0, 0.0, 0.0, 1.0, GaussianLaw::scalar(0.0, 1.0)?)?;
    let origin = GaussianLaw::scalar(0.0, 0.0)?;
    match variant {
        UnitBsdeVariant::Switching { t0 } => {
            if !(0.0..=1.0).contains(&t0) {
                return Err(invalid(format!("t0 = {t0} must lie in [0, 1]")));
            }
            let z = if t0 == 0.0 {
                ZSignal::piecewise_constant(&[0.0, 1.0], &[-1.0])?
            } else if t0 == 1.0 {
                ZSignal::piecewise_constant(&[0.0, 1.0], &[1.0])?
            } else {
                ZSignal::piecewise_constant(&[0.0, t0, 1.0], &[1.0, -1.0])?
            };
            Ok(UnitBsdeCase {
                params,
                initial: origin,
                z,
                intermediate: None,
            })
        }
        UnitBsdeVariant::TwoPhase { sigma, s0 } => {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(invalid(format!("sigma = {sigma} must lie in [0, 1]")));
            }
            if !(s0 > 0.0 && s0 < 1.0) {
                return Err(invalid(format!("s0 = {s0} must lie in (0, 1)")));
            }
            let z = ZSignal::piecewise_constant(
                &[0.0, s0, 1.0],
                &[(sigma / s0).sqrt(), ((1.0 - sigma) / (1.0 - s0)).sqrt()],
            )?;
            Ok(UnitBsdeCase {
                params,
                initial: origin,
                z,
                intermediate: Some((s0, GaussianLaw::scalar(0.0, sigma)?)),
            })
        }
        UnitBsdeVariant::RandomStart { sigma } => {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(invalid(format!("sigma = {sigma} must lie in [0, 1]")));
            }
            Ok(UnitBsdeCase {
                params,
                initial: GaussianLaw::scalar(0.0, sigma)?,
                z: ZSignal::piecewise_constant(&[0.0, 1.0], &[(1.0 - sigma).sqrt()])?,
                intermediate: None,
            })
        }
    }
}

impl UnitBsdeCase {
    /// Terminal `(mean, variance)` from the initial law.
    pub fn terminal(&self) -> Result<(f64, f64)> {
        forward_moments_check(
            &self.params,
            self.initial.mean[0],
            self.initial.covariance[(0, 0)],
            &self.z,
            0.0,
        )
    }
}
