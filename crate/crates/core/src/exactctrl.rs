//! Exact controllability for `dX = (A1 X + A2 E[X] + B1 u + B2 E[u]) dt + C E[X] dW`.
//!
//! For a terminal target `ξ` that is a Hermite-polynomial functional of
//! `W(T')` with `T' < T`, the control is assembled from
//!
//! * `Y1(t) = e^{−A1(T−t)} E[ξ − E ξ | F_t]` with `Z1 = e^{−A1(T−t)} ∂_x M`,
//! * the deterministic pair `dY2 = ((A1+A2) Y2 + (B1+B2) u0) dt`, `Z2 = −C Y2`,
//!   started from `Y2(0) = x0 − Y1(0)` by the mean-steering control `u0`,
//! * a representation `∫_0^T v dt = ∫_0^T e^{−A1 s} (Z1 + Z2) dW`, and
//! * the compensation `u2 = B1^+ e^{A1 t} v`, giving `u = u2 + u0`.
//!
//! On a grid the stochastic integral is an Itô sum of the same increments that
//! drive the forward Euler–Maruyama pass, so the pathwise terminal error
//! comes only from the time discretization.

use crate::analysis::{check_assumption_gramian, MeanFieldSystem};
use crate::error::{invalid, Error, Result};
use crate::linalg::{matrix_exponential, pseudo_inverse, rank, right_inverse, RealMatrix, RealVector};
use crate::moments::uniform_grid;
use crate::noise::{brownian_increments, coarsen};
use crate::ode::{self, OdeOptions};
use crate::signal::ControlSignal;
use crate::synthesis::mean_steering_u0;
use rayon::prelude::*;

pub const MAX_HERMITE_DEGREE: usize = 6;

/// Errors at or below `ROUNDOFF_FLOOR · max(1, target RMS)` carry no order information.
pub const ROUNDOFF_FLOOR: f64 = 1e-12;

/// `H_k(x, t)` with `H_0 = 1`, `H_1 = x`, `H_{k+1} = x H_k − k t H_{k−1}`.
pub fn hermite_martingale(k: usize, x: f64, t: f64) -> f64 {
    let mut prev = 1.0;
    if k == 0 {
        return prev;
    }
    let mut cur = x;
    for j in 1..k {
        let next = x * cur - j as f64 * t * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `[H_0, …, H_kmax]` at `(x, t)`.
fn hermite_table(kmax: usize, x: f64, t: f64, out: &mut [f64]) {
    out[0] = 1.0;
    if kmax >= 1 {
        out[1] = x;
    }
    for j in 1..kmax {
        out[j + 1] = x * out[j] - j as f64 * t * out[j - 1];
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// `ξ_i = Σ_k c_{i,k} H_k(W(T'), T')`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteTarget {
    coefficients: Vec<Vec<f64>>,
    t_prime: f64,
    degree: usize,
}

impl HermiteTarget {
    /// `coefficients[i]` lists `c_{i,0}, c_{i,1}, …` for component `i`.
    pub fn new(coefficients: Vec<Vec<f64>>, t_prime: f64) -> Result<Self> {
        if coefficients.is_empty() {
            return Err(invalid("a Hermite target needs at least one component"));
        }
        if !(t_prime > 0.0 && t_prime.is_finite()) {
            return Err(invalid("evaluation time T' must be positive and finite"));
        }
        let mut degree = 0;
        for (i, c) in coefficients.iter().enumerate() {
            if c.iter().any(|x| !x.is_finite()) {
                return Err(invalid(format!("component {i} has non-finite coefficients")));
            }
            degree = degree.max(c.len().saturating_sub(1));
        }
        if degree > MAX_HERMITE_DEGREE {
            return Err(Error::UnsupportedDegree {
                degree,
                max: MAX_HERMITE_DEGREE,
            });
        }
        Ok(Self {
            coefficients,
            t_prime,
            degree,
        })
    }

    /// Deterministic target `ξ = c0`.
    pub fn constant(c0: &RealVector, t_prime: f64) -> Result<Self> {
        Self::new(c0.iter().map(|&c| vec![c]).collect(), t_prime)
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn t_prime(&self) -> f64 {
        self.t_prime
    }

    pub fn coefficients(&self) -> &[Vec<f64>] {
        &self.coefficients
    }

    fn coeff(&self, i: usize, k: usize) -> f64 {
        self.coefficients[i].get(k).copied().unwrap_or(0.0)
    }

    /// `E[ξ]`, the vector of `c_{i,0}`.
    pub fn mean(&self) -> RealVector {
        RealVector::from_fn(self.dim(), |i, _| self.coeff(i, 0))
    }

    /// `√E|ξ|² = √(Σ_{i,k} c_{i,k}² k! T'^k)` by orthogonality of the `H_k`.
    pub fn rms(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim() {
            for k in 0..=self.degree {
                s += self.coeff(i, k).powi(2) * factorial(k) * self.t_prime.powi(k as i32);
            }
        }
        s.sqrt()
    }

    /// `ξ` given `W(T') = w`.
    pub fn eval(&self, w: f64) -> RealVector {
        self.series(w, self.t_prime, 0)
    }

    /// `M_t = E[ξ − E ξ | F_t]` given `W(t ∧ T') = w`.
    pub fn martingale(&self, w: f64, t: f64) -> RealVector {
        let mut m = self.series(w, t.min(self.t_prime), 0);
        m -= self.mean();
        m
    }

    /// `∂_x M_t = Σ_k k c_k H_{k−1}(w, t)` for `t < T'`, zero afterwards.
    pub fn martingale_gradient(&self, w: f64, t: f64) -> RealVector {
        if t >= self.t_prime {
            return RealVector::zeros(self.dim());
        }
        self.series(w, t, 1)
    }

    /// `∂²_x M_t = Σ_k k(k−1) c_k H_{k−2}(w, t)` for `t < T'`, zero afterwards.
    pub fn martingale_hessian(&self, w: f64, t: f64) -> RealVector {
        if t >= self.t_prime {
            return RealVector::zeros(self.dim());
        }
        self.series(w, t, 2)
    }

    /// `Σ_k c_k ∂^order_x H_k(w, t)` using `∂_x H_k = k H_{k−1}`.
    fn series(&self, w: f64, t: f64, order: usize) -> RealVector {
        let mut h = [0.0; MAX_HERMITE_DEGREE + 1];
        hermite_table(self.degree, w, t, &mut h);
        RealVector::from_fn(self.dim(), |i, _| {
            (order..=self.degree)
                .map(|k| {
                    let falling: f64 = (0..order).map(|j| (k - j) as f64).product();
                    falling * self.coeff(i, k) * h[k - order]
                })
                .sum()
        })
    }

    fn gradient_into(&self, w: f64, t: f64, h: &mut [f64], out: &mut [f64]) {
        hermite_table(self.degree, w, t, h);
        for (i, o) in out.iter_mut().enumerate() {
            *o = (1..=self.degree).map(|k| k as f64 * self.coeff(i, k) * h[k - 1]).sum();
        }
    }
}

/// Closed-form `(Y1, Z1)`: `Y1(t) = e^{−A1(T−t)} M_t`, `Z1(t) = e^{−A1(T−t)} ∂_x M_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteBsde {
    target: HermiteTarget,
    a1: RealMatrix,
    horizon: f64,
}

impl HermiteBsde {
    pub fn target(&self) -> &HermiteTarget {
        &self.target
    }

    fn weight(&self, t: f64) -> RealMatrix {
        matrix_exponential(&self.a1, -(self.horizon - t)).expect("validated generator")
    }

    /// `Y1(t)` given `W(t ∧ T') = w`.
    pub fn y(&self, t: f64, w: f64) -> RealVector {
        self.weight(t) * self.target.martingale(w, t)
    }

    /// `Z1(t)` given `W(t) = w`.
    pub fn z(&self, t: f64, w: f64) -> RealVector {
        self.weight(t) * self.target.martingale_gradient(w, t)
    }

    /// `∂_x Z1(t)`, the Milstein correction coefficient.
    pub fn z_gradient(&self, t: f64, w: f64) -> RealVector {
        self.weight(t) * self.target.martingale_hessian(w, t)
    }
}

fn check_no_control_noise(sys: &MeanFieldSystem) -> Result<()> {
    if sys.d1.iter().chain(sys.d2.iter()).any(|&x| x != 0.0) {
        return Err(invalid(
            "exact controllability construction needs D1 = D2 = 0 (noise through C E[X] only)",
        ));
    }
    Ok(())
}

pub fn solve_y1_hermite(sys: &MeanFieldSystem, target: &HermiteTarget) -> Result<HermiteBsde> {
    check_no_control_noise(sys)?;
    if target.dim() != sys.state_dim() {
        return Err(invalid(format!(
            "target has {} components but d = {}",
            target.dim(),
            sys.state_dim()
        )));
    }
    if target.t_prime() > sys.horizon() {
        return Err(invalid("evaluation time T' exceeds the horizon"));
    }
    matrix_exponential(&sys.a1, -sys.horizon())?;
    Ok(HermiteBsde {
        target: target.clone(),
        a1: sys.a1.clone(),
        horizon: sys.horizon(),
    })
}

/// `Y2` on a grid, with `Z2 = −C Y2`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicBsde {
    pub grid: Vec<f64>,
    pub y: Vec<RealVector>,
    pub z: Vec<RealVector>,
}

impl DeterministicBsde {
    pub fn initial(&self) -> &RealVector {
        &self.y[0]
    }
}

/// Integrates `dY2 = ((A1+A2) Y2 + (B1+B2) u0) dt` backwards from `Y2(T) = xi_mean`
/// and records it on `grid` (increasing, from 0 to T).
pub fn solve_y2_deterministic(
    sys: &MeanFieldSystem,
    xi_mean: &RealVector,
    u0: &ControlSignal,
    grid: &[f64],
) -> Result<DeterministicBsde> {
    let d = sys.state_dim();
    if xi_mean.len() != d {
        return Err(invalid("E[xi] has the wrong length"));
    }
    if u0.dim() != sys.control_dim() {
        return Err(invalid("u0 dimension does not match the system"));
    }
    if grid.len() < 2 || grid[0] != 0.0 || *grid.last().expect("non-empty") != sys.horizon() {
        return Err(invalid("Y2 grid must run from 0 to T"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("Y2 grid must be strictly increasing"));
    }
    let a = sys.mean_generator();
    let b = sys.mean_input();
    let opts = OdeOptions {
        rel_tol: 1e-12,
        abs_tol: 1e-14,
        ..OdeOptions::default()
    };
    let breaks = u0.breakpoints();
    let mut state = xi_mean.as_slice().to_vec();
    let mut ys = vec![RealVector::zeros(d); grid.len()];
    ys[grid.len() - 1] = xi_mean.clone();
    for idx in (0..grid.len() - 1).rev() {
        let (lo, hi) = (grid[idx], grid[idx + 1]);
        let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > lo && x < hi).collect();
        cuts.insert(0, lo);
        cuts.push(hi);
        for w in cuts.windows(2).rev() {
            let (p, q) = (w[0], w[1]);
            let rhs = |t: f64, y: &[f64], dy: &mut [f64]| {
                let yv = RealVector::from_column_slice(y);
                let v = u0.eval(t.clamp(p, q - (q - p) * 1e-15));
                let out = &a * yv + &b * v;
                dy.copy_from_slice(out.as_slice());
            };
            ode::integrate(rhs, q, p, &mut state, &opts)?;
        }
        ys[idx] = RealVector::from_column_slice(&state);
    }
    let z = ys.iter().map(|y| -(&sys.c * y)).collect();
    Ok(DeterministicBsde {
        grid: grid.to_vec(),
        y: ys,
        z,
    })
}

/// Adapted control values on a grid for a batch of paths.
///
/// `value(p, i)` is the control on `[t_i, t_{i+1})` for path `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticControlPath {
    grid: Vec<f64>,
    dim: usize,
    paths: usize,
    values: Vec<f64>,
    pub seed: Option<u64>,
}

impl StochasticControlPath {
    /// `values` is laid out path-major, then step, then component.
    pub fn new(grid: Vec<f64>, dim: usize, paths: usize, values: Vec<f64>, seed: Option<u64>) -> Result<Self> {
        if grid.len() < 2 || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid(
                "control grid must be strictly increasing with at least 2 points",
            ));
        }
        let steps = grid.len() - 1;
        if values.len() != paths * steps * dim {
            return Err(invalid(format!(
                "expected {} control values, got {}",
                paths * steps * dim,
                values.len()
            )));
        }
        Ok(Self {
            grid,
            dim,
            paths,
            values,
            seed,
        })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn value(&self, path: usize, step: usize) -> &[f64] {
        let at = (path * self.steps() + step) * self.dim;
        &self.values[at..at + self.dim]
    }

    /// `Σ_i v_i (t_{i+1} − t_i)` for one path (exact for the step function).
    pub fn integral(&self, path: usize) -> RealVector {
        let mut acc = RealVector::zeros(self.dim);
        for i in 0..self.steps() {
            let dt = self.grid[i + 1] - self.grid[i];
            for (a, v) in acc.iter_mut().zip(self.value(path, i)) {
                *a += v * dt;
            }
        }
        acc
    }

    /// Cross-path average at each step.
    pub fn path_mean(&self, step: usize) -> RealVector {
        let mut acc = RealVector::zeros(self.dim);
        for p in 0..self.paths {
            for (a, v) in acc.iter_mut().zip(self.value(p, step)) {
                *a += v;
            }
        }
        acc / self.paths as f64
    }
}

fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    let tol = 1e-12 * grid.last().copied().unwrap_or(1.0).abs().max(1.0);
    let idx = grid.partition_point(|&g| g < t - tol);
    (idx < grid.len() && (grid[idx] - t).abs() <= tol).then_some(idx)
}

/// `v(t) = target / (T − T') · 1_{[T', T]}(t)`, so `∫_0^T v dt = target` on every path.
///
/// `targets[p]` is the `F_{T'}`-measurable value for path `p`; `T'` must be a grid point.
pub fn representation_control(targets: &[RealVector], grid: &[f64], t_prime: f64) -> Result<StochasticControlPath> {
    let horizon = *grid.last().ok_or_else(|| invalid("empty grid"))?;
    if !(t_prime < horizon) {
        return Err(invalid(format!(
            "representation needs T' < T (got T' = {t_prime}, T = {horizon})"
        )));
    }
    let j = grid_index(grid, t_prime).ok_or_else(|| invalid("T' is not a grid point"))?;
    let dim = targets.first().map_or(0, |v| v.len());
    if targets.iter().any(|v| v.len() != dim) {
        return Err(invalid("targets have inconsistent dimensions"));
    }
    let steps = grid.len() - 1;
    let slack = horizon - grid[j];
    let mut values = vec![0.0; targets.len() * steps * dim];
    for (p, target) in targets.iter().enumerate() {
        for i in j..steps {
            let at = (p * steps + i) * dim;
            for (k, x) in target.iter().enumerate() {
                values[at + k] = x / slack;
            }
        }
    }
    StochasticControlPath::new(grid.to_vec(), dim, targets.len(), values, None)
}

/// `u = B1^+ (v − E v) + (1/T)(B1+B2)^+ E[ξ]`, with `E v` the cross-path mean.
pub fn split_mean_control(
    b1: &RealMatrix,
    b2: &RealMatrix,
    v: &StochasticControlPath,
    xi_mean: &RealVector,
    horizon: f64,
) -> Result<StochasticControlPath> {
    let d = b1.nrows();
    if b2.shape() != b1.shape() || v.dim() != d || xi_mean.len() != d {
        return Err(invalid("split_mean_control: inconsistent dimensions"));
    }
    let sum = b1 + b2;
    if rank(b1)? < d || rank(&sum)? < d {
        return Err(Error::SynthesisUnavailable(
            "mean splitting needs rank(B1) = rank(B1 + B2) = d".into(),
        ));
    }
    let b1_inv = right_inverse(b1)?;
    let mean_part = right_inverse(&sum)? * xi_mean / horizon;
    let n = b1.ncols();
    let steps = v.steps();
    let means: Vec<RealVector> = (0..steps).map(|i| v.path_mean(i)).collect();
    let mut values = Vec::with_capacity(v.paths() * steps * n);
    for p in 0..v.paths() {
        for (i, mean) in means.iter().enumerate() {
            let centered = RealVector::from_column_slice(v.value(p, i)) - mean;
            let u = &b1_inv * centered + &mean_part;
            values.extend_from_slice(u.as_slice());
        }
    }
    StochasticControlPath::new(v.grid().to_vec(), n, v.paths(), values, v.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExactDiagnostics {
    pub y1_initial: RealVector,
    /// `|Y2(0) − (x0 − Y1(0))|_∞` from the backward ODE.
    pub y2_identity_residual: f64,
    pub gramian_condition_number: Option<f64>,
}

/// Everything needed to generate the exact control on any grid.
#[derive(Debug, Clone)]
pub struct ExactControlPlan {
    pub system: MeanFieldSystem,
    pub x0: RealVector,
    pub target: HermiteTarget,
    pub y1: HermiteBsde,
    pub u0: ControlSignal,
    pub diagnostics: ExactDiagnostics,
}

pub fn assemble_exact_control(
    sys: &MeanFieldSystem,
    x0: &RealVector,
    target: &HermiteTarget,
) -> Result<ExactControlPlan> {
    if x0.len() != sys.state_dim() {
        return Err(invalid("x0 has the wrong length"));
    }
    if !(target.t_prime() < sys.horizon()) {
        return Err(invalid("the exact construction needs T' < T"));
    }
    let verdict = check_assumption_gramian(sys)?;
    if !verdict.holds {
        return Err(Error::SynthesisUnavailable(format!(
            "Gramian assumption fails: {}",
            verdict.note.unwrap_or_default()
        )));
    }
    let y1 = solve_y1_hermite(sys, target)?;
    let y1_initial = y1.y(0.0, 0.0);
    let xi_mean = target.mean();
    let u0 = mean_steering_u0(sys, x0, &xi_mean, &y1_initial)?;
    let y2 = solve_y2_deterministic(sys, &xi_mean, &u0, &[0.0, sys.horizon()])?;
    let y2_identity_residual = (y2.initial() - (x0 - &y1_initial)).amax();
    Ok(ExactControlPlan {
        system: sys.clone(),
        x0: x0.clone(),
        target: target.clone(),
        y1,
        u0,
        diagnostics: ExactDiagnostics {
            y1_initial,
            y2_identity_residual,
            gramian_condition_number: verdict.condition_number,
        },
    })
}

/// Terminal state and target for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathOutcome {
    pub terminal: RealVector,
    pub target: RealVector,
}

/// The plan sampled on a uniform grid with `steps` intervals.
#[derive(Debug, Clone)]
pub struct DiscretePlan {
    plan: ExactControlPlan,
    grid: Vec<f64>,
    dt: f64,
    j_prime: usize,
    /// Per step: `u0(t_i)`.
    u0: Vec<RealVector>,
    /// Per step: `A2 m_i + (B1+B2) u0(t_i)`.
    drift_const: Vec<RealVector>,
    /// Per step: `C m_i`.
    diffusion: Vec<RealVector>,
    /// Per step: `e^{−A1 t_i} Z2(t_i)`.
    psi_z2: Vec<RealVector>,
    /// Per step: `B1^+ e^{A1 t_i}`.
    u2_gain: Vec<RealMatrix>,
    /// Per step: `B1 B1^+ e^{A1 t_i}`.
    state_gain: Vec<RealMatrix>,
    /// `e^{−A1 T}`, which maps `∂_x M` to `e^{−A1 t} Z1(t)`.
    z1_gain: RealMatrix,
}

impl ExactControlPlan {
    /// Precomputes every deterministic per-step quantity; `T'` must be a grid point.
    pub fn discretize(&self, steps: usize) -> Result<DiscretePlan> {
        if steps == 0 {
            return Err(invalid("need at least one step"));
        }
        let sys = &self.system;
        let horizon = sys.horizon();
        let grid = uniform_grid(horizon, steps);
        let dt = horizon / steps as f64;
        let j_prime = grid_index(&grid, self.target.t_prime()).ok_or_else(|| {
            invalid(format!(
                "T' = {} is not on the {steps}-step grid",
                self.target.t_prime()
            ))
        })?;
        let d = sys.state_dim();
        let a = sys.mean_generator();
        let b = sys.mean_input();
        let b1_pinv = pseudo_inverse(&sys.b1)?;
        let y2 = solve_y2_deterministic(sys, &self.target.mean(), &self.u0, &grid)?;

        let mut u0 = Vec::with_capacity(steps);
        let mut drift_const = Vec::with_capacity(steps);
        let mut diffusion = Vec::with_capacity(steps);
        let mut psi_z2 = Vec::with_capacity(steps);
        let mut u2_gain = Vec::with_capacity(steps);
        let mut state_gain = Vec::with_capacity(steps);
        let mut m = self.x0.clone();
        for i in 0..steps {
            let t = grid[i];
            let u = self.u0.eval(t);
            drift_const.push(&sys.a2 * &m + &b * &u);
            diffusion.push(&sys.c * &m);
            psi_z2.push(matrix_exponential(&sys.a1, -t)? * &y2.z[i]);
            let phi = matrix_exponential(&sys.a1, t)?;
            let g = &b1_pinv * phi;
            state_gain.push(&sys.b1 * &g);
            u2_gain.push(g);
            m = &m + (&a * &m + &b * &u) * dt;
            u0.push(u);
        }
        debug_assert_eq!(m.len(), d);
        Ok(DiscretePlan {
            z1_gain: matrix_exponential(&sys.a1, -horizon)?,
            plan: self.clone(),
            grid,
            dt,
            j_prime,
            u0,
            drift_const,
            diffusion,
            psi_z2,
            u2_gain,
            state_gain,
        })
    }

    /// Controls for `paths` paths on a `steps`-interval grid.
    pub fn sample_controls(&self, steps: usize, paths: usize, seed: u64) -> Result<StochasticControlPath> {
        let dp = self.discretize(steps)?;
        let n = self.system.control_dim();
        let per_path: Vec<Vec<f64>> = (0..paths)
            .into_par_iter()
            .map(|p| {
                let dw = brownian_increments(seed, p as u64, steps, dp.dt);
                let mut rec = Vec::with_capacity(steps * n);
                dp.run(&dw, Some(&mut rec));
                rec
            })
            .collect();
        StochasticControlPath::new(dp.grid.clone(), n, paths, per_path.concat(), Some(seed))
    }
}

impl DiscretePlan {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn steps(&self) -> usize {
        self.grid.len() - 1
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Builds the control from `increments` and runs the forward Euler–Maruyama pass
    /// with the same increments.
    pub fn simulate_path(&self, increments: &[f64]) -> Result<PathOutcome> {
        if increments.len() != self.steps() {
            return Err(invalid(format!(
                "{} increments for a {}-step grid",
                increments.len(),
                self.steps()
            )));
        }
        Ok(self.run(increments, None))
    }

    fn run(&self, dw: &[f64], mut record: Option<&mut Vec<f64>>) -> PathOutcome {
        let sys = &self.plan.system;
        let target = &self.plan.target;
        let d = sys.state_dim();
        let steps = self.steps();
        let slack = sys.horizon() - self.grid[self.j_prime];
        let mut x = self.plan.x0.clone();
        let mut integral = RealVector::zeros(d);
        let mut anchor = RealVector::zeros(d);
        let mut last_increment = RealVector::zeros(d);
        let mut grad = vec![0.0; d];
        let mut herm = [0.0; MAX_HERMITE_DEGREE + 1];
        let mut v = RealVector::zeros(d);
        let mut w = 0.0;
        let mut w_prime = 0.0;
        for i in 0..steps {
            if i == self.j_prime {
                anchor = &integral / slack;
                w_prime = w;
            }
            // Representation control: adapted, uses increments before step i only.
            if i >= self.j_prime {
                v.copy_from(&anchor);
                if i > self.j_prime {
                    v += &last_increment / self.dt;
                }
            }
            if let Some(rec) = record.as_deref_mut() {
                let u = &self.u2_gain[i] * &v + &self.u0[i];
                rec.extend_from_slice(u.as_slice());
            }
            // Itô sum of e^{−A1 t}(Z1 + Z2) dW.
            let mut inc = &self.psi_z2[i] * dw[i];
            if i < self.j_prime {
                target.gradient_into(w, self.grid[i], &mut herm, &mut grad);
                inc += &self.z1_gain * RealVector::from_column_slice(&grad) * dw[i];
            }
            integral += &inc;
            last_increment = inc;

            let drift = &sys.a1 * &x + &self.drift_const[i] + &self.state_gain[i] * &v;
            x += drift * self.dt + &self.diffusion[i] * dw[i];
            w += dw[i];
        }
        if self.j_prime == steps {
            w_prime = w;
        }
        PathOutcome {
            terminal: x,
            target: target.eval(w_prime),
        }
    }

    /// Terminal errors `|X(T) − ξ|₂` for paths `0..paths` under `seed`, drawing increments
    /// at `fine_steps` (a multiple of this grid) and summing them down.
    fn errors(&self, fine_steps: usize, paths: usize, seed: u64) -> Result<Vec<f64>> {
        let steps = self.steps();
        if fine_steps % steps != 0 {
            return Err(invalid("increment grid is not a refinement of the control grid"));
        }
        let factor = fine_steps / steps;
        let fine_dt = self.plan.system.horizon() / fine_steps as f64;
        (0..paths)
            .into_par_iter()
            .map(|p| {
                let fine = brownian_increments(seed, p as u64, fine_steps, fine_dt);
                let dw = coarsen(&fine, factor)?;
                let out = self.run(&dw, None);
                Ok((out.terminal - out.target).norm())
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub steps: usize,
    pub dt: f64,
    pub max_error: f64,
    pub rms_error: f64,
    /// Per-path terminal errors, indexed by path.
    pub errors: Vec<f64>,
}

impl ErrorStats {
    fn from_errors(steps: usize, dt: f64, errors: Vec<f64>) -> Self {
        let max_error = errors.iter().copied().fold(0.0, f64::max);
        let rms_error = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len().max(1) as f64).sqrt();
        Self {
            steps,
            dt,
            max_error,
            rms_error,
            errors,
        }
    }
}

/// Error statistics over a ladder of resolutions sharing one Brownian path per index.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceLadder {
    pub levels: Vec<ErrorStats>,
    /// `√E|ξ|²`.
    pub target_rms: f64,
    /// Least-squares slope of `log RMS` against `log Δt`; `None` when every
    /// level sits at the round-off floor.
    pub fitted_order: Option<f64>,
}

impl ConvergenceLadder {
    pub fn at_roundoff_floor(&self) -> bool {
        self.fitted_order.is_none()
    }
}

fn fit_order(levels: &[ErrorStats], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = levels
        .iter()
        .filter(|l| l.rms_error > floor)
        .map(|l| (l.dt.ln(), l.rms_error.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Runs the plan at every resolution in `steps`; increments are drawn at the finest
/// resolution and coarsened, so each path index sees one Brownian path throughout.
pub fn convergence_ladder(
    plan: &ExactControlPlan,
    steps: &[usize],
    paths: usize,
    seed: u64,
) -> Result<ConvergenceLadder> {
    let finest = *steps.iter().max().ok_or_else(|| invalid("empty resolution ladder"))?;
    if paths == 0 {
        return Err(invalid("need at least one path"));
    }
    let mut levels = Vec::with_capacity(steps.len());
    for &k in steps {
        if k == 0 || finest % k != 0 {
            return Err(invalid(format!(
                "{k} steps does not divide the finest grid of {finest}"
            )));
        }
        let dp = plan.discretize(k)?;
        let errors = dp.errors(finest, paths, seed)?;
        levels.push(ErrorStats::from_errors(k, dp.dt, errors));
    }
    let target_rms = plan.target.rms();
    let floor = ROUNDOFF_FLOOR * target_rms.max(1.0);
    Ok(ConvergenceLadder {
        fitted_order: fit_order(&levels, floor),
        levels,
        target_rms,
    })
}

/// Pathwise check at `steps` and `4·steps` (order ½ means the error halves).
pub fn verify_exact_pathwise(
    plan: &ExactControlPlan,
    steps: usize,
    paths: usize,
    seed: u64,
) -> Result<ConvergenceLadder> {
    convergence_ladder(plan, &[steps, 4 * steps], paths, seed)
}
