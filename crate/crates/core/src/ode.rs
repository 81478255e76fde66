//! Adaptive Dormand–Prince 5(4) integrator for small dense systems.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    /// Steps smaller than `min_step_fraction · |t1 − t0|` abort with a numeric error.
    pub min_step_fraction: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-11,
            abs_tol: 1e-13,
            min_step_fraction: 1e-14,
            max_steps: 10_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// Difference between the 5th- and embedded 4th-order weights.
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combo(out: &mut [f64], y: &[f64], h: f64, terms: &[(f64, &[f64])]) {
    for i in 0..y.len() {
        let mut s = 0.0;
        for (c, k) in terms {
            s += c * k[i];
        }
        out[i] = y[i] + h * s;
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction), overwriting `y`.
///
/// `f(t, y, dy)` writes the derivative into `dy`. Returns the number of accepted steps.
pub fn integrate<F>(f: F, t0: f64, t1: f64, y: &mut [f64], opts: &OdeOptions) -> Result<usize>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    if !(t0.is_finite() && t1.is_finite()) {
        return Err(invalid("integration limits must be finite"));
    }
    let span = t1 - t0;
    if span == 0.0 {
        return Ok(0);
    }
    let dir = span.signum();
    let n = y.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut k5 = vec![0.0; n];
    let mut k6 = vec![0.0; n];
    let mut k7 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    let mut ynew = vec![0.0; n];

    let min_step = opts.min_step_fraction * span.abs();
    let mut t = t0;
    f(t, y, &mut k1);
    // Initial step from the ratio of state and derivative scales.
    let norm = |v: &[f64]| {
        let s: f64 = v
            .iter()
            .zip(y.iter())
            .map(|(vi, yi)| (vi / (opts.abs_tol + opts.rel_tol * yi.abs())).powi(2))
            .sum();
        (s / n.max(1) as f64).sqrt()
    };
    let d0 = norm(y);
    let d1 = norm(&k1);
    let mut h = if d0 > 1e-5 && d1 > 1e-5 {
        0.01 * d0 / d1
    } else {
        1e-3 * span.abs()
    };
    h = h.max(min_step).min(span.abs());

    let mut steps = 0usize;
    let mut attempts = 0usize;
    while (t1 - t) * dir > 0.0 {
        attempts += 1;
        if attempts > opts.max_steps {
            return Err(Error::Numeric(format!(
                "ODE step budget of {} exhausted at t = {t}",
                opts.max_steps
            )));
        }
        let remaining = (t1 - t).abs();
        let last = h >= remaining;
        if last {
            h = remaining;
        }
        let hs = h * dir;
        combo(&mut tmp, y, hs, &[(A21, &k1)]);
        f(t + C2 * hs, &tmp, &mut k2);
        combo(&mut tmp, y, hs, &[(A31, &k1), (A32, &k2)]);
        f(t + C3 * hs, &tmp, &mut k3);
        combo(&mut tmp, y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(t + C4 * hs, &tmp, &mut k4);
        combo(&mut tmp, y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        f(t + C5 * hs, &tmp, &mut k5);
        combo(
            &mut tmp,
            y,
            hs,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        let t_next = if last { t1 } else { t + hs };
        f(t_next, &tmp, &mut k6);
        combo(
            &mut ynew,
            y,
            hs,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        f(t_next, &ynew, &mut k7);

        let mut err = 0.0;
        for i in 0..n {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.abs_tol + opts.rel_tol * y[i].abs().max(ynew[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / n.max(1) as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Numeric(format!("non-finite ODE state near t = {t}")));
        }
        if err <= 1.0 {
            t = t_next;
            y.copy_from_slice(&ynew);
            std::mem::swap(&mut k1, &mut k7);
            steps += 1;
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            h *= factor;
        } else {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
            if h < min_step {
                return Err(Error::Numeric(format!(
                    "ODE step size underflow at t = {t} (h = {h:e})"
                )));
            }
        }
    }
    Ok(steps)
}
