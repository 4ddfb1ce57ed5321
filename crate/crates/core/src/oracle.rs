//! Independent numerical reference for spike times and gradients.
//!
//! The membrane voltage is evaluated by direct superposition of PSP kernels
//! and the first threshold crossing is found by a fine grid scan plus
//! bisection. Nothing here shares code with the closed-form solvers, so the
//! two can be checked against each other.

use thiserror::Error;

use crate::params::NeuronParams;
use crate::spiketime::{InputSpikes, NO_SPIKE};

/// Default scan horizon in units of `tau_s`.
pub const DEFAULT_HORIZON: f64 = 20.0;

/// Scan step in units of `tau_s`.
pub const GRID_STEP: f64 = 1e-3;

/// Bisection tolerance in units of `tau_s`.
pub const BISECTION_TOL: f64 = 1e-12;

/// Time constants closer than this (relative to `tau_s`) use the alpha kernel.
pub const ALPHA_SWITCH: f64 = 1e-9;

/// Membrane voltage `u(t)` with `E_l = 0`.
pub fn membrane_voltage(t: f64, inputs: &InputSpikes, params: &NeuronParams) -> f64 {
    inputs
        .times
        .iter()
        .zip(&inputs.weights)
        .filter(|(ti, _)| **ti < t)
        .map(|(ti, w)| w * psp(t - ti, params))
        .sum()
}

/// Response to a unit-weight input after delay `dt > 0`.
pub fn psp(dt: f64, p: &NeuronParams) -> f64 {
    let (tm, ts) = (p.tau_m, p.tau_s);
    if tm.is_infinite() {
        return ts / p.c_m * -(-dt / ts).exp_m1();
    }
    if ts.is_infinite() {
        return tm / p.c_m * -(-dt / tm).exp_m1();
    }
    if (tm - ts).abs() < ALPHA_SWITCH * ts {
        let tau = 0.5 * (tm + ts);
        return dt * (-dt / tau).exp() / p.c_m;
    }
    // (tm ts / (tm - ts)) (e^{-dt/tm} - e^{-dt/ts}), written without cancellation.
    let (fast, slow) = if tm < ts { (tm, ts) } else { (ts, tm) };
    let rate = dt * (1.0 / fast - 1.0 / slow);
    tm * ts / (p.c_m * (slow - fast)) * (-dt / slow).exp() * -(-rate).exp_m1()
}

/// Time derivative of [`psp`].
fn psp_slope(dt: f64, p: &NeuronParams) -> f64 {
    let (tm, ts) = (p.tau_m, p.tau_s);
    if tm.is_infinite() {
        return (-dt / ts).exp() / p.c_m;
    }
    if ts.is_infinite() {
        return (-dt / tm).exp() / p.c_m;
    }
    if (tm - ts).abs() < ALPHA_SWITCH * ts {
        let tau = 0.5 * (tm + ts);
        return (1.0 - dt / tau) * (-dt / tau).exp() / p.c_m;
    }
    tm * ts / (p.c_m * (tm - ts)) * ((-dt / ts).exp() / ts - (-dt / tm).exp() / tm)
}

fn voltage_slope(t: f64, inputs: &InputSpikes, params: &NeuronParams) -> f64 {
    inputs
        .times
        .iter()
        .zip(&inputs.weights)
        .filter(|(ti, _)| **ti < t)
        .map(|(ti, w)| w * psp_slope(t - ti, params))
        .sum()
}

/// First upward threshold crossing in `[0, t_max]`, or [`NO_SPIKE`].
///
/// Scans `u` on a grid of step `1e-3 tau_s`, bisects the first bracket to
/// `1e-12 tau_s`, and inspects every local maximum between grid points so
/// that narrow excursions above threshold are not skipped.
pub fn first_crossing(inputs: &InputSpikes, params: &NeuronParams, t_max: f64) -> f64 {
    first_crossing_with_step(inputs, params, t_max, GRID_STEP * params.tau_s)
}

pub fn first_crossing_with_step(
    inputs: &InputSpikes,
    params: &NeuronParams,
    t_max: f64,
    step: f64,
) -> f64 {
    let theta = params.threshold;
    let u = |t: f64| membrane_voltage(t, inputs, params) - theta;
    let du = |t: f64| voltage_slope(t, inputs, params);
    let tol = BISECTION_TOL * params.tau_s;

    let Some(t_first) = inputs
        .times
        .iter()
        .copied()
        .filter(|t| t.is_finite())
        .min_by(f64::total_cmp)
    else {
        return NO_SPIKE;
    };
    let n_steps = ((t_max - t_first) / step).ceil().max(0.0) as usize;
    let mut a = t_first;
    let mut slope_a = du(a + f64::EPSILON * a.abs().max(1.0));
    for k in 1..=n_steps {
        let b = (t_first + k as f64 * step).min(t_max);
        if u(b) >= 0.0 {
            return bisect_root(&u, a, b, tol);
        }
        let slope_b = du(b);
        if slope_a > 0.0 && slope_b < 0.0 {
            let peak = bisect_root(&|t| -du(t), a, b, tol);
            if u(peak) >= 0.0 {
                return bisect_root(&u, a, peak, tol);
            }
        }
        a = b;
        slope_a = slope_b;
    }
    NO_SPIKE
}

/// Smallest bracketed root of an increasing-through-zero function.
fn bisect_root(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// A coordinate whose perturbation changed the discrete structure
/// (for spike times, the causal set).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("finite difference unstable along coordinate {coordinate}")]
pub struct Unstable {
    pub coordinate: usize,
}

/// Central-difference gradient of `f` at `point`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            x[i] = point[i] + h;
            let up = f(&x);
            x[i] = point[i] - h;
            let down = f(&x);
            x[i] = point[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference gradient of a function that also reports a discrete
/// signature. Fails with [`Unstable`] if the signature at `point +- h e_i`
/// differs from the one at `point` for any coordinate.
pub fn finite_difference<S: PartialEq>(
    f: impl Fn(&[f64]) -> (f64, S),
    point: &[f64],
    h: f64,
) -> Result<Vec<f64>, Unstable> {
    let (_, base) = f(point);
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + h;
        let (up, s_up) = f(&x);
        x[i] = point[i] - h;
        let (down, s_down) = f(&x);
        x[i] = point[i];
        if s_up != base || s_down != base {
            return Err(Unstable { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}
