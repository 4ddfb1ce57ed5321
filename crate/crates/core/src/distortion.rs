//! Substrate imperfections: bounded and discretized weights, fixed-pattern
//! variation of time constants, and mismatched neuron dynamics.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::BackwardMode;
use crate::network::{
    exact_state, forward_sample_with, Dynamics, ForwardTrace, LayerWeights, NeuronOverrides,
    NeuronState, Topology,
};
use crate::params::{NeuronParams, Regime};
use crate::spiketime::{is_spike, solve_sorted, SortedInputs, NO_SPIKE};

/// Lower bound of sampled time constants, relative to the mean `tau_s`.
pub const TAU_FLOOR: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistortionConfig {
    /// Effective weights are limited to `[-w_clip, w_clip]`.
    pub w_clip: Option<f64>,
    /// Effective weights take one of `2 * 2^bits - 1` levels on `[-w_clip, w_clip]`.
    pub weight_bits: Option<u32>,
    /// Standard deviation of per-neuron time constants, as a fraction of the mean `tau_s`.
    pub tau_noise: Option<f64>,
    /// Mean `tau_m / tau_s` of the substrate.
    pub tau_ratio: Option<f64>,
    pub backward_mode: BackwardMode,
}

impl DistortionConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(c) = self.w_clip {
            if !(c > 0.0) {
                return Err(Error::invalid("w_clip", format!("must be positive, got {c}")));
            }
        }
        if let Some(n) = self.weight_bits {
            if n < 2 {
                return Err(Error::invalid("weight_bits", format!("must be >= 2, got {n}")));
            }
            if !self.w_clip.is_some_and(f64::is_finite) {
                return Err(Error::invalid(
                    "weight_bits",
                    "quantization needs a finite w_clip for its range",
                ));
            }
        }
        if let Some(s) = self.tau_noise {
            if !(s >= 0.0) {
                return Err(Error::invalid("tau_noise", format!("must be >= 0, got {s}")));
            }
        }
        if let Some(r) = self.tau_ratio {
            if !(r > 0.0) {
                return Err(Error::invalid("tau_ratio", format!("must be positive, got {r}")));
            }
        }
        Ok(())
    }

    pub fn distorts_weights(&self) -> bool {
        self.w_clip.is_some_and(f64::is_finite) || self.weight_bits.is_some()
    }

    /// Whether neuron dynamics deviate from the assumed parameters.
    pub fn distorts_dynamics(&self) -> bool {
        self.tau_noise.is_some() || self.tau_ratio.is_some()
    }

    /// Map from a full-precision weight to its effective value.
    pub fn weight_map(&self) -> impl Fn(f64) -> f64 {
        let clip = self.w_clip.unwrap_or(f64::INFINITY);
        let bits = self.weight_bits;
        move |w| match bits {
            Some(n) => quantize_value(w, clip, n),
            None => clip_value(w, clip),
        }
    }

    /// Refresh the effective weights of every layer from their master copy.
    pub fn apply(&self, weights: &mut [LayerWeights]) {
        if self.distorts_weights() {
            let f = self.weight_map();
            for w in weights {
                w.distort_with(&f);
            }
        } else {
            for w in weights {
                w.restore();
            }
        }
    }

    /// Per-neuron substrate parameters, or `None` if dynamics are undistorted.
    pub fn sample_overrides(&self, topo: &Topology, rng: &mut impl Rng) -> Option<NeuronOverrides> {
        if !self.distorts_dynamics() {
            return None;
        }
        let tau_s = topo.params[0].tau_s;
        let tau_m = self.tau_ratio.map_or(topo.params[0].tau_m, |r| r * tau_s);
        let sigma = self.tau_noise.unwrap_or(0.0) * tau_s;
        Some(sample_fixed_pattern_taus(topo, tau_s, tau_m, sigma, rng))
    }
}

pub fn clip_value(w: f64, w_clip: f64) -> f64 {
    w.clamp(-w_clip, w_clip)
}

/// Nearest of the `2 * 2^bits - 1` levels spanning `[-w_clip, w_clip]`,
/// rounding halves away from zero.
pub fn quantize_value(w: f64, w_clip: f64, bits: u32) -> f64 {
    let step = w_clip / ((1u64 << bits) - 1) as f64;
    ((clip_value(w, w_clip) / step).round() * step).clamp(-w_clip, w_clip)
}

/// The quantization grid, ascending.
pub fn quantization_levels(w_clip: f64, bits: u32) -> Vec<f64> {
    let half = (1i64 << bits) - 1;
    let step = w_clip / half as f64;
    (-half..=half).map(|k| k as f64 * step).collect()
}

/// Copies of `weights` whose effective values are clipped to `w_clip`.
pub fn clip_weights(weights: &[LayerWeights], w_clip: f64) -> Vec<LayerWeights> {
    let mut out = weights.to_vec();
    for w in &mut out {
        w.distort_with(|x| clip_value(x, w_clip));
    }
    out
}

/// Copies of `weights` whose effective values are quantized to `bits`.
pub fn quantize(weights: &[LayerWeights], w_clip: f64, bits: u32) -> Vec<LayerWeights> {
    let mut out = weights.to_vec();
    for w in &mut out {
        w.distort_with(|x| quantize_value(x, w_clip, bits));
    }
    out
}

/// Draw per-neuron `(tau_s, tau_m)` from `N(mean, sigma)`, truncated at
/// `TAU_FLOOR * mean_tau_s`; the leak conductance is kept.
pub fn sample_fixed_pattern_taus(
    topo: &Topology,
    mean_tau_s: f64,
    mean_tau_m: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> NeuronOverrides {
    let floor = TAU_FLOOR * mean_tau_s;
    let mut draw = |mean: f64| {
        if sigma == 0.0 {
            return mean;
        }
        let normal = Normal::new(mean, sigma).expect("sigma is finite and non-negative");
        loop {
            let x = normal.sample(rng);
            if x > floor {
                return x;
            }
        }
    };
    (0..topo.n_weight_layers())
        .map(|l| {
            (0..topo.layer_sizes[l + 1])
                .map(|_| {
                    let tau_s = draw(mean_tau_s);
                    let tau_m = draw(mean_tau_m);
                    topo.params[l].with_taus(tau_s, tau_m)
                })
                .collect()
        })
        .collect()
}

/// Forward pass with per-neuron true dynamics.
pub fn distorted_forward(
    batch: &[Vec<f64>],
    weights: &[LayerWeights],
    topo: &Topology,
    overrides: &NeuronOverrides,
    mode: BackwardMode,
) -> Vec<ForwardTrace> {
    batch
        .iter()
        .map(|x| forward_sample_with(x, weights, topo, Dynamics::Substrate { overrides, mode }))
        .collect()
}

/// Neuron state when the spike time comes from the true dynamics and the
/// derivative model from the assumed ones.
///
/// Reinserted mode keeps the observed spike time and takes the inputs before
/// it as causal set. Naive mode recomputes the causal set from the assumed
/// closed form; if that predicts no spike the neuron gets an empty causal set
/// and no gradient.
pub(crate) fn substrate_state(
    sorted: &SortedInputs,
    row: &[f64],
    assumed: &NeuronParams,
    truth: &NeuronParams,
    regime: Regime,
    mode: BackwardMode,
) -> NeuronState {
    let t_obs = substrate_crossing(sorted, row, truth);
    let mut state = match mode {
        BackwardMode::Reinserted => {
            let causal_len = sorted.times.partition_point(|&t| t < t_obs);
            let sums = sorted.prefix_sums(row, causal_len);
            let mut s = NeuronState {
                time: t_obs,
                causal_len,
                sums,
                lambert_arg: None,
                discriminant: None,
                tangent: false,
            };
            if let Ok(c) = crate::spiketime::candidate(regime, &sums, assumed) {
                s.lambert_arg = c.lambert_arg;
                s.discriminant = c.discriminant;
                s.tangent = c.tangent;
            }
            s
        }
        BackwardMode::Naive => {
            let s = exact_state(sorted, row, assumed, regime);
            if is_spike(s.time) {
                s
            } else {
                NeuronState {
                    causal_len: 0,
                    sums: Default::default(),
                    ..s
                }
            }
        }
    };
    state.time = t_obs;
    state
}

/// First threshold crossing of a neuron with arbitrary finite time constants.
///
/// Between consecutive input times the voltage is a combination of two
/// exponentials with at most one stationary point, so the first crossing can
/// be bracketed exactly and refined by bisection.
pub fn substrate_crossing(sorted: &SortedInputs, row: &[f64], p: &NeuronParams) -> f64 {
    let n = sorted.len();
    let theta = p.threshold;
    let (ts, tm) = (p.tau_s, p.tau_m);
    let kind = if tm.is_infinite() {
        Kernel::NonLeaky
    } else if (tm - ts).abs() < crate::oracle::ALPHA_SWITCH * ts {
        Kernel::Alpha
    } else {
        Kernel::Difference
    };
    // Prefix sums over the inputs seen so far.
    let (mut a, mut b) = (0.0, 0.0);
    let mut j = 0;
    while j < n {
        let t0 = sorted.times[j];
        while j < n && sorted.times[j] == t0 {
            let w = row[sorted.order[j]];
            let t = sorted.times[j];
            match kind {
                Kernel::Difference => {
                    a += w * (t / tm).exp();
                    b += w * (t / ts).exp();
                }
                Kernel::Alpha => {
                    let e = (t / ts).exp();
                    a += w * e;
                    b += w * t * e;
                }
                Kernel::NonLeaky => {
                    a += w;
                    b += w * (t / ts).exp();
                }
            }
            j += 1;
        }
        let t1 = if j < n { sorted.times[j] } else { f64::INFINITY };
        let seg = Segment { kind, a, b, p };
        if let Some(t) = seg.first_crossing(t0, t1, theta) {
            return t;
        }
    }
    NO_SPIKE
}

#[derive(Debug, Clone, Copy)]
enum Kernel {
    Difference,
    Alpha,
    NonLeaky,
}

/// Voltage between two input times.
struct Segment<'a> {
    kind: Kernel,
    a: f64,
    b: f64,
    p: &'a NeuronParams,
}

impl Segment<'_> {
    fn u(&self, t: f64) -> f64 {
        let (ts, tm, c) = (self.p.tau_s, self.p.tau_m, self.p.c_m);
        match self.kind {
            Kernel::Difference => {
                tm * ts / (c * (tm - ts)) * (self.a * (-t / tm).exp() - self.b * (-t / ts).exp())
            }
            Kernel::Alpha => (-t / ts).exp() * (self.a * t - self.b) / c,
            Kernel::NonLeaky => ts / c * (self.a - self.b * (-t / ts).exp()),
        }
    }

    fn rising(&self, t: f64) -> bool {
        let (ts, tm) = (self.p.tau_s, self.p.tau_m);
        match self.kind {
            Kernel::Difference => {
                let d = -self.a / tm * (-t / tm).exp() + self.b / ts * (-t / ts).exp();
                d * (tm - ts) > 0.0
            }
            Kernel::Alpha => self.a - (self.a * t - self.b) / ts > 0.0,
            Kernel::NonLeaky => self.b > 0.0,
        }
    }

    /// The single stationary point, if any.
    fn stationary(&self) -> Option<f64> {
        let (ts, tm) = (self.p.tau_s, self.p.tau_m);
        match self.kind {
            Kernel::Difference => {
                let ratio = self.b * tm / (self.a * ts);
                (ratio > 0.0).then(|| ratio.ln() / (1.0 / ts - 1.0 / tm))
            }
            Kernel::Alpha => (self.a != 0.0).then(|| ts + self.b / self.a),
            Kernel::NonLeaky => None,
        }
    }

    fn first_crossing(&self, t0: f64, t1: f64, theta: f64) -> Option<f64> {
        let f = |t: f64| self.u(t) - theta;
        if f(t0) >= 0.0 {
            return Some(t0);
        }
        let peak = self.stationary().filter(|&s| s > t0 && s < t1);
        let bracket = match peak {
            Some(s) if self.rising(t0) => (f(s) >= 0.0).then_some((t0, s)),
            Some(s) => (t1.is_finite() && f(t1) >= 0.0).then_some((s, t1)),
            None if t1.is_finite() => (f(t1) >= 0.0).then_some((t0, t1)),
            None => self.unbounded_bracket(t0, theta),
        };
        bracket.map(|(lo, hi)| bisect(&f, lo, hi))
    }

    /// Bracket on the last, unbounded segment. Only a non-leaky neuron can
    /// still cross there while monotone.
    fn unbounded_bracket(&self, t0: f64, theta: f64) -> Option<(f64, f64)> {
        if !matches!(self.kind, Kernel::NonLeaky) || !self.rising(t0) {
            return None;
        }
        if self.p.tau_s / self.p.c_m * self.a <= theta {
            return None;
        }
        let mut hi = t0 + self.p.tau_s;
        while self.u(hi) < theta {
            hi = t0 + 2.0 * (hi - t0);
        }
        Some((t0, hi))
    }
}

fn bisect(f: &dyn Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
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

/// Closed-form spike time under the assumed parameters, for comparison.
pub fn assumed_spike_time(sorted: &SortedInputs, row: &[f64], p: &NeuronParams, regime: Regime) -> f64 {
    solve_sorted(sorted, row, p, regime).time
}
