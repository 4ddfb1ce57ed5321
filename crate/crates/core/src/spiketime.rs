//! Closed-form first-spike times and causal-set determination.
//!
//! For a causal set `C` of presynaptic spikes the membrane voltage has a
//! closed form in terms of the sums
//!
//! ```text
//! a_n   = sum_{i in C} w_i exp(t_i / (n tau_s))
//! a_inf = sum_{i in C} w_i
//! b     = sum_{i in C} w_i (t_i / tau_s) exp(t_i / tau_s)
//! ```
//!
//! and the threshold crossing can be solved exactly when `tau_m` equals
//! `tau_s`, `2 tau_s`, or infinity. The causal set itself is found by walking
//! the time-ordered inputs and accepting the first prefix whose candidate
//! spike time falls between its last input and the next one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambert::{lambert_w0, BRANCH_POINT, BRANCH_SLACK};
use crate::params::{NeuronParams, Regime};

/// Sentinel for a neuron that never spiked. Larger than every spike time.
pub const NO_SPIKE: f64 = f64::INFINITY;

/// `z` this close above (or below) `-1/e` counts as a tangent crossing.
pub const TANGENT_TOLERANCE: f64 = 1e-12;

pub fn is_spike(t: f64) -> bool {
    t.is_finite()
}

/// Presynaptic spike times and the weights they arrive through.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSpikes {
    pub times: Vec<f64>,
    pub weights: Vec<f64>,
}

impl InputSpikes {
    pub fn new(times: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let inputs = Self { times, weights };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.weights.len() {
            return Err(Error::Shape(format!(
                "{} spike times but {} weights",
                self.times.len(),
                self.weights.len()
            )));
        }
        if let Some(t) = self
            .times
            .iter()
            .find(|t| t.is_nan() || **t < 0.0 || **t == f64::NEG_INFINITY)
        {
            return Err(Error::invalid("times", format!("spike time {t} is not >= 0")));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("weights", "weights must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Shift every finite spike time by `dt`.
    pub fn shifted(&self, dt: f64) -> Self {
        Self {
            times: self.times.iter().map(|t| t + dt).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Cached sums over a causal set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CausalSums {
    pub a1: f64,
    pub a2: f64,
    pub a_inf: f64,
    pub b: f64,
}

impl CausalSums {
    fn add(&mut self, w: f64, s: f64, e1: f64, e2: f64) {
        self.a1 += w * e1;
        self.a2 += w * e2;
        self.a_inf += w;
        self.b += w * s * e1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CausalSet {
    /// Presynaptic indices in order of arrival.
    pub indices: Vec<usize>,
    pub sums: CausalSums,
}

impl CausalSet {
    /// Recompute the cached sums from their definitions.
    pub fn from_indices(inputs: &InputSpikes, indices: Vec<usize>, tau_s: f64) -> Self {
        let mut sums = CausalSums::default();
        for &i in &indices {
            let s = inputs.times[i] / tau_s;
            sums.add(inputs.weights[i], s, s.exp(), (0.5 * s).exp());
        }
        Self { indices, sums }
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.contains(&i)
    }
}

/// Closed-form solution for one causal set, with regime diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub time: f64,
    /// `z = -(g_l theta / a1) exp(b / a1)` (equal tau only).
    pub lambert_arg: Option<f64>,
    /// `W0(z)` (equal tau only).
    pub lambert_w: Option<f64>,
    /// `a2^2 - 4 a1 g_l theta` (double tau only).
    pub discriminant: Option<f64>,
    pub tangent: bool,
}

impl Candidate {
    fn plain(time: f64) -> Self {
        Self {
            time,
            lambert_arg: None,
            lambert_w: None,
            discriminant: None,
            tangent: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpikeTimeResult {
    /// First-spike time or [`NO_SPIKE`].
    pub time: f64,
    pub causal_set: CausalSet,
    pub lambert_arg: Option<f64>,
    pub lambert_w: Option<f64>,
    pub discriminant: Option<f64>,
    pub tangent: bool,
}

impl SpikeTimeResult {
    pub fn spiked(&self) -> bool {
        is_spike(self.time)
    }
}

/// `T = tau_s [b/a1 - W0(z)]` for `tau_m = tau_s`.
pub fn spike_time_equal_tau(cs: &CausalSet, params: &NeuronParams) -> Result<f64> {
    equal_tau_candidate(&cs.sums, params).map(|c| c.time)
}

/// `T = 2 tau_s ln[2 a1 / (a2 + sqrt(a2^2 - 4 a1 g_l theta))]` for `tau_m = 2 tau_s`.
pub fn spike_time_double_tau(cs: &CausalSet, params: &NeuronParams) -> Result<f64> {
    double_tau_candidate(&cs.sums, params).map(|c| c.time)
}

/// `T = tau_s ln[a1 / (a_inf - theta C_m / tau_s)]` in the non-leaky limit.
pub fn spike_time_nlif(cs: &CausalSet, params: &NeuronParams) -> Result<f64> {
    nlif_candidate(&cs.sums, params).map(|c| c.time)
}

pub fn candidate(regime: Regime, sums: &CausalSums, params: &NeuronParams) -> Result<Candidate> {
    match regime {
        Regime::EqualTau => equal_tau_candidate(sums, params),
        Regime::DoubleTau => double_tau_candidate(sums, params),
        Regime::Nlif => nlif_candidate(sums, params),
    }
}

pub(crate) fn equal_tau_z(sums: &CausalSums, params: &NeuronParams) -> f64 {
    -(params.g_l() * params.threshold / sums.a1) * (sums.b / sums.a1).exp()
}

fn equal_tau_candidate(sums: &CausalSums, params: &NeuronParams) -> Result<Candidate> {
    if sums.a1 == 0.0 {
        return Err(Error::NoCrossing);
    }
    let mut z = equal_tau_z(sums, params);
    if !z.is_finite() {
        return Err(Error::NoCrossing);
    }
    let tangent = (z - BRANCH_POINT).abs() <= TANGENT_TOLERANCE;
    if z < BRANCH_POINT - BRANCH_SLACK {
        if !tangent {
            return Err(Error::NoCrossing);
        }
        z = BRANCH_POINT;
    }
    let w = lambert_w0(z)?;
    Ok(Candidate {
        time: params.tau_s * (sums.b / sums.a1 - w),
        lambert_arg: Some(z),
        lambert_w: Some(w),
        discriminant: None,
        tangent,
    })
}

fn double_tau_candidate(sums: &CausalSums, params: &NeuronParams) -> Result<Candidate> {
    if sums.a1 <= 0.0 {
        return Err(Error::NoCrossing);
    }
    let g_theta = params.g_l() * params.threshold;
    let disc = sums.a2 * sums.a2 - 4.0 * sums.a1 * g_theta;
    let tangent = disc.abs() <= TANGENT_TOLERANCE * sums.a2 * sums.a2;
    if disc < 0.0 && !tangent {
        return Err(Error::NoCrossing);
    }
    let denom = sums.a2 + disc.max(0.0).sqrt();
    if denom <= 0.0 {
        return Err(Error::NoCrossing);
    }
    Ok(Candidate {
        time: 2.0 * params.tau_s * (2.0 * sums.a1 / denom).ln(),
        lambert_arg: None,
        lambert_w: None,
        discriminant: Some(disc),
        tangent,
    })
}

fn nlif_candidate(sums: &CausalSums, params: &NeuronParams) -> Result<Candidate> {
    let denom = sums.a_inf - params.threshold * params.c_m / params.tau_s;
    if denom <= 0.0 || sums.a1 <= 0.0 {
        return Err(Error::NoCrossing);
    }
    let ratio = sums.a1 / denom;
    if ratio < 1.0 {
        return Err(Error::NoCrossing);
    }
    Ok(Candidate::plain(params.tau_s * ratio.ln()))
}

/// Finite input spikes in order of arrival with their exponential factors.
///
/// Building this once per layer lets every postsynaptic neuron reuse the sort
/// and the exponentials.
#[derive(Debug, Clone, Default)]
pub struct SortedInputs {
    pub order: Vec<usize>,
    pub times: Vec<f64>,
    s: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
}

impl SortedInputs {
    pub fn new(times: &[f64], tau_s: f64) -> Self {
        let mut order: Vec<usize> = (0..times.len()).filter(|&i| is_spike(times[i])).collect();
        order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let s: Vec<f64> = sorted.iter().map(|t| t / tau_s).collect();
        let e1 = s.iter().map(|s| s.exp()).collect();
        let e2 = s.iter().map(|s| (0.5 * s).exp()).collect();
        Self {
            order,
            times: sorted,
            s,
            e1,
            e2,
        }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `(exp(t / tau_s), exp(t / 2 tau_s))` of the input at sorted position `j`.
    #[inline]
    pub fn exps(&self, j: usize) -> (f64, f64) {
        (self.e1[j], self.e2[j])
    }

    /// Causal sums of the first `len` sorted inputs.
    pub fn prefix_sums(&self, weights: &[f64], len: usize) -> CausalSums {
        let mut sums = CausalSums::default();
        for j in 0..len {
            sums.add(weights[self.order[j]], self.s[j], self.e1[j], self.e2[j]);
        }
        sums
    }
}

/// Outcome of the causal-set search for one neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronSolution {
    pub time: f64,
    /// Length of the causal prefix of [`SortedInputs::order`].
    pub causal_len: usize,
    pub sums: CausalSums,
    pub lambert_arg: Option<f64>,
    pub lambert_w: Option<f64>,
    pub discriminant: Option<f64>,
    pub tangent: bool,
}

/// Causal-set search over presorted inputs. `weights` is indexed by the
/// original presynaptic index.
pub fn solve_sorted(
    sorted: &SortedInputs,
    weights: &[f64],
    params: &NeuronParams,
    regime: Regime,
) -> NeuronSolution {
    let n = sorted.len();
    let g_theta = params.g_l() * params.threshold;
    let mut sums = CausalSums::default();
    let mut last_candidate = None;
    let mut j = 0;
    while j < n {
        // Equal arrival times enter the causal set together.
        let t_last = sorted.times[j];
        while j < n && sorted.times[j] == t_last {
            sums.add(
                weights[sorted.order[j]],
                sorted.s[j],
                sorted.e1[j],
                sorted.e2[j],
            );
            j += 1;
        }
        let next = (j < n).then_some(j);
        let t_next = next.map_or(f64::INFINITY, |k| sorted.times[k]);

        if !may_cross(regime, &sums, g_theta, sorted, j - 1, next) {
            continue;
        }
        let Ok(c) = candidate(regime, &sums, params) else {
            continue;
        };
        last_candidate = Some(c);
        if c.time >= t_last && c.time < t_next {
            return NeuronSolution {
                time: c.time,
                causal_len: j,
                sums,
                lambert_arg: c.lambert_arg,
                lambert_w: c.lambert_w,
                discriminant: c.discriminant,
                tangent: c.tangent,
            };
        }
    }
    NeuronSolution {
        time: NO_SPIKE,
        causal_len: n,
        sums,
        lambert_arg: last_candidate.and_then(|c| c.lambert_arg),
        lambert_w: None,
        discriminant: last_candidate.and_then(|c| c.discriminant),
        tangent: false,
    }
}

/// Cheap necessary condition for a threshold crossing between the input at
/// sorted position `last` and the one at `next`.
///
/// Uses only the precomputed exponentials of the interval ends; it never
/// rejects a prefix whose closed-form time lies inside the interval.
fn may_cross(
    regime: Regime,
    sums: &CausalSums,
    g_theta: f64,
    sorted: &SortedInputs,
    last: usize,
    next: Option<usize>,
) -> bool {
    const SLACK: f64 = 1e-9;
    match regime {
        Regime::Nlif => true,
        Regime::EqualTau => {
            // f(s) = a1 s - b - g theta e^s, proportional to u - theta.
            let Some(k) = next else {
                return sums.a1 > 0.0;
            };
            let (s_n, e_n) = (sorted.s[k], sorted.e1[k]);
            let scale = (sums.a1 * s_n).abs() + sums.b.abs() + g_theta * e_n;
            if sums.a1 * s_n - sums.b - g_theta * e_n >= -SLACK * scale {
                return true;
            }
            if sums.a1 <= 0.0 {
                return false;
            }
            let e_peak = sums.a1 / g_theta;
            if e_peak <= sorted.e1[last] || e_peak >= e_n {
                return false;
            }
            sums.a1 * (e_peak.ln() - 1.0) - sums.b >= -SLACK * scale
        }
        Regime::DoubleTau => {
            // f(q) = a2 q - a1 q^2 - g theta with q = exp(-s/2).
            if sums.a1 <= 0.0 {
                return false;
            }
            let Some(k) = next else {
                return true;
            };
            let q_n = 1.0 / sorted.e2[k];
            let scale = (sums.a2 * q_n).abs() + (sums.a1 * q_n * q_n).abs() + g_theta;
            if sums.a2 * q_n - sums.a1 * q_n * q_n - g_theta >= -SLACK * scale {
                return true;
            }
            let q_peak = sums.a2 / (2.0 * sums.a1);
            let q_last = 1.0 / sorted.e2[last];
            if q_peak <= q_n || q_peak >= q_last {
                return false;
            }
            sums.a2 * sums.a2 / (4.0 * sums.a1) - g_theta >= -SLACK * scale
        }
    }
}

/// First spike time of a single neuron: sorts the inputs, walks the prefixes
/// and returns the earliest valid closed-form crossing.
pub fn find_causal_set(
    inputs: &InputSpikes,
    params: &NeuronParams,
    regime: Regime,
) -> SpikeTimeResult {
    let sorted = SortedInputs::new(&inputs.times, params.tau_s);
    let sol = solve_sorted(&sorted, &inputs.weights, params, regime);
    SpikeTimeResult {
        time: sol.time,
        causal_set: CausalSet {
            indices: sorted.order[..sol.causal_len].to_vec(),
            sums: sol.sums,
        },
        lambert_arg: sol.lambert_arg,
        lambert_w: sol.lambert_w,
        discriminant: sol.discriminant,
        tangent: sol.tangent,
    }
}
