//! Randomized agreement suites: closed-form spike times against the
//! numerical oracle, and analytic gradients against finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::gradients::{BackwardMode, Derivatives};
use crate::network::{backward, forward_sample, LayerWeights, LossConfig, Topology};
use crate::oracle;
use crate::params::{NeuronParams, Regime};
use crate::spiketime::{find_causal_set, InputSpikes, NO_SPIKE};

/// Spike-time agreement tolerance in units of `tau_s`.
pub const ORACLE_TOL: f64 = 1e-8;
/// Agreement tolerance for the non-leaky regime, whose oracle uses a very
/// long but finite membrane time constant.
pub const NLIF_ORACLE_TOL: f64 = 1e-3;
/// Membrane time constant of the non-leaky oracle, in units of `tau_s`.
pub const NLIF_PROXY_TAU_M: f64 = 1e4;
/// Relative tolerance of analytic against finite-difference gradients.
pub const GRAD_REL_TOL: f64 = 1e-5;
/// Finite-difference step.
pub const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub regime: Option<Regime>,
    /// Instances compared.
    pub checked: usize,
    /// Instances rejected as unstable or degenerate.
    pub skipped: usize,
    pub spiking: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: usize,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_error <= self.tolerance
    }
}

/// Random presynaptic spikes: 1 to 10 inputs, weights in `[-2, 4]`, times in
/// `[0, 3 tau_s]`.
pub fn random_inputs(rng: &mut impl Rng, tau_s: f64) -> InputSpikes {
    let n = rng.random_range(1..=10);
    InputSpikes {
        times: (0..n).map(|_| rng.random_range(0.0..3.0) * tau_s).collect(),
        weights: (0..n).map(|_| rng.random_range(-2.0..4.0)).collect(),
    }
}

/// Parameters used for both the closed form and the oracle of a regime.
pub fn oracle_params(regime: Regime) -> (NeuronParams, NeuronParams) {
    match regime {
        Regime::Nlif => {
            let closed = NeuronParams::nlif(1.0, 1.0, 1.0);
            let proxy = NeuronParams {
                tau_m: NLIF_PROXY_TAU_M,
                ..closed
            };
            (closed, proxy)
        }
        r => {
            let p = NeuronParams::for_regime(r);
            (p, p)
        }
    }
}

/// Closed-form first-spike times against the grid-scan oracle on `n` random
/// instances.
pub fn oracle_suite(regime: Regime, n: usize, seed: u64) -> SuiteReport {
    let (closed, proxy) = oracle_params(regime);
    let tol = match regime {
        Regime::Nlif => NLIF_ORACLE_TOL,
        _ => ORACLE_TOL,
    } * closed.tau_s;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        suite: "oracle".into(),
        regime: Some(regime),
        checked: 0,
        skipped: 0,
        spiking: 0,
        max_error: 0.0,
        tolerance: tol,
        failures: 0,
    };
    for _ in 0..n {
        let inputs = random_inputs(&mut rng, closed.tau_s);
        let t = find_causal_set(&inputs, &closed, regime).time;
        let o = oracle::first_crossing(&inputs, &proxy, oracle::DEFAULT_HORIZON * closed.tau_s);
        report.checked += 1;
        let err = match (t == NO_SPIKE, o == NO_SPIKE) {
            (true, true) => 0.0,
            (false, false) => {
                report.spiking += 1;
                (t - o).abs()
            }
            _ => f64::INFINITY,
        };
        if err > tol {
            report.failures += 1;
        }
        report.max_error = report.max_error.max(err);
    }
    report
}

/// Normwise relative error `max|a - f| / max(|a|, |f|)` of one gradient
/// vector. Componentwise ratios are meaningless for entries near the
/// finite-difference noise floor.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, f)| (a - f).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Spike time of `inputs` plus a signature of its causal set.
fn timed(inputs: &InputSpikes, p: &NeuronParams, regime: Regime) -> (f64, Vec<usize>) {
    let r = find_causal_set(inputs, p, regime);
    let mut idx = r.causal_set.indices;
    if r.time == NO_SPIKE {
        idx.clear();
        idx.push(usize::MAX);
    } else {
        idx.sort_unstable();
    }
    (r.time, idx)
}

/// Analytic single-neuron gradients against central differences on `n`
/// stable spiking instances.
pub fn gradient_suite(regime: Regime, mode: BackwardMode, n: usize, seed: u64) -> SuiteReport {
    let p = NeuronParams::for_regime(regime);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        suite: format!("gradcheck-{mode}"),
        regime: Some(regime),
        checked: 0,
        skipped: 0,
        spiking: 0,
        max_error: 0.0,
        tolerance: GRAD_REL_TOL,
        failures: 0,
    };
    let mut attempts = 0;
    while report.checked < n && attempts < 200 * n {
        attempts += 1;
        let inputs = random_inputs(&mut rng, p.tau_s);
        let r = find_causal_set(&inputs, &p, regime);
        if r.time == NO_SPIKE {
            continue;
        }
        report.spiking += 1;
        let Ok(derivs) = Derivatives::new(regime, mode, &r.causal_set.sums, &p, r.time) else {
            report.skipped += 1;
            continue;
        };
        let k = inputs.len();
        let mut point: Vec<f64> = inputs.weights.clone();
        point.extend(&inputs.times);
        let f = |x: &[f64]| {
            let perturbed = InputSpikes {
                weights: x[..k].to_vec(),
                times: x[k..].to_vec(),
            };
            timed(&perturbed, &p, regime)
        };
        let Ok(fd) = oracle::finite_difference(f, &point, FD_STEP) else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let mut analytic = vec![0.0; 2 * k];
        for i in 0..k {
            if r.causal_set.contains(i) {
                let s = inputs.times[i] / p.tau_s;
                let (dw, dt) =
                    derivs.at(inputs.weights[i], inputs.times[i], s.exp(), (0.5 * s).exp());
                analytic[i] = dw;
                analytic[k + i] = dt;
            }
        }
        let worst = relative_error(&analytic, &fd);
        if worst > GRAD_REL_TOL {
            report.failures += 1;
        }
        report.max_error = report.max_error.max(worst);
    }
    report
}

/// A random network instance whose label layer spikes.
pub struct NetworkInstance {
    pub topology: Topology,
    pub weights: Vec<LayerWeights>,
    pub input: Vec<f64>,
    pub label: usize,
}

pub fn random_network(
    rng: &mut impl Rng,
    sizes: &[usize],
    regime: Regime,
) -> Option<NetworkInstance> {
    let topology = Topology::uniform(
        sizes.to_vec(),
        NeuronParams::for_regime(regime),
        regime,
        vec![],
    )
    .ok()?;
    let weights: Vec<LayerWeights> = (0..topology.n_weight_layers())
        .map(|l| {
            let (r, c) = topology.weight_shape(l);
            let values = (0..r * c).map(|_| rng.random_range(-1.0..3.5)).collect();
            LayerWeights::from_vec(r, c, values).unwrap()
        })
        .collect();
    let input: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(0.0..2.0)).collect();
    let label = rng.random_range(0..*sizes.last().unwrap());
    let trace = forward_sample(&input, &weights, &topology);
    trace
        .label_times()
        .iter()
        .any(|t| t.is_finite())
        .then_some(NetworkInstance {
            topology,
            weights,
            input,
            label,
        })
}

/// Backpropagated loss gradients against central differences of the loss
/// over every weight of random networks.
pub fn network_gradient_suite(
    sizes: &[usize],
    regime: Regime,
    mode: BackwardMode,
    n: usize,
    seed: u64,
) -> SuiteReport {
    let cfg = LossConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport {
        suite: format!("network-gradcheck-{mode}"),
        regime: Some(regime),
        checked: 0,
        skipped: 0,
        spiking: 0,
        max_error: 0.0,
        tolerance: GRAD_REL_TOL,
        failures: 0,
    };
    let mut attempts = 0;
    while report.checked < n && attempts < 200 * n {
        attempts += 1;
        let Some(inst) = random_network(&mut rng, sizes, regime) else {
            continue;
        };
        report.spiking += 1;
        let topo = &inst.topology;
        let trace = forward_sample(&inst.input, &inst.weights, topo);
        let Ok(g) = backward(&trace, &inst.weights, topo, inst.label, &cfg, mode) else {
            report.skipped += 1;
            continue;
        };
        if g.degenerate > 0 || trace.layers.iter().flat_map(|l| &l.neurons).any(|n| n.tangent) {
            report.skipped += 1;
            continue;
        }
        let shapes: Vec<(usize, usize)> = inst.weights.iter().map(|w| (w.rows, w.cols)).collect();
        let point: Vec<f64> = inst.weights.iter().flat_map(|w| w.values.clone()).collect();
        let f = |x: &[f64]| {
            let mut off = 0;
            let ws: Vec<LayerWeights> = shapes
                .iter()
                .map(|&(r, c)| {
                    let w = LayerWeights::from_vec(r, c, x[off..off + r * c].to_vec()).unwrap();
                    off += r * c;
                    w
                })
                .collect();
            let tr = forward_sample(&inst.input, &ws, topo);
            let signature: Vec<Vec<Vec<usize>>> = tr
                .layers
                .iter()
                .map(|l| {
                    (0..l.neurons.len())
                        .map(|k| {
                            if l.neurons[k].time.is_finite() {
                                let mut s = l.causal_set(k).to_vec();
                                s.sort_unstable();
                                s
                            } else {
                                vec![usize::MAX]
                            }
                        })
                        .collect()
                })
                .collect();
            let tau = topo.params.last().unwrap().tau_s;
            let value = crate::network::loss(&tr.label_times(), inst.label, &cfg, tau)
                .unwrap_or(f64::NAN);
            (value, signature)
        };
        let Ok(fd) = oracle::finite_difference(f, &point, FD_STEP) else {
            report.skipped += 1;
            continue;
        };
        report.checked += 1;
        let analytic: Vec<f64> = g.grads.iter().flat_map(|w| w.values.clone()).collect();
        let worst = relative_error(&analytic, &fd);
        if worst > GRAD_REL_TOL {
            report.failures += 1;
        }
        report.max_error = report.max_error.max(worst);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_oracle_suites_pass() {
        for regime in [Regime::EqualTau, Regime::DoubleTau] {
            let r = oracle_suite(regime, 20, 5);
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn small_gradient_suites_pass() {
        for regime in [Regime::EqualTau, Regime::DoubleTau, Regime::Nlif] {
            let r = gradient_suite(regime, BackwardMode::Reinserted, 20, 3);
            assert_eq!(r.checked, 20);
            assert!(r.passed(), "{r:?}");
        }
    }
}
