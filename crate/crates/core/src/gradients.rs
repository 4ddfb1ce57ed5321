//! Exact derivatives of first-spike times.
//!
//! Two forms exist for the leaky regimes. The naive form differentiates the
//! closed-form spike time as a function of weights and input times only. The
//! reinserted form substitutes the spike time itself back into the result,
//! so it can consume a spike time observed on a substrate whose dynamics do
//! not match the assumed parameters exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lambert::lambert_w0;
use crate::params::{NeuronParams, Regime};
use crate::spiketime::{equal_tau_z, CausalSet, CausalSums, InputSpikes};

/// `|W(z) + 1|` below this is a tangent crossing with divergent derivatives.
pub const EPS_W: f64 = 1e-10;

/// Square-root discriminant below this is treated as tangent.
pub const EPS_X: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackwardMode {
    Naive,
    #[default]
    Reinserted,
}

impl std::fmt::Display for BackwardMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackwardMode::Naive => "naive",
            BackwardMode::Reinserted => "reinserted",
        })
    }
}

impl std::str::FromStr for BackwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "naive" => Ok(BackwardMode::Naive),
            "reinserted" => Ok(BackwardMode::Reinserted),
            other => Err(Error::invalid("backward_mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// `dT/dt_i` and `dT/dw_i` for every presynaptic input; zero outside the
/// causal set.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeGradients {
    pub d_t: Vec<f64>,
    pub d_w: Vec<f64>,
}

/// Per-neuron factors of the spike-time derivatives. Evaluating them for one
/// causal input is a handful of multiplications.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Derivatives {
    EqualTauReinserted { c: f64, t: f64, tau_s: f64 },
    EqualTauNaive { a1: f64, m: f64, q: f64, tau_s: f64 },
    DoubleTau { p: f64, x: f64, tau_s: f64 },
    Nlif { a1: f64, denom: f64, tau_s: f64 },
}

impl Derivatives {
    /// Build the factors for one neuron.
    ///
    /// `t_observed` is only read by the reinserted leaky forms. The non-leaky
    /// regime has a single form and ignores `mode`.
    pub fn new(
        regime: Regime,
        mode: BackwardMode,
        sums: &CausalSums,
        params: &NeuronParams,
        t_observed: f64,
    ) -> Result<Self> {
        let tau_s = params.tau_s;
        let g_theta = params.g_l() * params.threshold;
        match regime {
            Regime::EqualTau => {
                if sums.a1 == 0.0 {
                    return Err(Error::DegenerateGradient("a1 = 0"));
                }
                let w = lambert_w0(equal_tau_z(sums, params))
                    .map_err(|_| Error::DegenerateGradient("no crossing under assumed parameters"))?;
                if (w + 1.0).abs() < EPS_W {
                    return Err(Error::DegenerateGradient("W(z) + 1 vanishes"));
                }
                Ok(match mode {
                    BackwardMode::Reinserted => Derivatives::EqualTauReinserted {
                        c: -1.0 / (sums.a1 * (w + 1.0)),
                        t: t_observed,
                        tau_s,
                    },
                    BackwardMode::Naive => Derivatives::EqualTauNaive {
                        a1: sums.a1,
                        m: sums.b / sums.a1,
                        q: w / (w + 1.0),
                        tau_s,
                    },
                })
            }
            Regime::DoubleTau => {
                if sums.a1 <= 0.0 {
                    return Err(Error::DegenerateGradient("a1 <= 0"));
                }
                let disc = sums.a2 * sums.a2 - 4.0 * sums.a1 * g_theta;
                let x = disc.max(0.0).sqrt();
                if x < EPS_X {
                    return Err(Error::DegenerateGradient("vanishing discriminant"));
                }
                let p = match mode {
                    BackwardMode::Naive => 1.0 / sums.a1 + 2.0 * g_theta / ((sums.a2 + x) * x),
                    BackwardMode::Reinserted => {
                        (1.0 + g_theta / x * (t_observed / (2.0 * tau_s)).exp()) / sums.a1
                    }
                };
                Ok(Derivatives::DoubleTau { p, x, tau_s })
            }
            Regime::Nlif => {
                let denom = sums.a_inf - params.threshold * params.c_m / tau_s;
                if denom <= 0.0 || sums.a1 <= 0.0 {
                    return Err(Error::DegenerateGradient("non-positive denominator"));
                }
                Ok(Derivatives::Nlif {
                    a1: sums.a1,
                    denom,
                    tau_s,
                })
            }
        }
    }

    /// `(dT/dw_i, dT/dt_i)` for a causal input with weight `w`, time `t`,
    /// `e1 = exp(t / tau_s)` and `e2 = exp(t / 2 tau_s)`.
    #[inline]
    pub fn at(&self, w: f64, t: f64, e1: f64, e2: f64) -> (f64, f64) {
        match *self {
            Derivatives::EqualTauReinserted { c, t: t_out, tau_s } => {
                let k = c * e1;
                (k * (t_out - t), k * w * (t_out - t - tau_s) / tau_s)
            }
            Derivatives::EqualTauNaive { a1, m, q, tau_s } => {
                let r = (t / tau_s - m) * (1.0 - q);
                let k = e1 / a1;
                (tau_s * k * (q + r), w * k * (1.0 + r))
            }
            Derivatives::DoubleTau { p, x, tau_s } => {
                let h = e2 / x;
                (2.0 * tau_s * (p * e1 - h), w * (2.0 * p * e1 - h))
            }
            Derivatives::Nlif { a1, denom, tau_s } => {
                (tau_s * (e1 / a1 - 1.0 / denom), w * e1 / a1)
            }
        }
    }
}

fn gradients(
    derivs: Derivatives,
    cs: &CausalSet,
    inputs: &InputSpikes,
    tau_s: f64,
) -> SpikeGradients {
    let n = inputs.len();
    let mut g = SpikeGradients {
        d_t: vec![0.0; n],
        d_w: vec![0.0; n],
    };
    for &i in &cs.indices {
        let s = inputs.times[i] / tau_s;
        let (dw, dt) = derivs.at(inputs.weights[i], inputs.times[i], s.exp(), (0.5 * s).exp());
        g.d_w[i] = dw;
        g.d_t[i] = dt;
    }
    g
}

/// Equal-tau derivatives with the observed spike time reinserted.
pub fn grads_equal_tau_reinserted(
    cs: &CausalSet,
    inputs: &InputSpikes,
    t_observed: f64,
    params: &NeuronParams,
) -> Result<SpikeGradients> {
    let d = Derivatives::new(
        Regime::EqualTau,
        BackwardMode::Reinserted,
        &cs.sums,
        params,
        t_observed,
    )?;
    Ok(gradients(d, cs, inputs, params.tau_s))
}

/// Equal-tau derivatives from weights and input times only.
pub fn grads_equal_tau_naive(
    cs: &CausalSet,
    inputs: &InputSpikes,
    params: &NeuronParams,
) -> Result<SpikeGradients> {
    let d = Derivatives::new(Regime::EqualTau, BackwardMode::Naive, &cs.sums, params, f64::NAN)?;
    Ok(gradients(d, cs, inputs, params.tau_s))
}

/// Double-tau derivatives in either form. `t_observed` is ignored in naive mode.
pub fn grads_double_tau(
    cs: &CausalSet,
    inputs: &InputSpikes,
    t_observed: f64,
    params: &NeuronParams,
    mode: BackwardMode,
) -> Result<SpikeGradients> {
    let d = Derivatives::new(Regime::DoubleTau, mode, &cs.sums, params, t_observed)?;
    Ok(gradients(d, cs, inputs, params.tau_s))
}

/// Non-leaky derivatives.
pub fn grads_nlif(
    cs: &CausalSet,
    inputs: &InputSpikes,
    params: &NeuronParams,
) -> Result<SpikeGradients> {
    let d = Derivatives::new(Regime::Nlif, BackwardMode::Naive, &cs.sums, params, f64::NAN)?;
    Ok(gradients(d, cs, inputs, params.tau_s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spiketime::find_causal_set;

    fn fd_check(regime: Regime, params: NeuronParams, inputs: &InputSpikes, mode: BackwardMode) {
        let r = find_causal_set(inputs, &params, regime);
        assert!(r.spiked());
        let g = match regime {
            Regime::EqualTau => match mode {
                BackwardMode::Reinserted => {
                    grads_equal_tau_reinserted(&r.causal_set, inputs, r.time, &params)
                }
                BackwardMode::Naive => grads_equal_tau_naive(&r.causal_set, inputs, &params),
            },
            Regime::DoubleTau => grads_double_tau(&r.causal_set, inputs, r.time, &params, mode),
            Regime::Nlif => grads_nlif(&r.causal_set, inputs, &params),
        }
        .unwrap();
        let h = 1e-6;
        for i in 0..inputs.len() {
            let mut up = inputs.clone();
            let mut down = inputs.clone();
            up.weights[i] += h;
            down.weights[i] -= h;
            let fd_w = (find_causal_set(&up, &params, regime).time
                - find_causal_set(&down, &params, regime).time)
                / (2.0 * h);
            let mut up = inputs.clone();
            let mut down = inputs.clone();
            up.times[i] += h;
            down.times[i] -= h;
            let fd_t = (find_causal_set(&up, &params, regime).time
                - find_causal_set(&down, &params, regime).time)
                / (2.0 * h);
            for (a, f) in [(g.d_w[i], fd_w), (g.d_t[i], fd_t)] {
                assert!(
                    (a - f).abs() <= 1e-5 * f.abs().max(1e-3),
                    "{regime} {mode} input {i}: analytic {a} vs fd {f}"
                );
            }
        }
    }

    fn two_inputs() -> InputSpikes {
        InputSpikes::new(vec![0.2, 0.5, 3.0], vec![3.5, 2.5, 1.0]).unwrap()
    }

    #[test]
    fn equal_tau_matches_finite_differences() {
        for tau in [1.0, 2.5] {
            let p = NeuronParams::new(1.0, 1.0, tau, tau);
            let inputs = two_inputs();
            let inputs = InputSpikes {
                times: inputs.times.iter().map(|t| t * tau).collect(),
                ..inputs
            };
            fd_check(Regime::EqualTau, p, &inputs, BackwardMode::Reinserted);
            fd_check(Regime::EqualTau, p, &inputs, BackwardMode::Naive);
        }
    }

    #[test]
    fn double_tau_matches_finite_differences() {
        for tau in [1.0, 0.7] {
            let p = NeuronParams::new(1.0, 1.0, tau, 2.0 * tau);
            let inputs = InputSpikes::new(vec![0.2 * tau, 0.5 * tau], vec![3.5, 2.5]).unwrap();
            fd_check(Regime::DoubleTau, p, &inputs, BackwardMode::Reinserted);
            fd_check(Regime::DoubleTau, p, &inputs, BackwardMode::Naive);
        }
    }

    #[test]
    fn nlif_matches_finite_differences() {
        let p = NeuronParams::nlif(1.0, 1.0, 1.0);
        let inputs = InputSpikes::new(vec![0.1, 0.4], vec![1.2, 0.9]).unwrap();
        fd_check(Regime::Nlif, p, &inputs, BackwardMode::Naive);
    }

    #[test]
    fn spike_one_tau_after_input_has_zero_time_derivative() {
        let inputs = InputSpikes::new(vec![0.0], vec![4.0]).unwrap();
        let p = NeuronParams::default();
        let r = find_causal_set(&inputs, &p, Regime::EqualTau);
        let g = grads_equal_tau_reinserted(&r.causal_set, &inputs, 1.0, &p).unwrap();
        assert_eq!(g.d_t[0], 0.0);
    }

    #[test]
    fn non_causal_inputs_get_zero() {
        let inputs = two_inputs();
        for regime in [Regime::EqualTau, Regime::DoubleTau, Regime::Nlif] {
            let p = NeuronParams::for_regime(regime);
            let r = find_causal_set(&inputs, &p, regime);
            assert!(!r.causal_set.contains(2));
            let g = match regime {
                Regime::EqualTau => grads_equal_tau_naive(&r.causal_set, &inputs, &p),
                Regime::DoubleTau => {
                    grads_double_tau(&r.causal_set, &inputs, r.time, &p, BackwardMode::Naive)
                }
                Regime::Nlif => grads_nlif(&r.causal_set, &inputs, &p),
            }
            .unwrap();
            assert_eq!((g.d_t[2], g.d_w[2]), (0.0, 0.0));
        }
    }

    #[test]
    fn naive_and_reinserted_agree_at_closed_form_time() {
        let inputs = two_inputs();
        let p = NeuronParams::default();
        let r = find_causal_set(&inputs, &p, Regime::EqualTau);
        let a = grads_equal_tau_naive(&r.causal_set, &inputs, &p).unwrap();
        let b = grads_equal_tau_reinserted(&r.causal_set, &inputs, r.time, &p).unwrap();
        for i in 0..inputs.len() {
            assert!((a.d_w[i] - b.d_w[i]).abs() <= 1e-10);
            assert!((a.d_t[i] - b.d_t[i]).abs() <= 1e-10);
        }
        let p = NeuronParams::for_regime(Regime::DoubleTau);
        let inputs = InputSpikes::new(vec![0.2, 0.5], vec![3.5, 2.5]).unwrap();
        let r = find_causal_set(&inputs, &p, Regime::DoubleTau);
        let a = grads_double_tau(&r.causal_set, &inputs, r.time, &p, BackwardMode::Naive).unwrap();
        let b =
            grads_double_tau(&r.causal_set, &inputs, r.time, &p, BackwardMode::Reinserted).unwrap();
        for i in 0..inputs.len() {
            assert!((a.d_w[i] - b.d_w[i]).abs() <= 1e-10);
            assert!((a.d_t[i] - b.d_t[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn tangent_crossings_are_degenerate() {
        let p = NeuronParams::default();
        let inputs = InputSpikes::new(vec![0.0], vec![std::f64::consts::E]).unwrap();
        let r = find_causal_set(&inputs, &p, Regime::EqualTau);
        assert!(matches!(
            grads_equal_tau_naive(&r.causal_set, &inputs, &p),
            Err(Error::DegenerateGradient(_))
        ));
        let p = NeuronParams::for_regime(Regime::DoubleTau);
        let inputs = InputSpikes::new(vec![0.0], vec![4.0]).unwrap();
        let r = find_causal_set(&inputs, &p, Regime::DoubleTau);
        assert!(matches!(
            grads_double_tau(&r.causal_set, &inputs, r.time, &p, BackwardMode::Naive),
            Err(Error::DegenerateGradient(_))
        ));
    }

    #[test]
    fn identical_inputs_have_identical_gradients() {
        let p = NeuronParams::nlif(1.0, 1.0, 1.0);
        let inputs = InputSpikes::new(vec![0.3, 0.3], vec![1.0, 1.0]).unwrap();
        let r = find_causal_set(&inputs, &p, Regime::Nlif);
        let g = grads_nlif(&r.causal_set, &inputs, &p).unwrap();
        assert_eq!(g.d_w[0], g.d_w[1]);
        assert_eq!(g.d_t[0], g.d_t[1]);
    }
}
