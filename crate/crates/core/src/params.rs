//! Neuron parameters and the analytically solvable time-constant regimes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Time-constant ratio for which a closed-form first-spike time exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `tau_m == tau_s`, solved with the Lambert W function.
    EqualTau,
    /// `tau_m == 2 tau_s`, solved as a quadratic in `exp(-T / 2 tau_s)`.
    DoubleTau,
    /// Non-leaky limit `tau_m -> inf`.
    Nlif,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::EqualTau => "equal_tau",
            Regime::DoubleTau => "double_tau",
            Regime::Nlif => "nlif",
        })
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal_tau" => Ok(Regime::EqualTau),
            "double_tau" => Ok(Regime::DoubleTau),
            "nlif" => Ok(Regime::Nlif),
            other => Err(Error::invalid("regime", format!("unknown regime `{other}`"))),
        }
    }
}

/// LIF neuron with current-based exponential synapses.
///
/// The leak potential is fixed at zero. The capacitance is stored rather than
/// the leak conductance so that the non-leaky limit (`tau_m = inf`, `g_l = 0`)
/// stays representable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronParams {
    pub c_m: f64,
    pub threshold: f64,
    pub tau_s: f64,
    #[serde(with = "maybe_infinite")]
    pub tau_m: f64,
}

/// Infinite values as the string `"inf"`, which JSON can hold.
mod maybe_infinite {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if *v == f64::INFINITY {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("expected a number, got `{t}`"))),
        }
    }
}

impl Default for NeuronParams {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0, 1.0)
    }
}

impl NeuronParams {
    /// Build from leak conductance; `C_m = tau_m * g_l`.
    pub fn new(g_l: f64, threshold: f64, tau_s: f64, tau_m: f64) -> Self {
        Self {
            c_m: g_l * tau_m,
            threshold,
            tau_s,
            tau_m,
        }
    }

    /// Default parameters for a regime with `g_l = threshold = tau_s = 1`.
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::EqualTau => Self::new(1.0, 1.0, 1.0, 1.0),
            Regime::DoubleTau => Self::new(1.0, 1.0, 1.0, 2.0),
            Regime::Nlif => Self::nlif(1.0, 1.0, 1.0),
        }
    }

    pub fn nlif(c_m: f64, threshold: f64, tau_s: f64) -> Self {
        Self {
            c_m,
            threshold,
            tau_s,
            tau_m: f64::INFINITY,
        }
    }

    pub fn g_l(&self) -> f64 {
        if self.tau_m.is_infinite() {
            0.0
        } else {
            self.c_m / self.tau_m
        }
    }

    /// Same neuron with different time constants and unchanged leak conductance.
    pub fn with_taus(&self, tau_s: f64, tau_m: f64) -> Self {
        Self::new(self.g_l(), self.threshold, tau_s, tau_m)
    }

    pub fn validate(&self, regime: Regime) -> Result<()> {
        if !(self.c_m > 0.0 && self.c_m.is_finite()) {
            return Err(Error::invalid("c_m", format!("must be positive, got {}", self.c_m)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::invalid(
                "threshold",
                format!("must exceed the leak potential 0, got {}", self.threshold),
            ));
        }
        if !(self.tau_s > 0.0 && self.tau_s.is_finite()) {
            return Err(Error::invalid("tau_s", format!("must be positive, got {}", self.tau_s)));
        }
        if !(self.tau_m > 0.0) {
            return Err(Error::invalid("tau_m", format!("must be positive, got {}", self.tau_m)));
        }
        let consistent = match regime {
            Regime::EqualTau => rel_eq(self.tau_m, self.tau_s),
            Regime::DoubleTau => rel_eq(self.tau_m, 2.0 * self.tau_s),
            Regime::Nlif => self.tau_m.is_infinite(),
        };
        if !consistent {
            return Err(Error::invalid(
                "tau_m",
                format!(
                    "tau_m = {} is inconsistent with regime {regime} (tau_s = {})",
                    self.tau_m, self.tau_s
                ),
            ));
        }
        Ok(())
    }
}

fn rel_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}
