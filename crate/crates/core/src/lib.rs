//! Time-to-first-spike networks of leaky integrate-and-fire neurons trained
//! with exact, closed-form spike times and gradients.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod distortion;
pub mod error;
pub mod experiment;
pub mod gradients;
pub mod lambert;
pub mod network;
pub mod oracle;
pub mod params;
pub mod spiketime;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use gradients::{BackwardMode, SpikeGradients};
pub use params::{NeuronParams, Regime};
pub use spiketime::{find_causal_set, CausalSet, InputSpikes, SpikeTimeResult, NO_SPIKE};
