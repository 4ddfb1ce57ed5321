//! Layered feedforward networks: forward pass, loss and backpropagation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{BackwardMode, Derivatives};
use crate::params::{NeuronParams, Regime};
use crate::spiketime::{is_spike, solve_sorted, CausalSums, SortedInputs};
#[cfg(test)]
use crate::spiketime::NO_SPIKE;

/// Dense `post x pre` weight matrix, row-major.
///
/// When a distortion (clipping or quantization) is active, `values` holds the
/// distorted matrix used by forward and backward passes while `shadow` keeps
/// the full-precision weights the optimizer updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shadow: Option<Vec<f64>>,
}

impl LayerWeights {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_vec(rows, cols, vec![0.0; rows * cols]).unwrap()
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Self {
            rows,
            cols,
            values,
            shadow: None,
        })
    }

    #[inline]
    pub fn get(&self, post: usize, pre: usize) -> f64 {
        self.values[post * self.cols + pre]
    }

    #[inline]
    pub fn set(&mut self, post: usize, pre: usize, w: f64) {
        self.values[post * self.cols + pre] = w;
    }

    #[inline]
    pub fn row(&self, post: usize) -> &[f64] {
        &self.values[post * self.cols..(post + 1) * self.cols]
    }

    /// Full-precision weights: the shadow copy if present, else the values.
    pub fn master(&self) -> &[f64] {
        self.shadow.as_deref().unwrap_or(&self.values)
    }

    pub fn master_mut(&mut self) -> &mut [f64] {
        match self.shadow {
            Some(ref mut s) => s,
            None => &mut self.values,
        }
    }

    /// Recompute the effective values from the master copy through `f`,
    /// keeping the master as shadow.
    pub fn distort_with(&mut self, f: impl Fn(f64) -> f64) {
        let shadow = self.shadow.take().unwrap_or_else(|| self.values.clone());
        self.values = shadow.iter().map(|&w| f(w)).collect();
        self.shadow = Some(shadow);
    }

    /// Drop any distortion and restore the full-precision weights.
    pub fn restore(&mut self) {
        if let Some(s) = self.shadow.take() {
            self.values = s;
        }
    }
}

/// Shape, bias spikes and neuron parameters of a feedforward network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// Neuron counts `[input, hidden..., label]`, excluding bias inputs.
    pub layer_sizes: Vec<usize>,
    /// Bias spike times fed into each weight layer, in `tau_s` units.
    pub bias_times: Vec<Vec<f64>>,
    /// Neuron parameters of each non-input layer.
    pub params: Vec<NeuronParams>,
    pub regime: Regime,
}

impl Topology {
    /// Same parameters and bias times for every layer.
    pub fn uniform(
        layer_sizes: Vec<usize>,
        params: NeuronParams,
        regime: Regime,
        bias_times: Vec<f64>,
    ) -> Result<Self> {
        let n = layer_sizes.len().saturating_sub(1);
        let topo = Self {
            layer_sizes,
            bias_times: vec![bias_times; n],
            params: vec![params; n],
            regime,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::invalid("layer_sizes", "need at least input and label layers"));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::invalid("layer_sizes", "layers must not be empty"));
        }
        let n = self.n_weight_layers();
        if self.bias_times.len() != n || self.params.len() != n {
            return Err(Error::Shape(format!(
                "{n} weight layers but {} bias lists and {} parameter sets",
                self.bias_times.len(),
                self.params.len()
            )));
        }
        for p in &self.params {
            p.validate(self.regime)?;
        }
        if self.bias_times.iter().flatten().any(|t| !(*t >= 0.0)) {
            return Err(Error::invalid("bias_times", "bias spike times must be >= 0"));
        }
        Ok(())
    }

    pub fn n_weight_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Presynaptic count of weight layer `l`, including bias inputs.
    pub fn fan_in(&self, l: usize) -> usize {
        self.layer_sizes[l] + self.bias_times[l].len()
    }

    /// `(post, pre)` shape of weight layer `l`.
    pub fn weight_shape(&self, l: usize) -> (usize, usize) {
        (self.layer_sizes[l + 1], self.fan_in(l))
    }

    pub fn zero_weights(&self) -> Vec<LayerWeights> {
        (0..self.n_weight_layers())
            .map(|l| {
                let (r, c) = self.weight_shape(l);
                LayerWeights::zeros(r, c)
            })
            .collect()
    }

    pub fn check_weights(&self, weights: &[LayerWeights]) -> Result<()> {
        if weights.len() != self.n_weight_layers() {
            return Err(Error::Shape(format!(
                "{} weight layers for a topology with {}",
                weights.len(),
                self.n_weight_layers()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            if (w.rows, w.cols) != self.weight_shape(l) {
                return Err(Error::Shape(format!(
                    "layer {l} weights are {}x{}, expected {:?}",
                    w.rows,
                    w.cols,
                    self.weight_shape(l)
                )));
            }
        }
        Ok(())
    }
}

/// Per-neuron true parameters that differ from the topology's assumed ones.
///
/// Indexed `[weight layer][neuron]`. When present, the forward pass finds
/// crossings of the true dynamics numerically while the backward pass keeps
/// using the closed-form derivatives of the assumed regime.
pub type NeuronOverrides = Vec<Vec<NeuronParams>>;

/// What the backward pass needs to know about one neuron.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronState {
    /// Output spike time, or [`NO_SPIKE`].
    pub time: f64,
    /// Prefix of the layer's sorted inputs that forms the causal set.
    pub causal_len: usize,
    /// Causal sums under the assumed parameters.
    pub sums: CausalSums,
    pub lambert_arg: Option<f64>,
    pub discriminant: Option<f64>,
    pub tangent: bool,
}

/// Forward pass of one weight layer.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// Presynaptic spike times, bias inputs appended.
    pub inputs: Vec<f64>,
    pub sorted: SortedInputs,
    pub neurons: Vec<NeuronState>,
}

impl LayerTrace {
    pub fn times(&self) -> Vec<f64> {
        self.neurons.iter().map(|n| n.time).collect()
    }

    pub fn silent_count(&self) -> usize {
        self.neurons.iter().filter(|n| !is_spike(n.time)).count()
    }

    /// Indices of the causal set of `neuron` in arrival order.
    pub fn causal_set(&self, neuron: usize) -> &[usize] {
        &self.sorted.order[..self.neurons[neuron].causal_len]
    }
}

/// Forward pass of one sample.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// Spike times of the label layer.
    pub fn label_times(&self) -> Vec<f64> {
        self.layers.last().map(|l| l.times()).unwrap_or_default()
    }

    /// Spike times of layer `l` of the network (0 is the input layer).
    pub fn spike_vector(&self, l: usize) -> Vec<f64> {
        if l == 0 {
            let n = self.layers[0].inputs.len();
            self.layers[0].inputs[..n].to_vec()
        } else {
            self.layers[l - 1].times()
        }
    }
}

/// How the forward pass obtains spike times.
#[derive(Debug, Clone, Copy)]
pub enum Dynamics<'a> {
    /// Closed form under the topology's parameters.
    Exact,
    /// Numerical crossings of per-neuron true dynamics; gradients in `mode`.
    Substrate {
        overrides: &'a NeuronOverrides,
        mode: BackwardMode,
    },
}

fn layer_inputs(prev: &[f64], bias: &[f64]) -> Vec<f64> {
    prev.iter().chain(bias).copied().collect()
}

/// Forward pass of one sample through closed-form neurons.
pub fn forward_sample(input: &[f64], weights: &[LayerWeights], topo: &Topology) -> ForwardTrace {
    forward_sample_with(input, weights, topo, Dynamics::Exact)
}

pub fn forward_sample_with(
    input: &[f64],
    weights: &[LayerWeights],
    topo: &Topology,
    dynamics: Dynamics<'_>,
) -> ForwardTrace {
    debug_assert_eq!(input.len(), topo.layer_sizes[0]);
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(weights.len());
    let mut prev = input.to_vec();
    for (l, w) in weights.iter().enumerate() {
        let params = &topo.params[l];
        let inputs = layer_inputs(&prev, &topo.bias_times[l]);
        let sorted = SortedInputs::new(&inputs, params.tau_s);
        let neurons: Vec<NeuronState> = (0..w.rows)
            .map(|k| match dynamics {
                Dynamics::Exact => exact_state(&sorted, w.row(k), params, topo.regime),
                Dynamics::Substrate { overrides, mode } => crate::distortion::substrate_state(
                    &sorted,
                    w.row(k),
                    params,
                    &overrides[l][k],
                    topo.regime,
                    mode,
                ),
            })
            .collect();
        prev = neurons.iter().map(|n| n.time).collect();
        layers.push(LayerTrace {
            inputs,
            sorted,
            neurons,
        });
    }
    ForwardTrace { layers }
}

pub(crate) fn exact_state(
    sorted: &SortedInputs,
    row: &[f64],
    params: &NeuronParams,
    regime: Regime,
) -> NeuronState {
    let s = solve_sorted(sorted, row, params, regime);
    NeuronState {
        time: s.time,
        causal_len: s.causal_len,
        sums: s.sums,
        lambert_arg: s.lambert_arg,
        discriminant: s.discriminant,
        tangent: s.tangent,
    }
}

/// Forward pass of a batch of input spike vectors.
pub fn forward(batch: &[Vec<f64>], weights: &[LayerWeights], topo: &Topology) -> Vec<ForwardTrace> {
    batch
        .iter()
        .map(|x| forward_sample(x, weights, topo))
        .collect()
}

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Softmax temperature in units of `tau_s`.
    pub xi: f64,
    /// Weight of the early-spike regularizer.
    pub alpha: f64,
    /// Time scale of the regularizer in units of `tau_s`.
    pub beta: f64,
    /// Time substituted for silent label neurons, in units of `tau_s`.
    pub silent_time: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            xi: 0.2,
            alpha: 0.005,
            beta: 1.0,
            silent_time: 5.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) {
            return Err(Error::invalid("xi", "must be positive"));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::invalid("alpha", "must be non-negative"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta", "must be positive"));
        }
        if !self.silent_time.is_finite() {
            return Err(Error::invalid("silent_time", "must be finite"));
        }
        Ok(())
    }
}

fn label_softmax(t: &[f64], cfg: &LossConfig, tau_s: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !t.iter().any(|&x| is_spike(x)) {
        return Err(Error::AllSilent);
    }
    let scale = cfg.xi * tau_s;
    let t: Vec<f64> = t
        .iter()
        .map(|&x| if is_spike(x) { x } else { cfg.silent_time * tau_s })
        .collect();
    let t_min = t.iter().copied().fold(f64::INFINITY, f64::min);
    let e: Vec<f64> = t.iter().map(|x| (-(x - t_min) / scale).exp()).collect();
    let z: f64 = e.iter().sum();
    Ok((t, e.into_iter().map(|x| x / z).collect()))
}

/// Softmax cross-entropy on negative spike times plus the early-spike
/// regularizer. Silent label neurons enter at `cfg.silent_time`.
pub fn loss(t_label: &[f64], label: usize, cfg: &LossConfig, tau_s: f64) -> Result<f64> {
    let (t, p) = label_softmax(t_label, cfg, tau_s)?;
    Ok(-p[label].ln() + cfg.alpha * ((t[label] / (cfg.beta * tau_s)).exp() - 1.0))
}

/// `dL/dt_n`. Silent label neurons receive zero.
pub fn loss_grad(t_label: &[f64], label: usize, cfg: &LossConfig, tau_s: f64) -> Result<Vec<f64>> {
    let (t, p) = label_softmax(t_label, cfg, tau_s)?;
    let scale = cfg.xi * tau_s;
    Ok(p.iter()
        .enumerate()
        .map(|(n, &pn)| {
            if !is_spike(t_label[n]) {
                0.0
            } else if n == label {
                let bt = cfg.beta * tau_s;
                (1.0 - pn) / scale + cfg.alpha / bt * (t[n] / bt).exp()
            } else {
                -pn / scale
            }
        })
        .collect())
}

/// Index of the earliest label spike; silent neurons count as `+inf` and ties
/// go to the lowest index.
pub fn predict(t_label: &[f64]) -> usize {
    let mut best = 0;
    for (n, &t) in t_label.iter().enumerate() {
        if t < t_label[best] {
            best = n;
        }
    }
    best
}

/// Weight gradients of one sample plus bookkeeping.
#[derive(Debug, Clone)]
pub struct SampleGradient {
    pub loss: f64,
    pub grads: Vec<LayerWeights>,
    /// Neurons whose derivatives were degenerate and contributed nothing.
    pub degenerate: usize,
}

/// Accumulate `dL/dw` of one sample into `acc`. Returns the loss and the
/// number of degenerate neurons.
pub fn backward_into(
    trace: &ForwardTrace,
    weights: &[LayerWeights],
    topo: &Topology,
    label: usize,
    cfg: &LossConfig,
    mode: BackwardMode,
    acc: &mut [LayerWeights],
) -> Result<(f64, usize)> {
    let n_layers = trace.layers.len();
    let tau_label = topo.params[n_layers - 1].tau_s;
    let t_label = trace.label_times();
    let value = loss(&t_label, label, cfg, tau_label)?;
    let mut delta = loss_grad(&t_label, label, cfg, tau_label)?;
    let mut degenerate = 0;
    for l in (0..n_layers).rev() {
        let lt = &trace.layers[l];
        let params = &topo.params[l];
        let w = &weights[l];
        let g = &mut acc[l];
        let n_pre = topo.layer_sizes[l];
        let mut delta_prev = vec![0.0; if l > 0 { n_pre } else { 0 }];
        for (k, (neuron, &d)) in lt.neurons.iter().zip(&delta).enumerate() {
            if d == 0.0 || !is_spike(neuron.time) {
                continue;
            }
            let Ok(derivs) = Derivatives::new(topo.regime, mode, &neuron.sums, params, neuron.time)
            else {
                degenerate += 1;
                continue;
            };
            let row = w.row(k);
            let g_row = &mut g.values[k * w.cols..(k + 1) * w.cols];
            for j in 0..neuron.causal_len {
                let i = lt.sorted.order[j];
                let (e1, e2) = lt.sorted.exps(j);
                let (dw, dt) = derivs.at(row[i], lt.sorted.times[j], e1, e2);
                g_row[i] += dw * d;
                if i < delta_prev.len() {
                    delta_prev[i] += dt * d;
                }
            }
        }
        delta = delta_prev;
    }
    Ok((value, degenerate))
}

/// `dL/dw` for every weight layer of one sample.
pub fn backward(
    trace: &ForwardTrace,
    weights: &[LayerWeights],
    topo: &Topology,
    label: usize,
    cfg: &LossConfig,
    mode: BackwardMode,
) -> Result<SampleGradient> {
    let mut grads = topo.zero_weights();
    let (loss, degenerate) = backward_into(trace, weights, topo, label, cfg, mode, &mut grads)?;
    Ok(SampleGradient {
        loss,
        grads,
        degenerate,
    })
}
