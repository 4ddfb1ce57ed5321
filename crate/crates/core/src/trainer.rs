//! Mini-batch training with Adam, step learning-rate decay, update clipping,
//! weight bumping of silent neurons and input-time noise.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::distortion::DistortionConfig;
use crate::error::{Error, Result};
use crate::network::{
    backward_into, forward_sample_with, loss, predict, Dynamics, ForwardTrace, LayerWeights,
    LossConfig, NeuronOverrides, Topology,
};
use crate::spiketime::is_spike;

/// Samples per parallel work unit. Fixed so that the floating-point reduction
/// order, and therefore every result, is independent of the thread count.
pub const CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs between learning-rate decays.
    pub lr_step_size: usize,
    pub lr_gamma: f64,
    /// Standard deviation of Gaussian noise on input spike times, in `tau_s`.
    pub input_noise: f64,
    /// Batch-gradient components larger than this in magnitude are dropped.
    pub max_abs_dw: f64,
    pub weight_bump: f64,
    /// Per weight layer: tolerated fraction of silent (sample, neuron) pairs.
    pub max_missing_ratio: Vec<f64>,
    pub init_mean: Vec<f64>,
    pub init_std: Vec<f64>,
    pub seed: u64,
    pub loss: LossConfig,
    pub distortion: DistortionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 150,
            learning_rate: 0.005,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            lr_step_size: 20,
            lr_gamma: 0.95,
            input_noise: 0.0,
            max_abs_dw: 0.2,
            weight_bump: 0.0005,
            max_missing_ratio: vec![0.3, 0.0],
            init_mean: vec![1.5, 0.5],
            init_std: vec![0.8, 0.8],
            seed: 0,
            loss: LossConfig::default(),
            distortion: DistortionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, topo: &Topology) -> Result<()> {
        let n = topo.n_weight_layers();
        for (name, v) in [
            ("max_missing_ratio", &self.max_missing_ratio),
            ("init_mean", &self.init_mean),
            ("init_std", &self.init_std),
        ] {
            if v.len() != n {
                return Err(Error::invalid(
                    name,
                    format!("has {} entries for {n} weight layers", v.len()),
                ));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.lr_step_size == 0 {
            return Err(Error::invalid("lr_step_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::invalid("lr_gamma", "must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("adam_beta", "must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam_eps", "must be positive"));
        }
        if !(self.input_noise >= 0.0) {
            return Err(Error::invalid("input_noise", "must be >= 0"));
        }
        if !(self.max_abs_dw > 0.0) {
            return Err(Error::invalid("max_abs_dw", "must be positive"));
        }
        if !(self.weight_bump >= 0.0) {
            return Err(Error::invalid("weight_bump", "must be >= 0"));
        }
        if self.init_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::invalid("init_std", "must be >= 0"));
        }
        self.loss.validate()?;
        self.distortion.validate()
    }

    /// Learning rate during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_gamma.powi((epoch / self.lr_step_size) as i32)
    }
}

/// Adam moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(weights: &[LayerWeights]) -> Self {
        let zeros: Vec<Vec<f64>> = weights.iter().map(|w| vec![0.0; w.values.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    /// One Adam step on the master weights.
    pub fn update(
        &mut self,
        weights: &mut [LayerWeights],
        grads: &[Vec<f64>],
        lr: f64,
        cfg: &TrainConfig,
    ) {
        self.step += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for (l, w) in weights.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            for ((wi, &g), (mi, vi)) in w
                .master_mut()
                .iter_mut()
                .zip(&grads[l])
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                *mi = b1 * *mi + (1.0 - b1) * g;
                *vi = b2 * *vi + (1.0 - b2) * g * g;
                *wi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + cfg.adam_eps);
            }
        }
    }
}

/// Draw every weight of layer `l` from `N(init_mean[l], init_std[l])`.
pub fn init_weights(
    topo: &Topology,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LayerWeights>> {
    cfg.validate(topo)?;
    (0..topo.n_weight_layers())
        .map(|l| {
            let (rows, cols) = topo.weight_shape(l);
            let normal = Normal::new(cfg.init_mean[l], cfg.init_std[l])
                .map_err(|e| Error::invalid("init_std", e.to_string()))?;
            let values = (0..rows * cols).map(|_| normal.sample(rng)).collect();
            LayerWeights::from_vec(rows, cols, values)
        })
        .collect()
}

/// Exponentially growing weight bump for repeatedly silent layers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BumpState {
    /// Layer bumped by the previous batch, if any.
    pub layer: Option<usize>,
    pub multiplier: f64,
}

impl BumpState {
    /// Record whether `layer` needs a bump this batch; returns the multiplier.
    pub fn trigger(&mut self, layer: Option<usize>) -> f64 {
        match layer {
            Some(l) if self.layer == Some(l) => self.multiplier *= 2.0,
            Some(_) => self.multiplier = 1.0,
            None => self.multiplier = 0.0,
        }
        self.layer = layer;
        self.multiplier
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    /// Mean fraction of silent neurons per weight layer.
    pub silent_fraction: Vec<f64>,
    pub clipped_updates: usize,
    pub bumps: usize,
    pub degenerate_gradients: usize,
    /// Samples whose label neurons were all silent.
    pub all_silent_samples: usize,
}

/// Accuracy, loss and confusion counts over a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Mean loss over samples with at least one label spike.
    pub mean_loss: f64,
    /// `confusion[true][predicted]`; all-silent samples are not included.
    pub confusion: Vec<Vec<usize>>,
    /// Samples without any label spike, counted as errors.
    pub all_silent: usize,
    pub n: usize,
}

/// Sum of per-sample results over a chunk.
struct ChunkStats {
    grads: Vec<LayerWeights>,
    loss: f64,
    loss_count: usize,
    correct: usize,
    all_silent: usize,
    degenerate: usize,
    /// Per layer and neuron: number of samples in which it stayed silent.
    silent: Vec<Vec<u32>>,
}

impl ChunkStats {
    fn new(topo: &Topology) -> Self {
        Self {
            grads: topo.zero_weights(),
            loss: 0.0,
            loss_count: 0,
            correct: 0,
            all_silent: 0,
            degenerate: 0,
            silent: topo.layer_sizes[1..].iter().map(|&n| vec![0; n]).collect(),
        }
    }

    fn merge(&mut self, other: ChunkStats) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.values.iter_mut().zip(&b.values) {
                *x += y;
            }
        }
        self.loss += other.loss;
        self.loss_count += other.loss_count;
        self.correct += other.correct;
        self.all_silent += other.all_silent;
        self.degenerate += other.degenerate;
        for (a, b) in self.silent.iter_mut().zip(&other.silent) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

/// Forward pass with the configured dynamics.
pub fn run_forward(
    input: &[f64],
    weights: &[LayerWeights],
    topo: &Topology,
    overrides: Option<&NeuronOverrides>,
    cfg: &DistortionConfig,
) -> ForwardTrace {
    let dynamics = match overrides {
        Some(o) => Dynamics::Substrate {
            overrides: o,
            mode: cfg.backward_mode,
        },
        None => Dynamics::Exact,
    };
    forward_sample_with(input, weights, topo, dynamics)
}

/// Owns weights, optimizer and random state for one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub topology: Topology,
    pub config: TrainConfig,
    pub weights: Vec<LayerWeights>,
    pub optimizer: OptimizerState,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
    pub bump: BumpState,
    /// Fixed-pattern substrate parameters for the whole run.
    pub overrides: Option<NeuronOverrides>,
}

impl Trainer {
    /// Fresh run: weights and substrate parameters drawn from `config.seed`.
    pub fn new(topology: Topology, config: TrainConfig) -> Result<Self> {
        topology.validate()?;
        config.validate(&topology)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut weights = init_weights(&topology, &config, &mut rng)?;
        let overrides = config.distortion.sample_overrides(&topology, &mut rng);
        config.distortion.apply(&mut weights);
        let optimizer = OptimizerState::new(&weights);
        Ok(Self {
            topology,
            config,
            weights,
            optimizer,
            rng,
            epoch: 0,
            bump: BumpState::default(),
            overrides,
        })
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.lr_at(self.epoch)
    }

    fn noisy(&mut self, input: &[f64]) -> Vec<f64> {
        let sigma = self.config.input_noise;
        if sigma == 0.0 {
            return input.to_vec();
        }
        let normal = Normal::new(0.0, sigma).expect("validated noise level");
        input
            .iter()
            .map(|&t| {
                if is_spike(t) {
                    (t + normal.sample(&mut self.rng)).max(0.0)
                } else {
                    t
                }
            })
            .collect()
    }

    /// Gradient and statistics of one batch, computed in parallel chunks and
    /// reduced in a fixed order.
    fn batch_stats(&self, inputs: &[Vec<f64>], labels: &[usize]) -> ChunkStats {
        let topo = &self.topology;
        let cfg = &self.config;
        let chunks: Vec<ChunkStats> = inputs
            .par_chunks(CHUNK)
            .zip(labels.par_chunks(CHUNK))
            .map(|(xs, ys)| {
                let mut acc = ChunkStats::new(topo);
                for (x, &y) in xs.iter().zip(ys) {
                    let trace = run_forward(
                        x,
                        &self.weights,
                        topo,
                        self.overrides.as_ref(),
                        &cfg.distortion,
                    );
                    for (l, layer) in trace.layers.iter().enumerate() {
                        for (k, n) in layer.neurons.iter().enumerate() {
                            if !is_spike(n.time) {
                                acc.silent[l][k] += 1;
                            }
                        }
                    }
                    let t_label = trace.label_times();
                    if !t_label.iter().any(|&t| is_spike(t)) {
                        acc.all_silent += 1;
                        continue;
                    }
                    if predict(&t_label) == y {
                        acc.correct += 1;
                    }
                    match backward_into(
                        &trace,
                        &self.weights,
                        topo,
                        y,
                        &cfg.loss,
                        cfg.distortion.backward_mode,
                        &mut acc.grads,
                    ) {
                        Ok((l, d)) => {
                            acc.loss += l;
                            acc.loss_count += 1;
                            acc.degenerate += d;
                        }
                        Err(_) => acc.all_silent += 1,
                    }
                }
                acc
            })
            .collect();
        let mut total = ChunkStats::new(topo);
        for c in chunks {
            total.merge(c);
        }
        total
    }

    /// One pass over `data` in shuffled mini-batches.
    pub fn train_epoch(&mut self, data: &Dataset) -> Result<EpochMetrics> {
        if data.is_empty() {
            return Err(Error::invalid("data", "training set is empty"));
        }
        if data.n_features() != self.topology.layer_sizes[0] {
            return Err(Error::Shape(format!(
                "{} input features for an input layer of {}",
                data.n_features(),
                self.topology.layer_sizes[0]
            )));
        }
        let lr = self.learning_rate();
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);

        let n_layers = self.topology.n_weight_layers();
        let mut loss_sum = 0.0;
        let mut loss_count = 0;
        let mut correct = 0;
        let mut clipped = 0;
        let mut bumps = 0;
        let mut degenerate = 0;
        let mut all_silent = 0;
        let mut silent_pairs = vec![0u64; n_layers];

        for batch in order.chunks(self.config.batch_size) {
            let inputs: Vec<Vec<f64>> = batch
                .iter()
                .map(|&i| self.noisy(&data.inputs[i]))
                .collect();
            let labels: Vec<usize> = batch.iter().map(|&i| data.labels[i]).collect();
            let stats = self.batch_stats(&inputs, &labels);

            loss_sum += stats.loss;
            loss_count += stats.loss_count;
            correct += stats.correct;
            degenerate += stats.degenerate;
            all_silent += stats.all_silent;

            let scale = 1.0 / batch.len() as f64;
            let max = self.config.max_abs_dw;
            let grads: Vec<Vec<f64>> = stats
                .grads
                .iter()
                .map(|g| {
                    g.values
                        .iter()
                        .map(|&x| {
                            let x = x * scale;
                            if x.abs() > max || !x.is_finite() {
                                clipped += 1;
                                0.0
                            } else {
                                x
                            }
                        })
                        .collect()
                })
                .collect();
            self.optimizer.update(&mut self.weights, &grads, lr, &self.config);

            // Bump the input weights of silent neurons in the first layer
            // that misses too many spikes.
            let mut bump_layer = None;
            for l in 0..n_layers {
                let s: u64 = stats.silent[l].iter().map(|&c| u64::from(c)).sum();
                silent_pairs[l] += s;
                let ratio = s as f64 / (batch.len() * stats.silent[l].len()) as f64;
                if bump_layer.is_none() && ratio > self.config.max_missing_ratio[l] {
                    bump_layer = Some(l);
                }
            }
            let mult = self.bump.trigger(bump_layer);
            if let Some(l) = bump_layer {
                bumps += 1;
                let delta = self.config.weight_bump * mult;
                let w = &mut self.weights[l];
                let cols = w.cols;
                let master = w.master_mut();
                for (k, &c) in stats.silent[l].iter().enumerate() {
                    if c > 0 {
                        for x in &mut master[k * cols..(k + 1) * cols] {
                            *x += delta;
                        }
                    }
                }
            }
            self.config.distortion.apply(&mut self.weights);
        }

        self.epoch += 1;
        let n = data.len();
        Ok(EpochMetrics {
            epoch: self.epoch,
            learning_rate: lr,
            train_loss: if loss_count > 0 {
                loss_sum / loss_count as f64
            } else {
                f64::NAN
            },
            train_accuracy: correct as f64 / n as f64,
            silent_fraction: silent_pairs
                .iter()
                .zip(&self.topology.layer_sizes[1..])
                .map(|(&s, &size)| s as f64 / (n * size) as f64)
                .collect(),
            clipped_updates: clipped,
            bumps,
            degenerate_gradients: degenerate,
            all_silent_samples: all_silent,
        })
    }

    /// Evaluate the current effective weights on `data` without input noise.
    pub fn evaluate(&self, data: &Dataset) -> Evaluation {
        evaluate(
            &self.topology,
            &self.weights,
            data,
            &self.config.loss,
            self.overrides.as_ref(),
            &self.config.distortion,
        )
    }
}

/// Accuracy, mean loss and confusion matrix. Samples without any label spike
/// count as errors.
pub fn evaluate(
    topo: &Topology,
    weights: &[LayerWeights],
    data: &Dataset,
    loss_cfg: &LossConfig,
    overrides: Option<&NeuronOverrides>,
    distortion: &DistortionConfig,
) -> Evaluation {
    let k = topo.n_classes();
    let tau = topo.params.last().map_or(1.0, |p| p.tau_s);
    let per_sample: Vec<Option<(usize, f64)>> = data
        .inputs
        .par_iter()
        .map(|x| {
            let t = run_forward(x, weights, topo, overrides, distortion).label_times();
            t.iter().any(|&x| is_spike(x)).then(|| (predict(&t), t))
        })
        .zip(data.labels.par_iter())
        .map(|(r, &y)| r.map(|(p, t)| (p, loss(&t, y, loss_cfg, tau).unwrap_or(f64::NAN))))
        .collect();
    let mut confusion = vec![vec![0; k]; k];
    let mut correct = 0;
    let mut all_silent = 0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0;
    for (r, &y) in per_sample.iter().zip(&data.labels) {
        match r {
            Some((p, l)) => {
                confusion[y][*p] += 1;
                if *p == y {
                    correct += 1;
                }
                loss_sum += l;
                loss_n += 1;
            }
            None => all_silent += 1,
        }
    }
    let n = data.len();
    Evaluation {
        accuracy: if n > 0 { correct as f64 / n as f64 } else { 0.0 },
        mean_loss: if loss_n > 0 {
            loss_sum / loss_n as f64
        } else {
            f64::NAN
        },
        confusion,
        all_silent,
        n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{NeuronParams, Regime};

    fn topo() -> Topology {
        Topology::uniform(
            vec![2, 4, 2],
            NeuronParams::default(),
            Regime::EqualTau,
            vec![0.9],
        )
        .unwrap()
    }

    #[test]
    fn zero_std_gives_means() {
        let cfg = TrainConfig {
            init_mean: vec![0.3, -0.2],
            init_std: vec![0.0, 0.0],
            ..Default::default()
        };
        let w = init_weights(&topo(), &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(w[0].values.iter().all(|&x| x == 0.3));
        assert!(w[1].values.iter().all(|&x| x == -0.2));
    }

    #[test]
    fn step_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(0), 0.005);
        assert_eq!(cfg.lr_at(19), 0.005);
        assert!((cfg.lr_at(20) - 0.005 * 0.95).abs() < 1e-18);
        assert!((0..300).all(|e| cfg.lr_at(e + 1) <= cfg.lr_at(e)));
    }

    #[test]
    fn bump_doubles_on_consecutive_triggers() {
        let mut b = BumpState::default();
        assert_eq!(b.trigger(Some(0)), 1.0);
        assert_eq!(b.trigger(Some(0)), 2.0);
        assert_eq!(b.trigger(Some(0)), 4.0);
        assert_eq!(b.trigger(Some(1)), 1.0);
        assert_eq!(b.trigger(None), 0.0);
        assert_eq!(b.trigger(Some(1)), 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut w = vec![LayerWeights::from_vec(1, 2, vec![1.0, 1.0]).unwrap()];
        let mut opt = OptimizerState::new(&w);
        let cfg = TrainConfig::default();
        opt.update(&mut w, &[vec![0.1, -0.05]], 0.01, &cfg);
        let step = |g: f64| 0.01 * g / (g.abs() + cfg.adam_eps);
        assert!((w[0].values[0] - (1.0 - step(0.1))).abs() < 1e-15);
        assert!((w[0].values[1] - (1.0 - step(-0.05))).abs() < 1e-15);
    }

    #[test]
    fn config_shape_checked() {
        let cfg = TrainConfig {
            init_mean: vec![1.0],
            ..Default::default()
        };
        assert!(cfg.validate(&topo()).is_err());
    }
}
