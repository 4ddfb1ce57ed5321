//! TOML experiment configuration and dataset loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{generate_yinyang, load_mnist, yinyang_raw, Dataset, Encoding, RawDataset};
use crate::error::{Error, Result};
use crate::network::Topology;
use crate::params::{NeuronParams, Regime};
use crate::trainer::TrainConfig;

/// Environment variable naming the directory that relative dataset paths
/// are resolved against.
pub const DATA_ROOT_ENV: &str = "TTFS_DATA_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Yinyang,
    Mnist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    /// Yin-Yang: samples generated per split.
    pub train_size: usize,
    /// Yin-Yang: generated validation samples. MNIST: samples held out from
    /// the end of the training file.
    pub val_size: usize,
    pub test_size: usize,
    pub train_seed: u64,
    pub val_seed: u64,
    pub test_seed: u64,
    pub r_small: f64,
    pub r_big: f64,
    /// MNIST directory holding the four IDX files. Relative paths are
    /// resolved against the data root.
    pub path: Option<PathBuf>,
    /// MNIST: bilinear 28x28 to 16x16 downsampling.
    pub downsample: bool,
    /// MNIST: keep only the first `n` training samples.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Yinyang,
            train_size: 5000,
            val_size: 1000,
            test_size: 1000,
            train_seed: 42,
            val_seed: 41,
            test_seed: 40,
            r_small: 0.1,
            r_big: 0.5,
            path: None,
            downsample: false,
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    /// Neurons per layer, input first.
    pub layers: Vec<usize>,
    /// Per weight layer: times of the bias spikes appended to its input.
    pub bias_times: Vec<Vec<f64>>,
    pub regime: Regime,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            layers: vec![4, 120, 3],
            bias_times: vec![vec![0.9], vec![0.9]],
            regime: Regime::EqualTau,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NeuronConfig {
    pub g_l: f64,
    /// Membrane capacitance for the non-leaky regime, which has no leak.
    pub c_m: f64,
    pub threshold: f64,
    pub tau_s: f64,
    /// Defaults to the value implied by the regime.
    pub tau_m: Option<f64>,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        Self {
            g_l: 1.0,
            c_m: 1.0,
            threshold: 1.0,
            tau_s: 1.0,
            tau_m: None,
        }
    }
}

impl NeuronConfig {
    pub fn params(&self, regime: Regime) -> Result<NeuronParams> {
        let p = match regime {
            Regime::Nlif => NeuronParams {
                tau_m: self.tau_m.unwrap_or(f64::INFINITY),
                ..NeuronParams::nlif(self.c_m, self.threshold, self.tau_s)
            },
            Regime::EqualTau | Regime::DoubleTau => {
                let ratio = if regime == Regime::EqualTau { 1.0 } else { 2.0 };
                let tau_m = self.tau_m.unwrap_or(ratio * self.tau_s);
                NeuronParams::new(self.g_l, self.threshold, self.tau_s, tau_m)
            }
        };
        p.validate(regime)?;
        Ok(p)
    }
}

/// Everything needed to reproduce one training run.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub encoding: Encoding,
    pub network: NetworkConfig,
    pub neuron: NeuronConfig,
    pub training: TrainConfig,
}

/// Train, optional validation and test splits, already encoded as times.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Option<Dataset>,
    pub test: Dataset,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.normalize();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Fold sentinel values into their canonical form: an infinite clip
    /// range means no clipping.
    pub fn normalize(&mut self) {
        let d = &mut self.training.distortion;
        if d.w_clip.is_some_and(|c| c.is_infinite()) {
            d.w_clip = None;
        }
    }

    pub fn topology(&self) -> Result<Topology> {
        let net = &self.network;
        let n = net.layers.len().saturating_sub(1);
        if net.bias_times.len() != n {
            return Err(Error::invalid(
                "bias_times",
                format!("has {} entries for {n} weight layers", net.bias_times.len()),
            ));
        }
        let params = self.neuron.params(net.regime)?;
        let topo = Topology {
            layer_sizes: net.layers.clone(),
            bias_times: net.bias_times.clone(),
            params: vec![params; n],
            regime: net.regime,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoding.validate()?;
        let topo = self.topology()?;
        self.training.validate(&topo)
    }

    /// Directory of the MNIST files: the configured path, resolved against
    /// `root` when relative, or `root/mnist` when unset.
    pub fn mnist_dir(&self, root: Option<&Path>) -> PathBuf {
        let root = root.map(Path::to_path_buf).unwrap_or_default();
        match &self.dataset.path {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => root.join(p),
            None => root.join("mnist"),
        }
    }

    pub fn load_data(&self, root: Option<&Path>) -> Result<Splits> {
        let d = &self.dataset;
        let splits = match d.kind {
            DatasetKind::Yinyang => {
                let gen = |n, seed| yinyang_raw(&generate_yinyang(n, seed, d.r_small, d.r_big));
                Splits {
                    train: gen(d.train_size, d.train_seed).encode(&self.encoding),
                    val: (d.val_size > 0).then(|| gen(d.val_size, d.val_seed).encode(&self.encoding)),
                    test: gen(d.test_size, d.test_seed).encode(&self.encoding),
                }
            }
            DatasetKind::Mnist => {
                let dir = self.mnist_dir(root);
                if !dir.is_dir() {
                    return Err(Error::Config(format!(
                        "MNIST directory {} not found (set dataset.path or {DATA_ROOT_ENV})",
                        dir.display()
                    )));
                }
                let mut train = load_mnist(&dir, true, d.downsample)?;
                if let Some(n) = d.train_limit {
                    train = truncate_raw(train, n);
                }
                let val = if d.val_size > 0 {
                    if d.val_size >= train.len() {
                        return Err(Error::invalid("val_size", "leaves no training samples"));
                    }
                    let split = train.len() - d.val_size;
                    let val = RawDataset {
                        features: train.features.split_off(split),
                        labels: train.labels.split_off(split),
                        n_classes: train.n_classes,
                    };
                    Some(val.encode(&self.encoding))
                } else {
                    None
                };
                let mut test = load_mnist(&dir, false, d.downsample)?;
                if let Some(n) = d.test_limit {
                    test = truncate_raw(test, n);
                }
                Splits {
                    train: train.encode(&self.encoding),
                    val,
                    test: test.encode(&self.encoding),
                }
            }
        };
        let n_in = self.network.layers.first().copied().unwrap_or(0);
        if splits.train.n_features() != n_in {
            return Err(Error::Shape(format!(
                "dataset has {} features but the input layer has {n_in} neurons",
                splits.train.n_features()
            )));
        }
        Ok(splits)
    }
}

fn truncate_raw(mut raw: RawDataset, n: usize) -> RawDataset {
    raw.features.truncate(n);
    raw.labels.truncate(n);
    raw
}

/// Data root from the environment, if set.
pub fn data_root_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from)
}
