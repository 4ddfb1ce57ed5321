//! Helpers for re-running the reference experiments: bundled configs, data
//! location and multi-seed training.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ttfs_core::config::{ExperimentConfig, DATA_ROOT_ENV};
use ttfs_core::experiment::{self, Output};

/// Workspace root, where `configs/` and the default `data/` live.
pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// `$TTFS_DATA_ROOT`, else `<repo>/data`.
pub fn data_root() -> PathBuf {
    std::env::var_os(DATA_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| repo_root().join("data"))
}

/// Load `configs/<name>`.
pub fn bundled(name: &str) -> ttfs_core::Result<ExperimentConfig> {
    ExperimentConfig::load(&repo_root().join("configs").join(name))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Final test accuracy of one training run per seed. Progress goes to stderr.
pub fn test_accuracies(label: &str, cfg: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<f64>, String> {
    let splits = cfg.load_data(Some(&data_root())).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut c = cfg.clone();
        c.training.seed = seed;
        let start = Instant::now();
        let r = experiment::run(&c, &splits, None, &Output::default(), |_| {})
            .map_err(|e| e.to_string())?;
        eprintln!(
            "  {label} seed {seed}: test {:.2}% ({:.0} s)",
            100.0 * r.summary.test.accuracy,
            start.elapsed().as_secs_f64()
        );
        out.push(r.summary.test.accuracy);
    }
    Ok(out)
}
