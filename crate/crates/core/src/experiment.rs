//! Training runs with CSV metrics, JSON summaries and checkpoints, and
//! cartesian distortion sweeps.

use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Splits};
use crate::error::{Error, Result};
use crate::gradients::BackwardMode;
use crate::trainer::{EpochMetrics, Evaluation, Trainer};

pub const METRICS_FILE: &str = "metrics.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Training metrics of one epoch plus the validation result.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub train: EpochMetrics,
    pub val: Option<Evaluation>,
}

impl EpochRecord {
    fn header(n_layers: usize) -> Vec<String> {
        let mut h: Vec<String> = [
            "epoch",
            "learning_rate",
            "train_loss",
            "train_accuracy",
            "val_loss",
            "val_accuracy",
        ]
        .map(String::from)
        .to_vec();
        h.extend((1..=n_layers).map(|l| format!("silent_fraction_{l}")));
        h.extend(
            ["all_silent_samples", "clipped_updates", "bumps", "degenerate_gradients"]
                .map(String::from),
        );
        h
    }

    fn row(&self) -> Vec<String> {
        let t = &self.train;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut r = vec![
            t.epoch.to_string(),
            t.learning_rate.to_string(),
            t.train_loss.to_string(),
            t.train_accuracy.to_string(),
            opt(self.val.as_ref().map(|v| v.mean_loss)),
            opt(self.val.as_ref().map(|v| v.accuracy)),
        ];
        r.extend(t.silent_fraction.iter().map(f64::to_string));
        r.extend([
            t.all_silent_samples.to_string(),
            t.clipped_updates.to_string(),
            t.bumps.to_string(),
            t.degenerate_gradients.to_string(),
        ]);
        r
    }
}

/// Final state of a run, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub epochs: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub test: Evaluation,
}

/// Where and how often a run writes its files.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub dir: Option<PathBuf>,
    /// Write `checkpoint.json` after every `n` epochs as well as at the end;
    /// 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

pub struct RunResult {
    pub trainer: Trainer,
    pub history: Vec<EpochRecord>,
    pub summary: RunSummary,
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Open the metrics file: truncated with a header for a fresh run, appended
/// to when resuming.
fn metrics_writer(dir: &Path, n_layers: usize, resume: bool) -> Result<csv::Writer<File>> {
    let path = dir.join(METRICS_FILE);
    let append = resume && path.exists();
    let file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    if !append {
        w.write_record(EpochRecord::header(n_layers))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(w)
}

/// Train until `exp.training.epochs` epochs are complete. `resume` continues a
/// restored trainer; otherwise a fresh one is built from the config.
pub fn run(
    exp: &ExperimentConfig,
    splits: &Splits,
    resume: Option<Trainer>,
    output: &Output,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunResult> {
    exp.validate()?;
    let resuming = resume.is_some();
    let mut trainer = match resume {
        Some(t) => t,
        None => Trainer::new(exp.topology()?, exp.training.clone())?,
    };
    let n_layers = trainer.topology.n_weight_layers();
    let mut writer = match &output.dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            write_atomic(&dir.join(CONFIG_FILE), exp.to_toml()?.as_bytes())?;
            Some(metrics_writer(dir, n_layers, resuming)?)
        }
        None => None,
    };
    let save = |trainer: &Trainer| -> Result<()> {
        if let Some(dir) = &output.dir {
            let text = serde_json::to_vec(&Checkpoint::capture(exp, trainer)?)?;
            write_atomic(&dir.join(CHECKPOINT_FILE), &text)?;
        }
        Ok(())
    };

    let mut history = Vec::new();
    while trainer.epoch < trainer.config.epochs {
        let train = trainer.train_epoch(&splits.train)?;
        let val = splits.val.as_ref().map(|v| trainer.evaluate(v));
        let record = EpochRecord { train, val };
        if let Some(w) = writer.as_mut() {
            w.write_record(record.row())?;
            w.flush()
                .map_err(|e| Error::io(output.dir.as_deref().unwrap_or(Path::new(".")), e))?;
        }
        on_epoch(&record);
        if output.checkpoint_every > 0 && trainer.epoch % output.checkpoint_every == 0 {
            save(&trainer)?;
        }
        history.push(record);
    }
    save(&trainer)?;

    let test = trainer.evaluate(&splits.test);
    let last = history.last();
    let summary = RunSummary {
        seed: trainer.config.seed,
        epochs: trainer.epoch,
        train_loss: last.map_or(f64::NAN, |r| r.train.train_loss),
        train_accuracy: last.map_or(f64::NAN, |r| r.train.train_accuracy),
        val_accuracy: last.and_then(|r| r.val.as_ref().map(|v| v.accuracy)),
        test,
    };
    if let Some(dir) = &output.dir {
        write_atomic(&dir.join(SUMMARY_FILE), &serde_json::to_vec_pretty(&summary)?)?;
    }
    Ok(RunResult {
        trainer,
        history,
        summary,
    })
}

/// Cartesian grid of distortion settings. Empty lists keep the base value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    /// Base experiment config, relative to the grid file.
    pub base: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Overrides the base epoch count.
    pub epochs: Option<usize>,
    /// `inf` disables clipping.
    pub w_clip: Vec<f64>,
    /// `0` keeps full precision.
    pub weight_bits: Vec<u32>,
    /// `0` disables fixed-pattern noise.
    pub tau_noise: Vec<f64>,
    pub tau_ratio: Vec<f64>,
    pub backward_mode: Vec<BackwardMode>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            base: None,
            seeds: (0..10).collect(),
            epochs: None,
            w_clip: vec![],
            weight_bits: vec![],
            tau_noise: vec![],
            tau_ratio: vec![],
            backward_mode: vec![],
        }
    }
}

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepPoint {
    pub w_clip: Option<f64>,
    pub weight_bits: Option<u32>,
    pub tau_noise: Option<f64>,
    pub tau_ratio: Option<f64>,
    pub backward_mode: BackwardMode,
}

fn axis<T: Copy>(values: &[T], base: T) -> Vec<T> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut grid: Self = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(b) = &grid.base {
            if b.is_relative() {
                let parent = path.parent().unwrap_or(Path::new(""));
                grid.base = Some(parent.join(b));
            }
        }
        Ok(grid)
    }

    /// Grid points in row-major order of the axes as declared.
    pub fn points(&self, base: &ExperimentConfig) -> Vec<SweepPoint> {
        let d = &base.training.distortion;
        let mut out = Vec::new();
        for &w_clip in &axis(&self.w_clip, d.w_clip.unwrap_or(f64::INFINITY)) {
            for &bits in &axis(&self.weight_bits, d.weight_bits.unwrap_or(0)) {
                for &noise in &axis(&self.tau_noise, d.tau_noise.unwrap_or(0.0)) {
                    for &ratio in &axis(&self.tau_ratio, d.tau_ratio.unwrap_or(f64::NAN)) {
                        for &mode in &axis(&self.backward_mode, d.backward_mode) {
                            out.push(SweepPoint {
                                w_clip: w_clip.is_finite().then_some(w_clip),
                                weight_bits: (bits > 0).then_some(bits),
                                tau_noise: (noise > 0.0).then_some(noise),
                                tau_ratio: (!ratio.is_nan()).then_some(ratio),
                                backward_mode: mode,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

impl SweepPoint {
    pub fn apply(&self, exp: &ExperimentConfig) -> ExperimentConfig {
        let mut e = exp.clone();
        let d = &mut e.training.distortion;
        d.w_clip = self.w_clip;
        d.weight_bits = self.weight_bits;
        d.tau_noise = self.tau_noise;
        d.tau_ratio = self.tau_ratio;
        d.backward_mode = self.backward_mode;
        e
    }
}

/// Final accuracies of one (grid point, seed) run.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub point: SweepPoint,
    pub seed: u64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub test_accuracy: f64,
}

const SWEEP_HEADER: [&str; 9] = [
    "w_clip",
    "weight_bits",
    "tau_noise",
    "tau_ratio",
    "backward_mode",
    "seed",
    "train_accuracy",
    "val_accuracy",
    "test_accuracy",
];

fn point_fields(p: &SweepPoint) -> [String; 5] {
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    [
        opt(p.w_clip),
        p.weight_bits.map(|b| b.to_string()).unwrap_or_default(),
        opt(p.tau_noise),
        opt(p.tau_ratio),
        p.backward_mode.to_string(),
    ]
}

/// Linear-interpolation quantile of sorted values.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Run every grid point for every seed, writing `sweep.csv` (one row per
/// run) and `sweep_summary.csv` (test-accuracy quartiles per grid point).
pub fn sweep(
    grid: &SweepGrid,
    base: &ExperimentConfig,
    splits: &Splits,
    out_dir: &Path,
    mut on_row: impl FnMut(&SweepRow),
) -> Result<Vec<SweepRow>> {
    let mut base = base.clone();
    if let Some(e) = grid.epochs {
        base.training.epochs = e;
    }
    let points = grid.points(&base);
    for p in &points {
        p.apply(&base).validate()?;
    }
    if grid.seeds.is_empty() {
        return Err(Error::invalid("seeds", "sweep needs at least one seed"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("sweep.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    w.write_record(SWEEP_HEADER)?;

    let mut rows = Vec::new();
    for p in &points {
        for &seed in &grid.seeds {
            let mut exp = p.apply(&base);
            exp.training.seed = seed;
            let r = run(&exp, splits, None, &Output::default(), |_| {})?;
            let row = SweepRow {
                point: *p,
                seed,
                train_accuracy: r.summary.train_accuracy,
                val_accuracy: r.summary.val_accuracy,
                test_accuracy: r.summary.test.accuracy,
            };
            let mut rec = point_fields(p).to_vec();
            rec.extend([
                seed.to_string(),
                row.train_accuracy.to_string(),
                row.val_accuracy.map(|v| v.to_string()).unwrap_or_default(),
                row.test_accuracy.to_string(),
            ]);
            w.write_record(rec)?;
            w.flush().map_err(|e| Error::io(&path, e))?;
            on_row(&row);
            rows.push(row);
        }
    }

    let path = out_dir.join("sweep_summary.csv");
    let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = SWEEP_HEADER[..5].to_vec();
    header.extend(["runs", "test_min", "test_q1", "test_median", "test_q3", "test_max"]);
    w.write_record(header)?;
    for p in &points {
        let mut acc: Vec<f64> = rows
            .iter()
            .filter(|r| r.point == *p)
            .map(|r| r.test_accuracy)
            .collect();
        acc.sort_by(f64::total_cmp);
        let mut rec = point_fields(p).to_vec();
        rec.push(acc.len().to_string());
        rec.extend([0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile(&acc, q).to_string()));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }

    #[test]
    fn grid_sentinels_map_to_none() {
        let grid = SweepGrid {
            w_clip: vec![f64::INFINITY, 3.0],
            weight_bits: vec![0, 5],
            ..SweepGrid::default()
        };
        let pts = grid.points(&ExperimentConfig::default());
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[0].w_clip, None);
        assert_eq!(pts[0].weight_bits, None);
        assert_eq!(pts[3].w_clip, Some(3.0));
        assert_eq!(pts[3].weight_bits, Some(5));
    }

    #[test]
    fn empty_grid_is_the_base_point() {
        let pts = SweepGrid::default().points(&ExperimentConfig::default());
        assert_eq!(pts, vec![SweepPoint::default()]);
    }
}
