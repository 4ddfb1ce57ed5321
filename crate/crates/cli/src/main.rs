use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use ttfs_core::checkpoint::Checkpoint;
use ttfs_core::config::{ExperimentConfig, DATA_ROOT_ENV};
use ttfs_core::experiment::{self, Output, SweepGrid};
use ttfs_core::network::predict;
use ttfs_core::trainer::run_forward;
use ttfs_core::verify::{self, SuiteReport};
use ttfs_core::{BackwardMode, Regime};

#[derive(Parser)]
#[command(name = "ttfs", version, about = "Exact time-to-first-spike training of LIF networks")]
struct Cli {
    /// Directory that relative dataset paths are resolved against.
    #[arg(long, global = true, env = DATA_ROOT_ENV, default_value = "data")]
    data_root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write metrics, summary and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `training.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `dataset.path`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides `training.epochs`.
        #[arg(long)]
        epochs: Option<usize>,
        /// Resume from this checkpoint instead of initializing from the config.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Also checkpoint every N epochs.
        #[arg(long, default_value_t = 1)]
        checkpoint_every: usize,
    },
    /// Evaluate a checkpoint; prints accuracy, loss and confusion matrix as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides the dataset path stored in the checkpoint.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Split::Test)]
        split: Split,
        /// Write per-sample label spike times to this CSV file.
        #[arg(long)]
        times: Option<PathBuf>,
    },
    /// Check closed forms against the numerical oracle or finite differences.
    Verify {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Restrict to one regime.
        #[arg(long)]
        regime: Option<Regime>,
    },
    /// Train every point of a distortion grid for every seed.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Base config; overrides `base` in the grid file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seeds; overrides `seeds` in the grid file.
        #[arg(long, value_delimiter = ',')]
        seed: Vec<u64>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Suite {
    Oracle,
    Gradcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let root = cli.data_root.as_path();
    match cli.command {
        Command::Train {
            config,
            out,
            seed,
            dataset,
            epochs,
            checkpoint,
            checkpoint_every,
        } => train(
            &config,
            &out,
            seed,
            dataset,
            epochs,
            checkpoint.as_deref(),
            checkpoint_every,
            root,
        ),
        Command::Eval {
            checkpoint,
            dataset,
            split,
            times,
        } => eval(&checkpoint, dataset, split, times.as_deref(), root),
        Command::Verify {
            suite,
            n,
            seed,
            regime,
        } => Ok(verify_cmd(suite, n, seed, regime)),
        Command::Sweep {
            grid,
            out,
            config,
            seed,
            dataset,
        } => sweep(&grid, &out, config, seed, dataset, root),
    }
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    dataset: Option<PathBuf>,
    epochs: Option<usize>,
    checkpoint: Option<&Path>,
    checkpoint_every: usize,
    root: &Path,
) -> Result<ExitCode> {
    let mut exp = ExperimentConfig::load(config)?;
    let resume = match checkpoint {
        Some(path) => {
            let (stored, trainer) = Checkpoint::load(path)?.restore()?;
            if stored.topology()? != exp.topology()? {
                bail!("checkpoint {} was trained with a different network", path.display());
            }
            // Hyperparameters come from the checkpoint; the epoch target from the config.
            let target = exp.training.epochs;
            exp.training = trainer.config.clone();
            exp.training.epochs = target;
            let mut trainer = trainer;
            trainer.config.epochs = target;
            Some(trainer)
        }
        None => None,
    };
    if let Some(s) = seed {
        if resume.is_some() {
            bail!("--seed cannot change the seed of a resumed run");
        }
        exp.training.seed = s;
    }
    if let Some(d) = dataset {
        exp.dataset.path = Some(d);
    }
    let resume = resume.map(|mut t| {
        if let Some(e) = epochs {
            t.config.epochs = e;
        }
        t
    });
    if let Some(e) = epochs {
        exp.training.epochs = e;
    }
    exp.validate()?;
    let splits = exp.load_data(Some(root))?;
    let output = Output {
        dir: Some(out.to_path_buf()),
        checkpoint_every,
    };
    let result = experiment::run(&exp, &splits, resume, &output, |r| {
        let t = &r.train;
        let val = r
            .val
            .as_ref()
            .map(|v| format!(" val_acc {:.4}", v.accuracy))
            .unwrap_or_default();
        eprintln!(
            "epoch {:>4}  lr {:.2e}  loss {:.4}  train_acc {:.4}{val}",
            t.epoch, t.learning_rate, t.train_loss, t.train_accuracy
        );
    })
    .with_context(|| format!("training into {}", out.display()))?;
    println!("{}", serde_json::to_string_pretty(&result.summary)?);
    Ok(ExitCode::SUCCESS)
}

fn eval(
    checkpoint: &Path,
    dataset: Option<PathBuf>,
    split: Split,
    times: Option<&Path>,
    root: &Path,
) -> Result<ExitCode> {
    let (mut exp, trainer) = Checkpoint::load(checkpoint)?.restore()?;
    if let Some(d) = dataset {
        exp.dataset.path = Some(d);
    }
    let splits = exp.load_data(Some(root))?;
    let data = match split {
        Split::Train => &splits.train,
        Split::Test => &splits.test,
        Split::Val => splits
            .val
            .as_ref()
            .context("the configured dataset has no validation split")?,
    };
    let result = trainer.evaluate(data);
    println!("{}", serde_json::to_string_pretty(&result)?);

    if let Some(path) = times {
        let file = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        let mut out = std::io::BufWriter::new(file);
        let classes = trainer.topology.n_classes();
        let cols: Vec<String> = (0..classes).map(|c| format!("t_{c}")).collect();
        writeln!(out, "sample,label,prediction,{}", cols.join(","))?;
        for (i, (x, &y)) in data.inputs.iter().zip(&data.labels).enumerate() {
            let trace = run_forward(
                x,
                &trainer.weights,
                &trainer.topology,
                trainer.overrides.as_ref(),
                &trainer.config.distortion,
            );
            let t = trace.label_times();
            let pred = if t.iter().any(|v| v.is_finite()) {
                predict(&t).to_string()
            } else {
                String::new()
            };
            let t: Vec<String> = t.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{y},{pred},{}", t.join(","))?;
        }
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_cmd(suite: Suite, n: usize, seed: u64, regime: Option<Regime>) -> ExitCode {
    let regimes = match regime {
        Some(r) => vec![r],
        None => vec![Regime::EqualTau, Regime::DoubleTau, Regime::Nlif],
    };
    let mut reports: Vec<SuiteReport> = Vec::new();
    for r in regimes {
        match suite {
            Suite::Oracle => reports.push(verify::oracle_suite(r, n, seed)),
            Suite::Gradcheck => {
                for mode in [BackwardMode::Reinserted, BackwardMode::Naive] {
                    reports.push(verify::gradient_suite(r, mode, n, seed));
                    reports.push(verify::network_gradient_suite(&[3, 4, 2], r, mode, n, seed));
                }
            }
        }
    }
    let mut ok = true;
    for r in &reports {
        let regime = r.regime.map(|g| g.to_string()).unwrap_or_default();
        let status = if r.passed() { "ok" } else { "FAIL" };
        eprintln!(
            "{status:>4}  {:<28} {regime:<10} checked {:>5}  skipped {:>4}  max error {:.3e} (tol {:.0e})",
            r.suite, r.checked, r.skipped, r.max_error, r.tolerance
        );
        ok &= r.passed() && r.checked > 0;
    }
    match serde_json::to_string_pretty(&reports) {
        Ok(s) => println!("{s}"),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn sweep(
    grid_path: &Path,
    out: &Path,
    config: Option<PathBuf>,
    seeds: Vec<u64>,
    dataset: Option<PathBuf>,
    root: &Path,
) -> Result<ExitCode> {
    let mut grid = SweepGrid::load(grid_path)?;
    if !seeds.is_empty() {
        grid.seeds = seeds;
    }
    let base_path = config
        .or_else(|| grid.base.clone())
        .context("no base config: set `base` in the grid file or pass --config")?;
    let mut base = ExperimentConfig::load(&base_path)?;
    if let Some(d) = dataset {
        base.dataset.path = Some(d);
    }
    let splits = base.load_data(Some(root))?;
    let rows = experiment::sweep(&grid, &base, &splits, out, |r| {
        let p = &r.point;
        eprintln!(
            "w_clip {:?} bits {:?} tau_noise {:?} tau_ratio {:?} {} seed {}: test {:.4}",
            p.w_clip, p.weight_bits, p.tau_noise, p.tau_ratio, p.backward_mode, r.seed, r.test_accuracy
        );
    })?;
    eprintln!("{} runs written to {}", rows.len(), out.display());
    Ok(ExitCode::SUCCESS)
}
