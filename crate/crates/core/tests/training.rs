use ttfs_core::checkpoint::Checkpoint;
use ttfs_core::config::ExperimentConfig;
use ttfs_core::datasets::Dataset;
use ttfs_core::experiment::{self, Output, CHECKPOINT_FILE, METRICS_FILE, SUMMARY_FILE};
use ttfs_core::network::{LayerWeights, Topology};
use ttfs_core::trainer::{evaluate, TrainConfig, Trainer};
use ttfs_core::{NeuronParams, Regime};

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.train_size = 300;
    cfg.dataset.val_size = 60;
    cfg.dataset.test_size = 60;
    cfg.network.layers = vec![4, 16, 3];
    cfg.training.epochs = 3;
    cfg.training.batch_size = 50;
    cfg.training.input_noise = 0.05;
    cfg
}

fn run_into(cfg: &ExperimentConfig, dir: &std::path::Path) -> experiment::RunResult {
    let splits = cfg.load_data(None).unwrap();
    let out = Output {
        dir: Some(dir.to_path_buf()),
        checkpoint_every: 1,
    };
    experiment::run(cfg, &splits, None, &out, |_| {}).unwrap()
}

#[test]
fn identical_runs_write_identical_metrics() {
    let cfg = small_config();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_into(&cfg, a.path());
    run_into(&cfg, b.path());
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read(d.path().join(f)).unwrap();
    assert_eq!(read(&a, METRICS_FILE), read(&b, METRICS_FILE));
    assert_eq!(read(&a, SUMMARY_FILE), read(&b, SUMMARY_FILE));
    let text = String::from_utf8(read(&a, METRICS_FILE)).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.starts_with("epoch,learning_rate,train_loss,train_accuracy,val_loss,val_accuracy,"));
}

#[test]
fn different_seeds_diverge() {
    let cfg = small_config();
    let mut other = cfg.clone();
    other.training.seed = 1;
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_into(&cfg, a.path());
    let rb = run_into(&other, b.path());
    assert_ne!(ra.trainer.weights, rb.trainer.weights);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let cfg = small_config();
    let splits = cfg.load_data(None).unwrap();
    let train = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut t = Trainer::new(cfg.topology().unwrap(), cfg.training.clone()).unwrap();
            t.train_epoch(&splits.train).unwrap();
            t.weights
        })
    };
    assert_eq!(train(1), train(3));
}

#[test]
fn resuming_from_a_checkpoint_continues_the_same_trajectory() {
    let cfg = small_config();
    let full = tempfile::tempdir().unwrap();
    let straight = run_into(&cfg, full.path());

    let part = tempfile::tempdir().unwrap();
    let mut first = cfg.clone();
    first.training.epochs = 1;
    run_into(&first, part.path());
    let ckpt = Checkpoint::load(&part.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.epoch, 1);
    let (exp, mut trainer) = ckpt.restore().unwrap();
    assert_eq!(exp.training.epochs, 1);
    trainer.config.epochs = 3;
    let mut exp = exp;
    exp.training.epochs = 3;
    let splits = exp.load_data(None).unwrap();
    let out = Output {
        dir: Some(part.path().to_path_buf()),
        checkpoint_every: 0,
    };
    let resumed = experiment::run(&exp, &splits, Some(trainer), &out, |_| {}).unwrap();

    assert_eq!(resumed.trainer.weights, straight.trainer.weights);
    assert_eq!(resumed.trainer.optimizer, straight.trainer.optimizer);
    assert_eq!(resumed.summary, straight.summary);
    assert_eq!(
        std::fs::read_to_string(part.path().join(METRICS_FILE)).unwrap(),
        std::fs::read_to_string(full.path().join(METRICS_FILE)).unwrap()
    );
}

#[test]
fn checkpoint_round_trips_through_json() {
    let mut cfg = small_config();
    cfg.training.epochs = 1;
    cfg.training.distortion.w_clip = Some(2.5);
    cfg.training.distortion.weight_bits = Some(4);
    cfg.training.distortion.tau_noise = Some(0.05);
    let dir = tempfile::tempdir().unwrap();
    let r = run_into(&cfg, dir.path());
    let path = dir.path().join(CHECKPOINT_FILE);
    let ckpt = Checkpoint::load(&path).unwrap();
    assert_eq!(ckpt, Checkpoint::capture(&cfg, &r.trainer).unwrap());
    let (exp, t) = ckpt.restore().unwrap();
    assert_eq!(exp, cfg);
    assert_eq!(t.weights, r.trainer.weights);
    assert_eq!(t.overrides, r.trainer.overrides);
    assert_eq!(t.rng, r.trainer.rng);
}

#[test]
fn wrong_checkpoint_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"version": 99}"#).unwrap();
    let err = Checkpoint::load(&path).unwrap_err().to_string();
    assert!(err.contains("version"), "{err}");
}

#[test]
fn learns_a_separable_toy_problem() {
    let topo = Topology::uniform(vec![2, 2], NeuronParams::default(), Regime::EqualTau, vec![]).unwrap();
    let inputs: Vec<Vec<f64>> = (0..40)
        .map(|i| if i % 2 == 0 { vec![0.2, 1.6] } else { vec![1.6, 0.2] })
        .collect();
    let labels = (0..40).map(|i| i % 2).collect();
    let data = Dataset {
        inputs,
        labels,
        n_classes: 2,
    };
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 10,
        learning_rate: 0.05,
        max_missing_ratio: vec![0.0],
        init_mean: vec![3.5],
        init_std: vec![0.3],
        seed: 3,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(topo, cfg).unwrap();
    for _ in 0..60 {
        t.train_epoch(&data).unwrap();
    }
    let e = t.evaluate(&data);
    assert_eq!(e.accuracy, 1.0, "{e:?} {:?}", t.weights);
}

#[test]
fn silent_network_scores_zero() {
    let topo = Topology::uniform(vec![2, 3], NeuronParams::default(), Regime::EqualTau, vec![]).unwrap();
    let data = Dataset {
        inputs: vec![vec![0.1, 0.2]; 6],
        labels: vec![0, 1, 2, 0, 1, 2],
        n_classes: 3,
    };
    let w = vec![LayerWeights::zeros(3, 2)];
    let cfg = TrainConfig::default();
    let e = evaluate(&topo, &w, &data, &cfg.loss, None, &cfg.distortion);
    assert_eq!(e.accuracy, 0.0);
    assert_eq!(e.all_silent, 6);
}

#[test]
fn learning_rate_never_increases() {
    let cfg = TrainConfig::default();
    let lrs: Vec<f64> = (0..300).map(|e| cfg.lr_at(e)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(lrs[19], 0.005);
    assert!((lrs[20] - 0.005 * 0.95).abs() < 1e-18);
}

#[test]
fn bundled_configs_parse_and_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["yinyang.cfg", "mnist16.cfg", "mnist.cfg"] {
        let cfg = ExperimentConfig::load(&dir.join(name)).unwrap();
        cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
    }
    let yy = ExperimentConfig::load(&dir.join("yinyang.cfg")).unwrap();
    let t = &yy.training;
    assert_eq!((t.epochs, t.batch_size, t.lr_step_size), (300, 150, 20));
    assert_eq!((t.learning_rate, t.lr_gamma, t.weight_bump), (0.005, 0.95, 0.0005));
    assert_eq!(t.max_missing_ratio, vec![0.3, 0.0]);
    assert_eq!((t.init_mean.clone(), t.init_std.clone()), (vec![1.5, 0.5], vec![0.8, 0.8]));
    assert_eq!(yy.network.layers, vec![4, 120, 3]);
    assert_eq!(yy.network.bias_times, vec![vec![0.9], vec![0.9]]);
    assert_eq!((yy.encoding.t_early, yy.encoding.t_late), (0.15, 2.0));
}
