use proptest::prelude::*;

use ttfs_core::config::ExperimentConfig;
use ttfs_core::distortion::{
    clip_value, quantization_levels, quantize_value, substrate_crossing, DistortionConfig,
};
use ttfs_core::oracle::first_crossing;
use ttfs_core::spiketime::SortedInputs;
use ttfs_core::trainer::Trainer;
use ttfs_core::{InputSpikes, NeuronParams, NO_SPIKE};

proptest! {
    #[test]
    fn quantization_is_idempotent(w in -6.0..6.0f64, clip in 0.5..4.0f64, bits in 2u32..8) {
        let q = quantize_value(w, clip, bits);
        prop_assert_eq!(quantize_value(q, clip, bits), q);
    }

    #[test]
    fn quantization_error_is_at_most_half_a_step(w in -6.0..6.0f64, clip in 0.5..4.0f64, bits in 2u32..8) {
        let step = clip / ((1u64 << bits) - 1) as f64;
        let q = quantize_value(w, clip, bits);
        prop_assert!((q - clip_value(w, clip)).abs() <= 0.5 * step + 1e-12);
        prop_assert!(quantization_levels(clip, bits).iter().any(|l| (l - q).abs() < 1e-12));
    }

    #[test]
    fn substrate_crossing_matches_oracle(
        times in prop::collection::vec(0.0..3.0f64, 1..8),
        seed_w in prop::collection::vec(-1.5..4.0f64, 8),
        tau_s in 0.5..1.5f64,
        ratio in 0.3..3.0f64,
    ) {
        let weights: Vec<f64> = seed_w[..times.len()].to_vec();
        let p = NeuronParams::new(1.0, 1.0, tau_s, ratio * tau_s);
        let sorted = SortedInputs::new(&times, tau_s);
        let t = substrate_crossing(&sorted, &weights, &p);
        let o = first_crossing(&InputSpikes { times, weights }, &p, 20.0 * tau_s.max(ratio * tau_s));
        prop_assert_eq!(t == NO_SPIKE, o == NO_SPIKE, "substrate {} oracle {}", t, o);
        if t != NO_SPIKE {
            prop_assert!((t - o).abs() < 1e-8, "substrate {} oracle {}", t, o);
        }
    }
}

fn small_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.dataset.train_size = 150;
    cfg.dataset.val_size = 0;
    cfg.dataset.test_size = 60;
    cfg.network.layers = vec![4, 12, 3];
    cfg.training.epochs = 2;
    cfg.training.batch_size = 30;
    cfg
}

#[test]
fn disabling_quantization_recovers_the_shadow_weights() {
    let mut cfg = small_config();
    cfg.training.distortion = DistortionConfig {
        w_clip: Some(2.0),
        weight_bits: Some(3),
        ..DistortionConfig::default()
    };
    let data = cfg.load_data(None).unwrap();
    let mut t = Trainer::new(cfg.topology().unwrap(), cfg.training.clone()).unwrap();
    t.train_epoch(&data.train).unwrap();
    let levels = quantization_levels(2.0, 3);
    let shadows: Vec<Vec<f64>> = t.weights.iter().map(|w| w.master().to_vec()).collect();
    for w in &t.weights {
        assert!(w.values.iter().all(|v| levels.iter().any(|l| (l - v).abs() < 1e-12)));
    }
    assert!(shadows.iter().flatten().any(|v| levels.iter().all(|l| (l - v).abs() > 1e-9)));

    t.config.distortion = DistortionConfig::default();
    t.config.distortion.apply(&mut t.weights);
    for (w, s) in t.weights.iter().zip(&shadows) {
        assert_eq!(&w.values, s);
        assert!(w.shadow.is_none());
    }
}

#[test]
fn fixed_pattern_taus_are_constant_over_a_run() {
    let mut cfg = small_config();
    cfg.training.distortion = DistortionConfig {
        tau_noise: Some(0.1),
        tau_ratio: Some(1.2),
        ..DistortionConfig::default()
    };
    let data = cfg.load_data(None).unwrap();
    let mut t = Trainer::new(cfg.topology().unwrap(), cfg.training.clone()).unwrap();
    let before = t.overrides.clone().expect("substrate parameters sampled");
    let taus: Vec<f64> = before.iter().flatten().map(|p| p.tau_s).collect();
    assert!(taus.windows(2).any(|w| w[0] != w[1]));
    for layer in &before {
        for p in layer {
            assert!(p.tau_s > 0.1 && p.tau_m > 0.1);
            assert!((p.g_l() - 1.0).abs() < 1e-12);
        }
    }
    t.train_epoch(&data.train).unwrap();
    t.train_epoch(&data.train).unwrap();
    assert_eq!(t.overrides.as_ref(), Some(&before));
}

#[test]
fn undistorted_substrate_matches_exact_training() {
    let mut cfg = small_config();
    let data = cfg.load_data(None).unwrap();
    let mut exact = Trainer::new(cfg.topology().unwrap(), cfg.training.clone()).unwrap();
    cfg.training.distortion.tau_ratio = Some(1.0);
    let mut substrate = Trainer::new(cfg.topology().unwrap(), cfg.training.clone()).unwrap();
    assert!(substrate.overrides.is_some());
    let a = exact.train_epoch(&data.train).unwrap();
    let b = substrate.train_epoch(&data.train).unwrap();
    assert_eq!(a.train_accuracy, b.train_accuracy);
    for (x, y) in exact.weights.iter().zip(&substrate.weights) {
        for (u, v) in x.values.iter().zip(&y.values) {
            assert!((u - v).abs() < 1e-6, "{u} vs {v}");
        }
    }
}
