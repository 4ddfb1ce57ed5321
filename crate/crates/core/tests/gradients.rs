use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ttfs_core::gradients::Derivatives;
use ttfs_core::network::{
    backward, forward_sample, loss, loss_grad, LayerWeights, LossConfig, Topology,
};
use ttfs_core::verify::{
    gradient_suite, network_gradient_suite, random_inputs, random_network, GRAD_REL_TOL,
};
use ttfs_core::{find_causal_set, BackwardMode, NeuronParams, Regime};

const REGIMES: [Regime; 3] = [Regime::EqualTau, Regime::DoubleTau, Regime::Nlif];

#[test]
fn single_neuron_gradients_match_finite_differences() {
    for regime in REGIMES {
        for mode in [BackwardMode::Reinserted, BackwardMode::Naive] {
            let r = gradient_suite(regime, mode, 100, 11);
            assert_eq!(r.checked, 100, "{r:?}");
            assert!(r.passed(), "{r:?}");
        }
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    for regime in REGIMES {
        let r = network_gradient_suite(&[3, 4, 2], regime, BackwardMode::Reinserted, 40, 5);
        assert_eq!(r.checked, 40, "{r:?}");
        assert!(r.max_error <= GRAD_REL_TOL, "{r:?}");
    }
}

#[test]
fn naive_and_reinserted_agree_on_exact_spike_times() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for regime in [Regime::EqualTau, Regime::DoubleTau] {
        let p = NeuronParams::for_regime(regime);
        let mut seen = 0;
        while seen < 200 {
            let inp = random_inputs(&mut rng, p.tau_s);
            let r = find_causal_set(&inp, &p, regime);
            if !r.time.is_finite() || r.tangent {
                continue;
            }
            seen += 1;
            let sums = &r.causal_set.sums;
            let (Ok(a), Ok(b)) = (
                Derivatives::new(regime, BackwardMode::Naive, sums, &p, r.time),
                Derivatives::new(regime, BackwardMode::Reinserted, sums, &p, r.time),
            ) else {
                continue;
            };
            for &i in &r.causal_set.indices {
                let (w, t) = (inp.weights[i], inp.times[i]);
                let (e1, e2) = (t.exp(), (0.5 * t).exp());
                let (x, y) = (a.at(w, t, e1, e2), b.at(w, t, e1, e2));
                let scale = 1.0 + x.0.abs().max(x.1.abs());
                assert!((x.0 - y.0).abs() < 1e-8 * scale, "{regime}: {x:?} vs {y:?}");
                assert!((x.1 - y.1).abs() < 1e-8 * scale, "{regime}: {x:?} vs {y:?}");
            }
        }
    }
}

#[test]
fn silent_and_non_causal_weights_get_no_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let cfg = LossConfig::default();
    let mut checked = 0;
    while checked < 50 {
        let Some(inst) = random_network(&mut rng, &[4, 6, 3], Regime::EqualTau) else {
            continue;
        };
        checked += 1;
        let trace = forward_sample(&inst.input, &inst.weights, &inst.topology);
        let g = backward(&trace, &inst.weights, &inst.topology, inst.label, &cfg, BackwardMode::Reinserted)
            .unwrap();
        for (l, layer) in trace.layers.iter().enumerate() {
            let grads = &g.grads[l];
            for (k, n) in layer.neurons.iter().enumerate() {
                let causal = layer.causal_set(k);
                for i in 0..grads.cols {
                    let v = grads.get(k, i);
                    if !n.time.is_finite() || !causal.contains(&i) {
                        assert_eq!(v, 0.0, "layer {l} neuron {k} input {i}");
                    }
                }
            }
        }
    }
}

#[test]
fn permuting_hidden_neurons_permutes_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LossConfig::default();
    let perm = [2, 0, 3, 1];
    let mut checked = 0;
    while checked < 20 {
        let Some(inst) = random_network(&mut rng, &[3, 4, 2], Regime::DoubleTau) else {
            continue;
        };
        checked += 1;
        let (w0, w1) = (&inst.weights[0], &inst.weights[1]);
        let mut p0 = LayerWeights::zeros(4, 3);
        let mut p1 = LayerWeights::zeros(2, 4);
        for (new, &old) in perm.iter().enumerate() {
            for i in 0..3 {
                p0.set(new, i, w0.get(old, i));
            }
            for k in 0..2 {
                p1.set(k, new, w1.get(k, old));
            }
        }
        let permuted = vec![p0, p1];
        let topo = &inst.topology;
        let ta = forward_sample(&inst.input, &inst.weights, topo);
        let tb = forward_sample(&inst.input, &permuted, topo);
        assert_eq!(ta.label_times(), tb.label_times());
        let ga = backward(&ta, &inst.weights, topo, inst.label, &cfg, BackwardMode::Reinserted).unwrap();
        let gb = backward(&tb, &permuted, topo, inst.label, &cfg, BackwardMode::Reinserted).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            for i in 0..3 {
                assert_eq!(ga.grads[0].get(old, i), gb.grads[0].get(new, i));
            }
            for k in 0..2 {
                assert_eq!(ga.grads[1].get(k, old), gb.grads[1].get(k, new));
            }
        }
    }
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let cfg = LossConfig::default();
    let t = [1.1, 0.7, 1.9, 1.3];
    for label in 0..4 {
        let g = loss_grad(&t, label, &cfg, 1.0).unwrap();
        for i in 0..4 {
            let h = 1e-6;
            let (mut a, mut b) = (t, t);
            a[i] += h;
            b[i] -= h;
            let fd = (loss(&a, label, &cfg, 1.0).unwrap() - loss(&b, label, &cfg, 1.0).unwrap()) / (2.0 * h);
            assert!((g[i] - fd).abs() < 1e-7, "label {label} input {i}: {} vs {fd}", g[i]);
        }
    }
}

#[test]
fn uniform_topology_rejects_bad_shapes() {
    let p = NeuronParams::default();
    assert!(Topology::uniform(vec![3], p, Regime::EqualTau, vec![]).is_err());
    assert!(Topology::uniform(vec![3, 0, 2], p, Regime::EqualTau, vec![]).is_err());
}
