//! Dynamic-programming loss against the exhaustive path oracle.

use multiblank::loss::{backward, forward, occupancy, under_normalize};
use multiblank::oracle::{
    brute_force_loss, enumerate_paths, finite_diff_grad, naive_arc_weights, path_length_range,
    path_weight, random_instance, standard_transducer_loss, Instance, InstanceLimits,
};
use multiblank::{loss_and_grad, ActivationLattice, BlankSet, LossConfig, Tensor3};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64, limits: &InstanceLimits) -> Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), limits).unwrap()
}

fn with_sigma(inst: &Instance, sigma: f64) -> LossConfig {
    LossConfig::new(sigma, inst.config.blank_set.clone()).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dp_loss_matches_brute_force(seed in any::<u64>()) {
        let inst = instance(seed, &InstanceLimits::default());
        let dp = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let oracle = brute_force_loss(&inst.activations, &inst.labels, &inst.config).unwrap();
        prop_assert!((dp.loss - oracle).abs() <= 1e-9, "dp {} oracle {}", dp.loss, oracle);
        prop_assert!(dp.loss >= 0.0);
    }

    #[test]
    fn forward_and_backward_totals_agree(seed in any::<u64>()) {
        let inst = instance(seed, &InstanceLimits::default());
        let res = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let gap = (res.lattices.forward_total() - res.lattices.backward_total()).abs();
        prop_assert!(gap <= 1e-9, "gap {gap}");
        prop_assert_eq!(res.lattices.alpha.get(0, 0), 0.0);
        let (t, u) = (res.lattices.beta.rows() - 1, res.lattices.beta.cols() - 1);
        prop_assert_eq!(res.lattices.beta.get(t, u), 0.0);
    }

    #[test]
    fn single_blank_zero_sigma_is_standard_transducer(seed in any::<u64>()) {
        let limits = InstanceLimits {
            extra_durations: vec![],
            sigmas: vec![0.0],
            ..InstanceLimits::default()
        };
        let inst = instance(seed, &limits);
        let dp = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let standard = standard_transducer_loss(&inst.activations, &inst.labels).unwrap();
        prop_assert!((dp.loss - standard).abs() <= 1e-9, "dp {} standard {}", dp.loss, standard);
    }

    #[test]
    fn sigma_penalty_bounded_by_path_lengths(seed in any::<u64>(), sigma in 0.0f64..0.5) {
        let inst = instance(seed, &InstanceLimits::default());
        let shape = inst.activations.shape();
        let (lo, hi) = path_length_range(shape.frames, shape.labels, &inst.config.blank_set)
            .unwrap()
            .unwrap();
        let base = loss_and_grad(&inst.activations, &inst.labels, &with_sigma(&inst, 0.0)).unwrap().loss;
        let shifted = loss_and_grad(&inst.activations, &inst.labels, &with_sigma(&inst, sigma)).unwrap().loss;
        let diff = shifted - base;
        prop_assert!(diff >= sigma * lo as f64 - 1e-9, "{diff} < {}", sigma * lo as f64);
        prop_assert!(diff <= sigma * hi as f64 + 1e-9, "{diff} > {}", sigma * hi as f64);
        let at_005 = loss_and_grad(&inst.activations, &inst.labels, &with_sigma(&inst, 0.05)).unwrap().loss;
        prop_assert!(at_005 >= base - 1e-12);
    }

    #[test]
    fn occupancy_is_the_path_posterior(seed in any::<u64>()) {
        let limits = InstanceLimits { max_frames: 5, max_labels: 3, ..InstanceLimits::default() };
        let inst = instance(seed, &limits);
        let shape = inst.activations.shape();
        let blanks = &inst.config.blank_set;
        let arcs = under_normalize(&inst.activations, inst.config.sigma).unwrap();
        let res = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let gamma = occupancy(&res.lattices, &arcs, &inst.labels, blanks).unwrap();

        let paths = enumerate_paths(shape.frames, shape.labels, blanks).unwrap();
        let weights: Vec<f64> = paths
            .iter()
            .map(|p| path_weight(p, &arcs, &inst.labels, blanks).unwrap())
            .collect();
        let total: f64 = weights.iter().map(|w| w.exp()).sum();
        let mut expected = Tensor3::zeros(shape.frames, shape.labels + 1, shape.width());
        for (path, w) in paths.iter().zip(&weights) {
            let (mut t, mut u) = (0, 0);
            for step in &path.steps {
                let k = match step.emission {
                    multiblank::oracle::Emission::Label { position } => {
                        u += 1;
                        inst.labels[position]
                    }
                    multiblank::oracle::Emission::Blank { duration } => {
                        t += duration;
                        shape.vocab + blanks.index_of(duration).unwrap()
                    }
                };
                let (ft, fu) = match step.emission {
                    multiblank::oracle::Emission::Label { .. } => (t, u - 1),
                    multiblank::oracle::Emission::Blank { duration } => (t - duration, u),
                };
                let cur = expected.get(ft, fu, k);
                expected.set(ft, fu, k, cur + w.exp() / total);
            }
        }
        for (g, e) in gamma.as_slice().iter().zip(expected.as_slice()) {
            prop_assert!(*g >= 0.0 && *g <= 1.0 + 1e-9, "gamma {g}");
            prop_assert!((g - e).abs() <= 1e-9, "gamma {g} expected {e}");
        }
    }
}

#[test]
fn oracle_suite_of_a_thousand_instances() {
    let limits = InstanceLimits::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let inst = random_instance(&mut rng, &limits).unwrap();
        let dp = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let oracle = brute_force_loss(&inst.activations, &inst.labels, &inst.config).unwrap();
        worst = worst.max((dp.loss - oracle).abs());
    }
    assert!(worst <= 1e-9, "max deviation {worst}");
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let limits = InstanceLimits {
        max_frames: 4,
        max_labels: 3,
        max_vocab: 4,
        ..InstanceLimits::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let inst = random_instance(&mut rng, &limits).unwrap();
        let res = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let fd = finite_diff_grad(&inst.activations, &inst.labels, &inst.config, 1e-5).unwrap();
        for (a, n) in res.grad.as_slice().iter().zip(fd.as_slice()) {
            worst = worst.max(rel_err(*a, *n));
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn gradient_rows_sum_to_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, &InstanceLimits::default()).unwrap();
        let res = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let (t_len, u_len, _) = res.grad.dims();
        for t in 0..t_len {
            for u in 0..u_len {
                let s: f64 = res.grad.row(t, u).iter().sum();
                assert!(s.abs() < 1e-12, "row ({t},{u}) sums to {s}");
            }
        }
    }
}

#[test]
fn naive_arc_weights_match_under_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..50 {
        let inst = random_instance(&mut rng, &InstanceLimits::default()).unwrap();
        let arcs = under_normalize(&inst.activations, inst.config.sigma).unwrap();
        let naive = naive_arc_weights(&inst.activations, inst.config.sigma);
        for (a, b) in arcs.values().as_slice().iter().zip(naive.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
        let (t_len, u_len, _) = naive.dims();
        for t in 0..t_len {
            for u in 0..u_len {
                let mass: f64 = arcs.values().row(t, u).iter().map(|w| w.exp()).sum();
                assert!((mass - (-inst.config.sigma).exp()).abs() < 1e-9);
            }
        }
    }
}

/// Appends a duration longer than every utterance to the blank set.
fn with_dead_duration(inst: &Instance, dead: usize, activation: f64) -> (ActivationLattice, LossConfig) {
    let shape = inst.activations.shape();
    let mut durations = inst.config.blank_set.durations().to_vec();
    durations.push(dead);
    let blanks = BlankSet::new(durations).unwrap();
    let width = shape.width() + 1;
    let values = Tensor3::from_fn((shape.frames, shape.labels + 1, width), |t, u, k| {
        if k + 1 == width {
            activation
        } else {
            inst.activations.values().get(t, u, k)
        }
    });
    let lattice = ActivationLattice::new(values, shape.vocab, &blanks).unwrap();
    (lattice, LossConfig::new(inst.config.sigma, blanks).unwrap())
}

#[test]
fn dead_duration_adds_no_paths() {
    let limits = InstanceLimits {
        extra_durations: vec![2, 3],
        ..InstanceLimits::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..100 {
        let inst = random_instance(&mut rng, &limits).unwrap();
        let shape = inst.activations.shape();
        let (_, cfg) = with_dead_duration(&inst, 7, 0.0);
        let before = enumerate_paths(shape.frames, shape.labels, &inst.config.blank_set).unwrap();
        let after = enumerate_paths(shape.frames, shape.labels, &cfg.blank_set).unwrap();
        assert_eq!(before, after);
    }
}

#[test]
fn dead_duration_leaves_the_recursion_unchanged() {
    let limits = InstanceLimits {
        extra_durations: vec![2, 3],
        ..InstanceLimits::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..100 {
        let inst = random_instance(&mut rng, &limits).unwrap();
        let shape = inst.activations.shape();
        let (lattice, cfg) = with_dead_duration(&inst, 7, 1.5);
        // the dead column's arc weights never enter the recursion
        let wide = under_normalize(&lattice, cfg.sigma).unwrap();
        let narrow_values = Tensor3::from_fn((shape.frames, shape.labels + 1, shape.width()), |t, u, k| {
            wide.values().get(t, u, k)
        });
        let narrow = multiblank::ArcWeightLattice::from_log_weights(
            narrow_values,
            shape.vocab,
            &inst.config.blank_set,
        )
        .unwrap();
        let f_wide = forward(&wide, &inst.labels, &cfg.blank_set).unwrap();
        let f_narrow = forward(&narrow, &inst.labels, &inst.config.blank_set).unwrap();
        let b_wide = backward(&wide, &inst.labels, &cfg.blank_set).unwrap();
        let b_narrow = backward(&narrow, &inst.labels, &inst.config.blank_set).unwrap();
        assert_eq!(f_wide, f_narrow);
        assert_eq!(b_wide, b_narrow);
    }
}

#[test]
fn dead_duration_with_vanishing_activation_keeps_loss_and_grad() {
    let limits = InstanceLimits {
        extra_durations: vec![2, 3],
        ..InstanceLimits::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..100 {
        let inst = random_instance(&mut rng, &limits).unwrap();
        let base = loss_and_grad(&inst.activations, &inst.labels, &inst.config).unwrap();
        let (lattice, cfg) = with_dead_duration(&inst, 7, -1e3);
        let dead = loss_and_grad(&lattice, &inst.labels, &cfg).unwrap();
        assert!((base.loss - dead.loss).abs() < 1e-12);
        let (t_len, u_len, width) = base.grad.dims();
        for t in 0..t_len {
            for u in 0..u_len {
                for k in 0..width {
                    assert!((base.grad.get(t, u, k) - dead.grad.get(t, u, k)).abs() < 1e-12);
                }
                assert!(dead.grad.get(t, u, width).abs() < 1e-12);
            }
        }
    }
}
