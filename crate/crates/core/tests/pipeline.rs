use amaml_core::autodiff::fd::cosine_similarity;
use amaml_core::meta::{self, meta_train, FixedTasks};
use amaml_core::model::init_params;
use amaml_core::rng;
use amaml_core::tasks::{sample_synthetic_task, Family, SyntheticSampler};
use amaml_core::{Algorithm, MetaConfig, MlpSpec};
use proptest::prelude::*;

fn small_cfg(horizon: f64, step: f64) -> MetaConfig {
    let mut cfg = MetaConfig {
        inner_step: step,
        grid_step: step,
        rtol: 1e-9,
        atol: 1e-11,
        ..MetaConfig::default()
    };
    cfg = cfg.with_horizon(horizon);
    cfg
}

#[test]
fn estimators_agree_where_theory_says_they_should() {
    let spec = MlpSpec::new(vec![2, 8, 1], 4).unwrap();
    let theta = init_params(&spec).unwrap();
    let mut r = rng::stream(4, &[1]);
    let task = sample_synthetic_task(Family::CosMixture, &mut r, 10, 10).unwrap();
    let cfg = small_cfg(0.2, 0.0025);
    let d = spec.param_count();

    let adj = meta::adjoint_task_grad(&spec, &task, &theta, &cfg).unwrap();
    let unr = meta::unrolled_maml_grad(&spec, &task, &theta, &cfg).unwrap();
    let fo = meta::fomaml_task_grad(&spec, &task, &theta, &cfg).unwrap();
    let im = meta::imaml_task_grad(&spec, &task, &theta, &cfg).unwrap();
    let rep = meta::reptile_task_grad(&spec, &task, &theta, &cfg).unwrap();
    for g in [&adj, &unr, &fo, &im, &rep] {
        assert_eq!(g.grad.len(), d);
        assert!(g.grad.iter().all(|v| v.is_finite()));
    }
    // Small steps make unrolled GD a fine discretization of the flow.
    let c = cosine_similarity(&adj.grad, &unr.grad);
    assert!(c > 0.999, "adjoint vs unrolled cosine {c}");
    assert!((adj.val_loss - unr.val_loss).abs() < 1e-2 * unr.val_loss.max(1e-12));
    // Over a short horizon the Jacobian is close to the identity.
    assert!(cosine_similarity(&adj.grad, &fo.grad) > 0.9);
    assert_eq!(adj.counters.hvp_calls, 2 * 80);
    assert_eq!(fo.counters.hvp_calls, 0);
    assert!(adj.counters.peak_state_floats > unr.counters.peak_state_floats / 2);
}

#[test]
fn meta_training_lowers_validation_loss_on_a_fixed_task_pool() {
    let spec = MlpSpec::new(vec![2, 8, 1], 1).unwrap();
    let theta0 = init_params(&spec).unwrap();
    let tasks: Vec<_> = (0..4)
        .map(|i| {
            let mut r = rng::stream(1, &[9, i]);
            sample_synthetic_task(Family::CosMixture, &mut r, 10, 10).unwrap()
        })
        .collect();
    let mut cfg = small_cfg(0.1, 0.01);
    cfg.batch_size = 4;
    cfg.outer_lr = 1e-2;
    cfg.max_meta_iters = 60;
    let sampler = FixedTasks {
        tasks,
        batch_size: 4,
    };
    for algorithm in [Algorithm::Amaml, Algorithm::Maml, Algorithm::Imaml] {
        cfg.algorithm = algorithm;
        let out = meta_train(&spec, &sampler, &theta0, &cfg, |_| {}).unwrap();
        let first = out.log.first().unwrap().mean_val_loss;
        let last = out.log.last().unwrap().mean_val_loss;
        assert!(last < 0.8 * first, "{algorithm}: {first} -> {last}");
    }
}

fn train_bits(seed: u64, algorithm: Algorithm, threads: usize) -> Vec<u64> {
    let spec = MlpSpec::new(vec![2, 4, 1], seed).unwrap();
    let theta0 = init_params(&spec).unwrap();
    let mut cfg = small_cfg(0.05, 0.01);
    cfg.algorithm = algorithm;
    cfg.batch_size = 3;
    cfg.max_meta_iters = 2;
    let sampler = SyntheticSampler {
        family: Family::Alpine,
        n_shot: 5,
        n_val: 5,
        seed,
        batch_size: 3,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap();
    let out = pool
        .install(|| meta_train(&spec, &sampler, &theta0, &cfg, |_| {}))
        .unwrap();
    out.theta.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn training_is_a_pure_function_of_the_seed(
        seed in any::<u64>(),
        algorithm in prop::sample::select(Algorithm::ALL.to_vec()),
        threads in 1usize..5,
    ) {
        let a = train_bits(seed, algorithm, 1);
        let b = train_bits(seed, algorithm, threads);
        prop_assert_eq!(a, b);
    }
}
