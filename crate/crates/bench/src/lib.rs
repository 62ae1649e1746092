//! Fixtures shared by the kernel benchmarks.

use amaml_core::model::init_params;
use amaml_core::tasks::{sample_synthetic_task, Family};
use amaml_core::{MetaConfig, MlpSpec, ParamVector, Task};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A seeded network, its initialization and one CosMixture task.
pub struct Fixture {
    pub spec: MlpSpec,
    pub theta: ParamVector,
    pub task: Task,
}

impl Fixture {
    pub fn new(hidden: &[usize], n_shot: usize, seed: u64) -> Self {
        let mut sizes = vec![2];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, seed).expect("valid layer sizes");
        let theta = init_params(&spec).expect("valid spec");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let task = sample_synthetic_task(Family::CosMixture, &mut rng, n_shot, n_shot)
            .expect("positive shot counts");
        Fixture { spec, theta, task }
    }

    /// A direction for Hessian-vector products.
    pub fn direction(&self) -> Vec<f64> {
        (0..self.theta.len())
            .map(|i| ((i as f64) * 0.37).sin())
            .collect()
    }
}

/// Default settings at horizon `horizon`, with `K = T/α` for the discrete
/// estimators.
pub fn config(horizon: f64) -> MetaConfig {
    MetaConfig::default().with_horizon(horizon)
}
