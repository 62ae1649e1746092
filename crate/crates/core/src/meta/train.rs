use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{task_grad, Adam, MetaConfig, Task};
use crate::autodiff::{norm, ParamVector};
use crate::error::{check_dim, Result};
use crate::model::Learner;

/// Source of meta-training tasks.
///
/// `sample` must be a pure function of `(iter, slot)` so batches can be
/// drawn in parallel without changing results.
pub trait TaskSampler: Sync {
    fn sample(&self, iter: usize, slot: usize) -> Result<Task>;
}

/// Cycles through a fixed task list in order.
#[derive(Debug, Clone)]
pub struct FixedTasks {
    pub tasks: Vec<Task>,
    pub batch_size: usize,
}

impl TaskSampler for FixedTasks {
    fn sample(&self, iter: usize, slot: usize) -> Result<Task> {
        let i = (iter * self.batch_size + slot) % self.tasks.len();
        Ok(self.tasks[i].clone())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterLog {
    pub iter: usize,
    pub mean_val_loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
    pub hvp_calls: usize,
    pub peak_state_floats: usize,
    pub grad_calls: usize,
    pub update_norm: f64,
    pub skipped_tasks: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub theta: ParamVector,
    pub log: Vec<IterLog>,
    pub stopped_early: bool,
}

/// Outer loop: for up to `G` iterations, sample `B` tasks, average their
/// meta-gradients under `cfg.algorithm` and take an ADAM step. Stops early
/// once ‖Δθ‖₂ < ξ.
///
/// Per-task gradients run on the ambient rayon pool; they are reduced in
/// slot order, so θ is bit-identical for any thread count.
pub fn meta_train<M: Learner, S: TaskSampler>(
    model: &M,
    sampler: &S,
    theta0: &[f64],
    cfg: &MetaConfig,
    mut on_iter: impl FnMut(&IterLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_dim("initialization", model.param_count(), theta0.len())?;
    let d = theta0.len();
    let mut theta = theta0.to_vec();
    let mut adam = Adam::new(d, cfg.outer_lr);
    let mut log = Vec::new();
    let mut stopped_early = false;

    for iter in 0..cfg.max_meta_iters {
        let start = Instant::now();
        let results: Vec<_> = (0..cfg.batch_size)
            .into_par_iter()
            .map(|slot| {
                let task = sampler.sample(iter, slot)?;
                task_grad(model, &task, &theta, cfg).map_err(|e| e.for_task(task.id))
            })
            .collect();

        let mut sum = vec![0.0; d];
        let mut used = 0usize;
        let mut skipped = 0usize;
        let mut loss = 0.0;
        let (mut hvp_calls, mut grad_calls, mut peak) = (0, 0, 0);
        for res in results {
            match res {
                Ok(tg) => {
                    for (s, g) in sum.iter_mut().zip(&tg.grad) {
                        *s += g;
                    }
                    loss += tg.val_loss;
                    hvp_calls += tg.counters.hvp_calls;
                    grad_calls += tg.counters.grad_calls;
                    peak = peak.max(tg.counters.peak_state_floats);
                    used += 1;
                }
                Err(e) if cfg.skip_diverging => {
                    warn!("iteration {iter}: skipping task: {e}");
                    skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }

        let (grad_norm, update_norm) = if used > 0 {
            let scale = 1.0 / used as f64;
            sum.iter_mut().for_each(|s| *s *= scale);
            (norm(&sum), adam.step(&mut theta, &sum))
        } else {
            (0.0, 0.0)
        };
        let entry = IterLog {
            iter,
            mean_val_loss: if used > 0 {
                loss / used as f64
            } else {
                f64::NAN
            },
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            hvp_calls,
            peak_state_floats: peak,
            grad_calls,
            update_norm,
            skipped_tasks: skipped,
        };
        debug!(
            "iter {iter}: val {:.6e} |g| {:.3e} |dθ| {:.3e}",
            entry.mean_val_loss, grad_norm, update_norm
        );
        on_iter(&entry);
        log.push(entry);
        if used > 0 && update_norm < cfg.stop_tol {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        theta: ParamVector::new(theta)?,
        log,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meta::Algorithm;
    use crate::model::{Dataset, LinearModel};

    fn linear_task() -> (LinearModel, Task) {
        let model = LinearModel {
            input_dim: 1,
            output_dim: 1,
        };
        let xs: Vec<Vec<f64>> = [-1.0, -0.3, 0.4, 1.0].iter().map(|&x| vec![x]).collect();
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![2.0 * x[0] - 1.0]).collect();
        let data = Dataset::new(xs, ys).unwrap();
        (model, Task::new(0, data.clone(), data).unwrap())
    }

    fn cfg(iters: usize) -> MetaConfig {
        MetaConfig {
            batch_size: 1,
            max_meta_iters: iters,
            outer_lr: 0.05,
            horizon: 0.2,
            grid_step: 0.02,
            ..MetaConfig::default()
        }
    }

    #[test]
    fn zero_iterations_return_initial_theta() {
        let (model, task) = linear_task();
        let sampler = FixedTasks {
            tasks: vec![task],
            batch_size: 1,
        };
        let out = meta_train(&model, &sampler, &[0.3, -0.2], &cfg(0), |_| {}).unwrap();
        assert_eq!(&*out.theta, &[0.3, -0.2]);
        assert!(out.log.is_empty());
    }

    #[test]
    fn infinite_stop_tolerance_runs_once() {
        let (model, task) = linear_task();
        let sampler = FixedTasks {
            tasks: vec![task],
            batch_size: 1,
        };
        let c = MetaConfig {
            stop_tol: f64::INFINITY,
            ..cfg(100)
        };
        let out = meta_train(&model, &sampler, &[0.0, 0.0], &c, |_| {}).unwrap();
        assert_eq!(out.log.len(), 1);
        assert!(out.stopped_early);
    }

    #[test]
    fn single_quadratic_task_decreases_validation_loss() {
        let (model, task) = linear_task();
        let sampler = FixedTasks {
            tasks: vec![task],
            batch_size: 1,
        };
        let out = meta_train(&model, &sampler, &[0.0, 0.0], &cfg(50), |_| {}).unwrap();
        let losses: Vec<f64> = out.log.iter().map(|l| l.mean_val_loss).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
        assert!(losses[49] < 0.5 * losses[0]);
        assert!(out.log.iter().all(|l| l.hvp_calls == 20));
    }

    #[test]
    fn diverging_task_aborts_or_is_skipped() {
        let (model, task) = linear_task();
        let mut bad = task.clone();
        bad.id = 9;
        bad.horizon = Some(0.31);
        let sampler = FixedTasks {
            tasks: vec![task, bad],
            batch_size: 2,
        };
        let c = MetaConfig {
            batch_size: 2,
            ..cfg(3)
        };
        let err = meta_train(&model, &sampler, &[0.0, 0.0], &c, |_| {}).unwrap_err();
        assert!(err.to_string().contains("task 9"), "{err}");
        let c = MetaConfig {
            skip_diverging: true,
            ..c
        };
        let out = meta_train(&model, &sampler, &[0.0, 0.0], &c, |_| {}).unwrap();
        assert!(out.log.iter().all(|l| l.skipped_tasks == 1));
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let (model, task) = linear_task();
        let mut tasks = Vec::new();
        for i in 0..4 {
            let mut t = task.clone();
            t.id = i;
            t.horizon = Some(0.1 * (i + 1) as f64);
            tasks.push(t);
        }
        let sampler = FixedTasks {
            tasks,
            batch_size: 4,
        };
        let c = MetaConfig {
            batch_size: 4,
            algorithm: Algorithm::Amaml,
            ..cfg(10)
        };
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| meta_train(&model, &sampler, &[0.1, 0.2], &c, |_| {}).unwrap())
        };
        assert_eq!(run(1).theta, run(4).theta);
    }
}
