//! Meta-gradient estimators and the outer training loop.
//!
//! Every estimator is written against a pair of [`ScalarField`]s (train and
//! validation loss) so closed-form hooks and MLP tasks share one code path;
//! the `*_task_grad` wrappers bind a [`Task`] to a [`Learner`].

mod adam;
mod estimators;
mod train;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use estimators::{
    adjoint_grad, adjoint_grad_with, fomaml_grad, imaml_grad, reptile_grad, unrolled_grad,
};
pub use train::{meta_train, FixedTasks, IterLog, TaskSampler, TrainOutcome};

use crate::autodiff::ScalarField;
use crate::error::{Error, Result};
use crate::model::{Dataset, Learner, MseLoss};
use crate::odesolve::{Method, SolverConfig};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    /// Adjoint gradient through the gradient-flow ODE.
    #[default]
    Amaml,
    /// Exact backprop through `K` unrolled GD steps.
    Maml,
    Fomaml,
    Reptile,
    Imaml,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Amaml,
        Algorithm::Maml,
        Algorithm::Fomaml,
        Algorithm::Reptile,
        Algorithm::Imaml,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Amaml => "amaml",
            Algorithm::Maml => "maml",
            Algorithm::Fomaml => "fomaml",
            Algorithm::Reptile => "reptile",
            Algorithm::Imaml => "imaml",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown algorithm {s:?} (expected amaml|maml|fomaml|reptile|imaml)"
                ))
            })
    }
}

/// Hyperparameters of the inner and outer loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaConfig {
    /// GD step α of the discrete inner loops and of test-time adaptation.
    pub inner_step: f64,
    /// ADAM learning rate η.
    pub outer_lr: f64,
    pub batch_size: usize,
    /// G.
    pub max_meta_iters: usize,
    /// ξ; the loop stops once ‖Δθ‖₂ < ξ. Zero disables the rule.
    pub stop_tol: f64,
    /// ODE horizon T.
    pub horizon: f64,
    /// Grid step h for state tracking and the adjoint sweep.
    pub grid_step: f64,
    /// K, GD steps of the discrete baselines.
    pub inner_steps: usize,
    /// iMAML proximal strength λ.
    pub prox_strength: f64,
    pub cg_steps: usize,
    pub algorithm: Algorithm,
    pub solver: Method,
    pub rtol: f64,
    pub atol: f64,
    /// Drop a diverging task from its batch instead of aborting.
    pub skip_diverging: bool,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            inner_step: 0.01,
            outer_lr: 1e-3,
            batch_size: 5,
            max_meta_iters: 5000,
            stop_tol: 0.0,
            horizon: 2.0,
            grid_step: 0.01,
            inner_steps: 200,
            prox_strength: 1.0,
            cg_steps: 5,
            algorithm: Algorithm::Amaml,
            solver: Method::Rk45,
            rtol: 1e-6,
            atol: 1e-8,
            skip_diverging: false,
        }
    }
}

impl MetaConfig {
    /// Sets `T` and the matching discrete step count `K = T/α`.
    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self.inner_steps = (horizon / self.inner_step).round() as usize;
        self
    }

    pub fn solver_config(&self, horizon: f64) -> SolverConfig {
        SolverConfig {
            method: self.solver,
            rtol: self.rtol,
            atol: self.atol,
            grid_step: self.grid_step,
            horizon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("inner_step", self.inner_step),
            ("outer_lr", self.outer_lr),
            ("horizon", self.horizon),
            ("grid_step", self.grid_step),
            ("prox_strength", self.prox_strength),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.stop_tol.is_nan() || self.stop_tol < 0.0 {
            return Err(Error::config("stop_tol must be non-negative"));
        }
        match self.algorithm {
            Algorithm::Amaml => self.solver_config(self.horizon).validate()?,
            Algorithm::Imaml if self.cg_steps == 0 => {
                return Err(Error::config("cg_steps must be positive"))
            }
            _ if self.inner_steps == 0 => {
                return Err(Error::config("inner_steps must be at least 1"))
            }
            _ => {}
        }
        Ok(())
    }
}

/// One sampled task: disjoint meta-train and meta-validation sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: u64,
    pub train: Dataset,
    pub val: Dataset,
    /// Per-task horizon overriding [`MetaConfig::horizon`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
}

impl Task {
    pub fn new(id: u64, train: Dataset, val: Dataset) -> Result<Self> {
        if train.input_dim() != val.input_dim() || train.output_dim() != val.output_dim() {
            return Err(Error::Dataset(format!(
                "task {id}: train and val dims differ"
            )));
        }
        Ok(Task {
            id,
            train,
            val,
            horizon: None,
        })
    }
}

/// Work accounting of one per-task gradient.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub grad_calls: usize,
    pub hvp_calls: usize,
    /// Accepted forward solver steps (A-MAML) or GD steps (discrete).
    pub forward_steps: usize,
    /// Peak floats held in trajectory storage and length-`d` work vectors.
    pub peak_state_floats: usize,
}

/// Per-task meta-gradient with the validation loss at the adapted
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradient {
    pub grad: Vec<f64>,
    pub val_loss: f64,
    pub counters: Counters,
}

pub type AdjointResult = TaskGradient;

/// Dispatches on `cfg.algorithm` over a pair of loss fields.
pub fn estimate<F: ScalarField, G: ScalarField>(
    train: &F,
    val: &G,
    theta: &[f64],
    cfg: &MetaConfig,
    horizon: f64,
) -> Result<TaskGradient> {
    let (alpha, k) = (cfg.inner_step, cfg.inner_steps);
    match cfg.algorithm {
        Algorithm::Amaml => adjoint_grad(train, val, theta, &cfg.solver_config(horizon)),
        Algorithm::Maml => unrolled_grad(train, val, theta, alpha, k),
        Algorithm::Fomaml => fomaml_grad(train, val, theta, alpha, k),
        Algorithm::Reptile => reptile_grad(train, val, theta, alpha, k),
        Algorithm::Imaml => {
            imaml_grad(train, val, theta, alpha, k, cfg.prox_strength, cfg.cg_steps)
        }
    }
}

/// Meta-gradient of one task under `cfg.algorithm`, tagged with the task id
/// on failure.
pub fn task_grad<M: Learner>(
    model: &M,
    task: &Task,
    theta: &[f64],
    cfg: &MetaConfig,
) -> Result<TaskGradient> {
    let run = || {
        let train = MseLoss::new(model, &task.train)?;
        let val = MseLoss::new(model, &task.val)?;
        estimate(
            &train,
            &val,
            theta,
            cfg,
            task.horizon.unwrap_or(cfg.horizon),
        )
    };
    run().map_err(|e| e.for_task(task.id))
}

fn with_algorithm(cfg: &MetaConfig, algorithm: Algorithm) -> MetaConfig {
    MetaConfig {
        algorithm,
        ..cfg.clone()
    }
}

pub fn adjoint_task_grad<M: Learner>(
    model: &M,
    task: &Task,
    theta: &[f64],
    cfg: &MetaConfig,
) -> Result<AdjointResult> {
    task_grad(model, task, theta, &with_algorithm(cfg, Algorithm::Amaml))
}

pub fn unrolled_maml_grad<M: Learner>(
    model: &M,
    task: &Task,
    theta: &[f64],
    cfg: &MetaConfig,
) -> Result<TaskGradient> {
    task_grad(model, task, theta, &with_algorithm(cfg, Algorithm::Maml))
}

pub fn fomaml_task_grad<M: Learner>(
    model: &M,
    task: &Task,
    theta: &[f64],
    cfg: &MetaConfig,
) -> Result<TaskGradient> {
    task_grad(model, task, theta, &with_algorithm(cfg, Algorithm::Fomaml))
}

pub fn reptile_task_grad<M: Learner>(
    model: &M,
    task: &Task,
    theta: &[f64],
    cfg: &MetaConfig,
) -> Result<TaskGradient> {
    task_grad(model, task, theta, &with_algorithm(cfg, Algorithm::Reptile))
}

pub fn imaml_task_grad<M: Learner>(
    model: &M,
    task: &Task,
    theta: &[f64],
    cfg: &MetaConfig,
) -> Result<TaskGradient> {
    task_grad(model, task, theta, &with_algorithm(cfg, Algorithm::Imaml))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_settings() {
        let cfg = MetaConfig::default();
        assert_eq!(cfg.inner_step, 0.01);
        assert_eq!(cfg.outer_lr, 1e-3);
        assert_eq!(cfg.batch_size, 5);
        assert_eq!(cfg.max_meta_iters, 5000);
        assert_eq!(cfg.prox_strength, 1.0);
        assert_eq!(cfg.cg_steps, 5);
        assert_eq!(cfg.with_horizon(2.0).inner_steps, 200);
        assert_eq!(MetaConfig::default().with_horizon(5.0).inner_steps, 500);
        MetaConfig::default().validate().unwrap();
    }

    #[test]
    fn algorithm_round_trips_through_text() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("sgd".parse::<Algorithm>().is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = MetaConfig {
            grid_step: 0.3,
            horizon: 1.0,
            ..MetaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MetaConfig {
            algorithm: Algorithm::Fomaml,
            inner_steps: 0,
            ..MetaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = MetaConfig {
            outer_lr: -1.0,
            ..MetaConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
