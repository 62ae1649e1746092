//! Test-time evaluation and resource accounting.

use std::io::Write;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff;
use crate::error::{check_dim, Error, Result};
use crate::meta::{IterLog, Task};
use crate::model::{Dataset, Learner, MseLoss};

/// Scale that divides the RMSE.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// Mean of `|truth|`.
    #[default]
    MeanAbs,
    /// Population standard deviation of `truth`.
    Std,
}

impl Normalizer {
    pub fn of(self, truth: &[f64]) -> f64 {
        let n = truth.len() as f64;
        match self {
            Normalizer::MeanAbs => truth.iter().map(|t| t.abs()).sum::<f64>() / n,
            Normalizer::Std => population_std(truth),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// `RMSE(pred, truth) / normalizer(truth)`.
pub fn nrmse(pred: &[f64], truth: &[f64], normalizer: Normalizer) -> Result<f64> {
    check_dim("nrmse", truth.len(), pred.len())?;
    if truth.is_empty() {
        return Err(Error::Dataset("nrmse of zero points".into()));
    }
    let scale = normalizer.of(truth);
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::DegenerateTarget);
    }
    let mse = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / truth.len() as f64;
    Ok(mse.sqrt() / scale)
}

/// Mean and spread of test nRMSE along GD adaptation from one
/// initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationCurve {
    pub algorithm: String,
    pub epochs: Vec<usize>,
    pub nrmse_mean: Vec<f64>,
    pub nrmse_std: Vec<f64>,
    /// Tasks dropped because adaptation diverged.
    pub excluded_tasks: usize,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl AdaptationCurve {
    /// Mean nRMSE at `epoch`, if it is a checkpoint.
    pub fn mean_at(&self, epoch: usize) -> Option<f64> {
        self.epochs
            .iter()
            .position(|&e| e == epoch)
            .map(|k| self.nrmse_mean[k])
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,mean,std")?;
        for ((e, m), s) in self
            .epochs
            .iter()
            .zip(&self.nrmse_mean)
            .zip(&self.nrmse_std)
        {
            writeln!(out, "{e},{m},{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveOptions {
    pub checkpoint_every: usize,
    pub normalizer: Normalizer,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            checkpoint_every: 10,
            normalizer: Normalizer::MeanAbs,
        }
    }
}

/// Checkpoints `0, every, 2·every, ..` plus `epochs_max` itself.
pub fn checkpoints(epochs_max: usize, every: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=epochs_max).step_by(every.max(1)).collect();
    if out.last() != Some(&epochs_max) {
        out.push(epochs_max);
    }
    out
}

fn predictions<M: Learner>(model: &M, u: &[f64], data: &Dataset) -> Vec<f64> {
    (0..data.len())
        .flat_map(|i| model.forward::<f64>(u, data.input(i)))
        .collect()
}

/// nRMSE on `task.val` at each checkpoint of full-batch GD on `task.train`
/// from `theta`. `None` if adaptation diverged.
pub fn adapt_task<M: Learner>(
    model: &M,
    theta: &[f64],
    task: &Task,
    epochs: &[usize],
    alpha: f64,
    normalizer: Normalizer,
) -> Result<Option<Vec<f64>>> {
    check_dim("initialization", model.param_count(), theta.len())?;
    let loss = MseLoss::new(model, &task.train)?;
    MseLoss::new(model, &task.val)?;
    let truth = task.val.targets();
    let mut u = theta.to_vec();
    let mut done = 0;
    let mut out = Vec::with_capacity(epochs.len());
    for &target in epochs {
        while done < target {
            let g = match autodiff::grad(&loss, &u) {
                Ok(g) => g,
                Err(Error::NonFinite { .. }) => return Ok(None),
                Err(e) => return Err(e),
            };
            for (ui, gi) in u.iter_mut().zip(g.iter()) {
                *ui -= alpha * gi;
            }
            done += 1;
        }
        let e = nrmse(&predictions(model, &u, &task.val), truth, normalizer)?;
        if !e.is_finite() {
            return Ok(None);
        }
        out.push(e);
    }
    Ok(Some(out))
}

/// Adapts every task in parallel and aggregates in task order. Diverging
/// tasks are excluded from the statistics and counted.
pub fn adaptation_curve<M: Learner>(
    model: &M,
    theta: &[f64],
    tasks: &[Task],
    epochs_max: usize,
    alpha: f64,
    opts: &CurveOptions,
) -> Result<AdaptationCurve> {
    if tasks.is_empty() {
        return Err(Error::config(
            "adaptation curve needs at least one test task",
        ));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::config(format!(
            "adaptation step must be positive, got {alpha}"
        )));
    }
    let epochs = checkpoints(epochs_max, opts.checkpoint_every);
    let per_task: Vec<Option<Vec<f64>>> = tasks
        .par_iter()
        .map(|t| {
            adapt_task(model, theta, t, &epochs, alpha, opts.normalizer)
                .map_err(|e| e.for_task(t.id))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<&Vec<f64>> = per_task.iter().flatten().collect();
    let excluded = tasks.len() - kept.len();
    if excluded > 0 {
        warn!(
            "{excluded} of {} test tasks diverged and were excluded",
            tasks.len()
        );
    }
    let column = |k: usize| kept.iter().map(|c| c[k]).collect::<Vec<f64>>();
    let (nrmse_mean, nrmse_std) = (0..epochs.len())
        .map(|k| {
            if kept.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let col = column(k);
                (mean(&col), population_std(&col))
            }
        })
        .unzip();
    Ok(AdaptationCurve {
        algorithm: String::new(),
        epochs,
        nrmse_mean,
        nrmse_std,
        excluded_tasks: excluded,
        config: serde_json::Value::Null,
    })
}

/// Per-outer-update resource use of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceSummary {
    pub algorithm: String,
    pub updates: usize,
    pub hvp_calls_per_update: f64,
    pub grad_calls_per_update: f64,
    pub peak_state_floats: usize,
    pub wall_ms_per_update: f64,
}

impl ResourceSummary {
    pub const CSV_HEADER: &'static str =
        "algorithm,updates,hvp_calls_per_update,grad_calls_per_update,peak_state_floats,wall_ms_per_update";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3}",
            self.algorithm,
            self.updates,
            self.hvp_calls_per_update,
            self.grad_calls_per_update,
            self.peak_state_floats,
            self.wall_ms_per_update
        )
    }
}

pub fn resource_report(algorithm: &str, log: &[IterLog]) -> ResourceSummary {
    let n = log.len().max(1) as f64;
    ResourceSummary {
        algorithm: algorithm.to_string(),
        updates: log.len(),
        hvp_calls_per_update: log.iter().map(|l| l.hvp_calls as f64).sum::<f64>() / n,
        grad_calls_per_update: log.iter().map(|l| l.grad_calls as f64).sum::<f64>() / n,
        peak_state_floats: log.iter().map(|l| l.peak_state_floats).max().unwrap_or(0),
        wall_ms_per_update: log.iter().map(|l| l.wall_ms).sum::<f64>() / n,
    }
}
