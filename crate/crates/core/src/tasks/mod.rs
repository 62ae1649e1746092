//! Task distributions: two synthetic 2-D regression families and per-user
//! collaborative-filtering tasks.

mod cf;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use cf::{
    build_cf_task, build_cf_test_task, load_jester, load_movielens, parse_jester, parse_movielens,
    CfCatalogue, CfSampler, CfUser,
};

use crate::error::{Error, Result};
use crate::meta::{Task, TaskSampler};
use crate::model::Dataset;
use crate::rng::{self, TEST_STREAM, TRAIN_STREAM};

/// `f(x) = −0.1·Σᵢ A·cos(ω·xᵢ + φ) − Σᵢ xᵢ²` on `[−1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosMixtureParams {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

impl CosMixtureParams {
    pub const AMPLITUDE: (f64, f64) = (0.1, 1.0);
    pub const FREQUENCY: (f64, f64) = (0.5 * PI, 2.0 * PI);
    pub const PHASE: (f64, f64) = (3.0, 6.0);
    pub const DOMAIN: (f64, f64) = (-1.0, 1.0);

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        CosMixtureParams {
            amplitude: uniform(rng, Self::AMPLITUDE),
            frequency: uniform(rng, Self::FREQUENCY),
            phase: uniform(rng, Self::PHASE),
        }
    }

    pub fn in_range(&self) -> bool {
        within(self.amplitude, Self::AMPLITUDE)
            && within(self.frequency, Self::FREQUENCY)
            && within(self.phase, Self::PHASE)
    }
}

pub fn cosmixture_value(p: &CosMixtureParams, x: &[f64; 2]) -> f64 {
    let waves: f64 = x
        .iter()
        .map(|&xi| p.amplitude * (p.frequency * xi + p.phase).cos())
        .sum();
    let bowl: f64 = x.iter().map(|&xi| xi * xi).sum();
    -0.1 * waves - bowl
}

/// `f(x) = Σᵢ |xᵢ·sin(xᵢ + φᵢ) + 0.1·xᵢ|` on `[−10, 10]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlpineParams {
    pub phase: [f64; 2],
}

impl AlpineParams {
    pub const PHASE: (f64, f64) = (-5.0 * PI / 12.0, 5.0 * PI / 12.0);
    pub const DOMAIN: (f64, f64) = (-10.0, 10.0);

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        AlpineParams {
            phase: [uniform(rng, Self::PHASE), uniform(rng, Self::PHASE)],
        }
    }

    pub fn in_range(&self) -> bool {
        self.phase.iter().all(|&p| within(p, Self::PHASE))
    }
}

pub fn alpine_value(p: &AlpineParams, x: &[f64; 2]) -> f64 {
    x.iter()
        .zip(&p.phase)
        .map(|(&xi, &phi)| (xi * (xi + phi).sin() + 0.1 * xi).abs())
        .sum()
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    rng.gen_range(lo..=hi)
}

fn within(v: f64, (lo, hi): (f64, f64)) -> bool {
    (lo..=hi).contains(&v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    CosMixture,
    Alpine,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::CosMixture => "cosmixture",
            Family::Alpine => "alpine",
        }
    }

    pub fn domain(self) -> (f64, f64) {
        match self {
            Family::CosMixture => CosMixtureParams::DOMAIN,
            Family::Alpine => AlpineParams::DOMAIN,
        }
    }

    pub fn sample_function<R: Rng + ?Sized>(self, rng: &mut R) -> TaskFunction {
        match self {
            Family::CosMixture => TaskFunction::CosMixture(CosMixtureParams::sample(rng)),
            Family::Alpine => TaskFunction::Alpine(AlpineParams::sample(rng)),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosmixture" => Ok(Family::CosMixture),
            "alpine" => Ok(Family::Alpine),
            _ => Err(Error::config(format!("unknown task family {s:?}"))),
        }
    }
}

/// One drawn member of a synthetic family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TaskFunction {
    CosMixture(CosMixtureParams),
    Alpine(AlpineParams),
}

impl TaskFunction {
    pub fn family(&self) -> Family {
        match self {
            TaskFunction::CosMixture(_) => Family::CosMixture,
            TaskFunction::Alpine(_) => Family::Alpine,
        }
    }

    pub fn value(&self, x: &[f64; 2]) -> f64 {
        match self {
            TaskFunction::CosMixture(p) => cosmixture_value(p, x),
            TaskFunction::Alpine(p) => alpine_value(p, x),
        }
    }
}

/// Draws function parameters, then `n_shot + n_val` inputs uniformly on the
/// domain; the first `n_shot` form the train set. Targets are exact function
/// values. The returned task has id 0.
pub fn sample_synthetic_task<R: Rng + ?Sized>(
    family: Family,
    rng: &mut R,
    n_shot: usize,
    n_val: usize,
) -> Result<Task> {
    sample_synthetic_task_with(family, rng, n_shot, n_val).map(|(task, _)| task)
}

/// [`sample_synthetic_task`] that also returns the drawn function.
pub fn sample_synthetic_task_with<R: Rng + ?Sized>(
    family: Family,
    rng: &mut R,
    n_shot: usize,
    n_val: usize,
) -> Result<(Task, TaskFunction)> {
    if n_shot == 0 || n_val == 0 {
        return Err(Error::config("n_shot and n_val must be at least 1"));
    }
    let f = family.sample_function(rng);
    let domain = family.domain();
    let mut draw = |n: usize| {
        let mut xs = Vec::with_capacity(2 * n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = [uniform(rng, domain), uniform(rng, domain)];
            xs.extend_from_slice(&x);
            ys.push(f.value(&x));
        }
        Dataset::from_flat(xs, ys, 2, 1)
    };
    let train = draw(n_shot)?;
    let val = draw(n_val)?;
    Ok((Task::new(0, train, val)?, f))
}

/// Fresh synthetic tasks for meta-training; task `(iter, slot)` is drawn
/// from its own seed-derived stream.
#[derive(Debug, Clone)]
pub struct SyntheticSampler {
    pub family: Family,
    pub n_shot: usize,
    pub n_val: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl TaskSampler for SyntheticSampler {
    fn sample(&self, iter: usize, slot: usize) -> Result<Task> {
        let mut rng = rng::stream(self.seed, &[TRAIN_STREAM, iter as u64, slot as u64]);
        let mut task = sample_synthetic_task(self.family, &mut rng, self.n_shot, self.n_val)?;
        task.id = (iter * self.batch_size + slot) as u64;
        Ok(task)
    }
}

/// `count` held-out tasks: `n_shot` adaptation points and `n_eval`
/// evaluation points each, from streams disjoint from meta-training.
pub fn synthetic_test_tasks(
    family: Family,
    count: usize,
    n_shot: usize,
    n_eval: usize,
    seed: u64,
) -> Result<Vec<Task>> {
    (0..count)
        .map(|i| {
            let mut rng = rng::stream(seed, &[TEST_STREAM, i as u64]);
            let mut task = sample_synthetic_task(family, &mut rng, n_shot, n_eval)?;
            task.id = i as u64;
            Ok(task)
        })
        .collect()
}
