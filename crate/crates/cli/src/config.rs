//! Experiment configuration, presets and workload construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use amaml_core::meta::{Algorithm, MetaConfig, Task, TaskSampler};
use amaml_core::metrics::{CurveOptions, Normalizer};
use amaml_core::model::MlpSpec;
use amaml_core::tasks::{
    load_jester, load_movielens, synthetic_test_tasks, CfCatalogue, CfSampler, Family,
    SyntheticSampler,
};
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    CosMixture,
    Alpine,
    MovieLens,
    Jester,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    pub family: TaskKind,
    pub n_shot: usize,
    pub n_val: usize,
    /// Held-out evaluation points per synthetic test task; defaults to
    /// `n_val`. Rating tasks evaluate on all remaining ratings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_eval: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default = "default_top_items")]
    pub top_items: usize,
    #[serde(default = "default_min_ratings")]
    pub min_ratings: usize,
}

fn default_top_items() -> usize {
    100
}

fn default_min_ratings() -> usize {
    20
}

impl TaskConfig {
    pub fn synthetic(family: TaskKind, n_shot: usize, n_val: usize) -> Self {
        TaskConfig {
            family,
            n_shot,
            n_val,
            n_eval: None,
            path: None,
            top_items: default_top_items(),
            min_ratings: default_min_ratings(),
        }
    }

    pub fn synthetic_family(&self) -> Option<Family> {
        match self.family {
            TaskKind::CosMixture => Some(Family::CosMixture),
            TaskKind::Alpine => Some(Family::Alpine),
            TaskKind::MovieLens | TaskKind::Jester => None,
        }
    }
}

/// Small-model settings of the `grad-check` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub hidden_layers: Vec<usize>,
    pub n_shot: usize,
    pub n_val: usize,
    pub horizon: f64,
    pub grid_step: f64,
    /// Grid steps of the adjoint-vs-unrolled refinement study.
    pub halving_steps: Vec<f64>,
    pub hvp_instances: usize,
    pub min_cosine: f64,
    pub max_rel_error: f64,
    pub max_hvp_rel_error: f64,
    /// Upper bound on `err(h/2) / err(h)`.
    pub max_halving_ratio: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            hidden_layers: vec![8, 8],
            n_shot: 10,
            n_val: 10,
            horizon: 0.2,
            grid_step: 0.01,
            halving_steps: vec![0.02, 0.01, 0.005],
            hvp_instances: 20,
            min_cosine: 0.999,
            max_rel_error: 1e-2,
            max_hvp_rel_error: 1e-5,
            max_halving_ratio: 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub horizons: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    /// Outer updates timed per row.
    pub meta_iters: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            horizons: vec![0.5, 1.0, 2.0, 5.0],
            algorithms: Algorithm::ALL.to_vec(),
            meta_iters: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default)]
    pub meta: MetaConfig,
    /// Inner steps for unrolled MAML when it should run fewer than the
    /// other discrete baselines.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub maml_inner_steps: Option<usize>,
    #[serde(default = "default_test_tasks")]
    pub test_tasks: usize,
    #[serde(default = "default_epochs")]
    pub epochs_max: usize,
    #[serde(default = "default_checkpoint")]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub normalizer: Normalizer,
    #[serde(default)]
    pub seed: u64,
    /// Training progress is logged every this many outer updates.
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub grad_check: GradCheckConfig,
    #[serde(default)]
    pub bench: BenchConfig,
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_test_tasks() -> usize {
    100
}

fn default_epochs() -> usize {
    100
}

fn default_checkpoint() -> usize {
    10
}

fn default_log_every() -> usize {
    100
}

pub const PRESETS: [&str; 10] = [
    "cosmixture-50-50",
    "cosmixture-100-100",
    "alpine-50-50",
    "alpine-100-100",
    "movielens-15-20",
    "movielens-20-30",
    "movielens-10-15",
    "jester-15-20",
    "jester-20-30",
    "jester-10-15",
];

impl ExperimentConfig {
    pub fn new(task: TaskConfig) -> Self {
        ExperimentConfig {
            task,
            hidden_layers: default_hidden(),
            meta: MetaConfig::default(),
            maml_inner_steps: None,
            test_tasks: default_test_tasks(),
            epochs_max: default_epochs(),
            checkpoint_every: default_checkpoint(),
            normalizer: Normalizer::default(),
            seed: 0,
            log_every: default_log_every(),
            grad_check: GradCheckConfig::default(),
            bench: BenchConfig::default(),
        }
    }

    /// Named settings of the reference experiments. Synthetic presets use a
    /// 32-32 network with `T = 2` (50 shots) or `T = 5` (100 shots); rating
    /// presets use a 40-40 network with `T = 0.5` and expect the data file
    /// under `data/`.
    pub fn preset(name: &str) -> Result<Self> {
        let parts: Vec<&str> = name.split('-').collect();
        let [kind, shot, val] = parts[..] else {
            bail!(
                "unknown preset {name:?}; expected one of {}",
                PRESETS.join(", ")
            );
        };
        ensure!(
            PRESETS.contains(&name),
            "unknown preset {name:?}; expected one of {}",
            PRESETS.join(", ")
        );
        let n_shot: usize = shot.parse()?;
        let n_val: usize = val.parse()?;
        let synthetic = |family| {
            let horizon = if n_shot >= 100 { 5.0 } else { 2.0 };
            let mut cfg = ExperimentConfig::new(TaskConfig::synthetic(family, n_shot, n_val));
            cfg.meta = MetaConfig::default().with_horizon(horizon);
            cfg.maml_inner_steps = Some(cfg.meta.inner_steps / 10);
            cfg
        };
        let rating = |family, path: &str| {
            let mut task = TaskConfig::synthetic(family, n_shot, n_val);
            task.path = Some(PathBuf::from(path));
            let mut cfg = ExperimentConfig::new(task);
            cfg.hidden_layers = vec![40, 40];
            cfg.meta = MetaConfig::default().with_horizon(0.5);
            cfg.maml_inner_steps = Some(cfg.meta.inner_steps / 10);
            cfg
        };
        Ok(match kind {
            "cosmixture" => synthetic(TaskKind::CosMixture),
            "alpine" => synthetic(TaskKind::Alpine),
            "movielens" => rating(TaskKind::MovieLens, "data/ml-100k/u.data"),
            _ => rating(TaskKind::Jester, "data/jester-data-1.csv"),
        })
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Meta config as run for `algorithm`, with the MAML step override.
    pub fn meta_for(&self, algorithm: Algorithm) -> MetaConfig {
        let mut meta = MetaConfig {
            algorithm,
            ..self.meta.clone()
        };
        if let (Algorithm::Maml, Some(k)) = (algorithm, self.maml_inner_steps) {
            meta.inner_steps = k;
        }
        meta
    }

    pub fn curve_options(&self) -> CurveOptions {
        CurveOptions {
            checkpoint_every: self.checkpoint_every,
            normalizer: self.normalizer,
        }
    }

    /// Checks every precondition that does not need the data files.
    pub fn validate(&self) -> Result<()> {
        let t = &self.task;
        ensure!(
            t.n_shot >= 1 && t.n_val >= 1,
            "n_shot and n_val must be at least 1"
        );
        ensure!(t.n_eval != Some(0), "n_eval must be at least 1");
        match t.family {
            TaskKind::MovieLens | TaskKind::Jester => {
                ensure!(t.path.is_some(), "{:?} tasks need a data `path`", t.family);
                ensure!(t.top_items >= 1, "top_items must be positive");
            }
            TaskKind::CosMixture | TaskKind::Alpine => {}
        }
        ensure!(
            !self.hidden_layers.is_empty(),
            "at least one hidden layer is required"
        );
        ensure!(
            self.hidden_layers.iter().all(|&w| w > 0),
            "hidden widths must be positive"
        );
        ensure!(
            self.checkpoint_every >= 1,
            "checkpoint_every must be positive"
        );
        self.meta_for(self.meta.algorithm)
            .validate()
            .context("invalid meta config")?;
        if let Some(k) = self.maml_inner_steps {
            ensure!(k >= 1, "maml_inner_steps must be at least 1");
        }
        let g = &self.grad_check;
        ensure!(
            !g.hidden_layers.is_empty(),
            "grad_check needs a hidden layer"
        );
        ensure!(
            g.halving_steps.len() >= 2,
            "grad_check needs two or more halving steps"
        );
        ensure!(
            g.n_shot >= 1 && g.n_val >= 1 && g.horizon > 0.0 && g.grid_step > 0.0,
            "grad_check sizes and steps must be positive"
        );
        ensure!(
            self.bench
                .horizons
                .iter()
                .all(|&h| h.is_finite() && h > 0.0),
            "bench horizons must be positive"
        );
        Ok(())
    }
}

/// Loaded task source: samplers for meta-training and the fixed held-out
/// tasks for meta-testing.
pub enum Workload {
    Synthetic {
        family: Family,
        n_shot: usize,
        n_val: usize,
        n_eval: usize,
    },
    Ratings {
        train: Arc<CfCatalogue>,
        test: Vec<Task>,
        n_shot: usize,
        n_val: usize,
    },
}

impl Workload {
    /// Loads data files. Rating catalogues are split into meta-training
    /// users and `cfg.test_tasks` held-out users.
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let t = &cfg.task;
        if let Some(family) = t.synthetic_family() {
            return Ok(Workload::Synthetic {
                family,
                n_shot: t.n_shot,
                n_val: t.n_val,
                n_eval: t.n_eval.unwrap_or(t.n_val),
            });
        }
        let path = t.path.as_deref().expect("validated");
        let catalogue = match t.family {
            TaskKind::MovieLens => load_movielens(path, t.top_items, t.min_ratings)?,
            _ => load_jester(path)?,
        };
        log::info!(
            "{}: {} users over {} items",
            path.display(),
            catalogue.len(),
            catalogue.item_count()
        );
        let (train, test) = catalogue.holdout(cfg.test_tasks, t.n_shot, cfg.seed)?;
        Ok(Workload::Ratings {
            train: Arc::new(train),
            test,
            n_shot: t.n_shot,
            n_val: t.n_val,
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Workload::Synthetic { .. } => 2,
            Workload::Ratings { train, .. } => train.item_count(),
        }
    }

    pub fn sampler(&self, seed: u64, batch_size: usize) -> Result<AnySampler> {
        Ok(match self {
            Workload::Synthetic {
                family,
                n_shot,
                n_val,
                ..
            } => AnySampler::Synthetic(SyntheticSampler {
                family: *family,
                n_shot: *n_shot,
                n_val: *n_val,
                seed,
                batch_size,
            }),
            Workload::Ratings {
                train,
                n_shot,
                n_val,
                ..
            } => AnySampler::Ratings(CfSampler::new(train.clone(), *n_shot, *n_val, seed)?),
        })
    }

    pub fn test_tasks(&self, count: usize, seed: u64) -> Result<Vec<Task>> {
        ensure!(count >= 1, "meta-test needs at least one test task");
        Ok(match self {
            Workload::Synthetic {
                family,
                n_shot,
                n_eval,
                ..
            } => synthetic_test_tasks(*family, count, *n_shot, *n_eval, seed)?,
            Workload::Ratings { test, .. } => test.clone(),
        })
    }
}

pub enum AnySampler {
    Synthetic(SyntheticSampler),
    Ratings(CfSampler),
}

impl TaskSampler for AnySampler {
    fn sample(&self, iter: usize, slot: usize) -> amaml_core::Result<Task> {
        match self {
            AnySampler::Synthetic(s) => s.sample(iter, slot),
            AnySampler::Ratings(s) => s.sample(iter, slot),
        }
    }
}

/// Network for the configured workload; the init seed is the master seed.
pub fn mlp_spec(cfg: &ExperimentConfig, input_dim: usize) -> Result<MlpSpec> {
    let mut sizes = vec![input_dim];
    sizes.extend(&cfg.hidden_layers);
    sizes.push(1);
    Ok(MlpSpec::new(sizes, cfg.seed)?)
}
