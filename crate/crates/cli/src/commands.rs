//! Subcommand bodies. Each validates its config before any compute and
//! writes the resolved config next to its outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use amaml_core::autodiff::fd::{cosine_similarity, fd_grad_of, fd_hvp, rel_l2_error};
use amaml_core::autodiff::{self, hvp};
use amaml_core::meta::{adjoint_grad, adjoint_grad_with, meta_train, unrolled_grad, Algorithm};
use amaml_core::metrics::{adaptation_curve, resource_report, AdaptationCurve};
use amaml_core::model::{init_params, MlpSpec, MseLoss};
use amaml_core::odesolve::{solve_forward, GradientFlow, Method, SolverConfig};
use amaml_core::rng;
use amaml_core::tasks::{sample_synthetic_task, Family};
use anyhow::{ensure, Context, Result};
use log::info;
use rand::Rng;
use serde::Serialize;

use crate::config::{mlp_spec, ExperimentConfig, Workload};
use crate::theta_file::{self, ThetaMeta};

/// Stream tag of the gradient-check task and probes.
const GRAD_CHECK_STREAM: u64 = 0x6772_6164_0000_0000;

pub const CONFIG_FILE: &str = "config.json";
pub const THETA_FILE: &str = "theta.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(CONFIG_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(cfg)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub theta_path: PathBuf,
    pub iterations: usize,
    pub stopped_early: bool,
    pub final_val_loss: Option<f64>,
}

/// Meta-trains from the seeded default initialization and writes
/// `theta.bin`, its sidecar, the JSON-lines log and a resource summary.
pub fn meta_train_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    cfg.validate()?;
    let workload = Workload::load(cfg)?;
    let spec = mlp_spec(cfg, workload.input_dim())?;
    let meta = cfg.meta_for(cfg.meta.algorithm);
    let sampler = workload.sampler(cfg.seed, meta.batch_size)?;
    prepare_out(cfg, out)?;

    let theta0 = init_params(&spec)?;
    info!(
        "meta-training {} on {:?}: d = {}, {} iterations",
        meta.algorithm,
        cfg.task.family,
        spec.param_count(),
        meta.max_meta_iters
    );
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log_out = BufWriter::new(File::create(&log_path)?);
    let mut write_err = None;
    let outcome = meta_train(&spec, &sampler, &theta0, &meta, |entry| {
        if let Err(e) = serde_json::to_writer(&mut log_out, entry)
            .map_err(anyhow::Error::from)
            .and_then(|_| writeln!(log_out).map_err(Into::into))
        {
            write_err.get_or_insert(e);
        }
        if cfg.log_every > 0 && (entry.iter + 1) % cfg.log_every == 0 {
            info!(
                "iter {:>6}: val loss {:.6e}, |g| {:.3e}",
                entry.iter + 1,
                entry.mean_val_loss,
                entry.grad_norm
            );
        }
    })
    .context("meta-training failed")?;
    if let Some(e) = write_err {
        return Err(e.context(format!("writing {}", log_path.display())));
    }
    log_out.flush()?;

    let theta_path = out.join(THETA_FILE);
    theta_file::write(
        &theta_path,
        &outcome.theta,
        &ThetaMeta {
            d: spec.param_count(),
            spec_hash: spec.spec_hash(),
            seed: cfg.seed,
            layer_sizes: spec.layer_sizes.clone(),
            algorithm: meta.algorithm.name().into(),
            meta_iters: outcome.log.len(),
        },
    )?;
    let report = resource_report(meta.algorithm.name(), &outcome.log);
    std::fs::write(
        out.join("resources.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(TrainSummary {
        theta_path,
        iterations: outcome.log.len(),
        stopped_early: outcome.stopped_early,
        final_val_loss: outcome.log.last().map(|l| l.mean_val_loss),
    })
}

/// Adaptation curves of the trained initialization and of the seeded
/// random initialization on the same held-out tasks.
pub fn meta_test_cmd(
    cfg: &ExperimentConfig,
    theta_path: &Path,
    out: &Path,
) -> Result<(AdaptationCurve, AdaptationCurve)> {
    cfg.validate()?;
    ensure!(
        cfg.test_tasks >= 1,
        "meta-test needs at least one test task"
    );
    let workload = Workload::load(cfg)?;
    let spec = mlp_spec(cfg, workload.input_dim())?;
    let (theta, meta) = theta_file::read(theta_path)?;
    theta_file::check_compatible(&meta, &spec)?;
    let tasks = workload.test_tasks(cfg.test_tasks, cfg.seed)?;
    prepare_out(cfg, out)?;

    let alpha = cfg.meta.inner_step;
    let opts = cfg.curve_options();
    let snapshot = serde_json::to_value(cfg)?;
    let mut trained = adaptation_curve(&spec, &theta, &tasks, cfg.epochs_max, alpha, &opts)?;
    trained.algorithm = meta.algorithm.clone();
    trained.config = snapshot.clone();
    let init = init_params(&spec)?;
    let mut random = adaptation_curve(&spec, &init, &tasks, cfg.epochs_max, alpha, &opts)?;
    random.algorithm = "random_init".into();
    random.config = snapshot;

    trained.write_csv(BufWriter::new(File::create(out.join("curve.csv"))?))?;
    random.write_csv(BufWriter::new(File::create(out.join("curve_random.csv"))?))?;
    std::fs::write(
        out.join("curves.json"),
        serde_json::to_string_pretty(&[&trained, &random])? + "\n",
    )?;
    Ok((trained, random))
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub param_count: usize,
    pub checks: Vec<CheckResult>,
    /// `err(h)` of adjoint vs unrolled per halving level.
    pub halving_errors: Vec<(f64, f64)>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Verifies the adjoint estimator on a small network: against finite
/// differences of the whole forward pipeline, against unrolled GD under
/// step refinement, and its HVP kernel against finite differences.
/// `corrupt_adjoint_sign` flips the backward dynamics so the suite must
/// fail.
pub fn grad_check_cmd(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    corrupt_adjoint_sign: bool,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    let g = &cfg.grad_check;
    let family = cfg.task.synthetic_family().unwrap_or(Family::CosMixture);
    let mut sizes = vec![2];
    sizes.extend(&g.hidden_layers);
    sizes.push(1);
    let spec = MlpSpec::new(sizes, cfg.seed)?;
    let theta = init_params(&spec)?;
    let mut rng = rng::stream(cfg.seed, &[GRAD_CHECK_STREAM]);
    let task = sample_synthetic_task(family, &mut rng, g.n_shot, g.n_val)?;
    let train = MseLoss::new(&spec, &task.train)?;
    let val = MseLoss::new(&spec, &task.val)?;
    let mut checks = Vec::new();

    let solver = SolverConfig {
        rtol: cfg.meta.rtol,
        atol: cfg.meta.atol,
        ..SolverConfig::new(Method::Rk45, g.horizon, g.grid_step)
    };
    let flow = GradientFlow::new(&train);
    let adjoint = if corrupt_adjoint_sign {
        adjoint_grad_with(&train, &val, &theta, &solver, |u, v| {
            let mut w = flow.jacobian_product(u, v)?;
            w.iter_mut().for_each(|x| *x = -*x);
            Ok(w)
        })?
    } else {
        adjoint_grad(&train, &val, &theta, &solver)?
    };
    let tight = SolverConfig {
        rtol: 1e-11,
        atol: 1e-13,
        ..SolverConfig::new(Method::Rk45, g.horizon, g.horizon)
    };
    let pipeline = |th: &[f64]| -> f64 {
        solve_forward(&flow, th, &tight)
            .and_then(|f| autodiff::value(&val, f.grid.last()))
            .unwrap_or(f64::NAN)
    };
    let fd = fd_grad_of(pipeline, &theta, 1e-5);
    let cos = cosine_similarity(&adjoint.grad, &fd);
    let rel = rel_l2_error(&adjoint.grad, &fd, 1e-12);
    checks.push(CheckResult {
        name: "adjoint-vs-fd".into(),
        passed: cos >= g.min_cosine && rel <= g.max_rel_error,
        detail: format!(
            "cosine {cos:.6} (>= {}), relative error {rel:.3e} (<= {:.0e})",
            g.min_cosine, g.max_rel_error
        ),
    });

    let mut halving_errors = Vec::new();
    for &h in &g.halving_steps {
        let steps = (g.horizon / h).round() as usize;
        let s = SolverConfig {
            rtol: cfg.meta.rtol,
            atol: cfg.meta.atol,
            ..SolverConfig::new(Method::Rk45, g.horizon, h)
        };
        let a = adjoint_grad(&train, &val, &theta, &s)?;
        let u = unrolled_grad(&train, &val, &theta, h, steps)?;
        halving_errors.push((h, rel_l2_error(&a.grad, &u.grad, 1e-12)));
    }
    let ratios: Vec<f64> = halving_errors.windows(2).map(|w| w[1].1 / w[0].1).collect();
    checks.push(CheckResult {
        name: "adjoint-vs-unrolled".into(),
        passed: ratios.iter().all(|&r| r <= g.max_halving_ratio),
        detail: halving_errors
            .iter()
            .map(|(h, e)| format!("h={h}: {e:.3e}"))
            .chain(ratios.iter().map(|r| format!("err(h/2)/err(h) {r:.3}")))
            .collect::<Vec<_>>()
            .join(", "),
    });

    let mut worst = 0.0f64;
    for _ in 0..g.hvp_instances {
        let u: Vec<f64> = theta.iter().map(|t| t + rng.gen_range(-0.5..0.5)).collect();
        let v: Vec<f64> = (0..u.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = hvp(&train, &u, &v)?;
        let approx = fd_hvp(&train, &u, &v)?;
        worst = worst.max(rel_l2_error(&exact, &approx, 1e-12));
    }
    checks.push(CheckResult {
        name: "hvp-vs-fd".into(),
        passed: worst <= g.max_hvp_rel_error,
        detail: format!(
            "worst relative error {worst:.3e} over {} instances (<= {:.0e})",
            g.hvp_instances, g.max_hvp_rel_error
        ),
    });

    let report = GradCheckReport {
        param_count: spec.param_count(),
        checks,
        halving_errors,
    };
    if let Some(out) = out {
        prepare_out(cfg, out)?;
        std::fs::write(
            out.join("grad_check.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub algorithm: Algorithm,
    pub horizon: f64,
    pub inner_steps: usize,
    pub param_count: usize,
    pub hvp_calls_per_update: f64,
    pub grad_calls_per_update: f64,
    pub peak_state_floats: usize,
    pub wall_ms_per_update: f64,
}

pub const BENCH_HEADER: &str = "algorithm,horizon,inner_steps,param_count,hvp_calls_per_update,\
grad_calls_per_update,peak_state_floats,wall_ms_per_update";

impl BenchRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.algorithm,
            self.horizon,
            self.inner_steps,
            self.param_count,
            self.hvp_calls_per_update,
            self.grad_calls_per_update,
            self.peak_state_floats,
            self.wall_ms_per_update
        )
    }
}

/// Sweeps the horizon per algorithm. Discrete methods run `K = T/α` steps
/// so every algorithm sees the same trajectory length.
pub fn bench_cmd(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<BenchRow>> {
    cfg.validate()?;
    let workload = Workload::load(cfg)?;
    let spec = mlp_spec(cfg, workload.input_dim())?;
    let theta0 = init_params(&spec)?;
    let sampler = workload.sampler(cfg.seed, cfg.meta.batch_size)?;
    prepare_out(cfg, out)?;
    let mut rows = Vec::new();
    let mut csv = BufWriter::new(File::create(out.join("bench.csv"))?);
    writeln!(csv, "{BENCH_HEADER}")?;
    for &algorithm in &cfg.bench.algorithms {
        for &horizon in &cfg.bench.horizons {
            let meta = amaml_core::MetaConfig {
                algorithm,
                max_meta_iters: cfg.bench.meta_iters,
                stop_tol: 0.0,
                ..cfg.meta.clone()
            }
            .with_horizon(horizon);
            meta.validate()
                .with_context(|| format!("{algorithm} at T = {horizon}"))?;
            let start = Instant::now();
            let outcome = meta_train(&spec, &sampler, &theta0, &meta, |_| {})?;
            let report = resource_report(algorithm.name(), &outcome.log);
            let row = BenchRow {
                algorithm,
                horizon,
                inner_steps: meta.inner_steps,
                param_count: spec.param_count(),
                hvp_calls_per_update: report.hvp_calls_per_update,
                grad_calls_per_update: report.grad_calls_per_update,
                peak_state_floats: report.peak_state_floats,
                wall_ms_per_update: report.wall_ms_per_update,
            };
            info!(
                "{algorithm} T={horizon}: {:.1} ms/update ({:.1} s total)",
                row.wall_ms_per_update,
                start.elapsed().as_secs_f64()
            );
            writeln!(csv, "{}", row.csv_row())?;
            rows.push(row);
        }
    }
    csv.flush()?;
    Ok(rows)
}
