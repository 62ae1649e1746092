use std::path::PathBuf;
use std::process::ExitCode;

use amaml_cli::commands::{self, BENCH_HEADER};
use amaml_cli::config::PRESETS;
use amaml_cli::ExperimentConfig;
use amaml_core::meta::Algorithm;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "amaml",
    version,
    about = "Meta-learning initializations through gradient-flow adjoints"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long, global = true, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Named preset used when no config file is given.
    #[arg(long, global = true, default_value = "cosmixture-50-50")]
    preset: String,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Meta-gradient estimator, overriding the config.
    #[arg(long, global = true, value_parser = parse_algorithm)]
    algorithm: Option<Algorithm>,
}

#[derive(Subcommand)]
enum Command {
    /// Learn an initialization; writes theta.bin, theta.json and train_log.jsonl.
    MetaTrain,
    /// Adaptation curves of a learned and a random initialization.
    MetaTest {
        /// Initialization written by meta-train.
        #[arg(long)]
        theta: PathBuf,
    },
    /// Check the adjoint estimator against independent oracles.
    GradCheck {
        #[arg(long, hide = true)]
        corrupt_adjoint_sign: bool,
    },
    /// Resource counters and wall time over a horizon sweep.
    Bench,
    /// Print the resolved config as JSON.
    ShowConfig,
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: amaml_core::Error| e.to_string())
}

fn resolve(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json_file(path)?,
        None => ExperimentConfig::preset(&common.preset)
            .with_context(|| format!("available presets: {}", PRESETS.join(", ")))?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(algorithm) = common.algorithm {
        cfg.meta.algorithm = algorithm;
    }
    cfg.validate().context("invalid configuration")?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<bool> {
    let cfg = resolve(&cli.common)?;
    let out = &cli.common.out;
    match cli.command {
        Command::MetaTrain => {
            let s = commands::meta_train_cmd(&cfg, out)?;
            println!(
                "wrote {} after {} iterations{} (final validation loss {:.6e})",
                s.theta_path.display(),
                s.iterations,
                if s.stopped_early {
                    ", stopped early"
                } else {
                    ""
                },
                s.final_val_loss.unwrap_or(f64::NAN)
            );
        }
        Command::MetaTest { theta } => {
            let (trained, random) = commands::meta_test_cmd(&cfg, &theta, out)?;
            println!("epoch,{},random_init", trained.algorithm);
            for (k, e) in trained.epochs.iter().enumerate() {
                println!(
                    "{e},{:.6},{:.6}",
                    trained.nrmse_mean[k], random.nrmse_mean[k]
                );
            }
            println!("curves written to {}", out.display());
        }
        Command::GradCheck {
            corrupt_adjoint_sign,
        } => {
            let report = commands::grad_check_cmd(&cfg, Some(out), corrupt_adjoint_sign)?;
            println!("gradient checks on d = {}", report.param_count);
            for c in &report.checks {
                let tag = if c.passed { "PASS" } else { "FAIL" };
                println!("{tag} {}: {}", c.name, c.detail);
            }
            return Ok(report.passed());
        }
        Command::Bench => {
            let rows = commands::bench_cmd(&cfg, out)?;
            println!("{BENCH_HEADER}");
            for r in rows {
                println!("{}", r.csv_row());
            }
        }
        Command::ShowConfig => println!("{}", serde_json::to_string_pretty(&cfg)?),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AMAML_LOG", "info")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.common.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| run(cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: gradient checks failed");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
