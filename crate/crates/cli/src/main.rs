use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};

use krfrl::explore::{self, Algorithm, ExploreBudget, StreamSeeds};
use krfrl::harness::{self, EnvironmentFile, Experiment, ExperimentConfig};
use krfrl::KernelSpec;

const EXIT_USAGE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

/// Reward-free kernel-based RL experiments.
#[derive(Parser)]
#[command(name = "krfrl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic environment described by a config.
    GenEnv {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Environment file to write.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite an existing output.
        #[arg(long)]
        force: bool,
    },
    /// Run every (algorithm, N, seed) cell and write records and aggregates.
    Run {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Environment file from gen-env.
        #[arg(long)]
        env: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Overwrite existing outputs.
        #[arg(long)]
        force: bool,
    },
    /// Run the experiment once per β and pick the best β per algorithm.
    SweepBeta {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Environment file from gen-env.
        #[arg(long)]
        env: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated β grid; defaults to the config's beta_grid.
        #[arg(long)]
        betas: Option<String>,
        /// Overwrite existing outputs.
        #[arg(long)]
        force: bool,
    },
    /// Check the confidence bound and the elliptical potential inequality.
    Validate {
        /// Experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Environment file from gen-env.
        #[arg(long)]
        env: PathBuf,
    },
    /// Print the realized information gain of each step after exploration.
    InfoGain {
        /// Environment file from gen-env.
        #[arg(long)]
        env: PathBuf,
        /// generative, online, greedy-maxvar or qiu.
        #[arg(long)]
        algorithm: String,
        /// Samples per step.
        #[arg(long = "N")]
        n: usize,
        /// Seed of the exploration streams.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// An error and the exit code it maps to.
struct Failure(u8, anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_USAGE, e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::GenEnv { config, out, force } => gen_env(&config, &out, force),
        Command::Run { config, env, out, force } => {
            let exp = load_experiment(&config, &env)?;
            let result = exp.run()?;
            result.write(&out, force)?;
            println!(
                "{} cells ok, {} failed; wrote {}",
                result.records.len(),
                result.failures.len(),
                out.display()
            );
            if result.failures.is_empty() {
                Ok(())
            } else {
                Err(Failure(EXIT_PARTIAL, anyhow!("{} cells failed, see {}", result.failures.len(), harness::FAILURES_FILE)))
            }
        }
        Command::SweepBeta { config, env, out, betas, force } => {
            let exp = load_experiment(&config, &env)?;
            let grid = match betas {
                Some(text) => harness::parse_beta_grid(&text).context("--betas")?,
                None => exp.config().beta_grid.clone(),
            };
            let sweep = exp.sweep_beta(&grid)?;
            sweep.write(&out, force)?;
            for choice in &sweep.summary {
                println!("{} {}: beta={} score={:.6}", choice.algorithm, choice.kernel, choice.beta, choice.score);
            }
            let failed: usize = sweep.per_beta.iter().map(|(_, r)| r.failures.len()).sum();
            if failed == 0 {
                Ok(())
            } else {
                Err(Failure(EXIT_PARTIAL, anyhow!("{failed} cells failed across the sweep")))
            }
        }
        Command::Validate { config, env } => {
            let exp = load_experiment(&config, &env)?;
            let report = exp.validate()?;
            println!("surrogates: B1={} B2={:.6} tuned_beta={:.6}", report.b1, report.b2, report.tuned_beta);
            println!("{:<28} {:>14} {:>14}  result", "check", "value", "threshold");
            for c in &report.checks {
                let verdict = if c.pass { "pass" } else { "fail" };
                println!("{:<28} {:>14.6} {:>14.6}  {verdict}", c.name, c.value, c.threshold);
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure(EXIT_VALIDATION, anyhow!("validation failed")))
            }
        }
        Command::InfoGain { env, algorithm, n, seed } => info_gain(&env, &algorithm, n, seed),
    }
}

fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Ok(threads) = std::env::var("KRFRL_THREADS") {
        let threads: usize = threads
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| anyhow!("KRFRL_THREADS must be a positive integer, got {threads:?}"))?;
        cfg.parallelism = Some(threads);
    }
    Ok(cfg)
}

fn load_experiment(config: &Path, env: &Path) -> anyhow::Result<Experiment> {
    let cfg = load_config(config)?;
    let file = EnvironmentFile::load(env).with_context(|| format!("reading {}", env.display()))?;
    Ok(Experiment::from_file(cfg, &file)?)
}

fn gen_env(config: &Path, out: &Path, force: bool) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    if out.exists() && !force {
        return Err(anyhow!("{} exists; pass --force to overwrite", out.display()).into());
    }
    let mdp = cfg.generate_env()?;
    let json = EnvironmentFile::new(&cfg.env, &mdp).to_json()?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, json).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} ({} states, {} actions, H={})", out.display(), mdp.n_states(), mdp.n_actions(), mdp.horizon());
    Ok(())
}

/// Exploration β used for the bonus-driven collectors.
const INFO_GAIN_BETA: f64 = 0.1;

fn info_gain(env: &Path, algorithm: &str, n: usize, seed: u64) -> Result<(), Failure> {
    let algorithm: Algorithm = algorithm.parse()?;
    let file = EnvironmentFile::load(env).with_context(|| format!("reading {}", env.display()))?;
    let mdp = file.to_mdp()?;
    let gains = if n == 0 {
        vec![0.0; mdp.horizon()]
    } else {
        let kernel = KernelSpec::new(file.kernel, file.lengthscale)?;
        let seeds = StreamSeeds::derive(seed, mdp.horizon());
        let budget = ExploreBudget { algorithm, n, beta: INFO_GAIN_BETA };
        explore::explore(&mdp, kernel, file.tau, budget, &seeds)?.information_gains()
    };
    println!("h,gamma");
    for (h, g) in gains.iter().enumerate() {
        println!("{h},{g}");
    }
    Ok(())
}
