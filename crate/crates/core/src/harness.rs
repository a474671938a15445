//! Seeded experiments: explore → plan → gap for every (algorithm, N, seed)
//! cell, aggregation over seeds, β sweeps and the theory checks, plus the
//! JSON and CSV formats they read and write.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::envgen::{self, EnvGenConfig};
use crate::error::{config, contract, Error, Result};
use crate::explore::{self, Algorithm, ExploreBudget, StreamSeeds};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::mdp::{Gap, TabularMdp, ValueTable};
use crate::plan::{self, PlanConfig};
use crate::rng::{mix, token_tag};
use crate::theory::{self, CoverageSpec};

pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FAILURES_FILE: &str = "failures.csv";
pub const SUMMARY_FILE: &str = "summary.csv";

const DEFAULT_BETA: f64 = 0.1;

/// Number of seeds `0..R`, or an explicit list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(usize),
    List(Vec<u64>),
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds::Count(80)
    }
}

impl Seeds {
    pub fn values(&self) -> Vec<u64> {
        match self {
            Seeds::Count(r) => (0..*r as u64).collect(),
            Seeds::List(v) => v.clone(),
        }
    }
}

/// How β is chosen: one value, one value per algorithm (others default to
/// 0.1), or `"theory"` for the simplified confidence width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBeta", into = "RawBeta")]
pub enum BetaSetting {
    Fixed(f64),
    PerAlgorithm(BTreeMap<Algorithm, f64>),
    Theory,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawBeta {
    Value(f64),
    Map(BTreeMap<Algorithm, f64>),
    Word(String),
}

impl TryFrom<RawBeta> for BetaSetting {
    type Error = String;

    fn try_from(raw: RawBeta) -> Result<Self, String> {
        match raw {
            RawBeta::Value(b) => Ok(Self::Fixed(b)),
            RawBeta::Map(m) => Ok(Self::PerAlgorithm(m)),
            RawBeta::Word(w) if w == "theory" => Ok(Self::Theory),
            RawBeta::Word(w) => Err(format!("beta: expected a number, a per-algorithm map or \"theory\", got {w:?}")),
        }
    }
}

impl From<BetaSetting> for RawBeta {
    fn from(b: BetaSetting) -> Self {
        match b {
            BetaSetting::Fixed(v) => RawBeta::Value(v),
            BetaSetting::PerAlgorithm(m) => RawBeta::Map(m),
            BetaSetting::Theory => RawBeta::Word("theory".into()),
        }
    }
}

impl Default for BetaSetting {
    fn default() -> Self {
        BetaSetting::Fixed(DEFAULT_BETA)
    }
}

impl BetaSetting {
    fn validate(&self) -> Result<()> {
        let bad = |b: f64| !(b >= 0.0) || !b.is_finite();
        match self {
            Self::Fixed(b) if bad(*b) => Err(config(format!("beta must be finite and nonnegative, got {b}"))),
            Self::PerAlgorithm(m) => match m.iter().find(|(_, &b)| bad(b)) {
                Some((a, b)) => Err(config(format!("beta for {a} must be finite and nonnegative, got {b}"))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    /// β for one cell. Theory mode uses `B₁ = B₂ = H`, `ψ = 1` and the
    /// uniform variant over the two-dimensional state-action domain.
    pub fn resolve(&self, algorithm: Algorithm, n: usize, horizon: usize, tau: f64, delta: f64) -> Result<f64> {
        match self {
            Self::Fixed(b) => Ok(*b),
            Self::PerAlgorithm(m) => Ok(m.get(&algorithm).copied().unwrap_or(DEFAULT_BETA)),
            Self::Theory => {
                let h = horizon as f64;
                theory::beta_simplified(h, h, 1.0, tau, (n * horizon) as u64, delta, 2)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_coverage_n")]
    pub coverage_n: usize,
    #[serde(default = "default_coverage_trials")]
    pub coverage_trials: usize,
    /// Width multiplier of the coverage check; absent means the surrogate width.
    #[serde(default)]
    pub coverage_beta: Option<f64>,
    /// Samples per step of the generative run behind the elliptical check.
    #[serde(default = "default_elliptical_n")]
    pub elliptical_n: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_delta() -> f64 {
    0.1
}
fn default_coverage_n() -> usize {
    50
}
fn default_coverage_trials() -> usize {
    500
}
fn default_elliptical_n() -> usize {
    40
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            coverage_n: default_coverage_n(),
            coverage_trials: default_coverage_trials(),
            coverage_beta: None,
            elliptical_n: default_elliptical_n(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvGenConfig,
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_n_schedule")]
    pub n_schedule: Vec<usize>,
    #[serde(default)]
    pub seeds: Seeds,
    /// Exploration β.
    #[serde(default)]
    pub beta: BetaSetting,
    /// Planning β; defaults to the exploration setting.
    #[serde(default)]
    pub plan_beta: Option<BetaSetting>,
    /// Regularizer of the learner; defaults to `env.tau`.
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_grid_size")]
    pub grid_size: usize,
    /// Concurrent cells; defaults to the available cores.
    #[serde(default)]
    pub parallelism: Option<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    #[serde(default)]
    pub validation: ValidationConfig,
}

fn default_n_schedule() -> Vec<usize> {
    vec![10, 20, 40, 80, 160]
}
fn default_horizon() -> usize {
    10
}
fn default_grid_size() -> usize {
    100
}
fn default_beta_grid() -> Vec<f64> {
    vec![0.1, 1.0, 10.0, 100.0]
}

impl ExperimentConfig {
    /// A configuration with every optional field at its default.
    pub fn new(env: EnvGenConfig, algorithms: Vec<Algorithm>) -> Self {
        Self {
            env,
            algorithms,
            n_schedule: default_n_schedule(),
            seeds: Seeds::default(),
            beta: BetaSetting::default(),
            plan_beta: None,
            tau: None,
            horizon: default_horizon(),
            grid_size: default_grid_size(),
            parallelism: None,
            master_seed: 0,
            beta_grid: default_beta_grid(),
            validation: ValidationConfig::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| config(format!("{}: {}", e.path(), e.inner())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.algorithms.is_empty() {
            return Err(config("algorithms must not be empty"));
        }
        if self.algorithms.iter().collect::<HashSet<_>>().len() != self.algorithms.len() {
            return Err(config("algorithms contains duplicates"));
        }
        if self.n_schedule.is_empty() || self.n_schedule[0] == 0 {
            return Err(config("n_schedule must be nonempty with entries >= 1"));
        }
        if self.n_schedule.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config("n_schedule must be strictly increasing"));
        }
        let seeds = self.seeds.values();
        if seeds.is_empty() {
            return Err(config("seeds: at least one seed is required"));
        }
        if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
            return Err(config("seeds contains duplicates"));
        }
        self.beta.validate()?;
        if let Some(b) = &self.plan_beta {
            b.validate()?;
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0) || !tau.is_finite() {
                return Err(config(format!("tau must be positive, got {tau}")));
            }
        }
        if self.horizon == 0 {
            return Err(config("horizon must be at least 1"));
        }
        if self.grid_size < 2 {
            return Err(config("grid_size must be at least 2"));
        }
        if self.parallelism == Some(0) {
            return Err(config("parallelism must be at least 1"));
        }
        validate_beta_grid(&self.beta_grid)?;
        let v = &self.validation;
        if !(v.delta > 0.0 && v.delta < 1.0) {
            return Err(config(format!("validation.delta must lie in (0, 1), got {}", v.delta)));
        }
        if v.coverage_trials < 100 || v.coverage_n == 0 || v.elliptical_n == 0 {
            return Err(config("validation needs coverage_trials >= 100, coverage_n >= 1 and elliptical_n >= 1"));
        }
        if v.coverage_beta.is_some_and(|b| !(b >= 0.0)) {
            return Err(config("validation.coverage_beta must be nonnegative"));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        self.env.kernel_spec()
    }

    pub fn learner_tau(&self) -> f64 {
        self.tau.unwrap_or(self.env.tau)
    }

    pub fn threads(&self) -> usize {
        self.parallelism
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn generate_env(&self) -> Result<TabularMdp> {
        envgen::generate(&self.env, self.grid_size, self.horizon)
    }
}

/// Stream seed of one cell, a mix of the master seed, algorithm, N and seed.
pub fn cell_seed(master_seed: u64, algorithm: Algorithm, n: usize, seed: u64) -> u64 {
    mix(master_seed, &[token_tag(algorithm.token()), n as u64, seed])
}

/// Serialized environment: grids, horizon, reward and transition tables,
/// plus the generator settings they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub kernel: KernelFamily,
    pub lengthscale: f64,
    pub tau: f64,
    pub env_seed: u64,
    pub horizon: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    /// `|S| × |A|`, row-major.
    pub reward: Vec<f64>,
    /// `|S| × |A| × |S|`, row-major.
    pub transitions: Vec<f64>,
}

impl EnvironmentFile {
    pub fn new(env: &EnvGenConfig, mdp: &TabularMdp) -> Self {
        Self {
            kernel: env.kernel,
            lengthscale: env.lengthscale,
            tau: env.tau,
            env_seed: env.env_seed,
            horizon: mdp.horizon(),
            states: mdp.states().to_vec(),
            actions: mdp.actions().to_vec(),
            reward: mdp.reward_table().to_vec(),
            transitions: mdp.transition_table().to_vec(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse(format!("environment file: {}: {}", e.path(), e.inner())))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn to_mdp(&self) -> Result<TabularMdp> {
        TabularMdp::new(
            self.states.clone(),
            self.actions.clone(),
            self.horizon,
            self.reward.clone(),
            self.transitions.clone(),
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Parses an environment file straight into an MDP.
pub fn parse_environment(text: &str) -> Result<TabularMdp> {
    EnvironmentFile::from_json(text)?.to_mdp()
}

/// One finished cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub algorithm: Algorithm,
    pub kernel: KernelFamily,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub episodes_used: usize,
    pub mean_gap: f64,
    pub max_gap: f64,
    pub wallclock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub algorithm: Algorithm,
    pub kernel: KernelFamily,
    pub seed: u64,
    #[serde(rename = "N")]
    pub n: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub algorithm: Algorithm,
    pub kernel: KernelFamily,
    #[serde(rename = "N")]
    pub n: usize,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub runs: usize,
}

/// An environment checked against a configuration, with its optimal values.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: ExperimentConfig,
    mdp: TabularMdp,
    optimal: ValueTable,
    kernel: KernelSpec,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig, mdp: TabularMdp) -> Result<Self> {
        cfg.validate()?;
        if mdp.horizon() != cfg.horizon {
            return Err(config(format!(
                "environment horizon {} differs from the configured horizon {}",
                mdp.horizon(),
                cfg.horizon
            )));
        }
        let kernel = cfg.kernel()?;
        let (optimal, _) = mdp.optimal_values();
        Ok(Self { cfg, mdp, optimal, kernel })
    }

    /// Checks that an environment file was generated from this configuration's
    /// kernel before building the experiment.
    pub fn from_file(cfg: ExperimentConfig, env: &EnvironmentFile) -> Result<Self> {
        if env.kernel != cfg.env.kernel {
            return Err(config(format!(
                "environment kernel {} differs from the configured kernel {}",
                env.kernel, cfg.env.kernel
            )));
        }
        Self::new(cfg, env.to_mdp()?)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn mdp(&self) -> &TabularMdp {
        &self.mdp
    }

    /// Explore, plan and measure the gap for one cell. Each cell is a fresh
    /// run; nothing is shared across N.
    pub fn run_cell(&self, algorithm: Algorithm, n: usize, seed: u64) -> Result<GapRecord> {
        let start = Instant::now();
        let (tau, horizon, delta) = (self.cfg.learner_tau(), self.cfg.horizon, self.cfg.validation.delta);
        let beta = self.cfg.beta.resolve(algorithm, n, horizon, tau, delta)?;
        let plan_beta = match &self.cfg.plan_beta {
            Some(b) => b.resolve(algorithm, n, horizon, tau, delta)?,
            None => beta,
        };
        let seeds = StreamSeeds::derive(cell_seed(self.cfg.master_seed, algorithm, n, seed), horizon);
        let data = explore::explore(&self.mdp, self.kernel, tau, ExploreBudget { algorithm, n, beta }, &seeds)?;
        let (policy, _) = plan::plan(&data, &self.mdp, &PlanConfig { beta: plan_beta, tau, kernel: self.kernel })?;
        let Gap { mean, max } = self.mdp.suboptimality_gap_against(&self.optimal, &policy)?;
        if !(mean.is_finite() && max.is_finite()) {
            return Err(Error::Numerical("non-finite suboptimality gap".into()));
        }
        Ok(GapRecord {
            algorithm,
            kernel: self.cfg.env.kernel,
            seed,
            n,
            episodes_used: data.episodes_used(),
            // Rounding in V⋆ − V^π can leave −1e-16 for an optimal policy.
            mean_gap: mean.max(0.0),
            max_gap: max.max(0.0),
            wallclock_s: start.elapsed().as_secs_f64(),
        })
    }

    /// Every (algorithm, N, seed) cell, up to `threads()` at a time. Records
    /// come back in that nesting order regardless of scheduling.
    pub fn run(&self) -> Result<ExperimentResult> {
        let seeds = self.cfg.seeds.values();
        let mut cells = Vec::new();
        for &a in &self.cfg.algorithms {
            for &n in &self.cfg.n_schedule {
                cells.extend(seeds.iter().map(|&s| (a, n, s)));
            }
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.threads())
            .build()
            .map_err(|e| contract(format!("thread pool: {e}")))?;
        let outcomes: Vec<Result<GapRecord>> =
            pool.install(|| cells.par_iter().map(|&(a, n, s)| self.run_cell(a, n, s)).collect());
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (&(algorithm, n, seed), outcome) in cells.iter().zip(outcomes) {
            match outcome {
                Ok(r) => records.push(r),
                Err(e) => failures.push(FailureRecord { algorithm, kernel: self.cfg.env.kernel, seed, n, error: e.to_string() }),
            }
        }
        let aggregates = aggregate(&records);
        Ok(ExperimentResult { records, failures, aggregates })
    }

    /// One experiment per β (exploration and planning share it), scored per
    /// algorithm by the mean of `gap_mean` across the N schedule.
    pub fn sweep_beta(&self, grid: &[f64]) -> Result<SweepResult> {
        validate_beta_grid(grid)?;
        let mut per_beta = Vec::with_capacity(grid.len());
        for &beta in grid {
            let mut cfg = self.cfg.clone();
            cfg.beta = BetaSetting::Fixed(beta);
            cfg.plan_beta = None;
            let exp = Self { cfg, ..self.clone() };
            per_beta.push((beta, exp.run()?));
        }
        let summary = select_beta(&per_beta);
        Ok(SweepResult { per_beta, summary })
    }

    /// Coverage of the confidence bound and the elliptical potential
    /// inequality along a generative run.
    pub fn validate(&self) -> Result<ValidationReport> {
        let v = &self.cfg.validation;
        let tau = self.cfg.learner_tau();
        let kernel_s = KernelSpec::new(self.kernel.family(), self.kernel.lengthscale())?;
        let spec = CoverageSpec {
            kernel_z: self.kernel,
            kernel_s,
            tau,
            n: v.coverage_n,
            delta: v.delta,
            trials: v.coverage_trials,
        };
        let cov = theory::coverage_test(&self.mdp, &spec, v.coverage_beta, v.seed)?;
        let threshold = 1.0 - v.delta - 0.05;
        let mut checks = vec![Check {
            name: format!("coverage (beta={:.6})", cov.beta),
            value: cov.fraction,
            threshold,
            pass: cov.fraction >= threshold,
        }];
        let seeds = StreamSeeds::derive(mix(v.seed, &[token_tag("elliptical")]), self.cfg.horizon);
        let data = explore::explore_generative(&self.mdp, self.kernel, tau, v.elliptical_n, &seeds)?;
        for (h, step) in data.steps().iter().enumerate() {
            let gamma = step.regressor().information_gain();
            let total: f64 = step.prior_variances().iter().sum();
            let bound = theory::elliptical_bound(gamma, tau).unwrap_or(f64::NAN);
            checks.push(Check {
                name: format!("elliptical h={h}"),
                value: total,
                threshold: bound,
                pass: theory::elliptical_check(step.prior_variances(), gamma, tau),
            });
        }
        Ok(ValidationReport { b1: cov.b1, b2: cov.b2, tuned_beta: cov.tuned_beta, checks })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub records: Vec<GapRecord>,
    pub failures: Vec<FailureRecord>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentResult {
    /// Writes records, aggregates and failures into `dir`.
    pub fn write(&self, dir: &Path, force: bool) -> Result<()> {
        prepare_dir(dir, &[RECORDS_FILE, AGGREGATE_FILE, FAILURES_FILE], force)?;
        write_csv(&dir.join(RECORDS_FILE), &self.records, RECORD_HEADER)?;
        write_csv(&dir.join(AGGREGATE_FILE), &self.aggregates, AGGREGATE_HEADER)?;
        write_csv(&dir.join(FAILURES_FILE), &self.failures, FAILURE_HEADER)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaChoice {
    pub algorithm: Algorithm,
    pub kernel: KernelFamily,
    pub beta: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub per_beta: Vec<(f64, ExperimentResult)>,
    pub summary: Vec<BetaChoice>,
}

impl SweepResult {
    /// `dir/beta_<β>/…` per grid value plus `dir/summary.csv`.
    pub fn write(&self, dir: &Path, force: bool) -> Result<()> {
        prepare_dir(dir, &[SUMMARY_FILE], force)?;
        for (beta, result) in &self.per_beta {
            result.write(&beta_dir(dir, *beta), force)?;
        }
        write_csv(&dir.join(SUMMARY_FILE), &self.summary, SUMMARY_HEADER)
    }
}

pub fn beta_dir(dir: &Path, beta: f64) -> PathBuf {
    dir.join(format!("beta_{beta}"))
}

/// Per algorithm, the β with the lowest mean of `gap_mean` over N; the
/// first grid entry wins ties.
pub fn select_beta(per_beta: &[(f64, ExperimentResult)]) -> Vec<BetaChoice> {
    let mut best: Vec<BetaChoice> = Vec::new();
    for (beta, result) in per_beta {
        let mut scores: Vec<(Algorithm, KernelFamily, f64, usize)> = Vec::new();
        for row in &result.aggregates {
            match scores.iter_mut().find(|s| s.0 == row.algorithm && s.1 == row.kernel) {
                Some(s) => {
                    s.2 += row.gap_mean;
                    s.3 += 1;
                }
                None => scores.push((row.algorithm, row.kernel, row.gap_mean, 1)),
            }
        }
        for (algorithm, kernel, total, count) in scores {
            let score = total / count as f64;
            match best.iter_mut().find(|c| c.algorithm == algorithm && c.kernel == kernel) {
                Some(c) if score < c.score => {
                    c.beta = *beta;
                    c.score = score;
                }
                Some(_) => {}
                None => best.push(BetaChoice { algorithm, kernel, beta: *beta, score }),
            }
        }
    }
    best
}

/// Groups records by (algorithm, kernel, N) in first-appearance order;
/// `gap_std` is the sample standard deviation (0 for a single run).
pub fn aggregate(records: &[GapRecord]) -> Vec<AggregateRow> {
    let mut groups: Vec<((Algorithm, KernelFamily, usize), Vec<f64>)> = Vec::new();
    for r in records {
        let key = (r.algorithm, r.kernel, r.n);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => g.1.push(r.mean_gap),
            None => groups.push((key, vec![r.mean_gap])),
        }
    }
    groups
        .into_iter()
        .map(|((algorithm, kernel, n), gaps)| {
            let runs = gaps.len();
            let gap_mean = gaps.iter().sum::<f64>() / runs as f64;
            let gap_std = if runs > 1 {
                (gaps.iter().map(|g| (g - gap_mean).powi(2)).sum::<f64>() / (runs - 1) as f64).sqrt()
            } else {
                0.0
            };
            AggregateRow { algorithm, kernel, n, gap_mean, gap_std, runs }
        })
        .collect()
}

pub const RECORD_HEADER: &[&str] =
    &["algorithm", "kernel", "seed", "N", "episodes_used", "mean_gap", "max_gap", "wallclock_s"];
pub const AGGREGATE_HEADER: &[&str] = &["algorithm", "kernel", "N", "gap_mean", "gap_std", "runs"];
pub const FAILURE_HEADER: &[&str] = &["algorithm", "kernel", "seed", "N", "error"];
pub const SUMMARY_HEADER: &[&str] = &["algorithm", "kernel", "beta", "score"];

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(text: &str, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let found = r.headers()?;
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Parse(format!("expected CSV header {}, found {}", header.join(","), found.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| Error::Parse(e.to_string()))).collect()
}

pub fn write_records(path: &Path, records: &[GapRecord]) -> Result<()> {
    write_csv(path, records, RECORD_HEADER)
}

pub fn parse_records(text: &str) -> Result<Vec<GapRecord>> {
    read_csv(text, RECORD_HEADER)
}

pub fn write_aggregates(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_csv(path, rows, AGGREGATE_HEADER)
}

pub fn parse_aggregates(text: &str) -> Result<Vec<AggregateRow>> {
    read_csv(text, AGGREGATE_HEADER)
}

pub fn parse_summary(text: &str) -> Result<Vec<BetaChoice>> {
    read_csv(text, SUMMARY_HEADER)
}

/// Creates `dir` if needed and refuses to clobber existing outputs unless `force`.
pub fn prepare_dir(dir: &Path, files: &[&str], force: bool) -> Result<()> {
    if !force {
        if let Some(f) = files.iter().map(|f| dir.join(f)).find(|p| p.exists()) {
            return Err(config(format!("{} exists; pass --force to overwrite", f.display())));
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn validate_beta_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(config("beta grid must not be empty"));
    }
    if let Some(b) = grid.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
        return Err(config(format!("beta grid entries must be finite and nonnegative, got {b}")));
    }
    for (i, b) in grid.iter().enumerate() {
        if grid[..i].contains(b) {
            return Err(config(format!("beta grid repeats {b}")));
        }
    }
    Ok(())
}

/// Comma-separated β values, e.g. `0.1,1,10,100`.
pub fn parse_beta_grid(text: &str) -> Result<Vec<f64>> {
    let grid = text
        .split(',')
        .map(|t| {
            let t = t.trim();
            t.parse::<f64>().map_err(|_| Error::Parse(format!("beta grid entry {t:?} is not a number")))
        })
        .collect::<Result<Vec<f64>>>()?;
    validate_beta_grid(&grid).map_err(|e| Error::Parse(e.to_string()))?;
    Ok(grid)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub b1: f64,
    pub b2: f64,
    pub tuned_beta: f64,
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(EnvGenConfig::new(KernelFamily::Matern25, 0.1, 0.5, 3), Algorithm::ALL.to_vec());
        cfg.grid_size = 6;
        cfg.horizon = 3;
        cfg.n_schedule = vec![2, 4];
        cfg.seeds = Seeds::Count(2);
        cfg.parallelism = Some(2);
        cfg
    }

    #[test]
    fn config_defaults_and_errors() {
        let cfg = ExperimentConfig::from_json(r#"{"env": {"kernel": "se", "tau": 0.01}, "algorithms": ["online"]}"#).unwrap();
        assert_eq!(cfg.n_schedule, vec![10, 20, 40, 80, 160]);
        assert_eq!(cfg.seeds.values().len(), 80);
        assert_eq!(cfg.beta, BetaSetting::Fixed(0.1));
        assert_eq!((cfg.horizon, cfg.grid_size), (10, 100));
        assert_eq!(cfg.learner_tau(), 0.01);

        let bad_kernel = ExperimentConfig::from_json(r#"{"env": {"kernel": "rbf", "tau": 0.01}, "algorithms": ["online"]}"#);
        assert!(matches!(bad_kernel, Err(Error::Config(m)) if m.contains("kernel")));
        let unordered = r#"{"env": {"kernel": "se", "tau": 0.01}, "algorithms": ["online"], "n_schedule": [20, 10]}"#;
        assert!(ExperimentConfig::from_json(unordered).is_err());
        let unknown = r#"{"env": {"kernel": "se", "tau": 0.01}, "algorithms": ["online"], "colour": 1}"#;
        assert!(ExperimentConfig::from_json(unknown).is_err());
    }

    #[test]
    fn beta_settings_parse() {
        let parse = |b: &str| {
            ExperimentConfig::from_json(&format!(r#"{{"env": {{"kernel": "se", "tau": 0.01}}, "algorithms": ["online"], "beta": {b}}}"#))
        };
        assert_eq!(parse("2.5").unwrap().beta, BetaSetting::Fixed(2.5));
        assert_eq!(parse(r#""theory""#).unwrap().beta, BetaSetting::Theory);
        let per = parse(r#"{"qiu": 1.0}"#).unwrap().beta;
        assert_eq!(per.resolve(Algorithm::QiuBaseline, 10, 10, 0.5, 0.1).unwrap(), 1.0);
        assert_eq!(per.resolve(Algorithm::Online, 10, 10, 0.5, 0.1).unwrap(), 0.1);
        assert!(parse(r#""huge""#).is_err());
        assert!(parse("-1").is_err());
        let theory = BetaSetting::Theory.resolve(Algorithm::Online, 10, 10, 0.5, 0.1).unwrap();
        assert_eq!(theory, theory::beta_simplified(10.0, 10.0, 1.0, 0.5, 100, 0.1, 2).unwrap());
    }

    #[test]
    fn beta_grid_parsing() {
        assert_eq!(parse_beta_grid("0.1, 1,10,100").unwrap(), vec![0.1, 1.0, 10.0, 100.0]);
        assert!(parse_beta_grid("0.1,abc").is_err());
        assert!(parse_beta_grid("").is_err());
        assert!(parse_beta_grid("1,1").is_err());
        assert!(parse_beta_grid("-1").is_err());
        assert!(parse_beta_grid("NaN").is_err());
    }

    #[test]
    fn cell_seeds_do_not_collide() {
        let mut seen = HashSet::new();
        for a in Algorithm::ALL {
            for n in [10, 20, 40, 80, 160] {
                for s in 0..80 {
                    assert!(seen.insert(cell_seed(0, a, n, s)));
                }
            }
        }
    }

    #[test]
    fn aggregate_single_run_and_std() {
        let rec = |seed, gap| GapRecord {
            algorithm: Algorithm::Online,
            kernel: KernelFamily::SquaredExponential,
            seed,
            n: 10,
            episodes_used: 100,
            mean_gap: gap,
            max_gap: gap,
            wallclock_s: 0.0,
        };
        let one = aggregate(&[rec(0, 0.7)]);
        assert_eq!((one[0].gap_mean, one[0].gap_std, one[0].runs), (0.7, 0.0, 1));
        let three = aggregate(&[rec(0, 1.0), rec(1, 2.0), rec(2, 3.0)]);
        assert_eq!((three[0].gap_mean, three[0].gap_std), (2.0, 1.0));
    }

    #[test]
    fn run_is_ordered_deterministic_and_fresh_per_cell() {
        let cfg = small_cfg();
        let mdp = cfg.generate_env().unwrap();
        let exp = Experiment::new(cfg.clone(), mdp).unwrap();
        let a = exp.run().unwrap();
        let b = exp.run().unwrap();
        assert!(a.failures.is_empty());
        assert_eq!(a.records.len(), 4 * 2 * 2);
        let strip = |r: &[GapRecord]| r.iter().map(|r| GapRecord { wallclock_s: 0.0, ..r.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&a.records), strip(&b.records));
        let expected: Vec<(Algorithm, usize, u64)> = Algorithm::ALL
            .iter()
            .flat_map(|&al| [2, 4].into_iter().flat_map(move |n| [0, 1].into_iter().map(move |s| (al, n, s))))
            .collect();
        let got: Vec<_> = a.records.iter().map(|r| (r.algorithm, r.n, r.seed)).collect();
        assert_eq!(got, expected);
        let fresh = exp.run_cell(Algorithm::Online, 4, 1).unwrap();
        let listed = a.records.iter().find(|r| r.algorithm == Algorithm::Online && r.n == 4 && r.seed == 1).unwrap();
        assert_eq!(GapRecord { wallclock_s: 0.0, ..fresh }, GapRecord { wallclock_s: 0.0, ..listed.clone() });
        for r in &a.records {
            assert_eq!(r.episodes_used, r.algorithm.episodes_for(r.n, 3));
            assert!(r.mean_gap >= 0.0 && r.max_gap >= r.mean_gap);
        }
    }

    #[test]
    fn environment_mismatch_is_rejected() {
        let cfg = small_cfg();
        let mdp = cfg.generate_env().unwrap();
        let mut other = cfg.clone();
        other.horizon = 4;
        assert!(Experiment::new(other, mdp.clone()).is_err());
        let mut file = EnvironmentFile::new(&cfg.env, &mdp);
        file.kernel = KernelFamily::SquaredExponential;
        assert!(Experiment::from_file(cfg, &file).is_err());
    }
}
