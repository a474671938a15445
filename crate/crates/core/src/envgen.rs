//! Synthetic reward and transition tables drawn from (approximately) the RKHS
//! of the kernel: a GP sample on a coarse design grid, smoothed by a kernel
//! ridge fit, evaluated on the full grid and then rescaled.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::kernels::{linspace01, KernelFamily, KernelSpec, PointSet};
use crate::krr::Regressor;
use crate::linalg::LowerTri;
use crate::mdp::TabularMdp;
use crate::rng::{substream, RandomStream};

const REWARD_TAG: u64 = 1;
const TRANSITION_TAG: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvGenConfig {
    pub kernel: KernelFamily,
    #[serde(default = "default_lengthscale")]
    pub lengthscale: f64,
    /// Regularizer of the smoothing fit.
    pub tau: f64,
    #[serde(default = "default_reward_design")]
    pub reward_design: usize,
    #[serde(default = "default_trans_design")]
    pub trans_design: usize,
    #[serde(default = "default_jitter")]
    pub jitter: f64,
    #[serde(default = "default_floor_eps")]
    pub floor_eps: f64,
    #[serde(default)]
    pub env_seed: u64,
}

fn default_lengthscale() -> f64 {
    0.1
}
fn default_reward_design() -> usize {
    10
}
fn default_trans_design() -> usize {
    8
}
fn default_jitter() -> f64 {
    1e-8
}
fn default_floor_eps() -> f64 {
    1e-6
}

impl EnvGenConfig {
    pub fn new(kernel: KernelFamily, lengthscale: f64, tau: f64, env_seed: u64) -> Self {
        Self {
            kernel,
            lengthscale,
            tau,
            reward_design: default_reward_design(),
            trans_design: default_trans_design(),
            jitter: default_jitter(),
            floor_eps: default_floor_eps(),
            env_seed,
        }
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.kernel, self.lengthscale)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel_spec()?;
        if !(self.tau > 0.0) {
            return Err(config(format!("env.tau must be positive, got {}", self.tau)));
        }
        if self.reward_design < 2 || self.trans_design < 2 {
            return Err(config("env design grid sizes must be at least 2"));
        }
        if !(self.jitter > 0.0) || !(self.floor_eps > 0.0) {
            return Err(config("env.jitter and env.floor_eps must be positive"));
        }
        Ok(())
    }
}

/// Draws `L u` with `L Lᵀ = K + jitter·I` and `u` standard normal.
pub fn gp_sample(kernel: &KernelSpec, points: &PointSet, rng: &mut RandomStream, jitter: f64) -> Result<Vec<f64>> {
    if points.is_empty() {
        return Err(contract("GP sample over an empty point set"));
    }
    let mut k = kernel.gram(points);
    k.add_diagonal(jitter);
    let l = LowerTri::factor(&k).map_err(|e| Error::Numerical(format!("GP prior covariance: {e}")))?;
    let u: Vec<f64> = (0..points.len()).map(|_| StandardNormal.sample(rng)).collect();
    Ok(l.mul_vec(&u))
}

/// Reward table `|S| × |A|` for the configured seed.
pub fn make_reward(cfg: &EnvGenConfig, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let kernel = cfg.kernel_spec()?;
    let design = reward_design(cfg);
    let mut rng = substream(cfg.env_seed, &[REWARD_TAG]);
    let sample = gp_sample(&kernel, &design, &mut rng, cfg.jitter)?;
    reward_from_sample(cfg, &sample, states, actions)
}

fn reward_design(cfg: &EnvGenConfig) -> PointSet {
    let ax = linspace01(cfg.reward_design);
    PointSet::product(&[&ax, &ax])
}

/// Fits the design-grid values, predicts on `S × A` and rescales to [0, 1].
pub fn reward_from_sample(cfg: &EnvGenConfig, sample: &[f64], states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
    let kernel = cfg.kernel_spec()?;
    let design = reward_design(cfg);
    let fit = Regressor::fit(kernel, cfg.tau, &design, sample)?;
    let grid = PointSet::product(&[states, actions]);
    let mut values = predict_all(&fit, &grid)?;
    rescale_unit(&mut values);
    Ok(values)
}

/// Min-max rescale onto [0, 1]; a constant vector maps to 0.5.
pub fn rescale_unit(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if range > 0.0 && range.is_finite() {
        for v in values.iter_mut() {
            *v = (*v - lo) / range;
        }
    } else {
        values.iter_mut().for_each(|v| *v = 0.5);
    }
}

/// Transition tensor `|S| × |A| × |S|` for the configured seed.
pub fn make_transitions(cfg: &EnvGenConfig, states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
    cfg.validate()?;
    let kernel = cfg.kernel_spec()?;
    let design = transition_design(cfg);
    let mut rng = substream(cfg.env_seed, &[TRANSITION_TAG]);
    let sample = gp_sample(&kernel, &design, &mut rng, cfg.jitter)?;
    transitions_from_sample(cfg, &sample, states, actions)
}

fn transition_design(cfg: &EnvGenConfig) -> PointSet {
    let ax = linspace01(cfg.trans_design);
    PointSet::product(&[&ax, &ax, &ax])
}

/// Fits the design values over `(s, a, s′)`, predicts `g` on the full grid
/// and turns every `g(z, ·)` into a distribution by shift-and-normalize.
pub fn transitions_from_sample(cfg: &EnvGenConfig, sample: &[f64], states: &[f64], actions: &[f64]) -> Result<Vec<f64>> {
    let kernel = cfg.kernel_spec()?;
    let design = transition_design(cfg);
    let fit = Regressor::fit(kernel, cfg.tau, &design, sample)?;
    let grid = PointSet::product(&[states, actions, states]);
    let mut g = predict_all(&fit, &grid)?;
    for row in g.chunks_exact_mut(states.len()) {
        shift_normalize(row, cfg.floor_eps);
    }
    Ok(g)
}

/// `p(s′) ∝ g(s′) − min g + floor_eps`.
pub fn shift_normalize(row: &mut [f64], floor_eps: f64) {
    let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
    for v in row.iter_mut() {
        *v = *v - lo + floor_eps;
    }
    let total: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn predict_all(fit: &Regressor, grid: &PointSet) -> Result<Vec<f64>> {
    (0..grid.len())
        .into_par_iter()
        .map(|j| fit.predict_mean(grid.get(j)))
        .collect()
}

/// Builds a full environment: evenly spaced grids, reward and transitions.
pub fn generate(cfg: &EnvGenConfig, grid_size: usize, horizon: usize) -> Result<TabularMdp> {
    if grid_size < 2 {
        return Err(config("grid_size must be at least 2"));
    }
    let states = linspace01(grid_size);
    let actions = linspace01(grid_size);
    let reward = make_reward(cfg, &states, &actions)?;
    let trans = make_transitions(cfg, &states, &actions)?;
    TabularMdp::new(states, actions, horizon, reward, trans)
}
