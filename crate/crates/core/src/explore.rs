//! Exploration-phase collectors. Each produces per-step transition datasets
//! together with a kernel ridge regressor over the state-action grid.
//!
//! Randomness is split into decoupled streams (see [`StreamSeeds`]): initial
//! states, unrecorded rollout transitions, and one stream per step for the
//! transitions that end up in that step's dataset. Replacing the step-`h`
//! stream changes only the recorded next states of `D_h` and whatever depends
//! on them, which makes the unbiasedness of a collector testable.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::kernels::KernelSpec;
use crate::krr::Regressor;
use crate::mdp::TabularMdp;
use crate::plan::Lsvi;
use crate::rng::{mix, stream, RandomStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "generative")]
    Generative,
    #[serde(rename = "online")]
    Online,
    #[serde(rename = "greedy-maxvar")]
    GreedyMaxVar,
    #[serde(rename = "qiu")]
    QiuBaseline,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Self::Generative, Self::Online, Self::GreedyMaxVar, Self::QiuBaseline];

    pub fn token(self) -> &'static str {
        match self {
            Self::Generative => "generative",
            Self::Online => "online",
            Self::GreedyMaxVar => "greedy-maxvar",
            Self::QiuBaseline => "qiu",
        }
    }

    /// Episodes consumed to reach `n` samples per step.
    pub fn episodes_for(self, n: usize, horizon: usize) -> usize {
        match self {
            Self::Online => n * horizon,
            _ => n,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| config(format!(
                "algorithm: unknown token {s:?} (expected generative, online, greedy-maxvar or qiu)"
            )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
}

/// The dataset of one step: transitions in collection order, the posterior
/// variance each input had just before it was added, and the regressor.
#[derive(Debug, Clone)]
pub struct StepData {
    transitions: Vec<Transition>,
    prior_var: Vec<f64>,
    regressor: Regressor,
}

impl StepData {
    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    /// `σ²_{n−1}(z_n)` for every collected input.
    pub fn prior_variances(&self) -> &[f64] {
        &self.prior_var
    }

    pub fn regressor(&self) -> &Regressor {
        &self.regressor
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Input pairs `(s, a)` in collection order.
    pub fn inputs(&self) -> Vec<(usize, usize)> {
        self.transitions.iter().map(|t| (t.state, t.action)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepDatasets {
    n_states: usize,
    n_actions: usize,
    steps: Vec<StepData>,
    episodes_used: usize,
    q_range: Option<(f64, f64)>,
}

impl StepDatasets {
    /// Empty datasets with grid-cached regressors for every step.
    pub fn empty(mdp: &TabularMdp, kernel: KernelSpec, tau: f64) -> Result<Self> {
        let grid = mdp.pair_grid();
        let steps = (0..mdp.horizon())
            .map(|_| {
                let mut regressor = Regressor::new(kernel, tau)?;
                regressor.attach_grid_cache(grid.clone())?;
                Ok(StepData { transitions: Vec::new(), prior_var: Vec::new(), regressor })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            steps,
            episodes_used: 0,
            q_range: None,
        })
    }

    /// Datasets built from given per-step transitions.
    pub fn from_transitions(
        mdp: &TabularMdp,
        kernel: KernelSpec,
        tau: f64,
        per_step: &[Vec<Transition>],
    ) -> Result<Self> {
        if per_step.len() != mdp.horizon() {
            return Err(contract("one transition list per step is required"));
        }
        let mut ds = Self::empty(mdp, kernel, tau)?;
        for (h, list) in per_step.iter().enumerate() {
            for t in list {
                if t.state >= mdp.n_states() || t.action >= mdp.n_actions() || t.next_state >= mdp.n_states() {
                    return Err(contract("transition index out of range"));
                }
                ds.record(mdp, h, *t)?;
            }
        }
        Ok(ds)
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn step(&self, h: usize) -> &StepData {
        &self.steps[h]
    }

    pub fn steps(&self) -> &[StepData] {
        &self.steps
    }

    pub fn episodes_used(&self) -> usize {
        self.episodes_used
    }

    /// Smallest and largest Q value computed while collecting, if any.
    pub fn q_range(&self) -> Option<(f64, f64)> {
        self.q_range
    }

    /// Realized information gain of every step's regressor.
    pub fn information_gains(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.regressor.information_gain()).collect()
    }

    fn record(&mut self, mdp: &TabularMdp, h: usize, t: Transition) -> Result<()> {
        let step = &mut self.steps[h];
        let j = mdp.pair_index(t.state, t.action);
        step.prior_var.push(step.regressor.cached_var(j)?);
        step.regressor.append(&mdp.pair_point(t.state, t.action), 0.0)?;
        step.transitions.push(t);
        Ok(())
    }

    fn merge_q_range(&mut self, range: Option<(f64, f64)>) {
        if let Some((lo, hi)) = range {
            self.q_range = Some(match self.q_range {
                Some((a, b)) => (a.min(lo), b.max(hi)),
                None => (lo, hi),
            });
        }
    }
}

/// Seeds of the decoupled random streams of one exploration run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSeeds {
    /// Initial state of every episode.
    pub init: u64,
    /// Transitions taken but not recorded (online rollouts before step h₀).
    pub rollout: u64,
    /// Recorded transitions of step `h`.
    pub observe: Vec<u64>,
}

impl StreamSeeds {
    pub fn derive(seed: u64, horizon: usize) -> Self {
        Self {
            init: mix(seed, &[0x1]),
            rollout: mix(seed, &[0x2]),
            observe: (0..horizon as u64).map(|h| mix(seed, &[0x3, h])).collect(),
        }
    }

    /// Same initial-state stream, every transition stream re-derived from `seed`.
    pub fn with_transitions_from(&self, seed: u64) -> Self {
        let fresh = Self::derive(seed, self.observe.len());
        Self { init: self.init, rollout: fresh.rollout, observe: fresh.observe }
    }
}

struct Streams {
    init: RandomStream,
    rollout: RandomStream,
    observe: Vec<RandomStream>,
}

impl Streams {
    fn new(seeds: &StreamSeeds, horizon: usize) -> Result<Self> {
        if seeds.observe.len() != horizon {
            return Err(contract(format!(
                "{} observation streams for horizon {horizon}",
                seeds.observe.len()
            )));
        }
        Ok(Self {
            init: stream(seeds.init),
            rollout: stream(seeds.rollout),
            observe: seeds.observe.iter().map(|&s| stream(s)).collect(),
        })
    }

    fn initial_state(&mut self, n_states: usize) -> usize {
        self.init.random_range(0..n_states)
    }
}

/// Hyperparameters shared by the collectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExploreBudget {
    pub algorithm: Algorithm,
    /// Target number of samples per step.
    pub n: usize,
    /// Bonus multiplier; ignored by the generative and greedy collectors.
    pub beta: f64,
}

impl ExploreBudget {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(config("N must be at least 1"));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(config(format!("beta must be finite and nonnegative, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Runs the collector named in `budget`.
pub fn explore(
    mdp: &TabularMdp,
    kernel: KernelSpec,
    tau: f64,
    budget: ExploreBudget,
    seeds: &StreamSeeds,
) -> Result<StepDatasets> {
    budget.validate()?;
    match budget.algorithm {
        Algorithm::Generative => explore_generative(mdp, kernel, tau, budget.n, seeds),
        Algorithm::Online => explore_online(mdp, kernel, tau, budget.beta, budget.n, seeds),
        Algorithm::GreedyMaxVar => explore_greedy_maxvar(mdp, kernel, tau, budget.n, seeds),
        Algorithm::QiuBaseline => explore_qiu(mdp, kernel, tau, budget.beta, budget.n, seeds),
    }
}

/// With a generative model: at every step query the global variance maximizer.
pub fn explore_generative(
    mdp: &TabularMdp,
    kernel: KernelSpec,
    tau: f64,
    n: usize,
    seeds: &StreamSeeds,
) -> Result<StepDatasets> {
    let mut streams = Streams::new(seeds, mdp.horizon())?;
    let mut ds = StepDatasets::empty(mdp, kernel, tau)?;
    let na = mdp.n_actions();
    let n_pairs = mdp.n_states() * na;
    for _ in 0..n {
        for h in 0..mdp.horizon() {
            let (j, _) = ds.steps[h].regressor.cached_argmax_var_in(0..n_pairs)?;
            let (s, a) = (j / na, j % na);
            let next = mdp.sample_next_state(&mut streams.observe[h], s, a);
            ds.record(mdp, h, Transition { state: s, action: a, next_state: next })?;
        }
    }
    ds.episodes_used = n;
    Ok(ds)
}

/// Without a generative model: one recorded sample per episode, at step h₀,
/// reached by following the optimistic policy planned from `V_{h₀+1} = 0`.
pub fn explore_online(
    mdp: &TabularMdp,
    kernel: KernelSpec,
    tau: f64,
    beta: f64,
    n: usize,
    seeds: &StreamSeeds,
) -> Result<StepDatasets> {
    let mut streams = Streams::new(seeds, mdp.horizon())?;
    let mut ds = StepDatasets::empty(mdp, kernel, tau)?;
    for _ in 0..n {
        for top in 0..mdp.horizon() {
            let mut lsvi = Lsvi::new(mdp, &ds, None, beta);
            lsvi.backward(top, false)?;
            let mut s = streams.initial_state(mdp.n_states());
            for h in 0..top {
                let (a, _) = lsvi.greedy(h, s)?;
                s = mdp.sample_next_state(&mut streams.rollout, s, a);
            }
            let (a, _) = lsvi.greedy(top, s)?;
            let next = mdp.sample_next_state(&mut streams.observe[top], s, a);
            let q_range = lsvi.q_range();
            ds.merge_q_range(q_range);
            ds.record(mdp, top, Transition { state: s, action: a, next_state: next })?;
        }
    }
    ds.episodes_used = n * mdp.horizon();
    Ok(ds)
}

/// Heuristic: stay on the trajectory and take the variance-maximizing action.
pub fn explore_greedy_maxvar(
    mdp: &TabularMdp,
    kernel: KernelSpec,
    tau: f64,
    n: usize,
    seeds: &StreamSeeds,
) -> Result<StepDatasets> {
    let mut streams = Streams::new(seeds, mdp.horizon())?;
    let mut ds = StepDatasets::empty(mdp, kernel, tau)?;
    let na = mdp.n_actions();
    for _ in 0..n {
        let mut s = streams.initial_state(mdp.n_states());
        for h in 0..mdp.horizon() {
            let (j, _) = ds.steps[h].regressor.cached_argmax_var_in(s * na..(s + 1) * na)?;
            let a = j - s * na;
            let next = mdp.sample_next_state(&mut streams.observe[h], s, a);
            ds.record(mdp, h, Transition { state: s, action: a, next_state: next })?;
            s = next;
        }
    }
    ds.episodes_used = n;
    Ok(ds)
}

/// Baseline: optimistic LSVI on the hypothetical reward `β σ / H` plus the
/// usual bonus `β σ`, rolled out for a full episode whose transitions are all kept.
pub fn explore_qiu(
    mdp: &TabularMdp,
    kernel: KernelSpec,
    tau: f64,
    beta: f64,
    n: usize,
    seeds: &StreamSeeds,
) -> Result<StepDatasets> {
    let mut streams = Streams::new(seeds, mdp.horizon())?;
    let mut ds = StepDatasets::empty(mdp, kernel, tau)?;
    let horizon = mdp.horizon();
    for _ in 0..n {
        let mut lsvi = Lsvi::new(mdp, &ds, None, beta);
        lsvi.set_sigma_reward(beta / horizon as f64);
        lsvi.backward(horizon - 1, false)?;
        let mut episode = Vec::with_capacity(horizon);
        let mut s = streams.initial_state(mdp.n_states());
        for h in 0..horizon {
            let (a, _) = lsvi.greedy(h, s)?;
            let next = mdp.sample_next_state(&mut streams.observe[h], s, a);
            episode.push(Transition { state: s, action: a, next_state: next });
            s = next;
        }
        let q_range = lsvi.q_range();
        ds.merge_q_range(q_range);
        for (h, t) in episode.into_iter().enumerate() {
            ds.record(mdp, h, t)?;
        }
    }
    ds.episodes_used = n;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelFamily;

    fn small_mdp() -> TabularMdp {
        let cfg = crate::envgen::EnvGenConfig::new(KernelFamily::SquaredExponential, 0.1, 0.01, 3);
        crate::envgen::generate(&cfg, 8, 3).unwrap()
    }

    fn se() -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, 0.1).unwrap()
    }

    #[test]
    fn tokens_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.token().parse::<Algorithm>().unwrap(), a);
        }
        assert!("greedy".parse::<Algorithm>().is_err());
        assert_eq!(Algorithm::Online.episodes_for(10, 5), 50);
        assert_eq!(Algorithm::QiuBaseline.episodes_for(10, 5), 10);
    }

    #[test]
    fn first_generative_pick_is_grid_origin() {
        let mdp = small_mdp();
        let ds = explore_generative(&mdp, se(), 0.01, 1, &StreamSeeds::derive(1, 3)).unwrap();
        for h in 0..3 {
            assert_eq!(ds.step(h).inputs(), vec![(0, 0)]);
            assert_eq!(ds.step(h).prior_variances(), &[1.0]);
        }
        assert_eq!(ds.episodes_used(), 1);
    }

    #[test]
    fn first_greedy_episode_takes_action_zero() {
        let mdp = small_mdp();
        let ds = explore_greedy_maxvar(&mdp, se(), 0.01, 1, &StreamSeeds::derive(4, 3)).unwrap();
        for h in 0..3 {
            assert_eq!(ds.step(h).transitions()[0].action, 0);
        }
        let ds = explore_qiu(&mdp, se(), 0.01, 0.1, 1, &StreamSeeds::derive(4, 3)).unwrap();
        for h in 0..3 {
            assert_eq!(ds.step(h).transitions()[0].action, 0);
        }
    }

    #[test]
    fn markov_chain_is_followed() {
        let mdp = small_mdp();
        for ds in [
            explore_greedy_maxvar(&mdp, se(), 0.01, 6, &StreamSeeds::derive(8, 3)).unwrap(),
            explore_qiu(&mdp, se(), 0.01, 0.1, 6, &StreamSeeds::derive(8, 3)).unwrap(),
        ] {
            for n in 0..6 {
                for h in 0..2 {
                    assert_eq!(ds.step(h).transitions()[n].next_state, ds.step(h + 1).transitions()[n].state);
                }
            }
        }
    }

    #[test]
    fn sample_counts_and_episodes() {
        let mdp = small_mdp();
        for alg in Algorithm::ALL {
            let budget = ExploreBudget { algorithm: alg, n: 4, beta: 0.1 };
            let ds = explore(&mdp, se(), 0.01, budget, &StreamSeeds::derive(2, 3)).unwrap();
            assert!(ds.steps().iter().all(|s| s.len() == 4 && s.regressor().len() == 4));
            assert_eq!(ds.episodes_used(), alg.episodes_for(4, 3));
        }
        let bad = ExploreBudget { algorithm: Algorithm::Online, n: 0, beta: 0.1 };
        assert!(explore(&mdp, se(), 0.01, bad, &StreamSeeds::derive(2, 3)).is_err());
        let bad = ExploreBudget { algorithm: Algorithm::Online, n: 2, beta: -1.0 };
        assert!(explore(&mdp, se(), 0.01, bad, &StreamSeeds::derive(2, 3)).is_err());
    }

    #[test]
    fn regressor_inputs_mirror_transitions() {
        let mdp = small_mdp();
        let ds = explore_online(&mdp, se(), 0.01, 0.1, 3, &StreamSeeds::derive(6, 3)).unwrap();
        for step in ds.steps() {
            for (i, t) in step.transitions().iter().enumerate() {
                assert_eq!(step.regressor().input(i), &mdp.pair_point(t.state, t.action));
            }
        }
    }

    #[test]
    fn online_top_step_maximizes_variance() {
        let mdp = small_mdp();
        let ds = explore_online(&mdp, se(), 0.01, 0.1, 5, &StreamSeeds::derive(12, 3)).unwrap();
        // Replay each step's regressor and check the action maximized σ at the visited state.
        let na = mdp.n_actions();
        for step in ds.steps() {
            let mut reg = Regressor::new(se(), 0.01).unwrap();
            reg.attach_grid_cache(mdp.pair_grid()).unwrap();
            for t in step.transitions() {
                let (j, _) = reg.cached_argmax_var_in(t.state * na..(t.state + 1) * na).unwrap();
                assert_eq!(j - t.state * na, t.action);
                reg.append(&mdp.pair_point(t.state, t.action), 0.0).unwrap();
            }
        }
    }

    #[test]
    fn seeds_must_match_horizon() {
        let mdp = small_mdp();
        assert!(explore_generative(&mdp, se(), 0.01, 1, &StreamSeeds::derive(1, 2)).is_err());
    }
}
