//! Discretized episodic MDP with stationary reward and transitions, plus exact
//! backward-induction solvers used as ground truth.

use rand::Rng;

use crate::error::{contract, Result};
use crate::kernels::PointSet;
use crate::rng::RandomStream;

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    states: Vec<f64>,
    actions: Vec<f64>,
    horizon: usize,
    /// `|S| × |A|`, row-major.
    reward: Vec<f64>,
    /// `|S| × |A| × |S|`, row-major.
    trans: Vec<f64>,
}

impl TabularMdp {
    pub fn new(
        states: Vec<f64>,
        actions: Vec<f64>,
        horizon: usize,
        reward: Vec<f64>,
        trans: Vec<f64>,
    ) -> Result<Self> {
        let (ns, na) = (states.len(), actions.len());
        if ns == 0 || na == 0 {
            return Err(contract("state and action grids must be nonempty"));
        }
        if horizon == 0 {
            return Err(contract("horizon must be at least 1"));
        }
        for (name, grid) in [("state", &states), ("action", &actions)] {
            if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
                return Err(contract(format!("{name} grid must be finite and strictly increasing")));
            }
        }
        if reward.len() != ns * na {
            return Err(contract(format!("reward has {} entries, expected {}", reward.len(), ns * na)));
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(contract(format!("reward entry {r} outside [0, 1]")));
        }
        if trans.len() != ns * na * ns {
            return Err(contract(format!(
                "transition tensor has {} entries, expected {}",
                trans.len(),
                ns * na * ns
            )));
        }
        for (z, row) in trans.chunks_exact(ns).enumerate() {
            if row.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
                return Err(contract(format!("transition row {z} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(contract(format!("transition row {z} sums to {sum}")));
            }
        }
        Ok(Self { states, actions, horizon, reward, trans })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn actions(&self) -> &[f64] {
        &self.actions
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    pub fn reward_table(&self) -> &[f64] {
        &self.reward
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let ns = self.n_states();
        let z = s * self.n_actions() + a;
        &self.trans[z * ns..(z + 1) * ns]
    }

    pub fn transition_table(&self) -> &[f64] {
        &self.trans
    }

    /// Index of the state-action pair in the flattened `S × A` grid.
    pub fn pair_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions() + a
    }

    /// The state-action grid as 2-d points, action fastest.
    pub fn pair_grid(&self) -> PointSet {
        PointSet::product(&[&self.states, &self.actions])
    }

    pub fn pair_point(&self, s: usize, a: usize) -> [f64; 2] {
        [self.states[s], self.actions[a]]
    }

    /// Inverse-CDF draw from `P(· | s, a)` scanning states in index order.
    pub fn sample_next_state(&self, rng: &mut RandomStream, s: usize, a: usize) -> usize {
        let row = self.transition_row(s, a);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = j;
                if u < acc {
                    return j;
                }
            }
        }
        last_positive
    }

    fn expected_next(&self, s: usize, a: usize, next_v: &[f64]) -> f64 {
        self.transition_row(s, a).iter().zip(next_v).map(|(p, v)| p * v).sum()
    }

    /// Optimal values and a greedy optimal policy (lowest action index on ties).
    pub fn optimal_values(&self) -> (ValueTable, Policy) {
        let (ns, na, horizon) = (self.n_states(), self.n_actions(), self.horizon);
        let mut values = ValueTable::zeros(horizon, ns);
        let mut policy = Policy::constant(horizon, ns, na, 0);
        for h in (0..horizon).rev() {
            let (cur, next) = values.split_step(h);
            for s in 0..ns {
                let mut best = (0, f64::NEG_INFINITY);
                for a in 0..na {
                    let q = self.reward(s, a) + self.expected_next(s, a, next);
                    if q > best.1 {
                        best = (a, q);
                    }
                }
                cur[s] = best.1;
                policy.set(h, s, best.0);
            }
        }
        (values, policy)
    }

    /// Exact value of a deterministic policy.
    pub fn evaluate_policy(&self, policy: &Policy) -> Result<ValueTable> {
        self.check_policy(policy)?;
        let mut values = ValueTable::zeros(self.horizon, self.n_states());
        for h in (0..self.horizon).rev() {
            let (cur, next) = values.split_step(h);
            for (s, v) in cur.iter_mut().enumerate() {
                let a = policy.action(h, s);
                *v = self.reward(s, a) + self.expected_next(s, a, next);
            }
        }
        Ok(values)
    }

    /// Mean and max over initial states of `V⋆₁(s) − V^π₁(s)`.
    pub fn suboptimality_gap(&self, policy: &Policy) -> Result<Gap> {
        let (opt, _) = self.optimal_values();
        self.suboptimality_gap_against(&opt, policy)
    }

    /// Same as [`Self::suboptimality_gap`] with a precomputed optimal table.
    pub fn suboptimality_gap_against(&self, optimal: &ValueTable, policy: &Policy) -> Result<Gap> {
        let v_pi = self.evaluate_policy(policy)?;
        let diffs: Vec<f64> = optimal
            .step(0)
            .iter()
            .zip(v_pi.step(0))
            .map(|(a, b)| a - b)
            .collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let max = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Ok(Gap { mean, max })
    }

    fn check_policy(&self, policy: &Policy) -> Result<()> {
        if policy.horizon != self.horizon || policy.n_states != self.n_states() {
            return Err(contract(format!(
                "policy shape {}x{} does not match MDP {}x{}",
                policy.horizon,
                policy.n_states,
                self.horizon,
                self.n_states()
            )));
        }
        if policy.actions.iter().any(|&a| a >= self.n_actions()) {
            return Err(contract("policy action index out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub mean: f64,
    pub max: f64,
}

/// `(H + 1) × |S|` table; step `h` is 0-based and step `H` is identically 0.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    horizon: usize,
    n_states: usize,
    v: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(horizon: usize, n_states: usize) -> Self {
        Self { horizon, n_states, v: vec![0.0; (horizon + 1) * n_states] }
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn step(&self, h: usize) -> &[f64] {
        &self.v[h * self.n_states..(h + 1) * self.n_states]
    }

    pub fn step_mut(&mut self, h: usize) -> &mut [f64] {
        &mut self.v[h * self.n_states..(h + 1) * self.n_states]
    }

    pub fn get(&self, h: usize, s: usize) -> f64 {
        self.v[h * self.n_states + s]
    }

    /// Mutable step `h` alongside read-only step `h + 1`.
    fn split_step(&mut self, h: usize) -> (&mut [f64], &[f64]) {
        let ns = self.n_states;
        let (head, tail) = self.v.split_at_mut((h + 1) * ns);
        (&mut head[h * ns..], &tail[..ns])
    }
}

/// Deterministic non-stationary policy: an action index per (step, state).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    horizon: usize,
    n_states: usize,
    n_actions: usize,
    actions: Vec<usize>,
}

impl Policy {
    pub fn constant(horizon: usize, n_states: usize, n_actions: usize, a: usize) -> Self {
        assert!(a < n_actions);
        Self { horizon, n_states, n_actions, actions: vec![a; horizon * n_states] }
    }

    pub fn from_table(n_actions: usize, table: Vec<Vec<usize>>) -> Result<Self> {
        let horizon = table.len();
        if horizon == 0 {
            return Err(contract("policy needs at least one step"));
        }
        let n_states = table[0].len();
        if n_states == 0 || table.iter().any(|row| row.len() != n_states) {
            return Err(contract("policy rows must be nonempty and of equal length"));
        }
        let actions: Vec<usize> = table.into_iter().flatten().collect();
        if let Some(a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(contract(format!("action index {a} out of range for {n_actions} actions")));
        }
        Ok(Self { horizon, n_states, n_actions, actions })
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn action(&self, h: usize, s: usize) -> usize {
        self.actions[h * self.n_states + s]
    }

    pub fn set(&mut self, h: usize, s: usize, a: usize) {
        assert!(a < self.n_actions);
        self.actions[h * self.n_states + s] = a;
    }

    /// One line per step, action indices separated by single spaces.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for row in self.actions.chunks_exact(self.n_states) {
            let line: Vec<String> = row.iter().map(|a| a.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    /// Parses the [`Self::to_text`] layout; blank lines are ignored.
    pub fn from_text(text: &str, n_actions: usize) -> Result<Self> {
        let mut table = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<usize>().map_err(|_| {
                        crate::Error::Parse(format!("policy line {}: bad action index {tok:?}", lineno + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            table.push(row);
        }
        Self::from_table(n_actions, table)
    }
}
