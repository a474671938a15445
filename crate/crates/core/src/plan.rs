//! Least-squares value iteration with an optimistic bonus.
//!
//! At step `h` the next-step values at the recorded next states form the
//! regression targets, and
//! `Q_h(s, a) = clip_[0, H](r(s, a) + ĝ_h(s, a) + c·σ_h(s, a))`,
//! `V_h(s) = max_a Q_h(s, a)`. The planner uses the revealed reward and
//! `c = β`; the exploration collectors reuse the same recursion with other
//! reward terms.

use crate::error::{contract, Result};
use crate::explore::StepDatasets;
use crate::kernels::KernelSpec;
use crate::mdp::{Policy, TabularMdp, ValueTable};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanConfig {
    pub beta: f64,
    pub tau: f64,
    pub kernel: KernelSpec,
}

/// Greedy policy and proxy values from the planning recursion.
pub fn plan(datasets: &StepDatasets, mdp: &TabularMdp, cfg: &PlanConfig) -> Result<(Policy, ValueTable)> {
    if datasets.horizon() != mdp.horizon()
        || datasets.n_states() != mdp.n_states()
        || datasets.n_actions() != mdp.n_actions()
    {
        return Err(contract(format!(
            "datasets shaped H={} |S|={} |A|={} for an MDP with H={} |S|={} |A|={}",
            datasets.horizon(),
            datasets.n_states(),
            datasets.n_actions(),
            mdp.horizon(),
            mdp.n_states(),
            mdp.n_actions()
        )));
    }
    if !(cfg.beta >= 0.0) {
        return Err(contract(format!("beta must be nonnegative, got {}", cfg.beta)));
    }
    if let Some(step) = datasets.steps().first() {
        let reg = step.regressor();
        if *reg.kernel() != cfg.kernel || reg.tau() != cfg.tau {
            return Err(contract("planning kernel/tau differ from the exploration regressors"));
        }
    }
    let mut lsvi = Lsvi::new(mdp, datasets, Some(mdp.reward_table()), cfg.beta);
    let out = lsvi.backward(mdp.horizon() - 1, true)?;
    Ok(out.expect("full backward pass returns a policy"))
}

/// One backward recursion over the datasets. Whitened targets are kept per
/// step so Q can be queried afterwards at arbitrary states.
pub(crate) struct Lsvi<'a> {
    mdp: &'a TabularMdp,
    data: &'a StepDatasets,
    reward: Option<&'a [f64]>,
    bonus: f64,
    sigma_reward: f64,
    fits: Vec<Option<Vec<f64>>>,
    q_range: Option<(f64, f64)>,
}

impl<'a> Lsvi<'a> {
    pub(crate) fn new(mdp: &'a TabularMdp, data: &'a StepDatasets, reward: Option<&'a [f64]>, bonus: f64) -> Self {
        Self {
            mdp,
            data,
            reward,
            bonus,
            sigma_reward: 0.0,
            fits: vec![None; data.horizon()],
            q_range: None,
        }
    }

    /// Adds a hypothetical reward `coeff · σ_h` to every Q.
    pub(crate) fn set_sigma_reward(&mut self, coeff: f64) {
        self.sigma_reward = coeff;
    }

    pub(crate) fn q_range(&self) -> Option<(f64, f64)> {
        self.q_range
    }

    /// Recursion from `V_{top+1} = 0` down to step 0. With `full`, values and
    /// greedy actions are computed at every state; otherwise only at the
    /// states the next regression needs.
    pub(crate) fn backward(&mut self, top: usize, full: bool) -> Result<Option<(Policy, ValueTable)>> {
        let (ns, na, horizon) = (self.mdp.n_states(), self.mdp.n_actions(), self.mdp.horizon());
        let mut out = full.then(|| (Policy::constant(horizon, ns, na, 0), ValueTable::zeros(horizon, ns)));
        let mut v_next = vec![0.0; ns];
        let mut needed = vec![false; ns];
        for h in (0..=top).rev() {
            let step = self.data.step(h);
            let y: Vec<f64> = step.transitions().iter().map(|t| v_next[t.next_state]).collect();
            self.fits[h] = Some(step.regressor().whiten(&y)?);
            if h == 0 && !full {
                break;
            }
            needed.iter_mut().for_each(|x| *x = full);
            if h > 0 {
                for t in self.data.step(h - 1).transitions() {
                    needed[t.next_state] = true;
                }
            }
            let mut v_cur = vec![0.0; ns];
            for s in (0..ns).filter(|&s| needed[s]) {
                let (a, q) = self.greedy(h, s)?;
                v_cur[s] = q;
                if let Some((policy, values)) = out.as_mut() {
                    policy.set(h, s, a);
                    values.step_mut(h)[s] = q;
                }
            }
            v_next = v_cur;
        }
        Ok(out)
    }

    /// Q values of every action at state `s`, step `h`. Requires step `h`
    /// to have been fitted by [`Self::backward`].
    pub(crate) fn q_row(&mut self, h: usize, s: usize) -> Result<Vec<f64>> {
        let na = self.mdp.n_actions();
        let reg = self.data.step(h).regressor();
        let c = self.fits[h].as_ref().ok_or_else(|| contract(format!("step {h} has not been fitted")))?;
        let range = s * na..(s + 1) * na;
        let means = reg.cached_mean_whitened(c, range.clone())?;
        let cap = self.mdp.horizon() as f64;
        let mut row = Vec::with_capacity(na);
        for (a, (j, mean)) in range.zip(means).enumerate() {
            let sigma = reg.cached_var(j)?.sqrt();
            let r = self.reward.map_or(0.0, |r| r[j]);
            let q = (r + mean + (self.bonus + self.sigma_reward) * sigma).clamp(0.0, cap);
            debug_assert!(a < na);
            row.push(q);
        }
        let lo = row.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.q_range = Some(match self.q_range {
            Some((a, b)) => (a.min(lo), b.max(hi)),
            None => (lo, hi),
        });
        Ok(row)
    }

    /// Greedy action (lowest index on ties) and its Q value.
    pub(crate) fn greedy(&mut self, h: usize, s: usize) -> Result<(usize, f64)> {
        let row = self.q_row(h, s)?;
        Ok(argmax_first(&row))
    }
}

pub(crate) fn argmax_first(values: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explore::Transition;
    use crate::kernels::KernelFamily;

    fn mdp() -> TabularMdp {
        let cfg = crate::envgen::EnvGenConfig::new(KernelFamily::Matern25, 0.1, 0.5, 9);
        crate::envgen::generate(&cfg, 7, 4).unwrap()
    }

    fn kernel() -> KernelSpec {
        KernelSpec::new(KernelFamily::Matern25, 0.1).unwrap()
    }

    fn myopic(m: &TabularMdp) -> Vec<usize> {
        (0..m.n_states())
            .map(|s| argmax_first(&m.reward_table()[s * m.n_actions()..(s + 1) * m.n_actions()]).0)
            .collect()
    }

    #[test]
    fn no_data_plans_myopically() {
        let m = mdp();
        let ds = StepDatasets::empty(&m, kernel(), 0.5).unwrap();
        for beta in [0.0, 0.7] {
            let cfg = PlanConfig { beta, tau: 0.5, kernel: kernel() };
            let (pi, v) = plan(&ds, &m, &cfg).unwrap();
            let greedy = myopic(&m);
            for h in 0..m.horizon() {
                for s in 0..m.n_states() {
                    assert_eq!(pi.action(h, s), greedy[s]);
                    assert!((0.0..=m.horizon() as f64).contains(&v.get(h, s)));
                }
            }
        }
    }

    #[test]
    fn shape_and_hyperparameter_checks() {
        let m = mdp();
        let other = crate::envgen::generate(
            &crate::envgen::EnvGenConfig::new(KernelFamily::Matern25, 0.1, 0.5, 9),
            5,
            4,
        )
        .unwrap();
        let ds = StepDatasets::empty(&other, kernel(), 0.5).unwrap();
        let cfg = PlanConfig { beta: 0.1, tau: 0.5, kernel: kernel() };
        assert!(plan(&ds, &m, &cfg).is_err());
        let ds = StepDatasets::empty(&m, kernel(), 0.5).unwrap();
        let cfg = PlanConfig { beta: 0.1, tau: 0.25, kernel: kernel() };
        assert!(plan(&ds, &m, &cfg).is_err());
    }

    #[test]
    fn values_are_clipped_and_deterministic() {
        let m = mdp();
        let per_step: Vec<Vec<Transition>> = (0..m.horizon())
            .map(|h| {
                (0..20)
                    .map(|i| Transition { state: (i * 3 + h) % 7, action: (i * 5) % 7, next_state: (i + h) % 7 })
                    .collect()
            })
            .collect();
        let ds = StepDatasets::from_transitions(&m, kernel(), 0.5, &per_step).unwrap();
        let cfg = PlanConfig { beta: 5.0, tau: 0.5, kernel: kernel() };
        let (pi1, v1) = plan(&ds, &m, &cfg).unwrap();
        let (pi2, v2) = plan(&ds, &m, &cfg).unwrap();
        assert_eq!(pi1, pi2);
        assert_eq!(v1, v2);
        for h in 0..=m.horizon() {
            assert!(v1.step(h).iter().all(|&x| (0.0..=m.horizon() as f64).contains(&x)));
        }
        assert!(v1.step(m.horizon()).iter().all(|&x| x == 0.0));
    }
}
