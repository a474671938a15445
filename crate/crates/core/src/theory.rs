//! Theory-level quantities: confidence widths, information-gain growth
//! models, sample-complexity thresholds, and Monte Carlo checks of the
//! confidence bound and of the elliptical potential inequality.
//!
//! Every big-O expression is evaluated with unit constants; the thresholds
//! are order-of-magnitude tools, not certified bounds.

use rand::Rng;

use crate::error::{config, contract, Error, Result};
use crate::envgen::gp_sample;
use crate::kernels::{KernelFamily, KernelSpec, PointSet};
use crate::krr::Regressor;
use crate::mdp::TabularMdp;
use crate::rng::substream;

/// Inputs of the exact confidence width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceParams {
    /// RKHS norm bound of the regressed function.
    pub b1: f64,
    /// RKHS norm bound of the value function.
    pub b2: f64,
    pub psi_max: f64,
    /// Bound on the eigenvalue partial sums.
    pub c: f64,
    pub tau: f64,
    /// Truncation level of the Mercer expansion.
    pub m: u64,
    /// Σ_{m > M} λ_m.
    pub lambda_tail: f64,
    pub delta: f64,
    pub n: u64,
}

impl ConfidenceParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [("b1", self.b1), ("b2", self.b2), ("psi_max", self.psi_max), ("c", self.c), ("lambda_tail", self.lambda_tail)];
        for (name, v) in nonneg {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(config(format!("{name} must be a finite nonnegative number, got {v}")));
            }
        }
        if !(self.tau > 0.0) {
            return Err(config(format!("tau must be positive, got {}", self.tau)));
        }
        check_delta(self.delta)?;
        if self.m == 0 || self.n == 0 {
            return Err(config("M and n must be at least 1"));
        }
        Ok(())
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(config(format!("delta must lie in (0, 1), got {delta}")))
    }
}

/// `B₁ + (C B₂ ψ/τ)·√(2 log(M/δ)) + (2 B₂ ψ/τ)·√(n λ_tail)`.
pub fn beta_exact(p: &ConfidenceParams) -> Result<f64> {
    p.validate()?;
    let noise = p.b2 * p.psi_max / p.tau;
    let log_term = (2.0 * (p.m as f64 / p.delta).ln()).max(0.0).sqrt();
    Ok(p.b1 + p.c * noise * log_term + 2.0 * noise * (p.n as f64 * p.lambda_tail).sqrt())
}

/// `B₁ + (B₂ ψ/τ)·√(d log(n/δ))`; `d = 1` bounds a fixed point, larger `d`
/// gives the uniform-over-the-domain variant.
pub fn beta_simplified(b1: f64, b2: f64, psi_max: f64, tau: f64, n: u64, delta: f64, d: u32) -> Result<f64> {
    if n == 0 {
        return Err(contract("beta_simplified needs n >= 1"));
    }
    if !(tau > 0.0) {
        return Err(config(format!("tau must be positive, got {tau}")));
    }
    check_delta(delta)?;
    let log_term = (d as f64 * (n as f64 / delta).ln()).max(0.0);
    Ok(b1 + b2 * psi_max / tau * log_term.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EigendecayKind {
    /// λ_m ~ m^{-p}, p > 1.
    Polynomial { p: f64 },
    /// λ_m ~ c^m, 0 < c < 1.
    Exponential { c: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigendecayModel {
    pub kind: EigendecayKind,
    pub scale: f64,
}

impl EigendecayModel {
    pub fn polynomial(p: f64, scale: f64) -> Result<Self> {
        let m = Self { kind: EigendecayKind::Polynomial { p }, scale };
        m.validate()?;
        Ok(m)
    }

    pub fn exponential(c: f64, scale: f64) -> Result<Self> {
        let m = Self { kind: EigendecayKind::Exponential { c }, scale };
        m.validate()?;
        Ok(m)
    }

    /// Matérn-ν kernels decay polynomially with `p = 1 + 2ν/d`; the squared
    /// exponential decays exponentially (rate taken as 1/2, it does not enter Γ).
    pub fn for_kernel(family: KernelFamily, dim: usize, scale: f64) -> Result<Self> {
        match family.smoothness() {
            Some(nu) => Self::polynomial(matern_exponent(nu, dim), scale),
            None => Self::exponential(0.5, scale),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(config(format!("eigendecay scale must be positive, got {}", self.scale)));
        }
        match self.kind {
            EigendecayKind::Polynomial { p } if !(p > 1.0) || !p.is_finite() => {
                Err(config(format!("polynomial eigendecay needs p > 1, got {p}")))
            }
            EigendecayKind::Exponential { c } if !(c > 0.0 && c < 1.0) => {
                Err(config(format!("exponential eigendecay needs 0 < c < 1, got {c}")))
            }
            _ => Ok(()),
        }
    }
}

pub fn matern_exponent(nu: f64, dim: usize) -> f64 {
    1.0 + 2.0 * nu / dim as f64
}

/// Growth model of the maximum information gain. `tau` only enters through
/// the model's scale constant and is checked for validity.
pub fn info_gain_model(model: &EigendecayModel, n: u64, tau: f64) -> Result<f64> {
    model.validate()?;
    if n == 0 {
        return Err(contract("info_gain_model needs n >= 1"));
    }
    if !(tau > 0.0) {
        return Err(config(format!("tau must be positive, got {tau}")));
    }
    let n = n as f64;
    let log = (n + 1.0).ln();
    Ok(match model.kind {
        EigendecayKind::Polynomial { p } => model.scale * n.powf(1.0 / p) * log,
        EigendecayKind::Exponential { .. } => model.scale * log * log,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapMode {
    Generative,
    Online,
}

/// Simplified suboptimality bound after `n` samples per step:
/// `H^k √(Γ(n) log(nH/δ) / n)` with `k = 2` (generative) or `3` (online).
pub fn simplified_gap(n: u64, horizon: usize, tau: f64, delta: f64, model: &EigendecayModel, mode: GapMode) -> Result<f64> {
    check_delta(delta)?;
    if horizon == 0 {
        return Err(contract("horizon must be at least 1"));
    }
    let gamma = info_gain_model(model, n, tau)?;
    let h = horizon as f64;
    let k = match mode {
        GapMode::Generative => 2,
        GapMode::Online => 3,
    };
    let log = (n as f64 * h / delta).ln().max(0.0);
    Ok(h.powi(k) * (gamma * log / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleComplexity {
    /// Samples per step.
    pub n0: u64,
    /// Episodes needed to collect them (`N·H` online, `N` generative).
    pub episodes: u64,
}

/// Largest N the threshold search considers.
pub const N0_CAP: u64 = 1 << 62;

/// Smallest `N` whose simplified gap is at most `eps`.
///
/// The gap first rises (log factors dominate) and then decays, so past
/// `N = 1` the first crossing is found by doubling and then bisection.
pub fn solve_n0(eps: f64, horizon: usize, tau: f64, delta: f64, model: &EigendecayModel, mode: GapMode) -> Result<SampleComplexity> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(config(format!("eps must be positive, got {eps}")));
    }
    let gap = |n: u64| simplified_gap(n, horizon, tau, delta, model, mode);
    let n0 = if gap(1)? <= eps {
        1
    } else {
        let mut lo = 1u64;
        let mut hi = 2u64;
        while gap(hi)? > eps {
            if hi >= N0_CAP {
                return Err(Error::Unsatisfiable { eps });
            }
            lo = hi;
            hi *= 2;
        }
        // gap(lo) > eps >= gap(hi)
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if gap(mid)? <= eps {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let episodes = match mode {
        GapMode::Generative => n0,
        GapMode::Online => n0.saturating_mul(horizon as u64),
    };
    Ok(SampleComplexity { n0, episodes })
}

/// Slack added to the right-hand side of the elliptical potential bound.
pub const ELLIPTICAL_SLACK: f64 = 1e-8;

/// `Σ σ² ≤ 2 Γ / log(1 + 1/τ²)` up to [`ELLIPTICAL_SLACK`].
pub fn elliptical_check(sigma_squares: &[f64], gamma_realized: f64, tau: f64) -> bool {
    elliptical_bound(gamma_realized, tau).is_some_and(|rhs| sigma_squares.iter().sum::<f64>() <= rhs + ELLIPTICAL_SLACK)
}

/// Right-hand side of the elliptical potential inequality.
pub fn elliptical_bound(gamma_realized: f64, tau: f64) -> Option<f64> {
    (tau > 0.0 && gamma_realized >= 0.0).then(|| 2.0 * gamma_realized / (1.0 + 1.0 / (tau * tau)).ln())
}

/// Setup of the Monte Carlo confidence-bound check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageSpec {
    /// Kernel on state-action pairs used by the regression.
    pub kernel_z: KernelSpec,
    /// Kernel on states that generates the value function.
    pub kernel_s: KernelSpec,
    pub tau: f64,
    /// Design size.
    pub n: usize,
    pub delta: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    /// Width multiplier the fraction refers to.
    pub beta: f64,
    pub fraction: f64,
    pub trials: usize,
    /// Surrogate bound on the regressed function (the horizon).
    pub b1: f64,
    /// RKHS norm of the fitted value function.
    pub b2: f64,
    /// `beta_simplified(b1, b2, 1, τ, n, δ, 1)`.
    pub tuned_beta: f64,
    ratios: Vec<f64>,
}

impl CoverageReport {
    /// Coverage fraction at another width, same trials.
    pub fn fraction_at(&self, beta: f64) -> f64 {
        let hits = self.ratios.iter().filter(|&&r| r <= beta).count();
        hits as f64 / self.ratios.len() as f64
    }
}

const VALUE_TAG: u64 = 1;
const TRIAL_TAG: u64 = 3;
const MIN_TRIALS: usize = 100;

/// Monte Carlo check of `|f(z) − f̂(z)| ≤ β σ(z)`.
///
/// `V` is a smoothed GP sample on the state grid scaled to `max |V| = H`,
/// `f(z) = Σ_{s′} P(s′|z) V(s′)`. The `n` design points are picked by
/// maximum variance (so they do not depend on any transition), and each
/// trial draws fresh next states, fits KRR to `V(s′ᵢ)` and tests the bound at
/// a random state-action pair outside the design. `beta = None` uses the
/// surrogate width [`CoverageReport::tuned_beta`].
pub fn coverage_test(mdp: &TabularMdp, spec: &CoverageSpec, beta: Option<f64>, seed: u64) -> Result<CoverageReport> {
    if spec.trials < MIN_TRIALS {
        return Err(config(format!("coverage needs at least {MIN_TRIALS} trials, got {}", spec.trials)));
    }
    check_delta(spec.delta)?;
    let pairs = mdp.n_states() * mdp.n_actions();
    if spec.n == 0 || spec.n >= pairs {
        return Err(config(format!("coverage design size must lie in 1..{pairs}, got {}", spec.n)));
    }
    let horizon = mdp.horizon() as f64;

    // Value function and its RKHS norm.
    let states = PointSet::from_scalars(mdp.states())?;
    let sample = gp_sample(&spec.kernel_s, &states, &mut substream(seed, &[VALUE_TAG]), 1e-8)?;
    let fit = Regressor::fit(spec.kernel_s, spec.tau, &states, &sample)?;
    let raw: Vec<f64> = states.iter().map(|s| fit.predict_mean(s)).collect::<Result<_>>()?;
    let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { horizon / peak } else { 0.0 };
    let value: Vec<f64> = raw.iter().map(|v| v * scale).collect();
    let gram = spec.kernel_s.gram(&states);
    let w = fit.weights();
    let quad: f64 = (0..w.len()).map(|i| w[i] * crate::linalg::dot(gram.row(i), w)).sum();
    let b2 = scale * quad.max(0.0).sqrt();
    let b1 = horizon;
    let tuned_beta = beta_simplified(b1, b2, 1.0, spec.tau, spec.n as u64, spec.delta, 1)?;
    let beta = beta.unwrap_or(tuned_beta);
    if !(beta >= 0.0) {
        return Err(config(format!("beta must be nonnegative, got {beta}")));
    }

    // Max-variance design.
    let mut reg = Regressor::new(spec.kernel_z, spec.tau)?;
    reg.attach_grid_cache(mdp.pair_grid())?;
    let mut design = Vec::with_capacity(spec.n);
    let mut in_design = vec![false; pairs];
    for _ in 0..spec.n {
        let (j, _) = reg.cached_argmax_var_in(0..pairs)?;
        let (s, a) = (j / mdp.n_actions(), j % mdp.n_actions());
        reg.append(&mdp.pair_point(s, a), 0.0)?;
        design.push((s, a));
        in_design[j] = true;
    }

    let ratios = (0..spec.trials)
        .map(|t| {
            let mut rng = substream(seed, &[TRIAL_TAG, t as u64]);
            let y: Vec<f64> = design.iter().map(|&(s, a)| value[mdp.sample_next_state(&mut rng, s, a)]).collect();
            let c = reg.whiten(&y)?;
            let j = loop {
                let j = rng.random_range(0..pairs);
                if !in_design[j] {
                    break j;
                }
            };
            let (s, a) = (j / mdp.n_actions(), j % mdp.n_actions());
            let f: f64 = mdp.transition_row(s, a).iter().zip(&value).map(|(p, v)| p * v).sum();
            let err = (f - reg.cached_mean_whitened(&c, j..j + 1)?[0]).abs();
            let sigma = reg.cached_var(j)?.sqrt();
            Ok(if err == 0.0 { 0.0 } else { err / sigma })
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut report = CoverageReport { beta, fraction: 0.0, trials: spec.trials, b1, b2, tuned_beta, ratios };
    report.fraction = report.fraction_at(beta);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> ConfidenceParams {
        ConfidenceParams { b1: 1.0, b2: 1.0, psi_max: 1.0, c: 1.0, tau: 1.0, m: 10, lambda_tail: 0.0, delta: 0.1, n: 50 }
    }

    #[test]
    fn beta_exact_hand_value() {
        assert_abs_diff_eq!(beta_exact(&params()).unwrap(), 1.0 + (2.0 * 100f64.ln()).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(beta_exact(&params()).unwrap(), 4.0349, epsilon = 1e-4);
        let noiseless = ConfidenceParams { b2: 0.0, lambda_tail: 0.3, ..params() };
        assert_eq!(beta_exact(&noiseless).unwrap(), 1.0);
    }

    #[test]
    fn beta_exact_tau_scaling_and_tail() {
        let p = ConfidenceParams { lambda_tail: 0.01, ..params() };
        let q = ConfidenceParams { tau: 2.0, ..p };
        let noise = |x: &ConfidenceParams| beta_exact(x).unwrap() - x.b1;
        assert_abs_diff_eq!(noise(&q), noise(&p) / 2.0, epsilon = 1e-12);
        let more = ConfidenceParams { n: 51, ..p };
        assert!(beta_exact(&more).unwrap() > beta_exact(&p).unwrap());
        assert!(beta_exact(&ConfidenceParams { delta: 1.0, ..p }).is_err());
    }

    #[test]
    fn beta_simplified_examples() {
        assert_eq!(beta_simplified(2.0, 0.0, 1.0, 0.5, 10, 0.1, 1).unwrap(), 2.0);
        // n = e·δ is not an integer for δ = 0.1; pick δ so that n/δ = e
        let delta = 1.0 / std::f64::consts::E;
        assert_abs_diff_eq!(beta_simplified(0.0, 1.0, 1.0, 1.0, 1, delta, 3).unwrap(), 3f64.sqrt(), epsilon = 1e-12);
        let scan: Vec<f64> = (1..50).map(|n| beta_simplified(1.0, 1.0, 1.0, 0.1, n, 0.1, 1).unwrap()).collect();
        assert!(scan.windows(2).all(|w| w[1] > w[0]));
        assert!(beta_simplified(1.0, 1.0, 1.0, 0.1, 0, 0.1, 1).is_err());
    }

    #[test]
    fn info_gain_models() {
        let poly = EigendecayModel::polynomial(2.5, 1.0).unwrap();
        assert_abs_diff_eq!(info_gain_model(&poly, 1, 0.5).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let exp = EigendecayModel::exponential(0.5, 3.0).unwrap();
        assert_abs_diff_eq!(info_gain_model(&exp, 1, 0.5).unwrap(), 3.0 * 2f64.ln().powi(2), epsilon = 1e-15);
        let vals: Vec<f64> = (1..200).map(|n| info_gain_model(&poly, n, 0.5).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(matern_exponent(1.5, 2), 2.5);
        assert!(EigendecayModel::polynomial(1.0, 1.0).is_err());
        assert!(EigendecayModel::exponential(1.0, 1.0).is_err());
        assert!(matches!(
            EigendecayModel::for_kernel(KernelFamily::Matern15, 2, 1.0).unwrap().kind,
            EigendecayKind::Polynomial { p } if p == 2.5
        ));
    }

    #[test]
    fn solve_n0_minimal_and_ordered() {
        let model = EigendecayModel::polynomial(2.5, 1.0).unwrap();
        let g = solve_n0(1.0, 3, 0.5, 0.1, &model, GapMode::Generative).unwrap();
        let gap = |n| simplified_gap(n, 3, 0.5, 0.1, &model, GapMode::Generative).unwrap();
        assert!(gap(g.n0) <= 1.0 && gap(g.n0 - 1) > 1.0);
        assert_eq!(g.episodes, g.n0);
        let o = solve_n0(1.0, 3, 0.5, 0.1, &model, GapMode::Online).unwrap();
        assert!(o.n0 >= g.n0);
        assert_eq!(o.episodes, 3 * o.n0);
        let finer = solve_n0(0.5, 3, 0.5, 0.1, &model, GapMode::Generative).unwrap();
        assert!(finer.n0 > g.n0);
        assert!(matches!(solve_n0(1e-30, 10, 0.5, 0.1, &model, GapMode::Online), Err(Error::Unsatisfiable { .. })));
        assert_eq!(solve_n0(1e9, 2, 0.5, 0.1, &model, GapMode::Online).unwrap().n0, 1);
    }

    #[test]
    fn elliptical_examples() {
        assert!(elliptical_check(&[], 0.0, 0.5));
        // one point with prior variance 1: Γ = ½ log(1 + 1/τ²), bound = 1
        let tau: f64 = 0.5;
        let gamma = 0.5 * (1.0 + 1.0 / (tau * tau)).ln();
        assert!(elliptical_check(&[1.0], gamma, tau));
        assert!(!elliptical_check(&[100.0], gamma, tau));
        assert!(!elliptical_check(&[0.1], -1.0, tau));
    }
}
