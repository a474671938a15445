//! Environment generation recomputed with dense linear algebra, plus a
//! stored fixture guarding the exact output.

use std::path::PathBuf;

use krfrl::envgen::{generate, make_reward, make_transitions, EnvGenConfig};
use krfrl::harness::{parse_environment, EnvironmentFile};
use krfrl::kernels::{linspace01, KernelFamily, KernelSpec};
use krfrl::rng::substream;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

fn product(axes: &[&[f64]]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = vec![vec![]];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| axis.iter().map(move |&x| [prefix.clone(), vec![x]].concat()))
            .collect();
    }
    out
}

/// Smoothed GP sample evaluated at `queries`.
fn dense_surface(cfg: &EnvGenConfig, tag: u64, design: &[Vec<f64>], queries: &[Vec<f64>]) -> Vec<f64> {
    let kernel = KernelSpec::new(cfg.kernel, cfg.lengthscale).unwrap();
    let n = design.len();
    let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(&design[i], &design[j]).unwrap());
    let mut rng = substream(cfg.env_seed, &[tag]);
    let u = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let l = (&k + DMatrix::identity(n, n) * cfg.jitter).cholesky().unwrap().l();
    let sample = l * u;
    let alpha = (&k + DMatrix::identity(n, n) * (cfg.tau * cfg.tau)).lu().solve(&sample).unwrap();
    queries
        .iter()
        .map(|q| (0..n).map(|i| kernel.eval(&design[i], q).unwrap() * alpha[i]).sum())
        .collect()
}

fn check_against_dense(cfg: &EnvGenConfig, grid: usize) {
    let states = linspace01(grid);
    let reward_axis = linspace01(cfg.reward_design);
    let trans_axis = linspace01(cfg.trans_design);

    let raw = dense_surface(cfg, 1, &product(&[&reward_axis, &reward_axis]), &product(&[&states, &states]));
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let expected_reward: Vec<f64> = raw.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let reward = make_reward(cfg, &states, &states).unwrap();
    for (a, b) in reward.iter().zip(&expected_reward) {
        assert!((a - b).abs() < 1e-8, "reward {a} vs {b}");
    }

    let g = dense_surface(
        cfg,
        2,
        &product(&[&trans_axis, &trans_axis, &trans_axis]),
        &product(&[&states, &states, &states]),
    );
    let trans = make_transitions(cfg, &states, &states).unwrap();
    for (row, grow) in trans.chunks_exact(grid).zip(g.chunks_exact(grid)) {
        let min = grow.iter().copied().fold(f64::INFINITY, f64::min);
        let shifted: Vec<f64> = grow.iter().map(|v| v - min + cfg.floor_eps).collect();
        let total: f64 = shifted.iter().sum();
        for (p, q) in row.iter().zip(&shifted) {
            assert!((p - q / total).abs() < 1e-8);
        }
    }
}

#[test]
fn squared_exponential_matches_dense_recomputation() {
    check_against_dense(&EnvGenConfig::new(KernelFamily::SquaredExponential, 0.1, 0.01, 4), 7);
}

#[test]
fn matern_matches_dense_recomputation() {
    let mut cfg = EnvGenConfig::new(KernelFamily::Matern15, 0.1, 0.5, 8);
    cfg.reward_design = 6;
    cfg.trans_design = 5;
    check_against_dense(&cfg, 9);
}

#[test]
fn different_seeds_give_different_environments() {
    let a = generate(&EnvGenConfig::new(KernelFamily::Matern25, 0.1, 0.5, 1), 6, 3).unwrap();
    let b = generate(&EnvGenConfig::new(KernelFamily::Matern25, 0.1, 0.5, 2), 6, 3).unwrap();
    assert_ne!(a.reward_table(), b.reward_table());
    assert_ne!(a.transition_table(), b.transition_table());
}

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/env_se_grid6.json")
}

/// Set `KRFRL_BLESS=1` to rewrite the fixture after an intended change.
#[test]
fn generated_environment_matches_fixture() {
    let cfg = EnvGenConfig::new(KernelFamily::SquaredExponential, 0.1, 0.01, 42);
    let mdp = generate(&cfg, 6, 3).unwrap();
    if std::env::var_os("KRFRL_BLESS").is_some() {
        std::fs::write(fixture(), EnvironmentFile::new(&cfg, &mdp).to_json().unwrap()).unwrap();
    }
    let stored = std::fs::read_to_string(fixture()).unwrap();
    let file = EnvironmentFile::from_json(&stored).unwrap();
    assert_eq!((file.kernel, file.env_seed, file.horizon), (KernelFamily::SquaredExponential, 42, 3));
    let expected = parse_environment(&stored).unwrap();
    for (a, b) in mdp.reward_table().iter().zip(expected.reward_table()) {
        assert!((a - b).abs() <= 1e-12);
    }
    for (a, b) in mdp.transition_table().iter().zip(expected.transition_table()) {
        assert!((a - b).abs() <= 1e-12);
    }
}
