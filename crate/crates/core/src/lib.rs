//! Reward-free kernel-based reinforcement learning.
//!
//! Exploration collects transitions without seeing a reward, guided by the
//! posterior variance of kernel ridge regression; planning then runs
//! optimistic least-squares value iteration once the reward is revealed.
//! The crate also generates synthetic RKHS environments, evaluates the
//! associated confidence widths and sample-complexity bounds, and runs
//! seeded experiments that measure suboptimality gaps.

pub mod envgen;
pub mod error;
pub mod explore;
pub mod harness;
pub mod kernels;
pub mod krr;
pub mod linalg;
pub mod mdp;
pub mod plan;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use explore::{Algorithm, StepDatasets, StreamSeeds, Transition};
pub use kernels::{KernelFamily, KernelSpec, PointSet};
pub use krr::Regressor;
pub use mdp::{Gap, Policy, TabularMdp, ValueTable};
