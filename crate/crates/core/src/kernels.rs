//! Stationary positive-definite kernels with unit output scale, and point sets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{config, contract, Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum KernelFamily {
    #[serde(rename = "se")]
    SquaredExponential,
    #[serde(rename = "matern15")]
    Matern15,
    #[serde(rename = "matern25")]
    Matern25,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] =
        [Self::SquaredExponential, Self::Matern15, Self::Matern25];

    pub fn token(self) -> &'static str {
        match self {
            Self::SquaredExponential => "se",
            Self::Matern15 => "matern15",
            Self::Matern25 => "matern25",
        }
    }

    /// Matérn smoothness ν; `None` for the squared exponential.
    pub fn smoothness(self) -> Option<f64> {
        match self {
            Self::SquaredExponential => None,
            Self::Matern15 => Some(1.5),
            Self::Matern25 => Some(2.5),
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" => Ok(Self::SquaredExponential),
            "matern15" => Ok(Self::Matern15),
            "matern25" => Ok(Self::Matern25),
            other => Err(config(format!(
                "kernel: unknown token {other:?} (expected se, matern15 or matern25)"
            ))),
        }
    }
}

/// Kernel family plus lengthscale; the output scale is fixed at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    family: KernelFamily,
    lengthscale: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, lengthscale: f64) -> Result<Self> {
        if !(lengthscale > 0.0) || !lengthscale.is_finite() {
            return Err(config(format!("lengthscale must be positive, got {lengthscale}")));
        }
        Ok(Self { family, lengthscale })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn lengthscale(&self) -> f64 {
        self.lengthscale
    }

    /// k(z, z′). Fails when the points have different dimensions.
    pub fn eval(&self, z: &[f64], z_prime: &[f64]) -> Result<f64> {
        if z.len() != z_prime.len() {
            return Err(contract(format!(
                "kernel evaluated on points of dimension {} and {}",
                z.len(),
                z_prime.len()
            )));
        }
        Ok(self.eval_sq_dist(sq_dist(z, z_prime)))
    }

    /// Kernel value as a function of the squared Euclidean distance.
    #[inline]
    pub fn eval_sq_dist(&self, d2: f64) -> f64 {
        let l = self.lengthscale;
        match self.family {
            KernelFamily::SquaredExponential => (-d2 / (2.0 * l * l)).exp(),
            KernelFamily::Matern15 => {
                let u = 3f64.sqrt() * d2.sqrt() / l;
                (1.0 + u) * (-u).exp()
            }
            KernelFamily::Matern25 => {
                let u = 5f64.sqrt() * d2.sqrt() / l;
                (1.0 + u + u * u / 3.0) * (-u).exp()
            }
        }
    }

    /// Gram matrix of a point set.
    pub fn gram(&self, points: &PointSet) -> Matrix {
        let n = points.len();
        let mut k = Matrix::zeros(n);
        for i in 0..n {
            k.set(i, i, self.eval_sq_dist(0.0));
            for j in 0..i {
                let v = self.eval_sq_dist(sq_dist(points.get(i), points.get(j)));
                k.set(i, j, v);
                k.set(j, i, v);
            }
        }
        k
    }

    /// Vector of k(points[i], z).
    pub fn cross(&self, points: &PointSet, z: &[f64]) -> Result<Vec<f64>> {
        if !points.is_empty() && points.dim() != z.len() {
            return Err(contract(format!(
                "cross-kernel between {}-d points and a {}-d query",
                points.dim(),
                z.len()
            )));
        }
        Ok(points.iter().map(|p| self.eval_sq_dist(sq_dist(p, z))).collect())
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// An ordered list of points of a common dimension, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "points need at least one coordinate");
        Self { dim, coords: Vec::new() }
    }

    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(contract(format!(
                "{} coordinates do not split into {dim}-d points",
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(contract(format!("non-finite coordinate {bad}")));
        }
        Ok(Self { dim, coords })
    }

    /// One-dimensional points from scalars.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::from_flat(1, values.to_vec())
    }

    /// Cartesian product of one-dimensional axes, last axis fastest.
    pub fn product(axes: &[&[f64]]) -> Self {
        let dim = axes.len();
        let total: usize = axes.iter().map(|a| a.len()).product();
        let mut coords = Vec::with_capacity(total * dim);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            coords.extend(idx.iter().zip(axes).map(|(&i, a)| a[i]));
            for k in (0..dim).rev() {
                idx[k] += 1;
                if idx[k] < axes[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        Self { dim, coords }
    }

    pub fn push(&mut self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(contract(format!(
                "pushing a {}-d point into a {}-d set",
                z.len(),
                self.dim
            )));
        }
        if z.iter().any(|c| !c.is_finite()) {
            return Err(contract("non-finite coordinate"));
        }
        self.coords.extend_from_slice(z);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }
}

/// `n` evenly spaced points covering [0, 1], endpoints included.
pub fn linspace01(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}
