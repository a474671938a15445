//! Kernel ridge regression with an incrementally grown Cholesky factor.
//!
//! The regressor keeps `L` with `L Lᵀ = K + τ² I`, the whitened targets
//! `c = L⁻¹ y` and the weights `α = L⁻ᵀ c`. Prediction at `z` is
//! `k(z)ᵀ α` and the posterior variance is `k(z, z) − ‖L⁻¹ k(z)‖²`.
//!
//! An optional grid cache stores `W = L⁻¹ K(inputs, grid)` together with the
//! grid variances. Appending a point adds one row to `W` in `O(n · |grid|)`,
//! and means on the grid reduce to `Wᵀ c`.

use crate::error::{config, contract, Error, Result};
use crate::kernels::{sq_dist, KernelSpec, PointSet};
use crate::linalg::{dot, LowerTri, CHOLESKY_JITTER};

/// Negative variances down to this magnitude are rounding noise and read as 0.
pub const VARIANCE_SLACK: f64 = 1e-10;

#[derive(Debug, Clone)]
struct GridCache {
    grid: PointSet,
    /// Row `i` is `L⁻¹ K(inputs, grid)` restricted to row `i`.
    rows: Vec<Vec<f64>>,
    var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Regressor {
    kernel: KernelSpec,
    tau: f64,
    inputs: Option<PointSet>,
    targets: Vec<f64>,
    chol: LowerTri,
    whitened: Vec<f64>,
    weights: Vec<f64>,
    cache: Option<GridCache>,
}

impl Regressor {
    pub fn new(kernel: KernelSpec, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(config(format!("tau must be positive, got {tau}")));
        }
        Ok(Self {
            kernel,
            tau,
            inputs: None,
            targets: Vec::new(),
            chol: LowerTri::new(),
            whitened: Vec::new(),
            weights: Vec::new(),
            cache: None,
        })
    }

    /// Batch construction from a dense factorization of `K + τ² I`.
    pub fn fit(kernel: KernelSpec, tau: f64, points: &PointSet, targets: &[f64]) -> Result<Self> {
        let mut reg = Self::new(kernel, tau)?;
        if points.len() != targets.len() {
            return Err(contract(format!(
                "{} inputs but {} targets",
                points.len(),
                targets.len()
            )));
        }
        if points.is_empty() {
            return Ok(reg);
        }
        let mut k = kernel.gram(points);
        k.add_diagonal(tau * tau);
        reg.chol = LowerTri::factor(&k)?;
        reg.inputs = Some(points.clone());
        reg.targets = targets.to_vec();
        reg.resolve();
        Ok(reg)
    }

    /// Attaches a fixed evaluation grid whose variances are maintained on append.
    pub fn attach_grid_cache(&mut self, grid: PointSet) -> Result<()> {
        if let Some(inputs) = &self.inputs {
            if inputs.dim() != grid.dim() {
                return Err(contract("grid dimension differs from the regressor inputs"));
            }
        }
        let prior = self.kernel.eval_sq_dist(0.0);
        let mut cache = GridCache {
            var: vec![prior; grid.len()],
            rows: Vec::with_capacity(self.len()),
            grid,
        };
        for i in 0..self.len() {
            let z = self.inputs.as_ref().map(|p| p.get(i).to_vec()).unwrap_or_default();
            let row = self.chol.row(i).to_vec();
            extend_cache(&mut cache, &self.kernel, &z, &row[..i], row[i]);
        }
        self.cache = Some(cache);
        Ok(())
    }

    pub fn has_grid_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.as_ref().expect("index into an empty regressor").get(i)
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cholesky(&self) -> &LowerTri {
        &self.chol
    }

    /// Adds one observation, extending the factor by a single row.
    pub fn append(&mut self, z: &[f64], y: f64) -> Result<()> {
        if !y.is_finite() {
            return Err(contract(format!("non-finite target {y}")));
        }
        if let Some(cache) = &self.cache {
            if cache.grid.dim() != z.len() {
                return Err(contract("point dimension differs from the cached grid"));
            }
        }
        let k_vec = match &self.inputs {
            Some(inputs) => self.kernel.cross(inputs, z)?,
            None => Vec::new(),
        };
        let row = self.chol.forward_solve(&k_vec);
        let mut d2 = self.kernel.eval_sq_dist(0.0) + self.tau * self.tau - dot(&row, &row);
        if !(d2 > 0.0) {
            d2 += CHOLESKY_JITTER;
            if !(d2 > 0.0) {
                return Err(Error::Numerical(format!(
                    "Cholesky extension produced non-positive pivot {d2:e}"
                )));
            }
        }
        let diag = d2.sqrt();

        if let Some(cache) = self.cache.as_mut() {
            extend_cache(cache, &self.kernel, z, &row, diag);
        }
        let c_new = (y - dot(&row, &self.whitened)) / diag;
        self.chol.push_row(row, diag);
        match self.inputs.as_mut() {
            Some(inputs) => inputs.push(z)?,
            None => self.inputs = Some(PointSet::from_flat(z.len(), z.to_vec())?),
        }
        self.targets.push(y);
        self.whitened.push(c_new);
        self.weights = self.chol.backward_solve(&self.whitened);
        Ok(())
    }

    /// Replaces the observation vector while keeping inputs and factor.
    pub fn set_targets(&mut self, y: &[f64]) -> Result<()> {
        if y.len() != self.len() {
            return Err(contract(format!(
                "{} targets for {} inputs",
                y.len(),
                self.len()
            )));
        }
        self.targets.clear();
        self.targets.extend_from_slice(y);
        self.resolve();
        Ok(())
    }

    fn resolve(&mut self) {
        self.whitened = self.chol.forward_solve(&self.targets);
        self.weights = self.chol.backward_solve(&self.whitened);
    }

    fn cross(&self, z: &[f64]) -> Result<Vec<f64>> {
        match &self.inputs {
            Some(inputs) => self.kernel.cross(inputs, z),
            None => Ok(Vec::new()),
        }
    }

    pub fn predict_mean(&self, z: &[f64]) -> Result<f64> {
        Ok(dot(&self.cross(z)?, &self.weights))
    }

    pub fn predict_var(&self, z: &[f64]) -> Result<f64> {
        let w = self.chol.forward_solve(&self.cross(z)?);
        clamp_variance(self.kernel.eval_sq_dist(0.0) - dot(&w, &w))
    }

    /// Index and value of the largest posterior variance over `grid`, lowest
    /// index on ties. Uses the cached variances when `grid` is the cached grid.
    pub fn grid_argmax_var(&self, grid: &PointSet) -> Result<(usize, f64)> {
        if grid.is_empty() {
            return Err(contract("argmax over an empty grid"));
        }
        if let Some(cache) = &self.cache {
            if cache.grid == *grid {
                return self.cached_argmax_var_in(0..grid.len());
            }
        }
        let mut best = (0, f64::NEG_INFINITY);
        for (j, z) in grid.iter().enumerate() {
            let v = self.predict_var(z)?;
            if v > best.1 {
                best = (j, v);
            }
        }
        Ok(best)
    }

    /// Cached variance at grid index `j`.
    pub fn cached_var(&self, j: usize) -> Result<f64> {
        let cache = self.cache.as_ref().ok_or_else(|| contract("no grid cache attached"))?;
        clamp_variance(cache.var[j])
    }

    /// Argmax of the cached variance over a contiguous block of grid indices.
    pub fn cached_argmax_var_in(&self, range: std::ops::Range<usize>) -> Result<(usize, f64)> {
        let cache = self.cache.as_ref().ok_or_else(|| contract("no grid cache attached"))?;
        let mut best = (range.start, f64::NEG_INFINITY);
        for j in range {
            if cache.var[j] > best.1 {
                best = (j, cache.var[j]);
            }
        }
        Ok((best.0, clamp_variance(best.1)?))
    }

    /// Posterior means over a contiguous block of cached grid indices.
    pub fn cached_mean_in(&self, range: std::ops::Range<usize>) -> Result<Vec<f64>> {
        self.cached_mean_whitened(&self.whitened, range)
    }

    /// `L⁻¹ y` for an arbitrary target vector, leaving the regressor untouched.
    pub fn whiten(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.len() {
            return Err(contract(format!("{} targets for {} inputs", y.len(), self.len())));
        }
        Ok(self.chol.forward_solve(y))
    }

    /// Grid means for the targets whose whitened form is `c` (see [`Self::whiten`]).
    pub fn cached_mean_whitened(&self, c: &[f64], range: std::ops::Range<usize>) -> Result<Vec<f64>> {
        let cache = self.cache.as_ref().ok_or_else(|| contract("no grid cache attached"))?;
        if c.len() != cache.rows.len() {
            return Err(contract("whitened target length differs from the data size"));
        }
        let mut out = vec![0.0; range.len()];
        for (row, &ci) in cache.rows.iter().zip(c) {
            for (o, w) in out.iter_mut().zip(&row[range.clone()]) {
                *o += ci * w;
            }
        }
        Ok(out)
    }

    /// Realized information gain ½ log det(I + K/τ²) = Σ log(Lᵢᵢ / τ).
    pub fn information_gain(&self) -> f64 {
        (0..self.len()).map(|i| (self.chol.diag(i) / self.tau).ln()).sum()
    }
}

fn extend_cache(cache: &mut GridCache, kernel: &KernelSpec, z: &[f64], row: &[f64], diag: f64) {
    let mut w: Vec<f64> = cache.grid.iter().map(|g| kernel.eval_sq_dist(sq_dist(g, z))).collect();
    for (&l, prev) in row.iter().zip(&cache.rows) {
        for (wj, pj) in w.iter_mut().zip(prev) {
            *wj -= l * pj;
        }
    }
    for (wj, vj) in w.iter_mut().zip(cache.var.iter_mut()) {
        *wj /= diag;
        *vj -= *wj * *wj;
    }
    cache.rows.push(w);
}

fn clamp_variance(v: f64) -> Result<f64> {
    if v >= 0.0 {
        Ok(v)
    } else if v >= -VARIANCE_SLACK {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("posterior variance {v:e} is negative")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{linspace01, KernelFamily};
    use approx::assert_abs_diff_eq;

    fn se() -> KernelSpec {
        KernelSpec::new(KernelFamily::SquaredExponential, 0.1).unwrap()
    }

    #[test]
    fn empty_regressor_is_the_prior() {
        let reg = Regressor::new(se(), 0.01).unwrap();
        assert_eq!(reg.len(), 0);
        assert_eq!(reg.predict_mean(&[0.2, 0.3]).unwrap(), 0.0);
        assert_eq!(reg.predict_var(&[0.2, 0.3]).unwrap(), 1.0);
        assert_eq!(reg.information_gain(), 0.0);
        assert!(Regressor::new(se(), 0.0).is_err());
        assert!(Regressor::new(se(), -1.0).is_err());
    }

    #[test]
    fn one_point_by_hand() {
        let mut reg = Regressor::new(se(), 0.5).unwrap();
        reg.append(&[0.3], 1.0).unwrap();
        assert_abs_diff_eq!(reg.cholesky().diag(0), 1.25f64.sqrt(), epsilon = 1e-15);
        assert_abs_diff_eq!(reg.predict_mean(&[0.3]).unwrap(), 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(reg.predict_var(&[0.3]).unwrap(), 0.2, epsilon = 1e-15);

        let mut unit = Regressor::new(se(), 1.0).unwrap();
        unit.append(&[0.3], 0.0).unwrap();
        assert_abs_diff_eq!(unit.information_gain(), 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(unit.information_gain(), 0.34657, epsilon = 1e-5);
    }

    #[test]
    fn set_targets_linearity_and_errors() {
        let mut reg = Regressor::new(se(), 0.1).unwrap();
        for (i, x) in [0.1, 0.15, 0.6].iter().enumerate() {
            reg.append(&[*x], i as f64 - 0.5).unwrap();
        }
        let old = reg.weights().to_vec();
        let doubled: Vec<f64> = reg.targets().iter().map(|y| 2.0 * y).collect();
        reg.set_targets(&doubled).unwrap();
        for (a, b) in reg.weights().iter().zip(&old) {
            assert_eq!(*a, 2.0 * b);
        }
        reg.set_targets(&[0.0; 3]).unwrap();
        assert!(reg.weights().iter().all(|w| *w == 0.0));
        assert_eq!(reg.predict_mean(&[0.12]).unwrap(), 0.0);
        assert!(matches!(reg.set_targets(&[1.0]), Err(Error::Contract(_))));
    }

    #[test]
    fn append_dimension_mismatch() {
        let mut reg = Regressor::new(se(), 0.1).unwrap();
        reg.append(&[0.1, 0.2], 1.0).unwrap();
        assert!(reg.append(&[0.1], 1.0).is_err());
        assert!(reg.predict_var(&[0.1]).is_err());
    }

    #[test]
    fn duplicate_points_stay_factorizable() {
        let mut reg = Regressor::new(se(), 1e-6).unwrap();
        for _ in 0..20 {
            reg.append(&[0.5], 1.0).unwrap();
        }
        assert!((0..20).all(|i| reg.cholesky().diag(i) > 0.0));
        assert!(reg.predict_var(&[0.5]).unwrap() <= 1e-10);
    }

    fn grid(m: usize) -> PointSet {
        let ax = linspace01(m);
        PointSet::product(&[&ax, &ax])
    }

    #[test]
    fn argmax_prefers_lowest_index_then_moves_away() {
        let g = grid(6);
        let mut reg = Regressor::new(se(), 0.01).unwrap();
        assert_eq!(reg.grid_argmax_var(&g).unwrap(), (0, 1.0));
        reg.append(g.get(0), 0.0).unwrap();
        let (idx, v) = reg.grid_argmax_var(&g).unwrap();
        assert_ne!(idx, 0);
        assert!(reg.predict_var(g.get(0)).unwrap() < v);
        assert!(reg.grid_argmax_var(&PointSet::new(2)).is_err());
    }

    #[test]
    fn cache_matches_brute_force() {
        let g = grid(7);
        let mut cached = Regressor::new(se(), 0.05).unwrap();
        cached.attach_grid_cache(g.clone()).unwrap();
        let mut plain = Regressor::new(se(), 0.05).unwrap();
        for step in 0..12 {
            let a = cached.grid_argmax_var(&g).unwrap();
            let b = plain.grid_argmax_var(&g).unwrap();
            assert_eq!(a.0, b.0);
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-10);
            let y = (step as f64).sin();
            cached.append(g.get(a.0), y).unwrap();
            plain.append(g.get(b.0), y).unwrap();
        }
        let means = cached.cached_mean_in(0..g.len()).unwrap();
        for (j, z) in g.iter().enumerate() {
            assert_abs_diff_eq!(means[j], plain.predict_mean(z).unwrap(), epsilon = 1e-10);
            assert_abs_diff_eq!(cached.cached_var(j).unwrap(), plain.predict_var(z).unwrap(), epsilon = 1e-10);
        }
    }

    #[test]
    fn late_attached_cache_equals_early() {
        let g = grid(5);
        let mut early = Regressor::new(se(), 0.2).unwrap();
        early.attach_grid_cache(g.clone()).unwrap();
        let mut late = Regressor::new(se(), 0.2).unwrap();
        for j in [3usize, 17, 9] {
            early.append(g.get(j), j as f64).unwrap();
            late.append(g.get(j), j as f64).unwrap();
        }
        late.attach_grid_cache(g.clone()).unwrap();
        for j in 0..g.len() {
            assert_abs_diff_eq!(early.cached_var(j).unwrap(), late.cached_var(j).unwrap(), epsilon = 1e-12);
        }
    }
}
