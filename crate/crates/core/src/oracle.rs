//! Dense `O(N³)` Gaussian-process reference built directly from the
//! closed-form cross-covariances. Shares no code with the state-space path
//! apart from the kernel definitions, so agreement between the two is a
//! meaningful check.

use nalgebra::{DMatrix, DVector};

use crate::data::MultiSeriesDataset;
use crate::error::{DmpError, Result};
use crate::kernels::{common_smoothness, cross_covariance, CouplingMatrix, MaternHyper};
use crate::numerics::{cholesky_factor, mvn_logpdf};

/// `(series, time)` locations.
pub type Point = (usize, f64);

/// Observed entries of a dataset flattened as `(series, time, value)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedObservationSet {
    pub entries: Vec<(usize, f64, f64)>,
}

impl IndexedObservationSet {
    pub fn from_dataset(data: &MultiSeriesDataset) -> Self {
        let mut entries = Vec::with_capacity(data.n_observed());
        for k in 0..data.n_times() {
            for j in 0..data.n_series() {
                if data.is_observed(k, j) {
                    entries.push((j, data.times()[k], data.value(k, j)));
                }
            }
        }
        Self { entries }
    }

    pub fn points(&self) -> Vec<Point> {
        self.entries.iter().map(|&(j, t, _)| (j, t)).collect()
    }

    pub fn values(&self) -> DVector<f64> {
        DVector::from_iterator(self.entries.len(), self.entries.iter().map(|e| e.2))
    }

    /// Gram matrix plus per-entry observation noise.
    pub fn noisy_gram(&self, hypers: &[MaternHyper], coupling: &CouplingMatrix, tau2: &[f64]) -> Result<DMatrix<f64>> {
        let mut g = dense_gram(&self.points(), hypers, coupling)?;
        for (a, &(j, _, _)) in self.entries.iter().enumerate() {
            g[(a, a)] += tau2[j];
        }
        Ok(g)
    }
}

fn cross_block(a: &[Point], b: &[Point], hypers: &[MaternHyper], coupling: &CouplingMatrix) -> Result<DMatrix<f64>> {
    let mut g = DMatrix::zeros(a.len(), b.len());
    for (r, &(i, s)) in a.iter().enumerate() {
        for (c, &(j, t)) in b.iter().enumerate() {
            g[(r, c)] = cross_covariance(s, t, i, j, hypers, coupling)?;
        }
    }
    Ok(g)
}

/// Gram matrix `G[a, b] = κ(points[a], points[b])`.
pub fn dense_gram(points: &[Point], hypers: &[MaternHyper], coupling: &CouplingMatrix) -> Result<DMatrix<f64>> {
    common_smoothness(hypers)?;
    cross_block(points, points, hypers, coupling)
}

fn check(data: &MultiSeriesDataset, hypers: &[MaternHyper], tau2: &[f64]) -> Result<()> {
    if data.n_series() != hypers.len() || tau2.len() != hypers.len() {
        return Err(DmpError::validation("series count mismatch between data and parameters"));
    }
    Ok(())
}

/// Exact GP marginal log-likelihood of the observed entries.
pub fn dense_loglik(
    data: &MultiSeriesDataset,
    hypers: &[MaternHyper],
    coupling: &CouplingMatrix,
    tau2: &[f64],
) -> Result<f64> {
    check(data, hypers, tau2)?;
    let obs = IndexedObservationSet::from_dataset(data);
    if obs.entries.is_empty() {
        return Ok(0.0);
    }
    let g = obs.noisy_gram(hypers, coupling, tau2)?;
    let y = obs.values();
    mvn_logpdf(&y, &DVector::zeros(y.len()), &g)
}

/// Posterior mean and latent variance at each target.
pub fn dense_posterior(
    data: &MultiSeriesDataset,
    targets: &[Point],
    hypers: &[MaternHyper],
    coupling: &CouplingMatrix,
    tau2: &[f64],
) -> Result<Vec<(f64, f64)>> {
    check(data, hypers, tau2)?;
    let obs = IndexedObservationSet::from_dataset(data);
    let prior_var = |&(j, t): &Point| cross_covariance(t, t, j, j, hypers, coupling);
    if obs.entries.is_empty() {
        return targets.iter().map(|pt| Ok((0.0, prior_var(pt)?))).collect();
    }
    let g = obs.noisy_gram(hypers, coupling, tau2)?;
    let chol = cholesky_factor(&g)?;
    let g_star = cross_block(&obs.points(), targets, hypers, coupling)?;
    let alpha = chol.solve(&obs.values());
    let mean = g_star.transpose() * alpha;
    let l = chol.l();
    let v = l
        .solve_lower_triangular(&g_star)
        .ok_or_else(|| DmpError::not_pd("dense posterior solve"))?;
    targets
        .iter()
        .enumerate()
        .map(|(c, pt)| {
            let explained = v.column(c).norm_squared();
            Ok((mean[c], (prior_var(pt)? - explained).max(0.0)))
        })
        .collect()
}
