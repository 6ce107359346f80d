//! Kalman filter, marginal likelihood and fixed-interval smoother for the
//! joint Matérn state-space model.
//!
//! The prior at the first timestamp is the stationary `N(0, Σ∞)`. At each
//! timestamp only the observed rows of `H̄` enter the update, so missing
//! entries need no imputation; a fully-missing step is a pure prediction.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::MultiSeriesDataset;
use crate::error::{DmpError, Result};
use crate::numerics::{cholesky_factor, logpdf_with_factor, symmetrize};
use crate::ssm::JointStateSpaceModel;

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub predicted_means: Vec<DVector<f64>>,
    pub predicted_covs: Vec<DMatrix<f64>>,
    pub filtered_means: Vec<DVector<f64>>,
    pub filtered_covs: Vec<DMatrix<f64>>,
    /// `transitions[k]` maps the state at `k − 1` to `k`; entry 0 is unused
    /// (identity).
    pub transitions: Vec<DMatrix<f64>>,
    /// Measurement update at each step; `None` when nothing was observed.
    pub innovations: Vec<Option<Innovation>>,
    pub loglik: f64,
}

/// Observed rows at one step and their prediction error.
#[derive(Debug, Clone)]
pub struct Innovation {
    /// State indices of the observed positions.
    pub state_index: Vec<usize>,
    pub residual: DVector<f64>,
    /// `H P⁻ Hᵀ + J`.
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SmootherResult {
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

fn validate(model: &JointStateSpaceModel, data: &MultiSeriesDataset, tau2: &[f64]) -> Result<()> {
    let p = model.n_series();
    if data.n_series() != p || tau2.len() != p {
        return Err(DmpError::validation(format!(
            "model has {p} series, data has {}, tau2 has {}",
            data.n_series(),
            tau2.len()
        )));
    }
    if let Some(bad) = tau2.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(DmpError::validation(format!("noise variance must be >= 0, got {bad}")));
    }
    if data.n_times() == 0 {
        return Err(DmpError::EmptyData);
    }
    Ok(())
}

/// Measurement update of `(mean, cov)` with the observed entries at step `k`.
/// Returns the innovation log-density contribution.
fn update(
    model: &JointStateSpaceModel,
    data: &MultiSeriesDataset,
    tau2: &[f64],
    k: usize,
    mean: &mut DVector<f64>,
    cov: &mut DMatrix<f64>,
) -> Result<(f64, Option<Innovation>)> {
    let observed: Vec<usize> = (0..data.n_series()).filter(|&j| data.is_observed(k, j)).collect();
    if observed.is_empty() {
        return Ok((0.0, None));
    }
    let m = observed.len();
    let idx: Vec<usize> = observed.iter().map(|&j| model.position_index(j)).collect();

    // H P Hᵀ + J and P Hᵀ are row/column selections because H picks positions.
    let mut s = DMatrix::from_fn(m, m, |a, b| cov[(idx[a], idx[b])]);
    for (a, &j) in observed.iter().enumerate() {
        s[(a, a)] += tau2[j];
    }
    let pht = DMatrix::from_fn(cov.nrows(), m, |r, b| cov[(r, idx[b])]);
    let resid = DVector::from_fn(m, |a, _| data.value(k, observed[a]) - mean[idx[a]]);

    let chol = cholesky_factor(&s).map_err(|_| DmpError::not_pd(format!("innovation covariance at step {k}")))?;
    let ll = logpdf_with_factor(&resid, &chol);
    // Gain K = P Hᵀ S⁻¹, applied via solves.
    let gain_t = chol.solve(&pht.transpose());
    *mean += gain_t.transpose() * &resid;
    // Joseph-equivalent for the optimal gain: P − K S Kᵀ, then symmetrize.
    let reduction = &pht * &gain_t;
    *cov = symmetrize(&(&*cov - reduction));
    Ok((
        ll,
        Some(Innovation {
            state_index: idx,
            residual: resid,
            covariance: s,
        }),
    ))
}

fn run_filter(
    model: &JointStateSpaceModel,
    data: &MultiSeriesDataset,
    tau2: &[f64],
    store: bool,
) -> Result<(f64, Option<FilterResult>)> {
    validate(model, data, tau2)?;
    let dim = model.state_dim();
    let n = data.n_times();
    let mut mean = DVector::zeros(dim);
    let mut cov = model.sigma_inf().clone();
    let mut loglik = 0.0;
    let mut out = store.then(|| FilterResult {
        predicted_means: Vec::with_capacity(n),
        predicted_covs: Vec::with_capacity(n),
        filtered_means: Vec::with_capacity(n),
        filtered_covs: Vec::with_capacity(n),
        transitions: Vec::with_capacity(n),
        innovations: Vec::with_capacity(n),
        loglik: 0.0,
    });
    let times = data.times();
    for k in 0..n {
        let transition = if k == 0 {
            None
        } else {
            let a = model.transition(times[k] - times[k - 1]);
            mean = &a * &mean;
            let q = model.process_noise(&a);
            cov = symmetrize(&(&a * &cov * a.transpose() + q));
            Some(a)
        };
        if let Some(out) = out.as_mut() {
            out.predicted_means.push(mean.clone());
            out.predicted_covs.push(cov.clone());
            out.transitions
                .push(transition.unwrap_or_else(|| DMatrix::identity(dim, dim)));
        }
        let (ll, innovation) = update(model, data, tau2, k, &mut mean, &mut cov)?;
        loglik += ll;
        if let Some(out) = out.as_mut() {
            out.innovations.push(innovation);
            out.filtered_means.push(mean.clone());
            out.filtered_covs.push(cov.clone());
        }
    }
    if !loglik.is_finite() {
        return Err(DmpError::not_pd("log-likelihood is not finite"));
    }
    if let Some(out) = out.as_mut() {
        out.loglik = loglik;
    }
    Ok((loglik, out))
}

/// Forward pass storing every predictive and filtered moment.
pub fn kalman_filter(
    model: &JointStateSpaceModel,
    data: &MultiSeriesDataset,
    tau2: &[f64],
) -> Result<FilterResult> {
    let (_, fr) = run_filter(model, data, tau2, true)?;
    Ok(fr.expect("stored filter output"))
}

/// Marginal log-likelihood only; no per-step storage.
pub fn log_likelihood(model: &JointStateSpaceModel, data: &MultiSeriesDataset, tau2: &[f64]) -> Result<f64> {
    run_filter(model, data, tau2, false).map(|(ll, _)| ll)
}

/// Smoothed moments of every state given all observations.
///
/// Uses the modified Bryson-Frazier backward recursion, which yields the
/// Rauch-Tung-Striebel moments without inverting the predictive covariance.
/// That covariance is badly conditioned when series with different
/// length-scales share a low-rank noise.
pub fn rts_smooth(fr: &FilterResult) -> Result<SmootherResult> {
    let n = fr.filtered_means.len();
    if n == 0 {
        return Err(DmpError::EmptyData);
    }
    let dim = fr.filtered_means[0].len();
    let mut means = Vec::with_capacity(n);
    let mut covs = Vec::with_capacity(n);
    // Adjoint mean and information of the observations after step k.
    let mut lam = DVector::zeros(dim);
    let mut info = DMatrix::zeros(dim, dim);
    for k in (0..n).rev() {
        let pf = &fr.filtered_covs[k];
        means.push(&fr.filtered_means[k] - pf * &lam);
        covs.push(symmetrize(&(pf - pf * &info * pf)));
        if let Some(inn) = &fr.innovations[k] {
            let chol = cholesky_factor(&inn.covariance)
                .map_err(|_| DmpError::not_pd(format!("innovation covariance at step {k}")))?;
            let idx = &inn.state_index;
            let m = idx.len();
            let h = DMatrix::from_fn(m, dim, |a, c| if idx[a] == c { 1.0 } else { 0.0 });
            let pred = &fr.predicted_covs[k];
            // C = I − K H with K = P⁻ Hᵀ S⁻¹.
            let sinv_h = chol.solve(&h);
            let ph = DMatrix::from_fn(dim, m, |r, b| pred[(r, idx[b])]);
            let c = DMatrix::identity(dim, dim) - ph * &sinv_h;
            lam = c.transpose() * lam - h.transpose() * chol.solve(&inn.residual);
            info = symmetrize(&(h.transpose() * sinv_h + c.transpose() * info * c));
        }
        if k > 0 {
            let a = &fr.transitions[k];
            lam = a.transpose() * lam;
            info = a.transpose() * info * a;
        }
    }
    means.reverse();
    covs.reverse();
    Ok(SmootherResult { means, covs })
}

/// Posterior of one `(series, time)` entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub time: f64,
    pub series: usize,
    pub mean: f64,
    /// Variance of the latent function value.
    pub var_latent: f64,
    /// Variance of a new noisy observation (`var_latent + τ²`).
    pub var_predictive: f64,
    /// Stored value of the entry when it is finite (held-out truth).
    pub truth: Option<f64>,
}

/// Smoothed position moments for every `(time, series)` entry.
pub fn smooth_positions(
    model: &JointStateSpaceModel,
    data: &MultiSeriesDataset,
    tau2: &[f64],
) -> Result<Vec<Prediction>> {
    let fr = kalman_filter(model, data, tau2)?;
    let sm = rts_smooth(&fr)?;
    let mut out = Vec::with_capacity(data.n_times() * data.n_series());
    for k in 0..data.n_times() {
        for j in 0..data.n_series() {
            let idx = model.position_index(j);
            let var_latent = sm.covs[k][(idx, idx)].max(0.0);
            let stored = data.value(k, j);
            out.push(Prediction {
                time: data.times()[k],
                series: j,
                mean: sm.means[k][idx],
                var_latent,
                var_predictive: var_latent + tau2[j],
                truth: stored.is_finite().then_some(stored),
            });
        }
    }
    Ok(out)
}

/// Posterior predictions for the masked entries, ordered by series then time.
pub fn predict_missing(
    model: &JointStateSpaceModel,
    data: &MultiSeriesDataset,
    tau2: &[f64],
) -> Result<Vec<Prediction>> {
    validate(model, data, tau2)?;
    if data.n_observed() == data.n_times() * data.n_series() {
        return Ok(Vec::new());
    }
    let mut preds: Vec<Prediction> = smooth_positions(model, data, tau2)?
        .into_iter()
        .enumerate()
        .filter(|(flat, _)| {
            let (k, j) = (flat / data.n_series(), flat % data.n_series());
            !data.is_observed(k, j)
        })
        .map(|(_, p)| p)
        .collect();
    preds.sort_by(|a, b| a.series.cmp(&b.series).then(a.time.total_cmp(&b.time)));
    Ok(preds)
}
