//! Stage 1: per-series maximum likelihood for length-scale, marginal
//! variance and observation noise.

use serde::{Deserialize, Serialize};

use super::simplex;
use super::Stage1Config;
use crate::data::MultiSeriesDataset;
use crate::error::{DmpError, Result};
use crate::filter::log_likelihood;
use crate::kernels::{CouplingMatrix, MaternHyper, Smoothness};
use crate::ssm::JointStateSpaceModel;

pub const MIN_OBSERVATIONS: usize = 5;

/// Maximum-likelihood estimates for one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFit {
    pub ell: f64,
    /// Marginal variance of the latent process.
    pub variance: f64,
    pub tau2: f64,
    pub loglik: f64,
    /// Set when the optimum sits on a parameter bound or the noise explains
    /// almost all of the variance, so `ell` is poorly determined.
    pub weakly_identified: bool,
}

/// Univariate log-likelihood at `(ℓ, σ², τ²)`.
pub fn univariate_loglik(
    series: &MultiSeriesDataset,
    nu: Smoothness,
    ell: f64,
    variance: f64,
    tau2: f64,
) -> Result<f64> {
    let hyper = MaternHyper::new(nu, ell)?;
    let coupling = CouplingMatrix::diagonal(&[variance / nu.unit_variance()])?;
    let model = JointStateSpaceModel::new(vec![hyper], coupling)?;
    log_likelihood(&model, series, &[tau2])
}

struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    fn near_edge(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .any(|(v, (lo, hi))| (v - lo).abs() < 0.05 || (hi - v).abs() < 0.05)
    }
}

/// Length-scale guess from the lag-one autocorrelation of consecutive
/// observations.
fn autocorrelation_guess(times: &[f64], values: &[f64], nu: Smoothness) -> Option<f64> {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let denom: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let numer: f64 = values.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    let rho = numer / denom;
    let gap = (times[n - 1] - times[0]) / (n - 1) as f64;
    (rho > 0.0 && rho < 1.0).then(|| -gap * (2.0 * nu.nu()).sqrt() / rho.ln())
}

/// Fits one series given as a single-series dataset.
pub fn fit_series(series: &MultiSeriesDataset, nu: Smoothness, cfg: &Stage1Config) -> Result<SeriesFit> {
    let obs = series.series_observations(0);
    if obs.len() < MIN_OBSERVATIONS {
        return Err(DmpError::TooFewObservations {
            series: 0,
            found: obs.len(),
            required: MIN_OBSERVATIONS,
        });
    }
    let times: Vec<f64> = obs.iter().map(|o| o.0).collect();
    let values: Vec<f64> = obs.iter().map(|o| o.1).collect();
    let span = times[times.len() - 1] - times[0];
    let min_gap = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (_, var) = series.observed_moments(0).expect("non-empty series");
    // Second moment about zero: the model is mean-zero, so an offset counts as signal.
    let power = values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64;
    let scale = power.max(var).max(f64::MIN_POSITIVE);

    let bounds = Bounds {
        lo: [(min_gap * 1e-2).ln(), (scale * 1e-8).ln(), (scale * 1e-10).ln()],
        hi: [(span * 1e2).ln(), (scale * 1e3).ln(), (scale * 1e3).ln()],
    };
    let objective = |x: &[f64]| -> f64 {
        if !bounds.contains(x) {
            return f64::INFINITY;
        }
        match univariate_loglik(series, nu, x[0].exp(), x[1].exp(), x[2].exp()) {
            Ok(ll) => -ll,
            Err(_) => f64::INFINITY,
        }
    };

    let mut starts: Vec<f64> = [span / 20.0, span / 5.0, span / 2.0].to_vec();
    if let Some(guess) = autocorrelation_guess(&times, &values, nu) {
        starts.push(guess.clamp(min_gap, span * 10.0));
    }
    starts.truncate(cfg.restarts.max(1));

    let mut best: Option<simplex::SimplexResult> = None;
    for ell0 in starts {
        let x0 = [ell0.ln(), (0.9 * scale).ln(), (0.1 * scale).ln()];
        let mut result = simplex::minimize(objective, &x0, &[1.0, 1.0, 1.0], cfg.max_iter, cfg.tolerance);
        // A second pass from the optimum guards against a collapsed simplex.
        if result.value.is_finite() {
            let again = simplex::minimize(objective, &result.x, &[0.3, 0.3, 0.3], cfg.max_iter, cfg.tolerance);
            if again.value <= result.value {
                result = again;
            }
        }
        if result.value.is_finite() && best.as_ref().map_or(true, |b| result.value < b.value) {
            best = Some(result);
        }
    }
    let best = best.ok_or_else(|| DmpError::OptimizerFailed("every restart diverged".into()))?;
    let (ell, variance, tau2) = (best.x[0].exp(), best.x[1].exp(), best.x[2].exp());
    let weakly_identified = bounds.near_edge(&best.x) || tau2 > 9.0 * variance;
    Ok(SeriesFit {
        ell,
        variance,
        tau2,
        loglik: -best.value,
        weakly_identified,
    })
}

/// Fits every series independently, in parallel threads.
pub fn fit_lengthscales(data: &MultiSeriesDataset, nu: Smoothness, cfg: &Stage1Config) -> Result<Vec<SeriesFit>> {
    let p = data.n_series();
    for j in 0..p {
        let found = data.series_observations(j).len();
        if found < MIN_OBSERVATIONS {
            return Err(DmpError::TooFewObservations {
                series: j,
                found,
                required: MIN_OBSERVATIONS,
            });
        }
    }
    let singles = (0..p).map(|j| data.single_series(j)).collect::<Result<Vec<_>>>()?;
    let results: Vec<Result<SeriesFit>> = std::thread::scope(|scope| {
        let handles: Vec<_> = singles
            .iter()
            .map(|s| scope.spawn(move || fit_series(s, nu, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stage-1 worker panicked"))
            .collect()
    });
    results.into_iter().collect()
}
