//! Two-stage inference: per-series maximum likelihood for the length-scales,
//! then Metropolis-Hastings over the coupling and noise variances.

mod mcmc;
pub mod simplex;
mod stage1;

use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};
use crate::kernels::Smoothness;

pub use mcmc::{
    empirical_correlation, initial_coupling, mh_sample, mh_sample_chains, mh_sample_from, quantile, summarize,
    ChainState, Posterior, PosteriorSamples, PosteriorSummary,
};
pub use stage1::{fit_lengthscales, fit_series, univariate_loglik, SeriesFit, MIN_OBSERVATIONS};

/// Observation noise is kept above this fraction of each series' variance.
pub const NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage1Config {
    pub restarts: usize,
    pub max_iter: usize,
    pub tolerance: f64,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_iter: 1500,
            tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stage2Config {
    pub chain_length: usize,
    pub burn_in: usize,
    /// Initial random-walk scale for `L` rows, relative to each series'
    /// input-noise standard deviation.
    pub l_step: f64,
    /// Initial random-walk scale for `log τ²`.
    pub log_tau2_step: f64,
    pub adapt: bool,
    pub target_acceptance: f64,
    pub thin: usize,
    pub seed: u64,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            chain_length: 5000,
            burn_in: 1000,
            l_step: 0.05,
            log_tau2_step: 0.2,
            adapt: true,
            target_acceptance: 0.25,
            thin: 1,
            seed: 0,
        }
    }
}

impl Stage2Config {
    pub fn validate(&self) -> Result<()> {
        if self.chain_length <= self.burn_in {
            return Err(DmpError::validation(format!(
                "chain length ({}) must exceed burn-in ({})",
                self.chain_length, self.burn_in
            )));
        }
        if !(self.l_step > 0.0 && self.log_tau2_step > 0.0) {
            return Err(DmpError::validation("proposal scales must be positive"));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(DmpError::validation("target acceptance must lie in (0, 1)"));
        }
        if self.thin == 0 {
            return Err(DmpError::validation("thin must be at least 1"));
        }
        Ok(())
    }
}

/// Priors on `L` entries and `log τ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// `L` entries are `N(0, s²)` with `s` this multiple of the pooled
    /// empirical standard deviation.
    pub l_scale_factor: f64,
    /// `log τ²_j` is centred at `log(fraction · var_j)`.
    pub tau2_center_fraction: f64,
    pub log_tau2_sd: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            l_scale_factor: 2.0,
            tau2_center_fraction: 0.01,
            log_tau2_sd: 1.5,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_scale_factor > 0.0 && self.tau2_center_fraction > 0.0 && self.log_tau2_sd > 0.0) {
            return Err(DmpError::validation("prior settings must be positive"));
        }
        Ok(())
    }
}

/// Full inference settings. Smoothness and rank are explicit modelling
/// choices and have no defaults.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub nu: Smoothness,
    pub rank: usize,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub priors: PriorConfig,
}

impl InferenceConfig {
    pub fn new(nu: Smoothness, rank: usize) -> Self {
        Self {
            nu,
            rank,
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            priors: PriorConfig::default(),
        }
    }

    pub fn validate(&self, n_series: usize) -> Result<()> {
        if self.rank == 0 || self.rank > n_series {
            return Err(DmpError::validation(format!(
                "rank R = {} must lie in 1..={n_series}",
                self.rank
            )));
        }
        if self.stage1.restarts == 0 || self.stage1.max_iter == 0 {
            return Err(DmpError::validation("stage 1 needs at least one restart and iteration"));
        }
        self.stage2.validate()?;
        self.priors.validate()
    }
}
