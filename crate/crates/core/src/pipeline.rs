//! End-to-end runs: fit, sample, predict and the synthetic benchmark.

use std::path::Path;

use nalgebra::DMatrix;

use crate::data::MultiSeriesDataset;
use crate::error::{DmpError, Result};
use crate::filter::{predict_missing, Prediction};
use crate::inference::{
    fit_lengthscales, mh_sample_chains, summarize, ChainState, InferenceConfig, PosteriorSamples, SeriesFit,
};
use crate::io::{
    coverage, predictions_to_csv, smse_by_series, write_text, ConfigFile, FitRecord, Metrics, PosteriorRecord,
    Provenance, RunArtifacts,
};
use crate::kernels::{CouplingMatrix, MaternHyper, Smoothness};
use crate::oracle::dense_posterior;
use crate::simulate::synth_benchmark;
use crate::ssm::JointStateSpaceModel;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// The dense engine refuses datasets with more observed entries than this.
pub const DENSE_MAX_OBSERVED: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Ssm,
    Dense,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Subtract each series' observed mean before modelling.
    pub center: bool,
    pub chains: usize,
    /// Predict with the final chain state instead of posterior means.
    pub use_last_sample: bool,
    pub engine: Engine,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            center: true,
            chains: 1,
            use_last_sample: false,
            engine: Engine::Ssm,
        }
    }
}

/// Parameters of a fully specified model plus the centring offsets.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub nu: Smoothness,
    pub ell: Vec<f64>,
    pub coupling: CouplingMatrix,
    pub tau2: Vec<f64>,
    pub offsets: Vec<f64>,
}

impl ModelParams {
    pub fn hypers(&self) -> Result<Vec<MaternHyper>> {
        self.ell.iter().map(|&l| MaternHyper::new(self.nu, l)).collect()
    }

    pub fn model(&self) -> Result<JointStateSpaceModel> {
        JointStateSpaceModel::new(self.hypers()?, self.coupling.clone())
    }

    /// Independent-series model from stage-1 fits alone.
    pub fn from_fits(nu: Smoothness, fits: &[SeriesFit], offsets: Vec<f64>) -> Result<Self> {
        let variances: Vec<f64> = fits.iter().map(|f| f.variance / nu.unit_variance()).collect();
        Ok(Self {
            nu,
            ell: fits.iter().map(|f| f.ell).collect(),
            coupling: CouplingMatrix::diagonal(&variances)?,
            tau2: fits.iter().map(|f| f.tau2).collect(),
            offsets,
        })
    }

    /// Reads parameters back from a run report. Uses the posterior when one
    /// is present (means, or the last draw), else the stage-1 fits.
    pub fn from_artifacts(art: &RunArtifacts, use_last_sample: bool) -> Result<Self> {
        let nu = Smoothness::from_nu(art.nu)?;
        let p = art.series.len();
        if art.fits.len() != p || art.offsets.len() != p {
            return Err(DmpError::validation("run report is inconsistent with its series list"));
        }
        let fits = art.stage1_fits();
        let Some(post) = &art.posterior else {
            return Self::from_fits(nu, &fits, art.offsets.clone());
        };
        let (c_rows, tau2) = if use_last_sample {
            (&post.last_c, &post.last_tau2)
        } else {
            (&post.summary.mean_c, &post.summary.mean_tau2)
        };
        if c_rows.len() != p || c_rows.iter().any(|r| r.len() != p) || tau2.len() != p {
            return Err(DmpError::validation("posterior block has the wrong dimensions"));
        }
        let c = DMatrix::from_fn(p, p, |i, j| c_rows[i][j]);
        Ok(Self {
            nu,
            ell: fits.iter().map(|f| f.ell).collect(),
            coupling: CouplingMatrix::from_covariance(&c)?,
            tau2: tau2.clone(),
            offsets: art.offsets.clone(),
        })
    }
}

/// Observed mean of every series, or zeros when centring is off.
pub fn offsets(data: &MultiSeriesDataset, center: bool) -> Vec<f64> {
    (0..data.n_series())
        .map(|j| {
            if center {
                data.observed_moments(j).map_or(0.0, |m| m.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn provenance(command: &str, cfg: &InferenceConfig, data: &MultiSeriesDataset) -> Provenance {
    let file = ConfigFile {
        stage1: cfg.stage1.clone(),
        stage2: cfg.stage2.clone(),
        priors: cfg.priors.clone(),
    };
    let times = data.times();
    Provenance {
        version: VERSION.to_string(),
        command: command.to_string(),
        seed: cfg.stage2.seed,
        config_hash: crate::io::config_hash(&file),
        data_time_range: [times[0], times[times.len() - 1]],
    }
}

fn fit_records(data: &MultiSeriesDataset, fits: &[SeriesFit]) -> Vec<FitRecord> {
    fits.iter()
        .zip(data.names())
        .map(|(f, name)| FitRecord {
            series: name.clone(),
            ell: f.ell,
            variance: f.variance,
            tau2: f.tau2,
            loglik: f.loglik,
            weakly_identified: f.weakly_identified,
        })
        .collect()
}

/// Stage 1 only.
pub fn run_fit(data: &MultiSeriesDataset, cfg: &InferenceConfig, opts: &RunOptions) -> Result<RunArtifacts> {
    cfg.validate(data.n_series())?;
    let offsets = offsets(data, opts.center);
    let centred = data.shifted(&offsets);
    let fits = fit_lengthscales(&centred, cfg.nu, &cfg.stage1)?;
    Ok(RunArtifacts {
        provenance: provenance("fit", cfg, data),
        nu: cfg.nu.nu(),
        series: data.names().to_vec(),
        offsets,
        fits: fit_records(data, &fits),
        posterior: None,
        metrics: Metrics::default(),
    })
}

/// Stages 1 and 2. Stage 1 is skipped when `previous` carries fits.
pub fn run_sample(
    data: &MultiSeriesDataset,
    cfg: &InferenceConfig,
    opts: &RunOptions,
    previous: Option<&RunArtifacts>,
) -> Result<(RunArtifacts, Vec<PosteriorSamples>)> {
    cfg.validate(data.n_series())?;
    let mut art = match previous {
        Some(prev) => {
            if prev.series != data.names() {
                return Err(DmpError::validation("fit report was produced for different series"));
            }
            if prev.nu != cfg.nu.nu() {
                return Err(DmpError::MixedSmoothness);
            }
            RunArtifacts {
                provenance: provenance("sample", cfg, data),
                posterior: None,
                metrics: Metrics::default(),
                ..prev.clone()
            }
        }
        None => run_fit(data, cfg, opts)?,
    };
    art.provenance = provenance("sample", cfg, data);
    let centred = data.shifted(&art.offsets);
    let fits = art.stage1_fits();
    let chains = mh_sample_chains(
        &centred,
        &fits,
        cfg.nu,
        cfg.rank,
        &cfg.stage2,
        &cfg.priors,
        opts.chains,
    )?;
    let pooled: Vec<ChainState> = chains.iter().flat_map(|c| c.draws.iter().cloned()).collect();
    let summary = summarize(&pooled)?;
    let rates: Vec<f64> = chains.iter().filter_map(|c| c.acceptance_rate).collect();
    let last = &chains[0].last;
    let last_c = last.c();
    let p = data.n_series();
    art.posterior = Some(PosteriorRecord {
        rank: cfg.rank,
        chains: chains.len(),
        acceptance_rate: (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64),
        summary,
        last_c: (0..p).map(|i| last_c.row(i).iter().copied().collect()).collect(),
        last_tau2: last.tau2.clone(),
    });
    Ok((art, chains))
}

/// Predictions for every masked entry, in original units.
pub fn predict(data: &MultiSeriesDataset, params: &ModelParams, engine: Engine) -> Result<Vec<Prediction>> {
    if params.ell.len() != data.n_series() || params.offsets.len() != data.n_series() {
        return Err(DmpError::validation("parameters do not match the number of series"));
    }
    let centred = data.shifted(&params.offsets);
    let mut preds = match engine {
        Engine::Ssm => predict_missing(&params.model()?, &centred, &params.tau2)?,
        Engine::Dense => dense_predictions(&centred, params)?,
    };
    for p in &mut preds {
        let o = params.offsets[p.series];
        p.mean += o;
        p.truth = p.truth.map(|t| t + o);
    }
    Ok(preds)
}

fn dense_predictions(data: &MultiSeriesDataset, params: &ModelParams) -> Result<Vec<Prediction>> {
    if data.n_observed() > DENSE_MAX_OBSERVED {
        return Err(DmpError::validation(format!(
            "dense engine is limited to {DENSE_MAX_OBSERVED} observed points, found {}",
            data.n_observed()
        )));
    }
    let mut targets = Vec::new();
    for j in 0..data.n_series() {
        for k in 0..data.n_times() {
            if !data.is_observed(k, j) {
                targets.push((k, j));
            }
        }
    }
    let points: Vec<(usize, f64)> = targets.iter().map(|&(k, j)| (j, data.times()[k])).collect();
    let post = dense_posterior(data, &points, &params.hypers()?, &params.coupling, &params.tau2)?;
    Ok(targets
        .iter()
        .zip(post)
        .map(|(&(k, j), (mean, var))| {
            let stored = data.value(k, j);
            Prediction {
                time: data.times()[k],
                series: j,
                mean,
                var_latent: var,
                var_predictive: var + params.tau2[j],
                truth: stored.is_finite().then_some(stored),
            }
        })
        .collect())
}

/// Copies values from `truth` into the masked entries of `data`, so that
/// predictions carry them as held-out truths. Times and series must match.
pub fn attach_truth(data: &MultiSeriesDataset, truth: &MultiSeriesDataset) -> Result<MultiSeriesDataset> {
    if data.times() != truth.times() || data.names() != truth.names() {
        return Err(DmpError::validation("truth file must have the same times and series as the data"));
    }
    let values = (0..data.n_times())
        .map(|k| {
            (0..data.n_series())
                .map(|j| {
                    if data.is_observed(k, j) || !truth.is_observed(k, j) {
                        data.value(k, j)
                    } else {
                        truth.value(k, j)
                    }
                })
                .collect()
        })
        .collect();
    MultiSeriesDataset::new(data.names().to_vec(), data.times().to_vec(), values, data.mask().to_vec())
}

/// SMSE and coverage over the predictions that carry a truth.
pub fn evaluate(preds: &[Prediction], names: &[String]) -> Result<Metrics> {
    let mut metrics = Metrics {
        n_predictions: preds.len(),
        coverage: coverage(preds),
        ..Metrics::default()
    };
    if metrics.coverage.is_some() {
        let report = smse_by_series(preds)?;
        metrics.smse = Some(report.average);
        metrics.smse_per_series = report
            .per_series
            .iter()
            .map(|&(j, s)| (names[j].clone(), s))
            .collect();
    }
    Ok(metrics)
}

/// Outcome of the synthetic benchmark.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub artifacts: RunArtifacts,
    pub predictions: Vec<Prediction>,
    pub dataset: MultiSeriesDataset,
}

/// The two-series benchmark with `ν = 1/2`, `R = 2`: fit, sample, predict the
/// 41 held-out points. When `out_dir` is given, writes `data.csv` (training
/// view), `truth.csv` (all generated values), `predictions.csv` and
/// `report.json` there.
pub fn bench_synth(seed: u64, cfg: &InferenceConfig, opts: &RunOptions, out_dir: Option<&Path>) -> Result<BenchOutcome> {
    let bench = synth_benchmark(seed)?;
    let dataset = bench.dataset;
    let (mut art, _) = run_sample(&dataset, cfg, opts, None)?;
    art.provenance.command = "bench-synth".into();
    art.provenance.seed = seed;
    let params = ModelParams::from_artifacts(&art, opts.use_last_sample)?;
    let predictions = predict(&dataset, &params, opts.engine)?;
    art.metrics = evaluate(&predictions, dataset.names())?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| DmpError::io(dir, e))?;
        crate::io::write_dataset(&dataset, &dir.join("data.csv"))?;
        let full = dataset.with_mask(vec![vec![true; dataset.n_series()]; dataset.n_times()])?;
        crate::io::write_dataset(&full, &dir.join("truth.csv"))?;
        write_text(&dir.join("predictions.csv"), &predictions_to_csv(&predictions, dataset.names()))?;
        art.write(&dir.join("report.json"))?;
    }
    Ok(BenchOutcome {
        artifacts: art,
        predictions,
        dataset,
    })
}

/// Benchmark settings: `ν = 1/2`, `R = 2`, stage-2 seed derived from `seed`.
pub fn bench_config(seed: u64) -> InferenceConfig {
    let mut cfg = InferenceConfig::new(Smoothness::Half, 2);
    cfg.stage2.seed = seed;
    cfg
}
