//! Stage 2: random-walk Metropolis-Hastings over the coupling factor `L`
//! and the log observation-noise variances, with length-scales held fixed.
//!
//! One iteration is a sweep over `p + 1` blocks: each row of `L`, then all
//! `log τ²` jointly. During burn-in each block's proposal scale is adapted
//! by Robbins-Monro towards the target acceptance; afterwards the scales
//! are frozen.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::stage1::SeriesFit;
use super::{PriorConfig, Stage2Config};
use crate::data::MultiSeriesDataset;
use crate::error::{DmpError, Result};
use crate::filter::log_likelihood;
use crate::kernels::{CouplingMatrix, MaternHyper, Smoothness};
use crate::ssm::JointStateSpaceModel;

/// One state of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub l: DMatrix<f64>,
    pub tau2: Vec<f64>,
}

impl ChainState {
    pub fn c(&self) -> DMatrix<f64> {
        &self.l * self.l.transpose()
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub nu: Smoothness,
    pub ell: Vec<f64>,
    /// Post-burn-in (thinned) draws.
    pub draws: Vec<ChainState>,
    /// Fraction of accepted block proposals after burn-in; `None` when no
    /// post-burn-in proposal was made.
    pub acceptance_rate: Option<f64>,
    pub initial: ChainState,
    pub last: ChainState,
    /// Proposal scales in effect after burn-in: one per `L` row, then `log τ²`.
    pub proposal_scales: Vec<f64>,
}

/// Posterior summaries of the quantities that are identified (functions of
/// `C = L Lᵀ` and `τ²`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_draws: usize,
    pub mean_c: Vec<Vec<f64>>,
    pub mean_rho: Vec<Vec<f64>>,
    pub rho_lower: Vec<Vec<f64>>,
    pub rho_upper: Vec<Vec<f64>>,
    pub mean_tau2: Vec<f64>,
}

/// Log posterior of `(L, τ²)` up to a constant.
pub struct Posterior<'a> {
    data: &'a MultiSeriesDataset,
    hypers: Vec<MaternHyper>,
    l_prior_sd: f64,
    log_tau2_prior_mean: Vec<f64>,
    log_tau2_prior_sd: f64,
    tau2_floor: Vec<f64>,
}

impl<'a> Posterior<'a> {
    pub fn new(data: &'a MultiSeriesDataset, nu: Smoothness, ell: &[f64], priors: &PriorConfig) -> Result<Self> {
        let p = data.n_series();
        if ell.len() != p {
            return Err(DmpError::validation("one length-scale per series is required"));
        }
        let hypers = ell
            .iter()
            .map(|&e| MaternHyper::new(nu, e))
            .collect::<Result<Vec<_>>>()?;
        let variances = series_variances(data)?;
        let pooled_sd = (variances.iter().sum::<f64>() / p as f64).sqrt();
        Ok(Self {
            data,
            hypers,
            l_prior_sd: priors.l_scale_factor * pooled_sd,
            log_tau2_prior_mean: variances
                .iter()
                .map(|v| (priors.tau2_center_fraction * v).ln())
                .collect(),
            log_tau2_prior_sd: priors.log_tau2_sd,
            tau2_floor: variances.iter().map(|v| super::NOISE_FLOOR * v).collect(),
        })
    }

    fn log_prior(&self, l: &DMatrix<f64>, log_tau2: &[f64]) -> f64 {
        let l_term = -0.5 * l.norm_squared() / (self.l_prior_sd * self.l_prior_sd);
        let t_term: f64 = log_tau2
            .iter()
            .zip(&self.log_tau2_prior_mean)
            .map(|(x, m)| -0.5 * ((x - m) / self.log_tau2_prior_sd).powi(2))
            .sum();
        l_term + t_term
    }

    /// Joint log-likelihood plus log-prior; `Err` on numeric failure.
    pub fn try_log_density(&self, l: &DMatrix<f64>, log_tau2: &[f64]) -> Result<f64> {
        let tau2: Vec<f64> = log_tau2.iter().map(|v| v.exp()).collect();
        if tau2.iter().zip(&self.tau2_floor).any(|(t, f)| !(t >= f) || !t.is_finite()) {
            return Err(DmpError::validation("noise variance below floor"));
        }
        let coupling = CouplingMatrix::new(l.clone())?;
        let model = JointStateSpaceModel::new(self.hypers.clone(), coupling)?;
        let ll = log_likelihood(&model, self.data, &tau2)?;
        Ok(ll + self.log_prior(l, log_tau2))
    }

    /// As [`try_log_density`](Self::try_log_density), with failures mapped to `−∞`.
    pub fn log_density(&self, l: &DMatrix<f64>, log_tau2: &[f64]) -> f64 {
        self.try_log_density(l, log_tau2).unwrap_or(f64::NEG_INFINITY)
    }
}

fn series_variances(data: &MultiSeriesDataset) -> Result<Vec<f64>> {
    (0..data.n_series())
        .map(|j| {
            data.observed_moments(j)
                .map(|(m, v)| v.max(1e-12 * (1.0 + m * m)))
                .ok_or(DmpError::TooFewObservations {
                    series: j,
                    found: 0,
                    required: 1,
                })
        })
        .collect()
}

/// Pairwise empirical correlation over timestamps where both series are
/// observed. Pairs sharing fewer than three timestamps get zero.
pub fn empirical_correlation(data: &MultiSeriesDataset) -> DMatrix<f64> {
    let p = data.n_series();
    let mut rho = DMatrix::identity(p, p);
    for i in 0..p {
        for j in i + 1..p {
            let pairs: Vec<(f64, f64)> = (0..data.n_times())
                .filter(|&k| data.is_observed(k, i) && data.is_observed(k, j))
                .map(|k| (data.value(k, i), data.value(k, j)))
                .collect();
            if pairs.len() < 3 {
                continue;
            }
            let n = pairs.len() as f64;
            let (mx, my) = pairs
                .iter()
                .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
            let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
            for (x, y) in &pairs {
                sxy += (x - mx) * (y - my);
                sxx += (x - mx).powi(2);
                syy += (y - my).powi(2);
            }
            if sxx > 0.0 && syy > 0.0 {
                let r = sxy / (sxx * syy).sqrt();
                rho[(i, j)] = r;
                rho[(j, i)] = r;
            }
        }
    }
    rho
}

/// Starting `L`: rank-`R` eigen-truncation of the empirical correlation,
/// rows rescaled so `c_jj` matches the signal variance left after noise.
pub fn initial_coupling(data: &MultiSeriesDataset, nu: Smoothness, rank: usize, tau2: &[f64]) -> Result<DMatrix<f64>> {
    let p = data.n_series();
    if rank == 0 || rank > p {
        return Err(DmpError::validation(format!("rank must be in 1..={p}, got {rank}")));
    }
    let variances = series_variances(data)?;
    let eig = SymmetricEigen::new(empirical_correlation(data));
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut l = DMatrix::zeros(p, rank);
    for (col, &idx) in order.iter().take(rank).enumerate() {
        let scale = eig.eigenvalues[idx].max(1e-6).sqrt();
        for row in 0..p {
            l[(row, col)] = eig.eigenvectors[(row, idx)] * scale;
        }
    }
    for j in 0..p {
        let signal = (variances[j] - tau2[j]).max(0.1 * variances[j]);
        let target = (signal / nu.unit_variance()).sqrt();
        let norm = l.row(j).norm();
        if norm > 1e-8 {
            l.row_mut(j).scale_mut(target / norm);
        } else {
            l[(j, j.min(rank - 1))] = target;
        }
    }
    Ok(l)
}

/// Runs one chain from the stage-1 fits (their `ℓ` is fixed, their `τ²`
/// seeds the chain).
pub fn mh_sample(
    data: &MultiSeriesDataset,
    fits: &[SeriesFit],
    nu: Smoothness,
    rank: usize,
    cfg: &Stage2Config,
    priors: &PriorConfig,
) -> Result<PosteriorSamples> {
    let p = data.n_series();
    if fits.len() != p {
        return Err(DmpError::validation("one stage-1 fit per series is required"));
    }
    let tau2_init: Vec<f64> = fits.iter().map(|f| f.tau2).collect();
    let l0 = initial_coupling(data, nu, rank, &tau2_init)?;
    let ell: Vec<f64> = fits.iter().map(|f| f.ell).collect();
    mh_sample_from(data, &ell, nu, ChainState { l: l0, tau2: tau2_init }, cfg, priors)
}

/// Runs one chain from an explicit initial state.
pub fn mh_sample_from(
    data: &MultiSeriesDataset,
    ell: &[f64],
    nu: Smoothness,
    initial: ChainState,
    cfg: &Stage2Config,
    priors: &PriorConfig,
) -> Result<PosteriorSamples> {
    let p = data.n_series();
    let rank = initial.l.ncols();
    if initial.l.nrows() != p || initial.tau2.len() != p {
        return Err(DmpError::validation("initial state does not match the data"));
    }
    let posterior = Posterior::new(data, nu, ell, priors)?;
    let variances = series_variances(data)?;
    let floor: Vec<f64> = variances.iter().map(|v| super::NOISE_FLOOR * v).collect();

    let mut l = initial.l.clone();
    let mut log_tau2: Vec<f64> = initial
        .tau2
        .iter()
        .zip(&floor)
        .map(|(t, f)| t.max(*f * 10.0).ln())
        .collect();
    let mut current = posterior.try_log_density(&l, &log_tau2).map_err(|e| match e {
        DmpError::Validation(msg) => DmpError::validation(format!("initial state rejected: {msg}")),
        other => other,
    })?;
    let initial = ChainState {
        l: l.clone(),
        tau2: log_tau2.iter().map(|v| v.exp()).collect(),
    };

    let row_sd: Vec<f64> = variances
        .iter()
        .map(|v| (v / nu.unit_variance()).sqrt())
        .collect();
    let mut scales: Vec<f64> = row_sd
        .iter()
        .map(|sd| cfg.l_step * sd)
        .chain(std::iter::once(cfg.log_tau2_step))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut draws = Vec::new();
    let (mut accepted, mut proposed) = (0usize, 0usize);
    let thin = cfg.thin.max(1);

    for iter in 0..cfg.chain_length {
        let adapting = cfg.adapt && iter < cfg.burn_in;
        let gain = 1.0 / (iter as f64 + 1.0).powf(0.6);
        for block in 0..=p {
            let (proposal_l, proposal_t) = if block < p {
                let mut prop = l.clone();
                for k in 0..rank {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    prop[(block, k)] += scales[block] * z;
                }
                (prop, log_tau2.clone())
            } else {
                let prop: Vec<f64> = log_tau2
                    .iter()
                    .map(|v| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        v + scales[p] * z
                    })
                    .collect();
                (l.clone(), prop)
            };
            let candidate = posterior.log_density(&proposal_l, &proposal_t);
            let u: f64 = rand::Rng::random(&mut rng);
            let accept = candidate.is_finite() && u.ln() < candidate - current;
            if accept {
                l = proposal_l;
                log_tau2 = proposal_t;
                current = candidate;
            }
            if iter >= cfg.burn_in {
                proposed += 1;
                accepted += usize::from(accept);
            }
            if adapting {
                let a = if accept { 1.0 } else { 0.0 };
                scales[block] *= (gain * (a - cfg.target_acceptance)).exp();
            }
        }
        if iter >= cfg.burn_in && (iter - cfg.burn_in) % thin == 0 {
            draws.push(ChainState {
                l: l.clone(),
                tau2: log_tau2.iter().map(|v| v.exp()).collect(),
            });
        }
    }

    Ok(PosteriorSamples {
        nu,
        ell: ell.to_vec(),
        draws,
        acceptance_rate: (proposed > 0).then(|| accepted as f64 / proposed as f64),
        initial,
        last: ChainState {
            l,
            tau2: log_tau2.iter().map(|v| v.exp()).collect(),
        },
        proposal_scales: scales,
    })
}

/// Runs `n_chains` chains with seeds `cfg.seed, cfg.seed + 1, …` on
/// separate threads. Output order follows the seed order.
pub fn mh_sample_chains(
    data: &MultiSeriesDataset,
    fits: &[SeriesFit],
    nu: Smoothness,
    rank: usize,
    cfg: &Stage2Config,
    priors: &PriorConfig,
    n_chains: usize,
) -> Result<Vec<PosteriorSamples>> {
    let configs: Vec<Stage2Config> = (0..n_chains.max(1))
        .map(|c| Stage2Config {
            seed: cfg.seed.wrapping_add(c as u64),
            ..cfg.clone()
        })
        .collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|c| scope.spawn(move || mh_sample(data, fits, nu, rank, c, priors)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain worker panicked"))
            .collect()
    })
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior means of `C`, `ρ` and `τ²`, with 95% intervals for `ρ`.
/// Correlations are computed per draw, then averaged.
pub fn summarize(draws: &[ChainState]) -> Result<PosteriorSummary> {
    let first = draws.first().ok_or(DmpError::EmptyChain)?;
    let p = first.l.nrows();
    let n = draws.len() as f64;
    let mut mean_c = DMatrix::zeros(p, p);
    let mut mean_rho = DMatrix::zeros(p, p);
    let mut mean_tau2 = vec![0.0; p];
    let mut rho_entries: Vec<Vec<f64>> = vec![Vec::with_capacity(draws.len()); p * p];
    for d in draws {
        let c = d.c();
        let rho = crate::kernels::correlation_from_c(&c)?;
        mean_c += &c / n;
        mean_rho += &rho / n;
        for (acc, t) in mean_tau2.iter_mut().zip(&d.tau2) {
            *acc += t / n;
        }
        for i in 0..p {
            for j in 0..p {
                rho_entries[i * p + j].push(rho[(i, j)]);
            }
        }
    }
    let mut lower = vec![vec![0.0; p]; p];
    let mut upper = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            let v = &mut rho_entries[i * p + j];
            v.sort_by(f64::total_cmp);
            lower[i][j] = quantile(v, 0.025);
            upper[i][j] = quantile(v, 0.975);
        }
    }
    let to_rows = |m: &DMatrix<f64>| (0..p).map(|i| m.row(i).iter().copied().collect()).collect();
    Ok(PosteriorSummary {
        n_draws: draws.len(),
        mean_c: to_rows(&mean_c),
        mean_rho: to_rows(&mean_rho),
        rho_lower: lower,
        rho_upper: upper,
        mean_tau2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_data() -> MultiSeriesDataset {
        let times: Vec<f64> = (0..12).map(|k| k as f64 * 0.4).collect();
        let values = times
            .iter()
            .map(|t| vec![(1.3 * t).sin(), (1.3 * t + 0.4).sin() + 0.1 * t.cos()])
            .collect();
        MultiSeriesDataset::fully_observed(times, values).unwrap()
    }

    #[test]
    fn zero_length_chain_is_empty() {
        let data = toy_data();
        let cfg = Stage2Config {
            chain_length: 0,
            burn_in: 0,
            ..Stage2Config::default()
        };
        let fits: Vec<SeriesFit> = (0..2)
            .map(|_| SeriesFit {
                ell: 1.0,
                variance: 0.5,
                tau2: 0.01,
                loglik: 0.0,
                weakly_identified: false,
            })
            .collect();
        let s = mh_sample(&data, &fits, Smoothness::Half, 2, &cfg, &PriorConfig::default()).unwrap();
        assert!(s.draws.is_empty());
        assert_eq!(s.acceptance_rate, None);
        assert!(matches!(summarize(&s.draws), Err(DmpError::EmptyChain)));
    }

    #[test]
    fn identical_states_give_zero_width_intervals() {
        let state = ChainState {
            l: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.6, 0.8]),
            tau2: vec![0.1, 0.2],
        };
        let s = summarize(&vec![state; 5]).unwrap();
        assert!((s.mean_rho[0][1] - 0.6).abs() < 1e-12);
        assert_eq!(s.rho_lower[0][1], s.rho_upper[0][1]);
        assert!((s.rho_lower[0][1] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn diagonal_chain_gives_identity() {
        let draws: Vec<ChainState> = (1..6)
            .map(|k| ChainState {
                l: DMatrix::from_diagonal_element(3, 3, k as f64),
                tau2: vec![0.1; 3],
            })
            .collect();
        let s = summarize(&draws).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(s.mean_rho[i][j], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn rotation_invariant_posterior() {
        let data = toy_data();
        let post = Posterior::new(&data, Smoothness::Half, &[0.8, 1.2], &PriorConfig::default()).unwrap();
        let l = DMatrix::from_row_slice(2, 2, &[0.7, 0.1, 0.3, 0.5]);
        let th: f64 = 0.9;
        let o = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]);
        let a = post.log_density(&l, &[-3.0, -2.5]);
        let b = post.log_density(&(&l * o), &[-3.0, -2.5]);
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn chains_are_deterministic() {
        let data = toy_data();
        let fits: Vec<SeriesFit> = (0..2)
            .map(|_| SeriesFit {
                ell: 1.0,
                variance: 0.5,
                tau2: 0.01,
                loglik: 0.0,
                weakly_identified: false,
            })
            .collect();
        let cfg = Stage2Config {
            chain_length: 60,
            burn_in: 20,
            seed: 9,
            ..Stage2Config::default()
        };
        let a = mh_sample(&data, &fits, Smoothness::Half, 1, &cfg, &PriorConfig::default()).unwrap();
        let b = mh_sample(&data, &fits, Smoothness::Half, 1, &cfg, &PriorConfig::default()).unwrap();
        assert_eq!(a.draws, b.draws);
        assert_eq!(a.draws.len(), 40);
        let rate = a.acceptance_rate.unwrap();
        assert!((0.0..=1.0).contains(&rate));
        let multi = mh_sample_chains(&data, &fits, Smoothness::Half, 1, &cfg, &PriorConfig::default(), 2).unwrap();
        assert_eq!(multi[0].draws, a.draws);
    }

    #[test]
    fn initial_coupling_matches_signal_variance() {
        let data = toy_data();
        let l = initial_coupling(&data, Smoothness::ThreeHalves, 1, &[0.0, 0.0]).unwrap();
        let c = &l * l.transpose();
        for j in 0..2 {
            let (_, v) = data.observed_moments(j).unwrap();
            assert!((c[(j, j)] * 2.0 - v).abs() < 1e-10);
        }
        assert!(initial_coupling(&data, Smoothness::Half, 3, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert!((quantile(&v, 0.1) - 1.4).abs() < 1e-12);
    }
}
