//! Exact simulation of dependent Matérn paths and the two-series synthetic
//! benchmark.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{default_names, MultiSeriesDataset};
use crate::error::{DmpError, Result};
use crate::numerics::gaussian_factor;
use crate::ssm::JointStateSpaceModel;

fn standard_normal_vector(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

/// Samples latent states at `times` and noisy observations of every series.
/// Returns the dataset and the latent state at each time.
pub fn sample_path_with_states(
    model: &JointStateSpaceModel,
    times: &[f64],
    tau2: &[f64],
    seed: u64,
) -> Result<(MultiSeriesDataset, Vec<DVector<f64>>)> {
    let p = model.n_series();
    if tau2.len() != p || tau2.iter().any(|t| !(*t >= 0.0)) {
        return Err(DmpError::validation("need one non-negative noise variance per series"));
    }
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(DmpError::validation("simulation times must be strictly increasing"));
    }
    let dim = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = Vec::with_capacity(times.len());
    let mut values = Vec::with_capacity(times.len());
    let mut state = DVector::zeros(dim);
    for (k, &t) in times.iter().enumerate() {
        state = if k == 0 {
            gaussian_factor(model.sigma_inf()) * standard_normal_vector(&mut rng, dim)
        } else {
            let d = model.discretize(t - times[k - 1])?;
            &d.transition * &state + gaussian_factor(&d.process_noise) * standard_normal_vector(&mut rng, dim)
        };
        let row: Vec<f64> = (0..p)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                state[model.position_index(j)] + tau2[j].sqrt() * z
            })
            .collect();
        values.push(row);
        states.push(state.clone());
    }
    let mask = vec![vec![true; p]; times.len()];
    let ds = MultiSeriesDataset::new(default_names(p), times.to_vec(), values, mask)?;
    Ok((ds, states))
}

/// Noisy observations of a stationary path at `times`; deterministic in `seed`.
pub fn sample_path(model: &JointStateSpaceModel, times: &[f64], tau2: &[f64], seed: u64) -> Result<MultiSeriesDataset> {
    sample_path_with_states(model, times, tau2, seed).map(|(ds, _)| ds)
}

/// Sorted uniform random times on `[start, end)`.
pub fn uniform_times(n: usize, start: f64, end: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t: Vec<f64> = (0..n).map(|_| rng.random_range(start..end)).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

pub const SYNTH_POINTS: usize = 100;
pub const SYNTH_HELD_OUT: usize = 41;

/// The two-series synthetic benchmark.
#[derive(Debug, Clone)]
pub struct SynthBenchmark {
    /// Both series at all 100 times. The last 41 entries of series 2 are
    /// masked but keep their generated values as ground truth.
    pub dataset: MultiSeriesDataset,
}

impl SynthBenchmark {
    /// `(time index, series)` of the held-out entries.
    pub fn test_entries(&self) -> Vec<(usize, usize)> {
        let n = self.dataset.n_times();
        (n - SYNTH_HELD_OUT..n).map(|k| (k, 1)).collect()
    }
}

/// `x₁(t) = 0.2 cos(5πt) − 2t + 0.1 ε`, `x₂(t) = t − 0.5 cos(5πt) + 0.04 η` at
/// 100 uniform random times in `[0, 1]`, with the final 41 points of `x₂`
/// held out.
pub fn synth_benchmark(seed: u64) -> Result<SynthBenchmark> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut times: Vec<f64> = (0..SYNTH_POINTS).map(|_| rng.random_range(0.0..1.0)).collect();
    times.sort_by(f64::total_cmp);
    if times.windows(2).any(|w| w[0] == w[1]) {
        return Err(DmpError::validation("duplicate random time; choose another seed"));
    }
    let five_pi = 5.0 * std::f64::consts::PI;
    let values: Vec<Vec<f64>> = times
        .iter()
        .map(|&t| {
            let eps: f64 = rng.sample(StandardNormal);
            let eta: f64 = rng.sample(StandardNormal);
            vec![
                0.2 * (five_pi * t).cos() - 2.0 * t + 0.1 * eps,
                t - 0.5 * (five_pi * t).cos() + 0.04 * eta,
            ]
        })
        .collect();
    let mask = (0..SYNTH_POINTS)
        .map(|k| vec![true, k < SYNTH_POINTS - SYNTH_HELD_OUT])
        .collect();
    let dataset = MultiSeriesDataset::new(vec!["x1".into(), "x2".into()], times, values, mask)?;
    Ok(SynthBenchmark { dataset })
}

/// Sample covariance of draws of the stationary initial state.
pub fn initial_state_covariance(model: &JointStateSpaceModel, draws: usize, seed: u64) -> DMatrix<f64> {
    let dim = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factor = gaussian_factor(model.sigma_inf());
    let mut acc = DMatrix::zeros(dim, dim);
    for _ in 0..draws {
        let x = &factor * standard_normal_vector(&mut rng, dim);
        acc += &x * x.transpose();
    }
    acc / draws as f64
}
