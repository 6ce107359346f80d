//! Fixtures shared by the benchmarks.

use dmp_core::kernels::{CouplingMatrix, MaternHyper, Smoothness};
use dmp_core::nalgebra::DMatrix;
use dmp_core::simulate::{sample_path, uniform_times};
use dmp_core::{JointStateSpaceModel, MultiSeriesDataset};

/// Equicorrelated `p`-series model with length-scales spread over `[0.5, 2]`.
pub fn model(nu: Smoothness, p: usize, rho: f64) -> JointStateSpaceModel {
    let c = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho });
    let hypers = (0..p)
        .map(|j| {
            let ell = 0.5 + 1.5 * j as f64 / (p.max(2) - 1) as f64;
            MaternHyper::new(nu, ell).expect("positive length-scale")
        })
        .collect();
    JointStateSpaceModel::new(hypers, CouplingMatrix::from_covariance(&c).expect("PSD coupling"))
        .expect("valid model")
}

/// `n` random times on `[0, n / 10]` with every series observed.
pub fn dataset(model: &JointStateSpaceModel, n: usize, seed: u64) -> MultiSeriesDataset {
    let times = uniform_times(n, 0.0, n as f64 / 10.0, seed);
    let tau2 = vec![0.05; model.n_series()];
    sample_path(model, &times, &tau2, seed + 1).expect("simulation succeeds")
}
