//! State-space form of coupled Matérn SDEs.
//!
//! Each series `j` contributes the state `(x_j, x_j', …, x_j^{(n)})` driven by
//! `(d/dt + λ_j)^{n+1} x_j = noise`, `λ_j = √(2ν)/ℓ_j`. Series are stacked
//! series-major, so series `j` owns state indices `j(n+1) .. j(n+1)+n`.
//!
//! The noise intensity of series `j` is `q_j = (2λ_j)^{2n+1}`, which gives a
//! unit-coupling stationary position variance of 1, 2 and 6 for
//! ν = 1/2, 3/2, 5/2. Coupled noises have cross-intensity `c_ij √(q_i q_j)`.

use nalgebra::DMatrix;

use crate::error::{DmpError, Result};
use crate::kernels::{common_smoothness, length_scale_ratio, CouplingMatrix, MaternHyper, Smoothness};
use crate::numerics::{block_diag, matrix_exponential, min_eigenvalue, solve_lyapunov, solve_sylvester, symmetrize};

/// Input-noise intensity `C²_{ν,ℓ}` of a unit-coupling Matérn SDE.
pub fn diffusion_constant(nu: Smoothness, ell: f64) -> f64 {
    let n = nu.order() as i32;
    (2.0 * nu.rate(ell)).powi(2 * n + 1)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Companion matrix of `(d/dt + λ)^{n+1}`.
pub fn companion_matrix(hyper: &MaternHyper) -> DMatrix<f64> {
    let n = hyper.order();
    let lambda = hyper.nu.rate(hyper.ell);
    let dim = n + 1;
    let mut q = DMatrix::zeros(dim, dim);
    for i in 0..n {
        q[(i, i + 1)] = 1.0;
    }
    for k in 0..dim {
        q[(n, k)] = -binomial(dim, k) * lambda.powi((dim - k) as i32);
    }
    q
}

/// Univariate Matérn state-space model with unit coupling.
#[derive(Debug, Clone)]
pub struct UnivariateSsm {
    pub hyper: MaternHyper,
    pub q: DMatrix<f64>,
    /// Observation row selecting the position coordinate.
    pub h: DMatrix<f64>,
    pub diffusion: f64,
    pub sigma_inf: DMatrix<f64>,
}

pub fn build_univariate(hyper: &MaternHyper) -> Result<UnivariateSsm> {
    let q = companion_matrix(hyper);
    let dim = q.nrows();
    let diffusion = diffusion_constant(hyper.nu, hyper.ell);
    let mut d = DMatrix::zeros(dim, dim);
    d[(dim - 1, dim - 1)] = diffusion;
    let sigma_inf = solve_lyapunov(&q, &d)?;
    let mut h = DMatrix::zeros(1, dim);
    h[(0, 0)] = 1.0;
    Ok(UnivariateSsm {
        hyper: *hyper,
        q,
        h,
        diffusion,
        sigma_inf,
    })
}

/// Cross block `B_ij = E F_i F_jᵀ` of the joint stationary covariance.
///
/// Closed forms for n = 0, 1; n = 2 goes through the Sylvester equation.
pub fn stationary_cross_block(hi: &MaternHyper, hj: &MaternHyper, cij: f64) -> Result<DMatrix<f64>> {
    if hi.nu != hj.nu {
        return Err(DmpError::MixedSmoothness);
    }
    let r = length_scale_ratio(hi.ell, hj.ell);
    match hi.nu {
        Smoothness::Half => Ok(DMatrix::from_element(1, 1, cij * r)),
        Smoothness::ThreeHalves => {
            let s3 = 3f64.sqrt();
            let (li, lj) = (hi.ell, hj.ell);
            let k = cij * r.powi(3);
            Ok(DMatrix::from_row_slice(
                2,
                2,
                &[
                    2.0 * k,
                    k * (s3 / li - s3 / lj),
                    k * (s3 / lj - s3 / li),
                    k * 6.0 / (li * lj),
                ],
            ))
        }
        Smoothness::FiveHalves => lyapunov_cross_block(hi, hj, cij),
    }
}

/// Cross block from `Q_i B + B Q_jᵀ + D_ij = 0`, for any order.
pub fn lyapunov_cross_block(hi: &MaternHyper, hj: &MaternHyper, cij: f64) -> Result<DMatrix<f64>> {
    let qi = companion_matrix(hi);
    let qj = companion_matrix(hj);
    let dim = qi.nrows();
    let mut d = DMatrix::zeros(dim, dim);
    d[(dim - 1, dim - 1)] =
        cij * (diffusion_constant(hi.nu, hi.ell) * diffusion_constant(hj.nu, hj.ell)).sqrt();
    solve_sylvester(&qi, &qj, &d)
}

fn check_dims(hypers: &[MaternHyper], coupling: &CouplingMatrix) -> Result<Smoothness> {
    let nu = common_smoothness(hypers)?;
    if coupling.n_series() != hypers.len() {
        return Err(DmpError::validation(format!(
            "coupling has {} rows but {} series were given",
            coupling.n_series(),
            hypers.len()
        )));
    }
    Ok(nu)
}

/// Joint stationary covariance `Σ∞` assembled from cross blocks.
pub fn joint_stationary_covariance(hypers: &[MaternHyper], coupling: &CouplingMatrix) -> Result<DMatrix<f64>> {
    let nu = check_dims(hypers, coupling)?;
    let k = nu.order() + 1;
    let p = hypers.len();
    let c = coupling.c();
    let mut sigma = DMatrix::zeros(p * k, p * k);
    for i in 0..p {
        for j in i..p {
            let block = stationary_cross_block(&hypers[i], &hypers[j], c[(i, j)])?;
            sigma.view_mut((i * k, j * k), (k, k)).copy_from(&block);
            if i != j {
                sigma.view_mut((j * k, i * k), (k, k)).copy_from(&block.transpose());
            }
        }
    }
    let sigma = symmetrize(&sigma);
    let floor = -1e-8 * sigma.trace().abs().max(f64::MIN_POSITIVE);
    if p > 1 && min_eigenvalue(&sigma) < floor {
        return Err(DmpError::not_pd("joint stationary covariance"));
    }
    Ok(sigma)
}

/// `Σ∞` from one Lyapunov solve of the whole joint system. Independent of
/// the closed-form blocks; used to cross-check them.
pub fn joint_stationary_covariance_lyapunov(
    hypers: &[MaternHyper],
    coupling: &CouplingMatrix,
) -> Result<DMatrix<f64>> {
    let nu = check_dims(hypers, coupling)?;
    let k = nu.order() + 1;
    let p = hypers.len();
    let qbar = block_diag(&hypers.iter().map(companion_matrix).collect::<Vec<_>>());
    let scales: Vec<f64> = hypers
        .iter()
        .map(|h| diffusion_constant(h.nu, h.ell).sqrt())
        .collect();
    let mut d = DMatrix::zeros(p * k, p * k);
    for i in 0..p {
        for j in 0..p {
            d[(i * k + k - 1, j * k + k - 1)] = coupling.c()[(i, j)] * scales[i] * scales[j];
        }
    }
    solve_lyapunov(&qbar, &d)
}

/// Exact discretization over one time gap.
#[derive(Debug, Clone)]
pub struct Discretization {
    /// `A = e^{Δt Q̄}`.
    pub transition: DMatrix<f64>,
    /// `Σ∞ − A Σ∞ Aᵀ`, symmetrized.
    pub process_noise: DMatrix<f64>,
}

/// Joint state-space model of `p` coupled Matérn SDEs sharing `ν`.
#[derive(Debug, Clone)]
pub struct JointStateSpaceModel {
    nu: Smoothness,
    hypers: Vec<MaternHyper>,
    coupling: CouplingMatrix,
    blocks: Vec<DMatrix<f64>>,
    qbar: DMatrix<f64>,
    hbar: DMatrix<f64>,
    sigma_inf: DMatrix<f64>,
}

impl JointStateSpaceModel {
    pub fn new(hypers: Vec<MaternHyper>, coupling: CouplingMatrix) -> Result<Self> {
        let nu = check_dims(&hypers, &coupling)?;
        let sigma_inf = joint_stationary_covariance(&hypers, &coupling)?;
        let blocks: Vec<DMatrix<f64>> = hypers.iter().map(companion_matrix).collect();
        let qbar = block_diag(&blocks);
        let k = nu.order() + 1;
        let p = hypers.len();
        let mut hbar = DMatrix::zeros(p, p * k);
        for j in 0..p {
            hbar[(j, j * k)] = 1.0;
        }
        Ok(Self {
            nu,
            hypers,
            coupling,
            blocks,
            qbar,
            hbar,
            sigma_inf,
        })
    }

    pub fn smoothness(&self) -> Smoothness {
        self.nu
    }

    pub fn hypers(&self) -> &[MaternHyper] {
        &self.hypers
    }

    pub fn coupling(&self) -> &CouplingMatrix {
        &self.coupling
    }

    pub fn n_series(&self) -> usize {
        self.hypers.len()
    }

    /// Per-series state dimension `n + 1`.
    pub fn block_dim(&self) -> usize {
        self.nu.order() + 1
    }

    pub fn state_dim(&self) -> usize {
        self.n_series() * self.block_dim()
    }

    /// State index of series `j`'s position.
    pub fn position_index(&self, j: usize) -> usize {
        j * self.block_dim()
    }

    pub fn qbar(&self) -> &DMatrix<f64> {
        &self.qbar
    }

    pub fn hbar(&self) -> &DMatrix<f64> {
        &self.hbar
    }

    pub fn sigma_inf(&self) -> &DMatrix<f64> {
        &self.sigma_inf
    }

    /// Block-diagonal `e^{dt Q̄}`.
    pub fn transition(&self, dt: f64) -> DMatrix<f64> {
        let k = self.block_dim();
        let dim = self.state_dim();
        let mut a = DMatrix::zeros(dim, dim);
        for (j, q) in self.blocks.iter().enumerate() {
            a.view_mut((j * k, j * k), (k, k))
                .copy_from(&matrix_exponential(q, dt));
        }
        a
    }

    /// Process noise `Σ∞ − A Σ∞ Aᵀ` for a given transition.
    pub fn process_noise(&self, transition: &DMatrix<f64>) -> DMatrix<f64> {
        let propagated = transition * &self.sigma_inf * transition.transpose();
        symmetrize(&(&self.sigma_inf - propagated))
    }

    pub fn discretize(&self, dt: f64) -> Result<Discretization> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(DmpError::validation(format!("time gap must be positive, got {dt}")));
        }
        let transition = self.transition(dt);
        let process_noise = self.process_noise(&transition);
        Ok(Discretization {
            transition,
            process_noise,
        })
    }

    /// Stationary `E F(s) F(t)ᵀ = Σ∞ e^{(t−s) Q̄ᵀ}` for `t ≥ s`.
    pub fn lagged_covariance(&self, delta: f64) -> DMatrix<f64> {
        &self.sigma_inf * self.transition(delta).transpose()
    }
}
