//! Matérn kernels with half-integer smoothness and the dependent
//! cross-covariances between coupled Matérn processes.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DmpError, Result};
use crate::numerics::{matrix_exponential, symmetrize};
use crate::ssm;

/// Half-integer Matérn smoothness `ν = n + 1/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub enum Smoothness {
    Half,
    ThreeHalves,
    FiveHalves,
}

impl TryFrom<f64> for Smoothness {
    type Error = DmpError;

    fn try_from(nu: f64) -> Result<Self> {
        Smoothness::from_nu(nu)
    }
}

impl From<Smoothness> for f64 {
    fn from(nu: Smoothness) -> f64 {
        nu.nu()
    }
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        match nu {
            v if v == 0.5 => Ok(Smoothness::Half),
            v if v == 1.5 => Ok(Smoothness::ThreeHalves),
            v if v == 2.5 => Ok(Smoothness::FiveHalves),
            v => Err(DmpError::UnsupportedSmoothness(v)),
        }
    }

    pub fn nu(self) -> f64 {
        self.order() as f64 + 0.5
    }

    /// Number of derivatives carried in the state, `n = ν − 1/2`.
    pub fn order(self) -> usize {
        match self {
            Smoothness::Half => 0,
            Smoothness::ThreeHalves => 1,
            Smoothness::FiveHalves => 2,
        }
    }

    /// Marginal variance of a single process with unit input-noise
    /// variance (`c_ii = 1`): 1, 2 and 6 for ν = 1/2, 3/2, 5/2.
    pub fn unit_variance(self) -> f64 {
        match self {
            Smoothness::Half => 1.0,
            Smoothness::ThreeHalves => 2.0,
            Smoothness::FiveHalves => 6.0,
        }
    }

    /// Decay rate `√(2ν) / ℓ`.
    pub fn rate(self, ell: f64) -> f64 {
        (2.0 * self.nu()).sqrt() / ell
    }
}

impl std::fmt::Display for Smoothness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.nu())
    }
}

/// Per-series Matérn hyperparameters: smoothness and length-scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternHyper {
    pub nu: Smoothness,
    pub ell: f64,
}

impl MaternHyper {
    pub fn new(nu: Smoothness, ell: f64) -> Result<Self> {
        if !(ell > 0.0 && ell.is_finite()) {
            return Err(DmpError::validation(format!(
                "length-scale must be positive and finite, got {ell}"
            )));
        }
        Ok(Self { nu, ell })
    }

    pub fn order(&self) -> usize {
        self.nu.order()
    }
}

/// Shared smoothness of a set of hyperparameters.
pub fn common_smoothness(hypers: &[MaternHyper]) -> Result<Smoothness> {
    let first = hypers
        .first()
        .ok_or_else(|| DmpError::validation("at least one series is required"))?;
    if hypers.iter().any(|h| h.nu != first.nu) {
        return Err(DmpError::MixedSmoothness);
    }
    Ok(first.nu)
}

/// Univariate Matérn covariance at lag `dt` with marginal variance `variance`.
pub fn matern_univariate(dt: f64, hyper: &MaternHyper, variance: f64) -> f64 {
    let x = hyper.nu.rate(hyper.ell) * dt.abs();
    let poly = match hyper.nu {
        Smoothness::Half => 1.0,
        Smoothness::ThreeHalves => 1.0 + x,
        Smoothness::FiveHalves => 1.0 + x + x * x / 3.0,
    };
    variance * poly * (-x).exp()
}

/// Ratio of geometric to arithmetic mean of two length-scales.
pub fn length_scale_ratio(ell_i: f64, ell_j: f64) -> f64 {
    2.0 * (ell_i * ell_j).sqrt() / (ell_i + ell_j)
}

/// The `p × R` factor `L` of the input-noise covariance `C = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    l: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl CouplingMatrix {
    pub fn new(l: DMatrix<f64>) -> Result<Self> {
        let (p, r) = l.shape();
        if p == 0 || r == 0 {
            return Err(DmpError::validation("coupling matrix must be non-empty"));
        }
        if r > p {
            return Err(DmpError::validation(format!(
                "rank R = {r} exceeds the number of series p = {p}"
            )));
        }
        if l.iter().any(|v| !v.is_finite()) {
            return Err(DmpError::validation("coupling matrix has non-finite entries"));
        }
        let c = &l * l.transpose();
        Ok(Self { l, c })
    }

    /// Builds a full-rank factor from a PSD covariance via its
    /// eigendecomposition. Negative eigenvalues from rounding are clipped.
    pub fn from_covariance(c: &DMatrix<f64>) -> Result<Self> {
        if !c.is_square() || c.nrows() == 0 {
            return Err(DmpError::validation("covariance must be square and non-empty"));
        }
        let eig = SymmetricEigen::new(symmetrize(c));
        let mut l = eig.eigenvectors.clone();
        for (j, &lam) in eig.eigenvalues.iter().enumerate() {
            l.column_mut(j).scale_mut(lam.max(0.0).sqrt());
        }
        let mut out = Self::new(l)?;
        out.c = symmetrize(c);
        Ok(out)
    }

    /// Independent series with the given input-noise variances.
    pub fn diagonal(variances: &[f64]) -> Result<Self> {
        let l = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            variances.len(),
            variances.iter().map(|v| v.max(0.0).sqrt()),
        ));
        Self::new(l)
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// `C = L Lᵀ`.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn n_series(&self) -> usize {
        self.l.nrows()
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    pub fn correlation(&self) -> Result<DMatrix<f64>> {
        correlation_from_c(&self.c)
    }
}

/// `ρ = diag(C)^{-1/2} C diag(C)^{-1/2}`.
pub fn correlation_from_c(c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = c.nrows();
    let mut inv_sd = Vec::with_capacity(p);
    for i in 0..p {
        let v = c[(i, i)];
        if !(v > 0.0) {
            return Err(DmpError::DegenerateSeries(i));
        }
        inv_sd.push(1.0 / v.sqrt());
    }
    Ok(DMatrix::from_fn(p, p, |i, j| {
        if i == j {
            1.0
        } else {
            (c[(i, j)] * inv_sd[i] * inv_sd[j]).clamp(-1.0, 1.0)
        }
    }))
}

/// Cross-covariance `E x_i(s) x_j(t)` of the dependent Matérn process.
///
/// For ν = 1/2 and 3/2 this is the closed form
/// `c_ij r_ij e^{−Δ/ℓ_j}` and
/// `c_ij r_ij³ (2 + Δ(√3/ℓ_i + √3/ℓ_j)) e^{−√3Δ/ℓ_j}` with `Δ = t − s ≥ 0`;
/// arguments with `s > t` are swapped as whole `(series, time)` pairs.
/// ν = 5/2 is evaluated from the stationary state-space covariance.
pub fn cross_covariance(
    s: f64,
    t: f64,
    i: usize,
    j: usize,
    hypers: &[MaternHyper],
    coupling: &CouplingMatrix,
) -> Result<f64> {
    let nu = common_smoothness(hypers)?;
    let p = hypers.len();
    if i >= p || j >= p || coupling.n_series() != p {
        return Err(DmpError::validation("series index out of range"));
    }
    let (s, t, i, j) = if s > t { (t, s, j, i) } else { (s, t, i, j) };
    let delta = t - s;
    let (li, lj) = (hypers[i].ell, hypers[j].ell);
    let cij = coupling.c()[(i, j)];
    let r = length_scale_ratio(li, lj);
    Ok(match nu {
        Smoothness::Half => cij * r * (-delta / lj).exp(),
        Smoothness::ThreeHalves => {
            let s3 = 3f64.sqrt();
            cij * r.powi(3) * (2.0 + delta * (s3 / li + s3 / lj)) * (-s3 * delta / lj).exp()
        }
        Smoothness::FiveHalves => state_space_cross_covariance(delta, &hypers[i], &hypers[j], cij)?,
    })
}

/// Position-position entry of `B_ij e^{ΔQ_jᵀ}`, valid for any order.
pub fn state_space_cross_covariance(
    delta: f64,
    hi: &MaternHyper,
    hj: &MaternHyper,
    cij: f64,
) -> Result<f64> {
    let block = ssm::stationary_cross_block(hi, hj, cij)?;
    let q_j = ssm::companion_matrix(hj);
    let propagated = block * matrix_exponential(&q_j, delta).transpose();
    Ok(propagated[(0, 0)])
}
