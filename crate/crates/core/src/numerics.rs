//! Dense linear-algebra primitives: Cholesky with a jitter retry, matrix
//! exponential, Lyapunov/Sylvester solves and the Gaussian log-density.
//!
//! Everything here works on small dense matrices (state dimensions of a few
//! dozen at most), so clarity wins over blocked or sparse algorithms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{DmpError, Result};

/// Square matrices are plain dynamic nalgebra matrices; callers are expected
/// to keep them square and non-empty.
pub type SquareMatrix = DMatrix<f64>;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative diagonal jitter applied on the single retry of a failed
/// factorization.
pub const JITTER_SCALE: f64 = 1e-10;

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Cholesky factorization of a symmetric positive-definite matrix.
///
/// The input is symmetrized first. If factoring fails, one retry is made
/// with `1e-10 * trace / dim` added to the diagonal; a second failure is an
/// error.
pub fn cholesky_factor(a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(DmpError::validation(format!(
            "cholesky needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(DmpError::not_pd("non-finite entries"));
    }
    let sym = symmetrize(a);
    if let Some(chol) = Cholesky::new(sym.clone()) {
        return Ok(chol);
    }
    let dim = sym.nrows() as f64;
    let trace = sym.trace();
    if trace <= 0.0 {
        return Err(DmpError::not_pd("non-positive trace"));
    }
    let mut jittered = sym;
    let jitter = JITTER_SCALE * trace / dim;
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += jitter;
    }
    Cholesky::new(jittered).ok_or_else(|| DmpError::not_pd("factorization failed after jitter"))
}

/// Lower-triangular `L` with `L Lᵀ = A`.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    cholesky_factor(a).map(|c| c.l())
}

/// Gaussian log-density `log N(x; mean, cov)`.
pub fn mvn_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if x.len() != mean.len() || cov.nrows() != x.len() {
        return Err(DmpError::validation("mvn_logpdf dimension mismatch"));
    }
    let chol = cholesky_factor(cov)?;
    Ok(logpdf_with_factor(&(x - mean), &chol))
}

/// `log N(resid; 0, LLᵀ)` given the Cholesky factor.
pub(crate) fn logpdf_with_factor(resid: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let z = l
        .solve_lower_triangular(resid)
        .expect("cholesky factor has a positive diagonal");
    let log_det: f64 = (0..resid.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (resid.len() as f64 * LN_2PI + log_det + z.norm_squared())
}

/// `e^{tQ}`.
///
/// Uses closed forms for 1×1 matrices and for 2×2 companion matrices with a
/// repeated eigenvalue (the Matérn-3/2 dynamics); everything else goes
/// through scaling and squaring with a degree-13 Padé approximant.
pub fn matrix_exponential(q: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    let n = q.nrows();
    if t == 0.0 {
        return DMatrix::identity(n, n);
    }
    if n == 1 {
        return DMatrix::from_element(1, 1, (t * q[(0, 0)]).exp());
    }
    if let Some(lambda) = repeated_root_companion(q) {
        let decay = (-lambda * t).exp();
        return DMatrix::from_row_slice(
            2,
            2,
            &[
                decay * (1.0 + lambda * t),
                decay * t,
                -decay * lambda * lambda * t,
                decay * (1.0 - lambda * t),
            ],
        );
    }
    expm_pade13(&(q * t))
}

/// Returns `λ` when `q = [[0, 1], [-λ², -2λ]]`.
fn repeated_root_companion(q: &DMatrix<f64>) -> Option<f64> {
    if q.nrows() != 2 || q[(0, 0)] != 0.0 || q[(0, 1)] != 1.0 {
        return None;
    }
    let lambda = -0.5 * q[(1, 1)];
    let a0 = -q[(1, 0)];
    if (lambda * lambda - a0).abs() <= 1e-14 * a0.abs().max(f64::MIN_POSITIVE) {
        Some(lambda)
    } else {
        None
    }
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];
const THETA13: f64 = 5.371_920_351_148_152;

fn expm_pade13(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm1 = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm1 > THETA13 {
        (norm1 / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a / 2f64.powi(squarings);
    let b = &PADE13;
    let ident = DMatrix::<f64>::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is nonsingular after scaling");
    for _ in 0..squarings {
        r = &r * &r;
    }
    r
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// Solves `A X + X Bᵀ + D = 0` for `X` through the vectorized system
/// `(I ⊗ A + B ⊗ I) vec(X) = −vec(D)`.
pub fn solve_sylvester(a: &DMatrix<f64>, b: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = a.nrows();
    let n = b.nrows();
    if !a.is_square() || !b.is_square() || d.nrows() != m || d.ncols() != n {
        return Err(DmpError::validation("sylvester dimension mismatch"));
    }
    let system = kron(&DMatrix::identity(n, n), a) + kron(b, &DMatrix::identity(m, m));
    let rhs = -DVector::from_column_slice(d.as_slice());
    let vec_x = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| DmpError::UnstableSystem("singular Sylvester operator".into()))?;
    Ok(DMatrix::from_column_slice(m, n, vec_x.as_slice()))
}

/// Stationary covariance: solves `Q Σ + Σ Qᵀ + D = 0` and checks the residual.
pub fn solve_lyapunov(q: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sigma = symmetrize(&solve_sylvester(q, q, d)?);
    let residual = (q * &sigma + &sigma * q.transpose() + d).norm();
    // Residual tolerance scales with the size of the terms being cancelled,
    // otherwise stiff systems (short length-scales, high order) fail spuriously.
    let scale = d.norm() + 2.0 * q.norm() * sigma.norm();
    if !residual.is_finite() || residual > 1e-10 * scale.max(f64::MIN_POSITIVE) {
        return Err(DmpError::UnstableSystem(format!(
            "Lyapunov residual {residual:.3e} too large"
        )));
    }
    Ok(sigma)
}

/// Smallest eigenvalue of the symmetric part of `a`.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Block-diagonal matrix from square blocks.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let dim: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(b);
        offset += k;
    }
    out
}

/// A factor `F` with `F Fᵀ ≈ cov`, for drawing Gaussian noise.
///
/// Tries Cholesky (with jitter) first. Rank-deficient covariances fall back
/// to an eigendecomposition with eigenvalues below `1e-12 * trace` dropped.
pub fn gaussian_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if let Ok(l) = cholesky(cov) {
        return l;
    }
    let eig = SymmetricEigen::new(symmetrize(cov));
    let floor = 1e-12 * cov.trace().abs();
    let mut factor = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let scale = if lam > floor { lam.sqrt() } else { 0.0 };
        factor.column_mut(j).scale_mut(scale);
    }
    factor
}
