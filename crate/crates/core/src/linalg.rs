//! Small dense complex linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here works on `DMatrix<Complex64>`; matrices are column-major,
//! so `vec(G)` is simply the backing slice of `G`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

/// Relative margin added to eigensolver output so the bound dominates
/// `λ_max` despite rounding.
pub const EIGEN_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is not Hermitian positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// How a largest-eigenvalue bound was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSource {
    Eigensolver,
    TraceFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralBound {
    pub value: f64,
    pub source: BoundSource,
}

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn scaled_identity(n: usize, s: f64) -> CMat {
    CMat::from_diagonal_element(n, n, c(s, 0.0))
}

/// Upper bound on the largest eigenvalue of a Hermitian PSD matrix.
///
/// The matrices involved are at most a few antennas wide, so a dense
/// eigensolver is both cheap and accurate; power iteration on them stalls
/// whenever the top two eigenvalues are close. The trace is used only if the
/// eigensolver returns something non-finite.
pub fn lambda_max_psd(m: &CMat) -> SpectralBound {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "lambda_max_psd needs a square matrix");
    if n == 0 {
        return SpectralBound { value: 0.0, source: BoundSource::Eigensolver };
    }
    let trace: f64 = (0..n).map(|i| m[(i, i)].re).sum();
    let top = hermitian_eigenvalues(m).last().copied().unwrap_or(f64::NAN);
    if top.is_finite() {
        let value = (top + EIGEN_MARGIN * trace.abs()).max(0.0);
        SpectralBound { value, source: BoundSource::Eigensolver }
    } else {
        SpectralBound { value: trace, source: BoundSource::TraceFallback }
    }
}

/// Exact eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMat) -> Vec<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Hermitian square root `R^{1/2}` of a positive definite matrix.
pub fn hermitian_sqrt(r: &CMat) -> Result<CMat, LinalgError> {
    let n = r.nrows();
    if n != r.ncols() {
        return Err(LinalgError::Dimension(format!("{}x{} is not square", n, r.ncols())));
    }
    if !is_hermitian(r, 1e-10) {
        return Err(LinalgError::NotPositiveDefinite);
    }
    let eig = SymmetricEigen::new(r.clone());
    let scale = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs())).max(1e-300);
    if eig.eigenvalues.iter().any(|&v| v <= 1e-12 * scale) {
        return Err(LinalgError::NotPositiveDefinite);
    }
    let u = &eig.eigenvectors;
    let d = CMat::from_diagonal(&DVector::from_iterator(
        n,
        eig.eigenvalues.iter().map(|v| c(v.sqrt(), 0.0)),
    ));
    Ok(u * d * u.adjoint())
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.nrows() == m.ncols() && (m - m.adjoint()).iter().all(|z| z.norm() <= tol)
}

/// Solves `A x = B` for Hermitian positive definite `A` by Cholesky.
pub fn solve_hpd(a: &CMat, b: &CMat) -> Result<CMat, LinalgError> {
    let chol = a.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

/// Inverse of a Hermitian positive definite matrix (used for prior
/// precisions, which are formed once per receiver).
pub fn inverse_hpd(a: &CMat) -> Result<CMat, LinalgError> {
    let chol = a.clone().cholesky().ok_or(LinalgError::NotPositiveDefinite)?;
    Ok(chol.inverse())
}

/// `vec(M)`: column stacking.
pub fn vectorize(m: &CMat) -> CVec {
    CVec::from_column_slice(m.as_slice())
}

/// Inverse of [`vectorize`].
pub fn unvectorize(v: &CVec, rows: usize, cols: usize) -> CMat {
    assert_eq!(v.len(), rows * cols);
    CMat::from_column_slice(rows, cols, v.as_slice())
}

/// Unitary DFT matrix of size `n` (`F[a,b] = e^{-j2πab/n}/√n`).
pub fn unitary_dft(n: usize) -> CMat {
    let scale = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |a, b| {
        let phase = -2.0 * std::f64::consts::PI * (a * b) as f64 / n as f64;
        Complex64::from_polar(scale, phase)
    })
}

/// Column-wise horizontal concatenation `[A, B]`.
pub fn hcat(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.nrows(), b.nrows());
    let mut out = CMat::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Block-diagonal matrix from the given blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = CMat::zeros(rows, cols);
    let (mut r, mut cc) = (0, 0);
    for b in blocks {
        out.view_mut((r, cc), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        cc += b.ncols();
    }
    out
}

pub fn max_abs_diff(a: &CMat, b: &CMat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn frobenius_sq(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(n: usize, seed: u64) -> CMat {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(n, n + 2, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        &a * a.adjoint()
    }

    #[test]
    fn bound_dominates_spectrum() {
        for seed in 0..200 {
            let m = random_psd(4, seed);
            let bound = lambda_max_psd(&m);
            let exact = *hermitian_eigenvalues(&m).last().unwrap();
            assert!(bound.value >= exact - 1e-9 * exact, "seed {seed}: {} < {}", bound.value, exact);
            assert_eq!(bound.source, BoundSource::Eigensolver);
            assert!(bound.value <= exact * (1.0 + 1e-10));
        }
    }

    #[test]
    fn identity_and_diagonal_bounds() {
        assert!((lambda_max_psd(&identity(3)).value - 1.0).abs() < 1e-10);
        let d = CMat::from_diagonal(&CVec::from_vec(vec![c(1.0, 0.0), c(4.0, 0.0)]));
        assert!((lambda_max_psd(&d).value - 4.0).abs() < 1e-10);
        assert_eq!(lambda_max_psd(&CMat::zeros(3, 3)).value, 0.0);
    }

    #[test]
    fn sqrt_squares_back() {
        let r = random_psd(5, 3) + identity(5);
        let s = hermitian_sqrt(&r).unwrap();
        assert!(max_abs_diff(&(&s * s.adjoint()), &r) < 1e-10);
        assert!(hermitian_sqrt(&(-identity(2))).is_err());
    }

    #[test]
    fn dft_is_unitary() {
        for n in [1, 2, 3, 8] {
            let f = unitary_dft(n);
            assert!(max_abs_diff(&(f.adjoint() * &f), &identity(n)) < 1e-12);
        }
    }

    #[test]
    fn vec_roundtrip_is_column_major() {
        let m = CMat::from_fn(2, 3, |i, j| c(i as f64, j as f64));
        let v = vectorize(&m);
        assert_eq!(v[1], c(1.0, 0.0));
        assert_eq!(v[2], c(0.0, 1.0));
        assert_eq!(unvectorize(&v, 2, 3), m);
    }
}

