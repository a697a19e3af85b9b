//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Replaces `m` by `(m + mᵀ) / 2`.
pub fn symmetrize<T: Scalar>(m: &mut DMatrix<T>) {
    let n = m.nrows();
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = (m[(i, j)] + m[(j, i)]) * half;
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn is_square<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.nrows() == m.ncols()
}

/// Largest absolute asymmetry `max |m_ij - m_ji|`.
pub fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let mut worst = T::zero();
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn trace<T: Scalar>(m: &DMatrix<T>) -> T {
    (0..m.nrows().min(m.ncols())).fold(T::zero(), |acc, i| acc + m[(i, i)])
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().copied().fold(T::lit(f64::INFINITY), |a, b| a.min(b))
}

/// Tolerance used for symmetry and PSD checks: a small multiple of the mean
/// diagonal magnitude.
pub(crate) fn scale_tolerance<T: Scalar>(m: &DMatrix<T>, rel: f64) -> T {
    let n = m.nrows().max(1);
    let scale = (0..m.nrows()).fold(T::zero(), |acc, i| acc + m[(i, i)].abs()) / T::from_count(n);
    T::lit(rel) * scale.max(T::lit(f64::MIN_POSITIVE))
}

/// Checks that `m` is a symmetric positive semi-definite matrix.
pub fn check_psd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    if !is_square(m) {
        return Err(Error::Config(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.finite()) {
        return Err(Error::Config(format!("{what} has non-finite entries")));
    }
    let tol = scale_tolerance(m, 1e-9);
    if asymmetry(m) > tol {
        return Err(Error::Config(format!("{what} is not symmetric")));
    }
    let lam = min_eigenvalue(m);
    if lam < -tol {
        return Err(Error::Config(format!("{what} is not positive semi-definite (min eigenvalue {lam})")));
    }
    Ok(())
}

/// Checks that `m` is symmetric positive definite.
pub fn check_pd<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<()> {
    check_psd(m, what)?;
    if Cholesky::new(m.clone()).is_none() {
        return Err(Error::Config(format!("{what} is not positive definite")));
    }
    Ok(())
}

/// Returns `L` with `L Lᵀ = m` for a PSD matrix. Falls back to a clamped
/// eigen-decomposition when `m` is singular.
pub fn psd_factor<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    if let Some(ch) = Cholesky::new(m.clone()) {
        return ch.l();
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut v = eig.eigenvectors;
    for (j, lam) in eig.eigenvalues.iter().enumerate() {
        let s = lam.max(T::zero()).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

/// Principal (symmetric) square root of a symmetric PSD matrix.
pub fn principal_sqrt<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    let eig = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(T::zero()).sqrt()));
    let mut r = &eig.eigenvectors * d * eig.eigenvectors.transpose();
    symmetrize(&mut r);
    r
}

/// Cholesky factorisation with escalating diagonal jitter.
///
/// Tries the plain factorisation first, then adds `1e-12·tr`, `1e-11·tr`, ...
/// up to `1e-6·tr` to the diagonal. A zero trace uses unit scale. Returns the
/// factorisation and the jitter that was applied.
pub fn cholesky_jittered<T: Scalar>(m: &DMatrix<T>, context: &'static str) -> Result<(Cholesky<T, Dyn>, T)> {
    if m.iter().any(|v| !v.finite()) {
        return Err(Error::Numerical { context, detail: "matrix has non-finite entries".into() });
    }
    if let Some(ch) = Cholesky::new(m.clone()) {
        return Ok((ch, T::zero()));
    }
    let tr = trace(m);
    let base = if tr > T::zero() { tr } else { T::one() };
    let mut rel = 1e-12;
    while rel <= 1e-6 * 1.000_001 {
        let jitter = base * T::lit(rel);
        let mut shifted = m.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(shifted) {
            return Ok((ch, jitter));
        }
        rel *= 10.0;
    }
    Err(Error::Numerical {
        context,
        detail: format!(
            "{}x{} matrix not positive definite after jitter up to 1e-6*trace (trace {tr}, min eigenvalue {})",
            m.nrows(),
            m.ncols(),
            min_eigenvalue(m)
        ),
    })
}

/// Solves `L x = b` in place for lower-triangular `L`.
#[inline]
pub(crate) fn forward_substitute<T: Scalar>(l: &DMatrix<T>, x: &mut [T]) {
    let n = x.len();
    for i in 0..n {
        let mut acc = x[i];
        for k in 0..i {
            acc -= l[(i, k)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
}

/// Solves `Lᵀ x = b` in place for lower-triangular `L`.
#[inline]
pub(crate) fn backward_substitute_transposed<T: Scalar>(l: &DMatrix<T>, x: &mut [T]) {
    let n = x.len();
    for i in (0..n).rev() {
        let mut acc = x[i];
        for k in (i + 1)..n {
            acc -= l[(k, i)] * x[k];
        }
        x[i] = acc / l[(i, i)];
    }
}

/// A multivariate normal density with a pre-factorised covariance.
///
/// Evaluation whitens the residual with the Cholesky factor, so repeated
/// evaluations against one covariance cost `O(d²)` each.
#[derive(Debug, Clone)]
pub struct GaussianDensity<T: Scalar> {
    factor: DMatrix<T>,
    log_norm: T,
}

impl<T: Scalar> GaussianDensity<T> {
    pub fn new(cov: &DMatrix<T>, context: &'static str) -> Result<Self> {
        let (ch, _) = cholesky_jittered(cov, context)?;
        let factor = ch.l();
        let d = cov.nrows();
        let log_det_half = (0..d).fold(T::zero(), |acc, i| acc + factor[(i, i)].ln());
        let log_norm = -T::lit(0.5) * T::from_count(d) * T::two_pi().ln() - log_det_half;
        Ok(Self { factor, log_norm })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Lower Cholesky factor of the covariance.
    pub fn factor(&self) -> &DMatrix<T> {
        &self.factor
    }

    /// `ln` of the normalising constant.
    pub fn log_norm(&self) -> T {
        self.log_norm
    }

    /// `L⁻¹ v`.
    pub fn whiten(&self, v: &DVector<T>) -> DVector<T> {
        let mut out = v.clone();
        forward_substitute(&self.factor, out.as_mut_slice());
        out
    }

    /// `Σ⁻¹ v`.
    pub fn solve(&self, v: &DVector<T>) -> DVector<T> {
        let mut out = v.clone();
        forward_substitute(&self.factor, out.as_mut_slice());
        backward_substitute_transposed(&self.factor, out.as_mut_slice());
        out
    }

    /// Density from an already-whitened squared Mahalanobis distance.
    #[inline]
    pub fn from_sq_distance(&self, sq: T) -> T {
        (self.log_norm - T::lit(0.5) * sq).exp()
    }

    pub fn eval(&self, x: &DVector<T>, mean: &DVector<T>) -> T {
        let w = self.whiten(&(x - mean));
        self.from_sq_distance(w.norm_squared())
    }
}

/// `N(x; mean, cov)` evaluated in one shot.
pub fn gaussian_density<T: Scalar>(x: &DVector<T>, mean: &DVector<T>, cov: &DMatrix<T>) -> Result<T> {
    Ok(GaussianDensity::new(cov, "gaussian density")?.eval(x, mean))
}

/// Block-diagonal composition of square or rectangular blocks.
pub fn block_diagonal<T: Scalar>(blocks: &[&DMatrix<T>]) -> DMatrix<T> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(*b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn standard_normal_peak() {
        let g = GaussianDensity::new(&DMatrix::<f64>::identity(2, 2), "t").unwrap();
        let z = DVector::zeros(2);
        assert_relative_eq!(g.eval(&z, &z), 1.0 / (2.0 * std::f64::consts::PI), epsilon = 1e-15);
    }

    #[test]
    fn scalar_density_matches_formula() {
        let cov = DMatrix::from_element(1, 1, 1.2);
        let v = gaussian_density(&DVector::from_element(1, 0.3), &DVector::zeros(1), &cov).unwrap();
        let expected = (-0.5 * 0.09 / 1.2f64).exp() / (2.0 * std::f64::consts::PI * 1.2).sqrt();
        assert_relative_eq!(v, expected, epsilon = 1e-15);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let (_, jitter) = cholesky_jittered(&m, "t").unwrap();
        assert!(jitter > 0.0 && jitter <= 2e-6);
        let neg = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(cholesky_jittered(&neg, "t"), Err(Error::Numerical { .. })));
    }

    #[test]
    fn solve_inverts_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = GaussianDensity::new(&cov, "t").unwrap();
        let v = DVector::from_vec(vec![1.0, -3.0]);
        assert_relative_eq!(&cov * g.solve(&v), v, epsilon = 1e-14);
    }

    #[test]
    fn principal_sqrt_of_scaled_identity() {
        let r = principal_sqrt(&(DMatrix::<f64>::identity(2, 2) * 2.0));
        assert_relative_eq!(r, DMatrix::identity(2, 2) * 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn psd_factor_handles_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let l = psd_factor(&m);
        assert_relative_eq!(&l * l.transpose(), m, epsilon = 1e-12);
        assert!(check_psd(&m, "m").is_ok());
        assert!(check_pd(&m, "m").is_err());
    }
}
