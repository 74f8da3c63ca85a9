//! Dense complex linear-algebra helpers shared by the optimizers.
//!
//! Everything operates on `nalgebra::DMatrix<Complex<f64>>`. Hermitian
//! eigendecompositions are always returned with eigenvalues in descending
//! order and with each eigenvector phase-normalized so that its first
//! non-negligible entry is real and positive; this keeps every factorization
//! reproducible across runs and platforms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RMat = DMatrix<f64>;

/// Entries below this magnitude (in a unit-norm vector) are skipped when
/// picking the reference entry for phase normalization.
const PHASE_REFERENCE_FLOOR: f64 = 1e-10;

/// Matrix size above which `lambda_max` switches from a full
/// eigendecomposition to power iteration.
const POWER_ITERATION_THRESHOLD: usize = 256;

#[inline]
pub fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// `(M + Mᴴ) / 2`.
pub fn hermitize(m: &CMat) -> CMat {
    (m + m.adjoint()) * real(0.5)
}

/// Relative Frobenius deviation from Hermitian symmetry.
pub fn hermitian_deviation(m: &CMat) -> f64 {
    if m.nrows() != m.ncols() {
        return f64::INFINITY;
    }
    let norm = m.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (m - m.adjoint()).norm() / norm
}

pub fn ensure_hermitian(m: &CMat, what: &str, tol: f64) -> Result<()> {
    let deviation = hermitian_deviation(m);
    if deviation > tol {
        return Err(Error::NotHermitian {
            what: what.to_string(),
            deviation,
        });
    }
    Ok(())
}

pub fn ensure_finite(m: &CMat, what: &str) -> Result<()> {
    if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

pub fn ensure_shape(m: &CMat, what: &str, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::mismatch(what, (rows, cols), m.shape()));
    }
    Ok(())
}

/// Hermitian eigendecomposition with descending eigenvalues.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    pub fn min(&self) -> f64 {
        self.values.last().copied().unwrap_or(0.0)
    }

    /// `V f(Λ) Vᴴ` for a scalar map `f` applied to the eigenvalues.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for (j, &v) in self.values.iter().enumerate() {
            let w = real(f(v));
            for i in 0..n {
                scaled[(i, j)] *= w;
            }
        }
        &scaled * self.vectors.adjoint()
    }
}

/// Eigendecomposition of the Hermitian part of `m`.
///
/// Eigenvalues are sorted in descending order with a stable sort, so exact
/// ties keep the solver's original column order.
pub fn eigh(m: &CMat) -> HermitianEigen {
    let n = m.nrows();
    if n == 0 {
        return HermitianEigen {
            values: Vec::new(),
            vectors: CMat::zeros(0, 0),
        };
    }
    let eig = hermitize(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut vectors = CMat::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (dst, &src) in order.iter().enumerate() {
        values.push(eig.eigenvalues[src]);
        let mut col = eig.eigenvectors.column(src).into_owned();
        normalize_phase(&mut col);
        vectors.set_column(dst, &col);
    }
    HermitianEigen { values, vectors }
}

/// Rotates `v` so that its first non-negligible entry is real positive.
/// Returns the unit phase factor that was applied.
pub fn normalize_phase(v: &mut CVec) -> C64 {
    let scale = v.norm();
    if scale == 0.0 {
        return real(1.0);
    }
    let reference = v
        .iter()
        .find(|z| z.norm() > PHASE_REFERENCE_FLOOR * scale)
        .copied()
        .unwrap_or(real(1.0));
    let rot = reference.conj() / reference.norm();
    v.iter_mut().for_each(|z| *z *= rot);
    rot
}

/// Principal square root of a Hermitian PSD matrix; eigenvalues below zero
/// are clipped.
pub fn psd_sqrt(m: &CMat) -> CMat {
    eigh(m).map(|x| x.max(0.0).sqrt())
}

/// `M^{-1/2}` for a Hermitian positive-definite matrix.
pub fn pd_inv_sqrt(m: &CMat, what: &str, hint: &str) -> Result<CMat> {
    let eig = eigh(m);
    if !(eig.min() > 0.0) {
        return Err(Error::Singular {
            what: what.to_string(),
            hint: hint.to_string(),
        });
    }
    Ok(eig.map(|x| 1.0 / x.sqrt()))
}

/// Symmetrizes and clips eigenvalues in `[-tol, 0)` to zero. Eigenvalues
/// below `-tol` (relative to the spectral radius) are reported as an error.
pub fn project_psd(m: &CMat, what: &str, tol: f64) -> Result<CMat> {
    let eig = eigh(m);
    let scale = eig.values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if eig.min() < -tol * scale.max(1.0) {
        return Err(Error::NotPsd {
            what: what.to_string(),
            min_eigenvalue: eig.min(),
        });
    }
    if eig.min() >= 0.0 {
        return Ok(hermitize(m));
    }
    Ok(eig.map(|x| x.max(0.0)))
}

/// Cholesky factor of the Hermitian part of `m`, or `None` unless it is
/// positive definite. The complex square root never fails, so a nonpositive
/// pivot shows up as a diagonal entry with zero or imaginary value.
pub fn cholesky_hpd(m: &CMat) -> Option<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    let chol = nalgebra::Cholesky::new(hermitize(m))?;
    let l = chol.l_dirty();
    let ok = (0..m.nrows()).all(|i| {
        let d = l[(i, i)];
        d.re > 0.0 && d.im.abs() <= 1e-12 * d.re && d.re.is_finite()
    });
    ok.then_some(chol)
}

/// `ln det(M)` for Hermitian positive-definite `M` via Cholesky.
pub fn ln_det_hpd(m: &CMat, what: &str) -> Result<f64> {
    let chol = cholesky_hpd(m).ok_or_else(|| Error::NotPsd {
        what: what.to_string(),
        min_eigenvalue: eigh(m).min(),
    })?;
    let l = chol.l_dirty();
    let value: f64 = (0..m.nrows()).map(|i| 2.0 * l[(i, i)].re.ln()).sum();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
        })
    }
}

/// Inverse of a Hermitian positive-definite matrix via Cholesky.
pub fn inv_hpd(m: &CMat, what: &str) -> Result<CMat> {
    let chol = cholesky_hpd(m).ok_or_else(|| Error::Singular {
        what: what.to_string(),
        hint: "matrix must be positive definite".to_string(),
    })?;
    Ok(hermitize(&chol.inverse()))
}

/// Real part of the trace.
pub fn trace_re(m: &CMat) -> f64 {
    m.diagonal().iter().map(|z| z.re).sum()
}

/// `tr(A B)` without forming the product.
pub fn trace_of_product(a: &CMat, b: &CMat) -> C64 {
    debug_assert_eq!(a.ncols(), b.nrows());
    debug_assert_eq!(a.nrows(), b.ncols());
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            acc += a[(i, k)] * b[(k, i)];
        }
    }
    acc
}

/// Largest eigenvalue of a Hermitian matrix. Uses the full decomposition for
/// small matrices and power iteration (tolerance 1e-10) above 256.
pub fn lambda_max(m: &CMat) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= POWER_ITERATION_THRESHOLD {
        return eigh(m).max();
    }
    power_iteration(m, 1e-10, 10_000)
}

/// Dominant eigenvalue of a Hermitian PSD matrix by power iteration.
pub fn power_iteration(m: &CMat, tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    let mut v = CVec::from_fn(n, |i, _| C64::new(1.0, 0.1 * i as f64));
    v /= real(v.norm());
    let mut value = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let next = v.dotc(&w).re;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / real(norm);
        if (next - value).abs() <= tol * next.abs().max(1.0) {
            return next;
        }
        value = next;
    }
    value
}

/// Compact SVD `X = U diag(σ) Vᴴ` of a wide matrix (rows ≤ cols) with full
/// row rank.
#[derive(Debug, Clone)]
pub struct CompactSvd {
    /// rows × rows unitary.
    pub u: CMat,
    /// Descending, strictly positive.
    pub sigma: DVector<f64>,
    /// cols × rows with orthonormal columns.
    pub v: CMat,
}

impl CompactSvd {
    pub fn recompose(&self) -> CMat {
        let mut us = self.u.clone();
        for (j, &s) in self.sigma.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.adjoint()
    }
}

/// Relative rank threshold for `compact_svd`.
pub const RANK_TOLERANCE: f64 = 1e-12;

pub fn compact_svd(x: &CMat, what: &str) -> Result<CompactSvd> {
    let (rows, cols) = x.shape();
    if rows > cols {
        return Err(Error::mismatch(what, (rows, rows.max(cols)), (rows, cols)));
    }
    ensure_finite(x, what)?;
    let svd = x.clone().svd(true, true);
    let u_raw = svd.u.expect("left singular vectors requested");
    let vt_raw = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let top = order.first().map(|&i| svd.singular_values[i]).unwrap_or(0.0);
    let rank = order
        .iter()
        .filter(|&&i| svd.singular_values[i] > RANK_TOLERANCE * top.max(f64::MIN_POSITIVE))
        .count();
    if rank < rows || top == 0.0 {
        return Err(Error::RankDeficient {
            what: what.to_string(),
            rank: if top == 0.0 { 0 } else { rank },
            required: rows,
        });
    }

    let mut u = CMat::zeros(rows, rows);
    let mut v = CMat::zeros(cols, rows);
    let mut sigma = DVector::zeros(rows);
    for (dst, &src) in order.iter().enumerate() {
        let mut vcol: CVec = vt_raw.row(src).adjoint();
        let rot = normalize_phase(&mut vcol);
        let ucol: CVec = u_raw.column(src) * rot;
        v.set_column(dst, &vcol);
        u.set_column(dst, &ucol);
        sigma[dst] = svd.singular_values[src];
    }
    Ok(CompactSvd { u, sigma, v })
}

/// Unitary DFT matrix `F[m, n] = exp(-j 2π m n / N) / √N`.
pub fn dft_matrix(n: usize) -> CMat {
    let scale = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |r, c| {
        let angle = -2.0 * std::f64::consts::PI * ((r * c) % n) as f64 / n as f64;
        C64::from_polar(scale, angle)
    })
}

/// `‖A − B‖_F`.
pub fn frobenius_gap(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm()
}

/// `Σ_j A_j` for equally sized matrices, or zeros if the iterator is empty.
pub fn sum_matrices<'a>(rows: usize, cols: usize, it: impl IntoIterator<Item = &'a CMat>) -> CMat {
    it.into_iter().fold(CMat::zeros(rows, cols), |acc, m| acc + m)
}

/// Block-diagonal aggregation of square blocks.
pub fn block_diagonal(blocks: &[CMat]) -> CMat {
    let n: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = CMat::zeros(n, n);
    let mut offset = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((offset, offset), (k, k)).copy_from(b);
        offset += k;
    }
    out
}
