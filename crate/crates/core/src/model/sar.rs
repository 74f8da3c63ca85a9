use crate::error::{Error, Result};
use crate::linalg::{self, CMat, C64};

use super::MODEL_TOL;

/// `tr(R Q)` for Hermitian `R` and `Q`. The imaginary part of the trace is
/// checked against round-off and then dropped.
pub fn sar_value(q: &CMat, r: &CMat) -> Result<f64> {
    let n = q.nrows();
    linalg::ensure_shape(q, "Q", n, n)?;
    linalg::ensure_shape(r, "R", n, n)?;
    linalg::ensure_hermitian(q, "Q", MODEL_TOL)?;
    linalg::ensure_hermitian(r, "R", MODEL_TOL)?;
    let t = linalg::trace_of_product(r, q);
    let scale = (r.norm() * q.norm()).max(1.0);
    if t.im.abs() > MODEL_TOL * scale {
        return Err(Error::invalid("tr(RQ)", format!("imaginary residue {:.3e}", t.im)));
    }
    Ok(t.re)
}

/// Largest SAR reachable with total power `pmax`: `pmax · λmax(R)`.
pub fn worst_case_sar(r: &CMat, pmax: f64) -> f64 {
    pmax * linalg::lambda_max(r)
}

/// 4 × 4 SAR matrix (kg⁻¹) of a four-antenna handset.
pub fn reference_sar_matrix() -> CMat {
    let z = C64::new(0.0, 0.0);
    let a = C64::new(8.0, 0.0);
    let b = C64::new(0.0, -6.0);
    let bc = C64::new(0.0, 6.0);
    let c = C64::new(-2.1, 0.0);
    CMat::from_row_slice(4, 4, &[a, b, c, z, bc, a, b, c, c, bc, a, b, z, c, bc, a])
}
