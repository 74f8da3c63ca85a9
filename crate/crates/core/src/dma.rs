//! DMA weight design: the unconstrained combiner from the dominant
//! eigenvectors, then a block-structured feasible Ξ fitted to
//! `U1 Ξ̃ Ṽ1ᴴ` by alternating projection, Procrustes rotation and diagonal
//! scaling.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat, C64};
use crate::model::{on_block, DmaWeights, FeasibleSet, SystemDims};

/// Lower bound on the diagonal scaling entries.
pub const XI_TILDE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmaConfig {
    /// Stop when `‖Ξ⁽ᵖ⁾ − Ξ⁽ᵖ⁻¹⁾‖²_F ≤ tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DmaConfig {
    fn default() -> Self {
        DmaConfig { tol: 1e-8, max_iter: 1000 }
    }
}

#[derive(Debug, Clone)]
pub struct DmaFitReport {
    pub weights: DmaWeights,
    /// Unconstrained combiner the fit targeted.
    pub v1_target: CMat,
    /// `‖Ξ − U1 Ξ̃ Ṽ1ᴴ‖_F` after the initial projection and after every
    /// subsequent sub-step (rotation, scaling, projection).
    pub residual_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Eigenvalues at or below this fraction of the largest count as null space.
const NULL_RTOL: f64 = 1e-12;

/// Top-`s` eigenvectors of a Hermitian PSD matrix, eigenvalues descending.
///
/// When `smat` has rank below `s` the remaining columns are arbitrary as
/// far as the objective goes; they are filled with the canonical vectors
/// `e_{jL + i}` (one per microstrip in turn, `L = m / s`) orthogonalized
/// against the range, so the result depends only on the range of `smat`.
pub fn unconstrained_v1(smat: &CMat, s: usize) -> Result<CMat> {
    let m = smat.nrows();
    linalg::ensure_shape(smat, "S", m, m)?;
    if s == 0 || s > m {
        return Err(Error::invalid("S", format!("need 1 ≤ S ≤ {m}, got {s}")));
    }
    linalg::ensure_hermitian(smat, "S", 1e-9)?;
    let eig = linalg::eigh(smat);
    let top = eig.max();
    let rank = eig.values.iter().take(s).filter(|&&v| top > 0.0 && v > NULL_RTOL * top).count();
    let mut v1 = eig.vectors.columns(0, s).into_owned();
    if rank == s {
        return Ok(v1);
    }
    let l = (m / s).max(1);
    let candidates = (0..l).flat_map(|i| (0..s).map(move |j| j * l + i)).chain(0..m).filter(|&c| c < m);
    let mut filled = rank;
    for c in candidates {
        if filled == s {
            break;
        }
        let mut v = crate::linalg::CVec::zeros(m);
        v[c] = real(1.0);
        for _ in 0..2 {
            for j in 0..filled {
                let col = v1.column(j).into_owned();
                let proj = col.dotc(&v);
                v -= col * proj;
            }
        }
        let n = v.norm();
        if n > 1e-6 {
            v1.set_column(filled, &(v / real(n)));
            filled += 1;
        }
    }
    debug_assert_eq!(filled, s);
    Ok(v1)
}

/// Nearest point of the feasible set to `t`.
pub fn project_entry(t: C64, set: &FeasibleSet) -> C64 {
    match *set {
        FeasibleSet::Unconstrained => t,
        FeasibleSet::AmplitudeOnly { lo, hi } => real(t.re.clamp(lo, hi)),
        FeasibleSet::BinaryAmplitude { level } => {
            // |t|² vs |t − c|² reduces to Re t against c/2.
            if t.re >= 0.5 * level {
                real(level)
            } else {
                real(0.0)
            }
        }
        FeasibleSet::LorentzianPhase => {
            let center = C64::new(0.0, 0.5);
            let d = t - center;
            let r = d.norm();
            if r == 0.0 {
                C64::new(0.5, 0.5)
            } else {
                center + d * (0.5 / r)
            }
        }
    }
}

/// Block-structured projection of a dense target `t` (S × M).
///
/// Under BA a microstrip whose entries all round to zero would leave Ξ
/// without full row rank; the entry with the largest real part is then
/// switched on, which is the cheapest nonzero row.
pub fn project_matrix(t: &CMat, set: &FeasibleSet, dims: &SystemDims) -> CMat {
    let (s, m) = t.shape();
    let l = dims.elements_per_strip;
    let mut xi = CMat::zeros(s, m);
    for r in 0..s {
        let mut any = false;
        for c in r * l..(r + 1) * l {
            let z = project_entry(t[(r, c)], set);
            any |= z != real(0.0);
            xi[(r, c)] = z;
        }
        if let (false, FeasibleSet::BinaryAmplitude { level }) = (any, set) {
            let best = (r * l..(r + 1) * l)
                .max_by(|&a, &b| t[(r, a)].re.total_cmp(&t[(r, b)].re).then(b.cmp(&a)))
                .expect("strip has at least one element");
            xi[(r, best)] = real(*level);
        }
    }
    debug_assert!((0..s).all(|r| (0..m).all(|c| on_block(r, c, l) || xi[(r, c)] == real(0.0))));
    xi
}

/// `U1 = U_S V_Sᴴ` from the SVD `Ξ T1ᴴ = U_S Σ V_Sᴴ`.
///
/// The product is rescaled to unit max-entry first. The polar factor does not
/// depend on scale, but the SVD loses relative accuracy on very small inputs,
/// which the fit reaches once Ξ̃ nears its floor.
pub fn procrustes_u1(xi: &CMat, t1: &CMat) -> CMat {
    let mut a = xi * t1.adjoint();
    let scale = a.camax();
    if scale > 0.0 {
        a /= C64::new(scale, 0.0);
    }
    let svd = a.svd(true, true);
    let u = svd.u.expect("left singular vectors requested");
    let vt = svd.v_t.expect("right singular vectors requested");
    u * vt
}

/// `Ξ̃_ss = max(Re(t2ₛᴴ ṽ1ₛ) / ‖ṽ1ₛ‖², δ)` with `T2 = Ξᴴ U1`.
pub fn diagonal_xi(t2: &CMat, v1: &CMat, delta: f64) -> DVector<f64> {
    DVector::from_iterator(
        v1.ncols(),
        (0..v1.ncols()).map(|s| {
            let v = v1.column(s);
            let n2 = v.norm_squared();
            if n2 == 0.0 {
                delta
            } else {
                (t2.column(s).dotc(&v).re / n2).max(delta)
            }
        }),
    )
}

fn target(u1: &CMat, xi_tilde: &DVector<f64>, v1: &CMat) -> CMat {
    let mut scaled = u1.clone();
    for (j, &d) in xi_tilde.iter().enumerate() {
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= d);
    }
    scaled * v1.adjoint()
}

/// Alternating fit of a feasible Ξ to `U1 Ξ̃ Ṽ1ᴴ`, starting from
/// `U1 = I`, `Ξ̃ = I`.
pub fn fit_constrained(v1: &CMat, set: &FeasibleSet, dims: &SystemDims, cfg: &DmaConfig) -> Result<DmaFitReport> {
    set.validate()?;
    let (s, m) = (dims.microstrips, dims.bs_elements());
    linalg::ensure_shape(v1, "V1", m, s)?;
    if !(cfg.tol > 0.0) {
        return Err(Error::invalid("dma tol", "must be positive"));
    }
    let mut u1 = linalg::identity(s);
    let mut xi_tilde = DVector::from_element(s, 1.0);
    let mut xi = project_matrix(&target(&u1, &xi_tilde, v1), set, dims);
    let mut trace = vec![(&xi - target(&u1, &xi_tilde, v1)).norm()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let mut t1 = v1.adjoint();
        for (r, &d) in xi_tilde.iter().enumerate() {
            t1.row_mut(r).iter_mut().for_each(|z| *z *= d);
        }
        u1 = procrustes_u1(&xi, &t1);
        trace.push((&xi - target(&u1, &xi_tilde, v1)).norm());
        xi_tilde = diagonal_xi(&(xi.adjoint() * &u1), v1, XI_TILDE_FLOOR);
        trace.push((&xi - target(&u1, &xi_tilde, v1)).norm());
        let next = project_matrix(&target(&u1, &xi_tilde, v1), set, dims);
        let change = (&next - &xi).norm_squared();
        xi = next;
        trace.push((&xi - target(&u1, &xi_tilde, v1)).norm());
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    let weights = DmaWeights::from_matrix(xi, *set, dims)?;
    Ok(DmaFitReport {
        weights,
        v1_target: v1.clone(),
        residual_trace: trace,
        iterations,
        converged,
    })
}

/// Unconstrained combiner for `smat` followed by the feasible fit.
pub fn optimize_dma(smat: &CMat, set: &FeasibleSet, dims: &SystemDims, cfg: &DmaConfig) -> Result<DmaFitReport> {
    let v1 = unconstrained_v1(smat, dims.microstrips)?;
    fit_constrained(&v1, set, dims, cfg)
}

/// `S = Σ_k H1 Φ H2_k Q_k H2_kᴴ Φᴴ H1ᴴ = H1 Φ P Φᴴ H1ᴴ`.
pub fn receive_side_matrix(h1: &CMat, phi: &crate::model::PhaseShifts, p: &CMat) -> CMat {
    let f = h1 * phi.matrix();
    linalg::hermitize(&(&f * p * f.adjoint()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CVec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng) -> C64 {
        C64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn unconstrained_picks_dominant_axes() {
        let s = CMat::from_diagonal(&CVec::from_vec(vec![real(4.0), real(3.0), real(2.0), real(1.0)]));
        let v = unconstrained_v1(&s, 2).unwrap();
        assert!((v[(0, 0)] - real(1.0)).norm() < 1e-14);
        assert!((v[(1, 1)] - real(1.0)).norm() < 1e-14);
    }

    #[test]
    fn projection_examples() {
        let ao = FeasibleSet::AMPLITUDE_DEFAULT;
        assert_eq!(project_entry(C64::new(5.0, 3.0), &ao), real(2.0));
        assert_eq!(project_entry(real(-1.0), &ao), real(0.001));
        let lp = FeasibleSet::LorentzianPhase;
        assert!((project_entry(C64::new(0.0, 1.0), &lp) - C64::new(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(project_entry(C64::new(0.0, 0.5), &lp), C64::new(0.5, 0.5));
        let ba = FeasibleSet::BINARY_DEFAULT;
        assert_eq!(project_entry(real(0.05), &ba), real(0.1));
    }

    #[test]
    fn ba_projection_matches_brute_force() {
        let ba = FeasibleSet::BINARY_DEFAULT;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let t = rand_c(&mut rng) * 0.2;
            let p = project_entry(t, &ba);
            let best = [real(0.0), real(0.1)]
                .into_iter()
                .map(|c| (t - c).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(((t - p).norm() - best).abs() < 1e-15);
        }
    }

    #[test]
    fn procrustes_examples() {
        let u = procrustes_u1(&linalg::identity(2), &linalg::identity(2));
        assert!((u - linalg::identity(2)).norm() < 1e-14);
        let d = CMat::from_diagonal(&CVec::from_vec(vec![real(2.0), real(3.0)]));
        let u = procrustes_u1(&d, &linalg::identity(2));
        assert!((u - linalg::identity(2)).norm() < 1e-14);
    }

    #[test]
    fn procrustes_ignores_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xi = CMat::from_fn(3, 9, |_, _| rand_c(&mut rng));
        let t1 = CMat::from_fn(3, 9, |r, _| rand_c(&mut rng) * 10f64.powi(-2 * r as i32));
        let u = procrustes_u1(&xi, &t1);
        assert!((u.adjoint() * &u - linalg::identity(3)).norm() < 1e-13);
        for eps in [1e-4, 1e-8, 1e-12] {
            let v = procrustes_u1(&(&xi * real(eps)), &(&t1 * real(eps)));
            assert!((&v - &u).norm() < 1e-10, "eps {eps}");
        }
    }

    #[test]
    fn diagonal_scaling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = CMat::from_fn(6, 2, |_, _| rand_c(&mut rng));
        let v1 = a.qr().q();
        let d = diagonal_xi(&v1, &v1, XI_TILDE_FLOOR);
        assert!(d.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        let d = diagonal_xi(&(-&v1), &v1, XI_TILDE_FLOOR);
        assert!(d.iter().all(|&x| x == XI_TILDE_FLOOR));
    }

    #[test]
    fn fit_residual_is_monotone_and_feasible() {
        let dims = SystemDims::new(vec![1], 2, 3, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = CMat::from_fn(12, 12, |_, _| rand_c(&mut rng));
        let smat = &a * a.adjoint();
        for set in [
            FeasibleSet::AMPLITUDE_DEFAULT,
            FeasibleSet::BINARY_DEFAULT,
            FeasibleSet::LorentzianPhase,
            FeasibleSet::Unconstrained,
        ] {
            let rep = optimize_dma(&smat, &set, &dims, &DmaConfig::default()).unwrap();
            for w in rep.residual_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-10, "{} {w:?}", set.tag());
            }
            for r in 0..3 {
                for c in 0..12 {
                    let z = rep.weights.xi[(r, c)];
                    if on_block(r, c, 4) {
                        assert!(set.contains(z, 1e-12));
                    } else {
                        assert_eq!(z, real(0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn ba_rows_stay_active() {
        let dims = SystemDims::new(vec![1], 2, 2, 3).unwrap();
        let t = CMat::from_element(2, 6, real(-1.0));
        let xi = project_matrix(&t, &FeasibleSet::BINARY_DEFAULT, &dims);
        assert_eq!(xi[(0, 0)], real(0.1));
        assert_eq!(xi[(1, 3)], real(0.1));
    }
}
