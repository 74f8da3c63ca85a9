//! Deterministic equivalent of the ergodic spectral efficiency over the
//! Weichselberger user-to-RIS channels.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat, CVec};
use crate::model::{ChannelStatistics, PhaseShifts, TransmitCovariances};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeConfig {
    /// Stop when `‖ψ⁽ᵠ⁾ − ψ⁽ᵠ⁻¹⁾‖ ≤ tol · ‖ψ⁽ᵠ⁾‖` over all users.
    pub tol: f64,
    pub max_iter: usize,
    /// Iterations after which updates are averaged with the previous ψ.
    pub damping_after: usize,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            tol: 1e-10,
            max_iter: 20_000,
            damping_after: 200,
        }
    }
}

/// Converged deterministic-equivalent parameters for one covariance set.
#[derive(Debug, Clone, PartialEq)]
pub struct DeState {
    /// γ_k, length N_R.
    pub gamma: Vec<DVector<f64>>,
    /// ψ_k, length N_k.
    pub psi: Vec<DVector<f64>>,
    /// Γ_k = V2 diag(Ωᵀγ) V2ᴴ.
    pub gamma_mat: Vec<CMat>,
    /// Ψ_k = U_G diag(Ωψ) U_Gᴴ.
    pub psi_mat: Vec<CMat>,
    /// U_G,k = Ṽ1ᴴ H1 Φ U2_k.
    pub ug: Vec<CMat>,
    /// Deterministic-equivalent SE in nats.
    pub ln_se: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl DeState {
    /// Deterministic-equivalent SE in bit/s/Hz.
    pub fn se_bits(&self) -> f64 {
        self.ln_se / std::f64::consts::LN_2
    }
}

/// `U_G,k = Ṽ1ᴴ H1 Φ U2_k` for every user.
pub fn effective_u(phi: &PhaseShifts, v1: &CMat, h1: &CMat, stats: &ChannelStatistics) -> Vec<CMat> {
    let front = crate::model::se::front_matrix(phi, v1, h1);
    stats.u2.iter().map(|u| &front * u).collect()
}

fn weighted_outer(u: &CMat, w: &DVector<f64>) -> CMat {
    let mut scaled = u.clone();
    for (j, &x) in w.iter().enumerate() {
        scaled.column_mut(j).iter_mut().for_each(|z| *z *= x);
    }
    linalg::hermitize(&(scaled * u.adjoint()))
}

/// γ_k from ψ through Ψ_k and `(I + Σ Ψ)⁻¹`.
fn gammas_from_psi(ug: &[CMat], stats: &ChannelStatistics, psi: &[DVector<f64>]) -> Result<(Vec<DVector<f64>>, Vec<CMat>, CMat)> {
    let s = ug[0].nrows();
    let psi_mat: Vec<CMat> = ug
        .iter()
        .zip(&stats.omega2)
        .zip(psi)
        .map(|((u, o), p)| weighted_outer(u, &(o * p)))
        .collect();
    let total = psi_mat.iter().fold(linalg::identity(s), |acc, m| acc + m);
    let t = linalg::inv_hpd(&total, "I + sum of Psi")?;
    let gamma = ug
        .iter()
        .map(|u| DVector::from_iterator(u.ncols(), (0..u.ncols()).map(|r| {
            let col = u.column(r);
            col.dotc(&(&t * col)).re.max(0.0)
        })))
        .collect();
    Ok((gamma, psi_mat, total))
}

fn gamma_matrix(v2: &CMat, omega: &linalg::RMat, gamma: &DVector<f64>) -> CMat {
    weighted_outer(v2, &(omega.transpose() * gamma))
}

/// ψ_k from Γ_k: `ψ_n = v_nᴴ Q (σ²I + Γ Q)⁻¹ v_n`.
fn psi_from_gamma(v2: &CMat, q: &CMat, gamma_mat: &CMat, sigma2: f64) -> Result<DVector<f64>> {
    let n = q.nrows();
    let a = linalg::identity(n) * real(sigma2) + gamma_mat * q;
    // Q A⁻¹ = (A⁻ᴴ Qᴴ)ᴴ = (A⁻ᴴ Q)ᴴ.
    let x = a
        .adjoint()
        .lu()
        .solve(q)
        .ok_or_else(|| Error::Singular { what: "sigma2 I + Gamma Q".into(), hint: "sigma2 must be positive".into() })?
        .adjoint();
    let m = linalg::hermitize(&x);
    Ok(DVector::from_iterator(
        n,
        (0..n).map(|j| {
            let v: CVec = v2.column(j).into_owned();
            v.dotc(&(&m * &v)).re.max(0.0)
        }),
    ))
}

fn sq_norm(v: &[DVector<f64>]) -> f64 {
    v.iter().map(|x| x.norm_squared()).sum()
}

/// Solves the γ/ψ fixed point for covariance `q`. All users are updated
/// jointly from the previous ψ. `warm` supplies a starting ψ; otherwise
/// ψ starts at all ones.
pub fn de_fixed_point(
    ug: &[CMat],
    stats: &ChannelStatistics,
    q: &TransmitCovariances,
    sigma2: f64,
    warm: Option<&DeState>,
    cfg: &DeConfig,
) -> Result<DeState> {
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "noise variance must be positive"));
    }
    if ug.len() != q.users() || stats.omega2.len() != q.users() {
        return Err(Error::DimensionMismatch {
            what: "deterministic-equivalent user count".into(),
            expected: q.users().to_string(),
            got: format!("U_G {}, Omega {}", ug.len(), stats.omega2.len()),
        });
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let k_users = q.users();
    let mut psi: Vec<DVector<f64>> = match warm {
        Some(w) if w.psi.len() == k_users && w.psi.iter().zip(&q.q).all(|(p, q)| p.len() == q.nrows()) => w.psi.clone(),
        _ => q.q.iter().map(|q| DVector::from_element(q.nrows(), 1.0)).collect(),
    };
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        iterations += 1;
        let (gamma, _, _) = gammas_from_psi(ug, stats, &psi)?;
        let mut next = Vec::with_capacity(k_users);
        for k in 0..k_users {
            let gm = gamma_matrix(&stats.v2[k], &stats.omega2[k], &gamma[k]);
            next.push(psi_from_gamma(&stats.v2[k], &q.q[k], &gm, sigma2)?);
        }
        if iterations > cfg.damping_after {
            for (n, p) in next.iter_mut().zip(&psi) {
                *n = (&*n + p) * 0.5;
            }
        }
        let diff: f64 = next.iter().zip(&psi).map(|(a, b)| (a - b).norm_squared()).sum();
        let scale = sq_norm(&next);
        psi = next;
        if diff <= cfg.tol * cfg.tol * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::invalid(
            "deterministic equivalent",
            format!("no convergence in {} iterations", cfg.max_iter),
        ));
    }
    assemble(ug, stats, q, sigma2, psi, iterations)
}

fn assemble(
    ug: &[CMat],
    stats: &ChannelStatistics,
    q: &TransmitCovariances,
    sigma2: f64,
    psi: Vec<DVector<f64>>,
    iterations: usize,
) -> Result<DeState> {
    let (gamma, psi_mat, total) = gammas_from_psi(ug, stats, &psi)?;
    let gamma_mat: Vec<CMat> = (0..q.users())
        .map(|k| gamma_matrix(&stats.v2[k], &stats.omega2[k], &gamma[k]))
        .collect();
    let mut ln_se = linalg::ln_det_hpd(&total, "I + sum of Psi")?;
    for k in 0..q.users() {
        let weights = stats.omega2[k].transpose() * &gamma[k];
        let half = weighted_outer(&stats.v2[k], &weights.map(|w| w.max(0.0).sqrt()));
        let n = q.q[k].nrows();
        let m = linalg::identity(n) + &half * &q.q[k] * &half * real(1.0 / sigma2);
        ln_se += linalg::ln_det_hpd(&m, "I + Gamma Q / sigma2")?;
        ln_se -= gamma[k].dot(&(&stats.omega2[k] * &psi[k]));
    }
    Ok(DeState {
        gamma,
        psi,
        gamma_mat,
        psi_mat,
        ug: ug.to_vec(),
        ln_se,
        iterations,
        converged: true,
    })
}

/// Deterministic-equivalent SE in bit/s/Hz for a converged state.
pub fn de_se(state: &DeState) -> f64 {
    state.se_bits()
}

/// Largest relative change when the returned ψ is pushed once more through
/// the fixed-point map.
pub fn self_consistency_residual(state: &DeState, stats: &ChannelStatistics, q: &TransmitCovariances, sigma2: f64) -> Result<f64> {
    let (gamma, _, _) = gammas_from_psi(&state.ug, stats, &state.psi)?;
    let mut diff = 0.0;
    for k in 0..q.users() {
        let gm = gamma_matrix(&stats.v2[k], &stats.omega2[k], &gamma[k]);
        let p = psi_from_gamma(&stats.v2[k], &q.q[k], &gm, sigma2)?;
        diff += (p - &state.psi[k]).norm_squared();
    }
    let scale = sq_norm(&state.psi);
    Ok(if scale == 0.0 { diff.sqrt() } else { (diff / scale).sqrt() })
}

/// `P̃ = σ² Σ_k U2_k diag(Ω_k ψ_k) U2_kᴴ` (N_R × N_R).
pub fn effective_p_tilde(state: &DeState, stats: &ChannelStatistics, sigma2: f64) -> CMat {
    let nr = stats.u2[0].nrows();
    let mut p = CMat::zeros(nr, nr);
    for ((u, o), psi) in stats.u2.iter().zip(&stats.omega2).zip(&state.psi) {
        p += weighted_outer(u, &(o * psi));
    }
    p * real(sigma2)
}

/// `S̃ = H1 Φ (P̃/σ²) Φᴴ H1ᴴ` (M × M).
pub fn effective_s_tilde(state: &DeState, stats: &ChannelStatistics, h1: &CMat, phi: &PhaseShifts) -> CMat {
    let p = effective_p_tilde(state, stats, 1.0);
    let f = h1 * phi.matrix();
    linalg::hermitize(&(&f * p * f.adjoint()))
}
