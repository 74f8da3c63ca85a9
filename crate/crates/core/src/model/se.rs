use nalgebra::DVector;

use super::{channel, ChannelSet, ChannelStatistics, PhaseShifts, TransmitCovariances};
use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat};

/// `(U1, ξ̃, Ṽ1)` with `Ξ = U1 diag(ξ̃) Ṽ1ᴴ`; Ṽ1 is M × S.
pub fn compact_svd_right_factor(xi: &CMat) -> Result<(CMat, DVector<f64>, CMat)> {
    let svd = linalg::compact_svd(xi, "Xi")?;
    Ok((svd.u, svd.sigma, svd.v))
}

/// `G[k] = Ṽ1ᴴ H1 Φ H2[k]` for every user.
pub fn effective_channels(phi: &PhaseShifts, v1: &CMat, ch: &ChannelSet) -> Vec<CMat> {
    let front = front_matrix(phi, v1, &ch.h1);
    ch.h2.iter().map(|h| &front * h).collect()
}

/// `Ṽ1ᴴ H1 Φ`.
pub(crate) fn front_matrix(phi: &PhaseShifts, v1: &CMat, h1: &CMat) -> CMat {
    let mut h1phi = h1.clone();
    for (n, z) in phi.phi.iter().enumerate() {
        h1phi.column_mut(n).iter_mut().for_each(|x| *x *= z);
    }
    v1.adjoint() * h1phi
}

/// `Σ_k G[k] Q[k] G[k]ᴴ`.
pub fn received_covariance(g: &[CMat], q: &TransmitCovariances) -> CMat {
    let s = g.first().map_or(0, |g| g.nrows());
    g.iter()
        .zip(&q.q)
        .fold(CMat::zeros(s, s), |acc, (g, q)| acc + g * q * g.adjoint())
}

/// `ln det(I + (1/σ²) Σ_k G[k] Q[k] G[k]ᴴ)` in nats.
pub fn ln_se_from_effective(g: &[CMat], q: &TransmitCovariances, sigma2: f64) -> Result<f64> {
    if g.len() != q.users() {
        return Err(Error::DimensionMismatch {
            what: "users in G and Q".into(),
            expected: g.len().to_string(),
            got: q.users().to_string(),
        });
    }
    for (k, (g, q)) in g.iter().zip(&q.q).enumerate() {
        if g.ncols() != q.nrows() {
            return Err(Error::mismatch(format!("Q[{k}]"), (g.ncols(), g.ncols()), q.shape()));
        }
    }
    let rx = received_covariance(g, q);
    let m = linalg::identity(rx.nrows()) + rx * real(1.0 / sigma2);
    linalg::ln_det_hpd(&m, "I + received covariance / sigma2")
}

/// Full-CSI spectral efficiency in nats through the compact-SVD factor Ṽ1.
pub fn ln_se_full(q: &TransmitCovariances, phi: &PhaseShifts, v1: &CMat, ch: &ChannelSet, sigma2: f64) -> Result<f64> {
    q.validate()?;
    check_link(phi, v1.nrows(), ch, sigma2)?;
    ln_se_from_effective(&effective_channels(phi, v1, ch), q, sigma2)
}

/// Full-CSI spectral efficiency in bit/s/Hz.
pub fn evaluate_se_full(q: &TransmitCovariances, phi: &PhaseShifts, v1: &CMat, ch: &ChannelSet, sigma2: f64) -> Result<f64> {
    Ok(ln_se_full(q, phi, v1, ch, sigma2)? / std::f64::consts::LN_2)
}

/// Spectral efficiency in bit/s/Hz evaluated directly from Ξ:
/// `ln det(I + (1/σ²) Ξ X Ξᴴ (ΞΞᴴ)⁻¹)` with an LU determinant.
pub fn evaluate_se_projection_form(
    q: &TransmitCovariances,
    phi: &PhaseShifts,
    xi: &CMat,
    ch: &ChannelSet,
    sigma2: f64,
) -> Result<f64> {
    q.validate()?;
    check_link(phi, xi.ncols(), ch, sigma2)?;
    let s = xi.nrows();
    let gram = xi * xi.adjoint();
    let chol = linalg::cholesky_hpd(&gram).ok_or(Error::RankDeficient {
        what: "Xi".into(),
        rank: 0,
        required: s,
    })?;
    let diag: Vec<f64> = (0..s).map(|i| chol.l_dirty()[(i, i)].re).collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
    if !(lo > linalg::RANK_TOLERANCE * hi) {
        return Err(Error::RankDeficient {
            what: "Xi".into(),
            rank: diag.iter().filter(|&&d| d > linalg::RANK_TOLERANCE * hi).count(),
            required: s,
        });
    }
    let gram_inv = chol.inverse();

    let mut h1phi = ch.h1.clone();
    for (n, z) in phi.phi.iter().enumerate() {
        h1phi.column_mut(n).iter_mut().for_each(|x| *x *= z);
    }
    let m = ch.h1.nrows();
    let mut x = CMat::zeros(m, m);
    for (h2, qk) in ch.h2.iter().zip(&q.q) {
        let f = &h1phi * h2;
        x += &f * qk * f.adjoint();
    }
    let mat = linalg::identity(s) + xi * x * xi.adjoint() * gram_inv * real(1.0 / sigma2);
    let lu = mat.lu();
    let u = lu.u();
    let ln_abs: f64 = (0..s).map(|i| u[(i, i)].norm().ln()).sum();
    if !ln_abs.is_finite() {
        return Err(Error::NonFinite { what: "projection-form determinant".into() });
    }
    Ok(ln_abs / std::f64::consts::LN_2)
}

/// Spectral efficiency in bit/s/Hz of a fully digital M-antenna receiver.
pub fn evaluate_se_conventional(q: &TransmitCovariances, phi: &PhaseShifts, ch: &ChannelSet, sigma2: f64) -> Result<f64> {
    let m = ch.h1.nrows();
    evaluate_se_full(q, phi, &linalg::identity(m), ch, sigma2)
}

fn check_link(phi: &PhaseShifts, m: usize, ch: &ChannelSet, sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "noise variance must be positive"));
    }
    if ch.h1.ncols() != phi.len() {
        return Err(Error::mismatch("H1 columns vs phi", (m, phi.len()), ch.h1.shape()));
    }
    if ch.h1.nrows() != m {
        return Err(Error::mismatch("H1 rows vs receiver", (m, ch.h1.ncols()), ch.h1.shape()));
    }
    Ok(())
}

/// Sample mean and standard error of the spectral efficiency (bit/s/Hz).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

/// Ergodic spectral efficiency over `samples` draws of H2 with H1 fixed.
/// Draw `i` uses RNG stream `i` under `seed`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_ergodic_se(
    stats: &ChannelStatistics,
    h1: &CMat,
    q: &TransmitCovariances,
    phi: &PhaseShifts,
    v1: &CMat,
    sigma2: f64,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloEstimate> {
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    q.validate()?;
    let front = front_matrix(phi, v1, h1);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..samples {
        let mut rng = channel::rng_for(seed, i as u64);
        let g: Vec<CMat> = channel::sample_h2(stats, &mut rng).iter().map(|h| &front * h).collect();
        let v = ln_se_from_effective(&g, q, sigma2)? / std::f64::consts::LN_2;
        sum += v;
        sum_sq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = if samples > 1 { ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(MonteCarloEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_channels, generate_h1, H1Spec, SystemDims};

    fn setup() -> (SystemDims, ChannelSet) {
        let dims = SystemDims::new(vec![2, 3], 5, 2, 3).unwrap();
        let stats = ChannelStatistics::exponential(&dims, 0.8, 1.0).unwrap();
        let h1 = generate_h1(&dims, &H1Spec { seed: 2, hop_loss_db: 0.0 });
        let ch = generate_channels(&stats, &dims, &h1, 4, 0).unwrap();
        (dims, ch)
    }

    #[test]
    fn zero_power_gives_zero_se() {
        let (dims, ch) = setup();
        let q = TransmitCovariances::zeros(&dims);
        let phi = PhaseShifts::ones(5);
        let v = evaluate_se_conventional(&q, &phi, &ch, 1.0).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn single_stream_closed_form() {
        // One user, one antenna: SE = log2(1 + p‖V1ᴴ h‖²/σ²).
        let dims = SystemDims::new(vec![1], 3, 1, 4).unwrap();
        let stats = ChannelStatistics::exponential(&dims, 1.0, 1.0).unwrap();
        let h1 = generate_h1(&dims, &H1Spec { seed: 7, hop_loss_db: 0.0 });
        let ch = generate_channels(&stats, &dims, &h1, 1, 0).unwrap();
        let phi = PhaseShifts::from_angles(&[0.1, 0.2, 0.3]);
        let q = TransmitCovariances::uniform(&dims, &[2.0]);
        let h = &ch.h1 * phi.matrix() * &ch.h2[0];
        let want = (1.0 + 2.0 * h.norm_squared() / 0.5).log2();
        let got = evaluate_se_conventional(&q, &phi, &ch, 0.5).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn projection_form_rejects_rank_deficient_xi() {
        let (dims, ch) = setup();
        let q = TransmitCovariances::uniform(&dims, &[1.0, 1.0]);
        let phi = PhaseShifts::ones(5);
        let xi = CMat::zeros(2, 6);
        assert!(matches!(
            evaluate_se_projection_form(&q, &phi, &xi, &ch, 1.0),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let (dims, ch) = setup();
        let stats = ChannelStatistics::exponential(&dims, 0.8, 1.0).unwrap();
        let q = TransmitCovariances::uniform(&dims, &[1.0, 1.0]);
        let phi = PhaseShifts::ones(5);
        let v1 = linalg::identity(6).columns(0, 2).into_owned();
        let a = monte_carlo_ergodic_se(&stats, &ch.h1, &q, &phi, &v1, 1.0, 50, 3).unwrap();
        let b = monte_carlo_ergodic_se(&stats, &ch.h1, &q, &phi, &v1, 1.0, 50, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.std_error > 0.0);
    }
}
