//! System model: dimensions, channels, optimization variables, constraints,
//! and the spectral-efficiency and SAR evaluators built on them.

mod channel;
mod sar;
pub(crate) mod se;

pub use channel::{generate_channels, generate_h1, rng_for, sample_h2, H1Spec};
pub use sar::{reference_sar_matrix, sar_value, worst_case_sar};
pub use se::{
    compact_svd_right_factor, effective_channels, evaluate_se_conventional, evaluate_se_full,
    evaluate_se_projection_form, ln_se_from_effective, ln_se_full, monte_carlo_ergodic_se,
    received_covariance, MonteCarloEstimate,
};

use nalgebra::DVector;
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat, CVec, RMat, C64};

/// Tolerance for Hermitian symmetry and PSD checks on model values.
pub const MODEL_TOL: f64 = 1e-10;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a gain/attenuation in dB to a linear power factor.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemDims {
    pub user_antennas: Vec<usize>,
    pub ris_elements: usize,
    pub microstrips: usize,
    pub elements_per_strip: usize,
}

impl SystemDims {
    pub fn new(
        user_antennas: Vec<usize>,
        ris_elements: usize,
        microstrips: usize,
        elements_per_strip: usize,
    ) -> Result<Self> {
        let dims = SystemDims {
            user_antennas,
            ris_elements,
            microstrips,
            elements_per_strip,
        };
        dims.validate()?;
        Ok(dims)
    }

    /// K = 4 users with 4 antennas, 16 RIS elements, 8 microstrips of 8
    /// elements.
    pub fn default_deployment() -> Self {
        SystemDims {
            user_antennas: vec![4; 4],
            ris_elements: 16,
            microstrips: 8,
            elements_per_strip: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.user_antennas.is_empty() {
            return Err(Error::invalid("K", "at least one user is required"));
        }
        if let Some(k) = self.user_antennas.iter().position(|&n| n == 0) {
            return Err(Error::invalid("N_k", format!("user {k} has zero antennas")));
        }
        for (name, v) in [
            ("N_R", self.ris_elements),
            ("S", self.microstrips),
            ("L", self.elements_per_strip),
        ] {
            if v == 0 {
                return Err(Error::invalid(name, "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.user_antennas.len()
    }

    /// M = S·L.
    pub fn bs_elements(&self) -> usize {
        self.microstrips * self.elements_per_strip
    }
}

/// One realization of the RIS-to-BS channel `h1` (M × N_R) and the
/// user-to-RIS channels `h2[k]` (N_R × N_k).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub h1: CMat,
    pub h2: Vec<CMat>,
}

impl ChannelSet {
    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        linalg::ensure_shape(&self.h1, "H1", dims.bs_elements(), dims.ris_elements)?;
        linalg::ensure_finite(&self.h1, "H1")?;
        if self.h2.len() != dims.users() {
            return Err(Error::DimensionMismatch {
                what: "H2 list".into(),
                expected: dims.users().to_string(),
                got: self.h2.len().to_string(),
            });
        }
        for (k, h) in self.h2.iter().enumerate() {
            let name = format!("H2[{k}]");
            linalg::ensure_shape(h, &name, dims.ris_elements, dims.user_antennas[k])?;
            linalg::ensure_finite(h, &name)?;
        }
        Ok(())
    }
}

/// Weichselberger statistics of the user-to-RIS channels:
/// `H2[k] = U2[k] · H̃ · V2[k]ᴴ` with `E|H̃[r, n]|² = Ω2[k][r, n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStatistics {
    pub u2: Vec<CMat>,
    pub v2: Vec<CMat>,
    pub omega2: Vec<RMat>,
}

impl ChannelStatistics {
    /// DFT eigenbases with an exponentially decaying coupling profile
    /// `Ω[r, n] ∝ decay^(r' + n)`, normalized to `Σ Ω = N_R·N_k` and then
    /// multiplied by `gain`. The row index `r'` is circularly shifted by
    /// `k·N_R/K` so that users excite different RIS eigenmodes.
    pub fn exponential(dims: &SystemDims, decay: f64, gain: f64) -> Result<Self> {
        dims.validate()?;
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::invalid("omega_decay", "must lie in (0, 1]"));
        }
        if !(gain >= 0.0) || !gain.is_finite() {
            return Err(Error::invalid("gain", "must be finite and nonnegative"));
        }
        let nr = dims.ris_elements;
        let k_users = dims.users();
        let u = linalg::dft_matrix(nr);
        let mut u2 = Vec::with_capacity(k_users);
        let mut v2 = Vec::with_capacity(k_users);
        let mut omega2 = Vec::with_capacity(k_users);
        for (k, &nk) in dims.user_antennas.iter().enumerate() {
            let shift = k * nr / k_users;
            let mut omega = RMat::from_fn(nr, nk, |r, n| {
                let row = (r + nr - shift % nr) % nr;
                decay.powi((row + n) as i32)
            });
            let total: f64 = omega.iter().sum();
            omega *= gain * (nr * nk) as f64 / total;
            u2.push(u.clone());
            v2.push(linalg::dft_matrix(nk));
            omega2.push(omega);
        }
        Ok(ChannelStatistics { u2, v2, omega2 })
    }

    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        let k = dims.users();
        if self.u2.len() != k || self.v2.len() != k || self.omega2.len() != k {
            return Err(Error::DimensionMismatch {
                what: "channel statistics user count".into(),
                expected: k.to_string(),
                got: format!("U2 {}, V2 {}, Omega2 {}", self.u2.len(), self.v2.len(), self.omega2.len()),
            });
        }
        for user in 0..k {
            let nk = dims.user_antennas[user];
            let nr = dims.ris_elements;
            let u = &self.u2[user];
            let v = &self.v2[user];
            linalg::ensure_shape(u, &format!("U2[{user}]"), nr, nr)?;
            linalg::ensure_shape(v, &format!("V2[{user}]"), nk, nk)?;
            if self.omega2[user].shape() != (nr, nk) {
                return Err(Error::mismatch(format!("Omega2[{user}]"), (nr, nk), self.omega2[user].shape()));
            }
            for (name, m) in [("U2", u), ("V2", v)] {
                let dev = (m.adjoint() * m - linalg::identity(m.nrows())).norm();
                if dev > MODEL_TOL * (m.nrows() as f64).max(1.0) {
                    return Err(Error::invalid(format!("{name}[{user}]"), format!("not unitary (deviation {dev:.3e})")));
                }
            }
            if self.omega2[user].iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
                return Err(Error::invalid(format!("Omega2[{user}]"), "entries must be finite and nonnegative"));
            }
        }
        Ok(())
    }

    /// Copy with every coupling matrix replaced by zeros.
    pub fn zeroed(&self) -> Self {
        let mut out = self.clone();
        out.omega2.iter_mut().for_each(|o| o.fill(0.0));
        out
    }
}

/// Per-user transmit covariance matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitCovariances {
    pub q: Vec<CMat>,
}

impl TransmitCovariances {
    pub fn new(q: Vec<CMat>) -> Result<Self> {
        let out = TransmitCovariances { q };
        out.validate()?;
        Ok(out)
    }

    pub fn zeros(dims: &SystemDims) -> Self {
        TransmitCovariances {
            q: dims.user_antennas.iter().map(|&n| CMat::zeros(n, n)).collect(),
        }
    }

    /// `Q[k] = p[k] / N_k · I`.
    pub fn uniform(dims: &SystemDims, power: &[f64]) -> Self {
        TransmitCovariances {
            q: dims
                .user_antennas
                .iter()
                .zip(power)
                .map(|(&n, &p)| linalg::identity(n) * real(p / n as f64))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (k, q) in self.q.iter().enumerate() {
            let name = format!("Q[{k}]");
            if q.nrows() != q.ncols() {
                return Err(Error::mismatch(name, (q.nrows(), q.nrows()), q.shape()));
            }
            linalg::ensure_finite(q, &name)?;
            linalg::ensure_hermitian(q, &name, MODEL_TOL)?;
            let min = linalg::eigh(q).min();
            if min < -MODEL_TOL {
                return Err(Error::NotPsd {
                    what: name,
                    min_eigenvalue: min,
                });
            }
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.q.len()
    }

    pub fn block_diagonal(&self) -> CMat {
        linalg::block_diagonal(&self.q)
    }

    pub fn scaled(&self, factors: &[f64]) -> Self {
        TransmitCovariances {
            q: self.q.iter().zip(factors).map(|(q, &f)| q * real(f)).collect(),
        }
    }

    pub fn powers(&self) -> Vec<f64> {
        self.q.iter().map(linalg::trace_re).collect()
    }

    /// Symmetrizes each block and clips eigenvalues in `[-1e-10, 0)`.
    pub fn sanitized(&self) -> Result<Self> {
        let q = self
            .q
            .iter()
            .enumerate()
            .map(|(k, q)| linalg::project_psd(q, &format!("Q[{k}]"), MODEL_TOL))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransmitCovariances { q })
    }
}

/// Unit-modulus RIS reflection coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseShifts {
    pub phi: CVec,
}

impl PhaseShifts {
    pub fn new(phi: CVec) -> Result<Self> {
        if let Some((n, z)) = phi.iter().enumerate().find(|(_, z)| (z.norm() - 1.0).abs() > MODEL_TOL) {
            return Err(Error::invalid("phi", format!("entry {n} has modulus {}", z.norm())));
        }
        Ok(PhaseShifts { phi })
    }

    /// Φ = I.
    pub fn ones(n: usize) -> Self {
        PhaseShifts {
            phi: CVec::from_element(n, real(1.0)),
        }
    }

    pub fn from_angles(theta: &[f64]) -> Self {
        PhaseShifts {
            phi: CVec::from_iterator(theta.len(), theta.iter().map(|&t| C64::from_polar(1.0, t))),
        }
    }

    /// Uniformly random phases in `[0, 2π)`.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        let theta: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect();
        Self::from_angles(&theta)
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn angles(&self) -> Vec<f64> {
        self.phi.iter().map(|z| z.arg()).collect()
    }

    /// Diagonal reflection matrix Φ.
    pub fn matrix(&self) -> CMat {
        CMat::from_diagonal(&self.phi)
    }
}

/// Feasible set 𝓕₂ for the individual DMA element weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeasibleSet {
    /// UC: any complex value.
    Unconstrained,
    /// AO: real amplitude in `[lo, hi]` with `0 < lo < hi`.
    AmplitudeOnly { lo: f64, hi: f64 },
    /// BA: `{0, level}` with `level > 0`.
    BinaryAmplitude { level: f64 },
    /// LP: the Lorentzian circle `(j + e^{jφ}) / 2`.
    LorentzianPhase,
}

impl FeasibleSet {
    /// AO with the interval `[0.001, 2]`.
    pub const AMPLITUDE_DEFAULT: FeasibleSet = FeasibleSet::AmplitudeOnly { lo: 0.001, hi: 2.0 };
    /// BA with the level `0.1`.
    pub const BINARY_DEFAULT: FeasibleSet = FeasibleSet::BinaryAmplitude { level: 0.1 };

    pub fn validate(&self) -> Result<()> {
        match *self {
            FeasibleSet::AmplitudeOnly { lo, hi } if !(lo > 0.0 && lo < hi && hi.is_finite()) => {
                Err(Error::invalid("AO interval", format!("need 0 < lo < hi, got [{lo}, {hi}]")))
            }
            FeasibleSet::BinaryAmplitude { level } if !(level > 0.0 && level.is_finite()) => {
                Err(Error::invalid("BA level", format!("need level > 0, got {level}")))
            }
            _ => Ok(()),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FeasibleSet::Unconstrained => "UC",
            FeasibleSet::AmplitudeOnly { .. } => "AO",
            FeasibleSet::BinaryAmplitude { .. } => "BA",
            FeasibleSet::LorentzianPhase => "LP",
        }
    }

    /// Parses `UC`, `AO`, `BA`, `LP` (case-insensitive) with default
    /// parameters.
    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag.to_ascii_uppercase().as_str() {
            "UC" => Some(FeasibleSet::Unconstrained),
            "AO" => Some(FeasibleSet::AMPLITUDE_DEFAULT),
            "BA" => Some(FeasibleSet::BINARY_DEFAULT),
            "LP" => Some(FeasibleSet::LorentzianPhase),
            _ => None,
        }
    }

    /// Whether `z` lies in the set (LP: distance to the circle ≤ `tol`).
    pub fn contains(&self, z: C64, tol: f64) -> bool {
        match *self {
            FeasibleSet::Unconstrained => true,
            FeasibleSet::AmplitudeOnly { lo, hi } => z.im.abs() <= tol && z.re >= lo - tol && z.re <= hi + tol,
            FeasibleSet::BinaryAmplitude { level } => z.im.abs() <= tol && (z.re.abs() <= tol || (z.re - level).abs() <= tol),
            FeasibleSet::LorentzianPhase => ((z - C64::new(0.0, 0.5)).norm() - 0.5).abs() <= tol,
        }
    }
}

/// Whether entry `(s, m)` of an S × M weight matrix lies on microstrip `s`.
#[inline]
pub fn on_block(s: usize, m: usize, elements_per_strip: usize) -> bool {
    m / elements_per_strip == s
}

/// Block-structured DMA weight matrix Ξ with its compact-SVD factors.
#[derive(Debug, Clone, PartialEq)]
pub struct DmaWeights {
    pub xi: CMat,
    pub set: FeasibleSet,
    /// Common element response `f`; it scales signal and noise alike and
    /// therefore never enters the spectral efficiency.
    pub response: C64,
    pub u1: CMat,
    pub xi_tilde: DVector<f64>,
    pub v1_tilde: CMat,
}

impl DmaWeights {
    /// Validates block structure and feasibility, then factors Ξ.
    pub fn from_matrix(xi: CMat, set: FeasibleSet, dims: &SystemDims) -> Result<Self> {
        set.validate()?;
        let (s, m) = (dims.microstrips, dims.bs_elements());
        linalg::ensure_shape(&xi, "Xi", s, m)?;
        for r in 0..s {
            for c in 0..m {
                let z = xi[(r, c)];
                if on_block(r, c, dims.elements_per_strip) {
                    if !set.contains(z, 1e-12) {
                        return Err(Error::invalid("Xi", format!("entry ({r}, {c}) = {z} is outside {}", set.tag())));
                    }
                } else if z != C64::new(0.0, 0.0) {
                    return Err(Error::invalid("Xi", format!("off-block entry ({r}, {c}) is nonzero")));
                }
            }
        }
        let (u1, xi_tilde, v1_tilde) = compact_svd_right_factor(&xi)?;
        Ok(DmaWeights {
            xi,
            set,
            response: real(1.0),
            u1,
            xi_tilde,
            v1_tilde,
        })
    }

    /// `‖Ξ − U1 Ξ̃ Ṽ1ᴴ‖_F`.
    pub fn factor_residual(&self) -> f64 {
        let mut us = self.u1.clone();
        for (j, &s) in self.xi_tilde.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        (&self.xi - us * self.v1_tilde.adjoint()).norm()
    }
}

/// SAR matrices `R[k][i]` (kg⁻¹) and budgets `D[k][i]` (W/kg) for one user.
#[derive(Debug, Clone, PartialEq)]
pub struct SarConstraint {
    pub r: Vec<CMat>,
    pub d: Vec<f64>,
}

impl SarConstraint {
    pub fn single(r: CMat, d: f64) -> Self {
        SarConstraint { r: vec![r], d: vec![d] }
    }

    pub fn none() -> Self {
        SarConstraint { r: Vec::new(), d: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn validate(&self, antennas: usize, user: usize) -> Result<()> {
        if self.r.len() != self.d.len() {
            return Err(Error::invalid(format!("SAR[{user}]"), "matrix and budget counts differ"));
        }
        for (i, (r, &d)) in self.r.iter().zip(&self.d).enumerate() {
            let name = format!("R[{user}][{i}]");
            linalg::ensure_shape(r, &name, antennas, antennas)?;
            linalg::ensure_hermitian(r, &name, MODEL_TOL)?;
            let min = linalg::eigh(r).min();
            if min < -MODEL_TOL * linalg::eigh(r).max().max(1.0) {
                return Err(Error::NotPsd { what: name, min_eigenvalue: min });
            }
            if !(d > 0.0) {
                return Err(Error::invalid(format!("D[{user}][{i}]"), "SAR budget must be positive"));
            }
        }
        Ok(())
    }
}

/// Power budgets (W), noise variance (W), and the total path loss (dB).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkBudget {
    pub pmax: Vec<f64>,
    pub sigma2: f64,
    pub pathloss_db: f64,
}

impl LinkBudget {
    pub fn validate(&self) -> Result<()> {
        if let Some(k) = self.pmax.iter().position(|&p| !(p > 0.0) || !p.is_finite()) {
            return Err(Error::invalid("Pmax", format!("user {k} budget must be positive and finite")));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::invalid("sigma2", "noise variance must be positive"));
        }
        Ok(())
    }
}

/// Per-user power and SAR constraints consumed by the optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub pmax: Vec<f64>,
    pub sar: Vec<SarConstraint>,
}

impl Constraints {
    pub fn new(pmax: Vec<f64>, sar: Vec<SarConstraint>) -> Self {
        Constraints { pmax, sar }
    }

    /// The same SAR matrix and budget for every user.
    pub fn uniform(dims: &SystemDims, pmax: f64, r: &CMat, d: f64) -> Self {
        Constraints {
            pmax: vec![pmax; dims.users()],
            sar: (0..dims.users()).map(|_| SarConstraint::single(r.clone(), d)).collect(),
        }
    }

    /// Power budgets only.
    pub fn power_only(pmax: Vec<f64>) -> Self {
        let sar = pmax.iter().map(|_| SarConstraint::none()).collect();
        Constraints { pmax, sar }
    }

    pub fn without_sar(&self) -> Self {
        Self::power_only(self.pmax.clone())
    }

    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        if self.pmax.len() != dims.users() || self.sar.len() != dims.users() {
            return Err(Error::DimensionMismatch {
                what: "constraints user count".into(),
                expected: dims.users().to_string(),
                got: format!("Pmax {}, SAR {}", self.pmax.len(), self.sar.len()),
            });
        }
        if let Some(k) = self.pmax.iter().position(|&p| !(p >= 0.0) || p.is_nan()) {
            return Err(Error::invalid("Pmax", format!("user {k} budget must be nonnegative")));
        }
        for (k, sar) in self.sar.iter().enumerate() {
            sar.validate(dims.user_antennas[k], k)?;
        }
        Ok(())
    }

    /// Largest violation of any power or SAR constraint (≤ 0 when feasible).
    pub fn max_violation(&self, q: &TransmitCovariances) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for (k, qk) in q.q.iter().enumerate() {
            worst = worst.max(linalg::trace_re(qk) - self.pmax[k]);
            for (r, &d) in self.sar[k].r.iter().zip(&self.sar[k].d) {
                worst = worst.max(linalg::trace_of_product(r, qk).re - d);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dims_validation() {
        assert!(SystemDims::new(vec![], 4, 2, 2).is_err());
        assert!(SystemDims::new(vec![2, 0], 4, 2, 2).is_err());
        assert!(SystemDims::new(vec![2], 4, 0, 2).is_err());
        let d = SystemDims::default_deployment();
        assert_eq!(d.bs_elements(), 64);
        assert_eq!(d.users(), 4);
    }

    #[test]
    fn exponential_statistics_are_normalized() {
        let dims = SystemDims::default_deployment();
        let stats = ChannelStatistics::exponential(&dims, 0.8, 1.0).unwrap();
        stats.validate(&dims).unwrap();
        for o in &stats.omega2 {
            assert!((o.iter().sum::<f64>() - 64.0).abs() < 1e-9);
        }
        assert_ne!(stats.omega2[0], stats.omega2[1]);
    }

    #[test]
    fn phase_shift_modulus_enforced() {
        assert!(PhaseShifts::new(CVec::from_vec(vec![C64::new(0.5, 0.0)])).is_err());
        let p = PhaseShifts::from_angles(&[0.3, -1.2]);
        assert!(PhaseShifts::new(p.phi.clone()).is_ok());
    }

    #[test]
    fn covariance_validation_rejects_indefinite() {
        let q = CMat::from_diagonal(&CVec::from_vec(vec![real(1.0), real(-0.1)]));
        assert!(matches!(TransmitCovariances::new(vec![q]), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn feasible_set_membership() {
        assert!(FeasibleSet::LorentzianPhase.contains(C64::new(0.0, 1.0), 1e-12));
        assert!(FeasibleSet::LorentzianPhase.contains(C64::new(0.5, 0.5), 1e-12));
        assert!(!FeasibleSet::AMPLITUDE_DEFAULT.contains(C64::new(3.0, 0.0), 1e-12));
        assert!(FeasibleSet::BINARY_DEFAULT.contains(C64::new(0.0, 0.0), 1e-12));
        assert!(FeasibleSet::AmplitudeOnly { lo: 2.0, hi: 1.0 }.validate().is_err());
    }

    #[test]
    fn dma_weights_reject_off_block_entries() {
        let dims = SystemDims::new(vec![1], 2, 2, 2).unwrap();
        let mut xi = CMat::zeros(2, 4);
        xi[(0, 0)] = real(1.0);
        xi[(1, 2)] = real(1.0);
        assert!(DmaWeights::from_matrix(xi.clone(), FeasibleSet::Unconstrained, &dims).is_ok());
        xi[(0, 3)] = real(0.5);
        assert!(DmaWeights::from_matrix(xi, FeasibleSet::Unconstrained, &dims).is_err());
    }
}
