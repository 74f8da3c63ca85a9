//! RIS phase design through the WMMSE reformulation: block-coordinate
//! descent over (Ue, We, φ), with φ updated by majorization-minimization.

use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat, CVec, C64};
use crate::model::PhaseShifts;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseConfig {
    /// MM stops when `|Δg| ≤ mm_tol`.
    pub mm_tol: f64,
    /// BCD stops when `|Δh| ≤ bcd_tol`.
    pub bcd_tol: f64,
    pub max_mm_steps: usize,
    pub max_bcd_iters: usize,
    /// Squared extrapolation of the BCD map with a monotone safeguard.
    pub accelerate: bool,
}

impl Default for PhaseConfig {
    fn default() -> Self {
        PhaseConfig {
            mm_tol: 1e-6,
            bcd_tol: 1e-6,
            max_mm_steps: 5_000,
            max_bcd_iters: 500,
            accelerate: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WmmseState {
    pub we: CMat,
    pub ue: CMat,
    pub h_value: f64,
}

/// Quadratic `g(φ) = φᴴΔφ − 2 Re{φᴴ b*}` for fixed (Ue, We).
#[derive(Debug, Clone)]
pub struct MmWorkspace {
    pub delta: CMat,
    pub lambda_max: f64,
    pub b: CVec,
    pub g_value: f64,
}

impl MmWorkspace {
    pub fn g(&self, phi: &CVec) -> f64 {
        phi.dotc(&(&self.delta * phi)).re - 2.0 * phi.dotc(&self.b.conjugate()).re
    }

    /// Surrogate `g̃(φ | φ₀)`, tight at `φ₀` and above `g` on the unit torus.
    pub fn majorizer(&self, phi: &CVec, phi0: &CVec) -> f64 {
        let n = phi.len() as f64;
        let d0 = &self.delta * phi0;
        let shifted = phi0 * real(self.lambda_max) - d0;
        2.0 * self.lambda_max * n - phi0.dotc(&(&self.delta * phi0)).re - 2.0 * phi.dotc(&shifted).re
            - 2.0 * phi.dotc(&self.b.conjugate()).re
    }

    /// One MM update: `φₙ ← exp(j arg cₙ)` with `c = (λmax I − Δ)φ + b*`.
    /// Entries with `cₙ = 0` keep their phase.
    pub fn step(&self, phi: &CVec) -> CVec {
        let c = phi * real(self.lambda_max) - &self.delta * phi + self.b.conjugate();
        CVec::from_iterator(
            phi.len(),
            c.iter().zip(phi.iter()).map(|(&cn, &old)| {
                let m = cn.norm();
                if m == 0.0 || !m.is_finite() {
                    old
                } else {
                    cn / m
                }
            }),
        )
    }
}

/// Phase-design problem for one fixed transmit-side matrix P (or P̃) and
/// receive combiner Ṽ1.
#[derive(Debug, Clone)]
pub struct PhaseProblem {
    p: CMat,
    p_half: CMat,
    /// Ṽ1ᴴ H1 (S × N_R).
    hv: CMat,
    sigma2: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseReport {
    pub phi: PhaseShifts,
    /// h after initialization and after every accepted BCD iteration.
    pub h_trace: Vec<f64>,
    /// g along the MM steps, per BCD iteration.
    pub g_traces: Vec<Vec<f64>>,
    pub bcd_iterations: usize,
    pub mm_steps: usize,
    pub converged: bool,
}

impl PhaseProblem {
    pub fn new(p: &CMat, h1: &CMat, v1: &CMat, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0) {
            return Err(Error::invalid("sigma2", "noise variance must be positive"));
        }
        let nr = h1.ncols();
        linalg::ensure_shape(p, "P", nr, nr)?;
        linalg::ensure_shape(v1, "V1", h1.nrows(), v1.ncols())?;
        linalg::ensure_hermitian(p, "P", 1e-9)?;
        let p = linalg::project_psd(p, "P", 1e-9)?;
        Ok(PhaseProblem {
            p_half: linalg::psd_sqrt(&p),
            p,
            hv: v1.adjoint() * h1,
            sigma2,
        })
    }

    pub fn ris_elements(&self) -> usize {
        self.p.nrows()
    }

    /// `Ṽ1ᴴ H1 Φ P^{1/2}`.
    pub fn effective_channel(&self, phi: &CVec) -> CMat {
        let mut hphi = self.hv.clone();
        for (n, z) in phi.iter().enumerate() {
            hphi.column_mut(n).iter_mut().for_each(|x| *x *= z);
        }
        hphi * &self.p_half
    }

    /// `ln det(I + (1/σ²) Ṽ1ᴴH1ΦPΦᴴH1ᴴṼ1)` in nats.
    pub fn ln_se(&self, phi: &CVec) -> Result<f64> {
        let h = self.effective_channel(phi);
        let m = linalg::identity(h.nrows()) + &h * h.adjoint() * real(1.0 / self.sigma2);
        linalg::ln_det_hpd(&m, "I + equivalent channel Gram / sigma2")
    }

    /// MMSE receiver `(σ²I + H Hᴴ)⁻¹ H` with `H = Ṽ1ᴴH1ΦP^{1/2}`.
    pub fn update_ue(&self, phi: &CVec) -> Result<CMat> {
        let h = self.effective_channel(phi);
        let c = linalg::identity(h.nrows()) * real(self.sigma2) + &h * h.adjoint();
        let chol = linalg::cholesky_hpd(&c).ok_or_else(|| Error::Singular {
            what: "sigma2 I + H Hᴴ".into(),
            hint: "sigma2 must be positive".into(),
        })?;
        Ok(chol.solve(&h))
    }

    /// MSE matrix `E = σ² UeᴴUe + (UeᴴH − I)(UeᴴH − I)ᴴ`.
    pub fn mse_matrix(&self, ue: &CMat, phi: &CVec) -> CMat {
        let h = self.effective_channel(phi);
        let n = h.ncols();
        let d = ue.adjoint() * h - linalg::identity(n);
        linalg::hermitize(&(ue.adjoint() * ue * real(self.sigma2) + &d * d.adjoint()))
    }

    /// `We = E⁻¹`.
    pub fn update_we(&self, ue: &CMat, phi: &CVec) -> Result<CMat> {
        linalg::inv_hpd(&self.mse_matrix(ue, phi), "MSE matrix")
    }

    /// `h = tr(We E) − ln det We`.
    pub fn h_value(&self, we: &CMat, ue: &CMat, phi: &CVec) -> Result<f64> {
        let e = self.mse_matrix(ue, phi);
        Ok(linalg::trace_of_product(we, &e).re - linalg::ln_det_hpd(we, "We")?)
    }

    /// Δ = A ⊙ Pᵀ and b = diag(B) for fixed (We, Ue).
    pub fn build_quadratic(&self, we: &CMat, ue: &CMat, phi: &CVec) -> MmWorkspace {
        let t = ue.adjoint() * &self.hv;
        let a = t.adjoint() * we * &t;
        let bmat = &self.p_half * we * &t;
        let nr = self.ris_elements();
        let delta = linalg::hermitize(&CMat::from_fn(nr, nr, |i, j| a[(i, j)] * self.p[(j, i)]));
        let b = bmat.diagonal();
        let lambda_max = linalg::lambda_max(&delta).max(0.0);
        let mut ws = MmWorkspace {
            delta,
            lambda_max,
            b,
            g_value: 0.0,
        };
        ws.g_value = ws.g(phi);
        ws
    }

    pub fn init_state(&self, phi: &CVec) -> Result<WmmseState> {
        let ue = self.update_ue(phi)?;
        let we = self.update_we(&ue, phi)?;
        let h_value = self.h_value(&we, &ue, phi)?;
        Ok(WmmseState { we, ue, h_value })
    }

    /// Block-coordinate descent from `init`.
    /// One BCD iteration from `phi` with `state` optimal for `phi`: MM on g,
    /// then the receive filter and weight updates. Returns the new point,
    /// its state and the g values along the MM steps.
    fn bcd_iteration(&self, state: &WmmseState, phi: &CVec, cfg: &PhaseConfig) -> Result<(CVec, WmmseState, Vec<f64>)> {
        let ws = self.build_quadratic(&state.we, &state.ue, phi);
        let mut x = phi.clone();
        let mut g_prev = ws.g_value;
        let mut trace = vec![g_prev];
        for _ in 0..cfg.max_mm_steps {
            let next = ws.step(&x);
            let g_next = ws.g(&next);
            x = next;
            trace.push(g_next);
            let done = (g_prev - g_next).abs() <= cfg.mm_tol;
            g_prev = g_next;
            if done {
                break;
            }
        }
        let ue = self.update_ue(&x)?;
        let we = self.update_we(&ue, &x)?;
        let h_value = self.h_value(&we, &ue, &x)?;
        Ok((x, WmmseState { we, ue, h_value }, trace))
    }

    pub fn optimize(&self, init: &PhaseShifts, cfg: &PhaseConfig) -> Result<PhaseReport> {
        if !(cfg.mm_tol > 0.0 && cfg.bcd_tol > 0.0) {
            return Err(Error::invalid("phase tolerances", "must be positive"));
        }
        if init.len() != self.ris_elements() {
            return Err(Error::mismatch("phi", (self.ris_elements(), 1), (init.len(), 1)));
        }
        let mut phi = init.phi.clone();
        let mut state = self.init_state(&phi)?;
        let mut report = PhaseReport {
            phi: init.clone(),
            h_trace: vec![state.h_value],
            g_traces: Vec::new(),
            bcd_iterations: 0,
            mm_steps: 0,
            converged: false,
        };
        let accept = |report: &mut PhaseReport, h: f64, g: Vec<f64>| {
            report.mm_steps += g.len() - 1;
            report.g_traces.push(g);
            report.h_trace.push(h);
            report.bcd_iterations += 1;
        };

        'outer: while report.bcd_iterations < cfg.max_bcd_iters {
            let phi0 = phi.clone();
            let mut path = Vec::with_capacity(2);
            for _ in 0..if cfg.accelerate { 2 } else { 1 } {
                let h_before = state.h_value;
                let (x, st, g) = self.bcd_iteration(&state, &phi, cfg)?;
                accept(&mut report, st.h_value, g);
                phi = x;
                state = st;
                path.push(phi.clone());
                if (h_before - state.h_value).abs() <= cfg.bcd_tol {
                    report.converged = true;
                    break 'outer;
                }
                if report.bcd_iterations >= cfg.max_bcd_iters {
                    break 'outer;
                }
            }
            if !cfg.accelerate {
                continue;
            }
            // Squared extrapolation along the last two steps, kept only if a
            // BCD iteration from the extrapolated point beats the plain path.
            let r = &path[0] - &phi0;
            let v = &path[1] - &path[0] - &r;
            let vn = v.norm();
            if vn == 0.0 {
                continue;
            }
            let mut alpha = (-r.norm() / vn).min(-1.0);
            loop {
                let ext = renormalize(&phi0 - &r * real(2.0 * alpha) + &v * real(alpha * alpha));
                let ext_state = self.init_state(&ext)?;
                let (x, st, g) = self.bcd_iteration(&ext_state, &ext, cfg)?;
                if st.h_value <= state.h_value {
                    let dh = state.h_value - st.h_value;
                    accept(&mut report, st.h_value, g);
                    phi = x;
                    state = st;
                    if dh <= cfg.bcd_tol {
                        report.converged = true;
                        break 'outer;
                    }
                    break;
                }
                if alpha >= -1.0 {
                    break;
                }
                alpha = ((alpha - 1.0) / 2.0).min(-1.0);
            }
        }
        report.phi = PhaseShifts { phi: renormalize(phi) };
        Ok(report)
    }
}

fn renormalize(phi: CVec) -> CVec {
    phi.map(|z: C64| {
        let m = z.norm();
        if m > 0.0 {
            z / m
        } else {
            real(1.0)
        }
    })
}

/// `P = Σ_k H2_k Q_k H2_kᴴ`.
pub fn transmit_side_matrix(h2: &[CMat], q: &[CMat]) -> CMat {
    let nr = h2.first().map_or(0, |h| h.nrows());
    linalg::hermitize(&h2.iter().zip(q).fold(CMat::zeros(nr, nr), |acc, (h, q)| acc + h * q * h.adjoint()))
}

/// Phase design for a fixed P (full CSI) or P̃ (partial CSI).
pub fn optimize_phase(
    p: &CMat,
    h1: &CMat,
    v1: &CMat,
    sigma2: f64,
    init: &PhaseShifts,
    cfg: &PhaseConfig,
) -> Result<PhaseReport> {
    PhaseProblem::new(p, h1, v1, sigma2)?.optimize(init, cfg)
}
