//! Alternating optimization of (Q, Φ, Ξ) under full or partial CSI, the
//! power-backoff baselines, and the no-RIS and fully digital references.
//!
//! Each outer iteration runs the covariance, phase and DMA stages in that
//! order. A stage result is kept only if the tracked objective does not
//! drop; rejected stages are counted in the trace.

use std::time::Instant;

use crate::covariance::{self, CovarianceConfig, DualState};
use crate::de::{self, DeConfig, DeState};
use crate::dma::{self, DmaConfig};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{
    effective_channels, ln_se_from_effective, rng_for, ChannelSet, ChannelStatistics, Constraints, DmaWeights,
    FeasibleSet, PhaseShifts, SystemDims, TransmitCovariances,
};
use crate::ris::{self, PhaseConfig};

/// RNG stream reserved for the initial RIS phases.
const PHASE_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiMode {
    Full,
    Partial,
}

impl CsiMode {
    pub fn tag(&self) -> &'static str {
        match self {
            CsiMode::Full => "full",
            CsiMode::Partial => "partial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseInit {
    Random,
    Ones,
}

/// Receiver front end: a DMA with the given feasible set, or a fully
/// digital array (Ṽ1 = I).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Receiver {
    Dma(FeasibleSet),
    Conventional,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AoConfig {
    /// ε₁: MM inner loop, on g.
    pub mm_tol: f64,
    /// ε₂: BCD loop, on h.
    pub bcd_tol: f64,
    /// ε₃: DMA fitting, on ‖ΔΞ‖²_F.
    pub dma_tol: f64,
    /// ε₄: deterministic-equivalent fixed point, relative change of ψ.
    pub de_tol: f64,
    /// ε₅: partial-CSI covariance loop, on the DE SE (bit/s/Hz).
    pub inner_tol: f64,
    /// ε₆: outer loop, on the SE (bit/s/Hz).
    pub outer_tol: f64,
    pub max_outer: usize,
    pub max_mm_steps: usize,
    pub max_bcd_iters: usize,
    pub max_dma_iters: usize,
    pub max_covariance_sweeps: usize,
    pub seed: u64,
    pub csi_mode: CsiMode,
    pub receiver: Receiver,
    pub phase_init: PhaseInit,
    /// When false the phases stay at their initial value (no-RIS reference
    /// uses this with `PhaseInit::Ones`).
    pub optimize_phase: bool,
}

impl Default for AoConfig {
    fn default() -> Self {
        AoConfig {
            mm_tol: 1e-6,
            bcd_tol: 1e-6,
            dma_tol: 1e-8,
            de_tol: 1e-10,
            inner_tol: 1e-6,
            outer_tol: 1e-5,
            max_outer: 100,
            max_mm_steps: 5_000,
            max_bcd_iters: 500,
            max_dma_iters: 1_000,
            max_covariance_sweeps: 200,
            seed: 0,
            csi_mode: CsiMode::Full,
            receiver: Receiver::Dma(FeasibleSet::Unconstrained),
            phase_init: PhaseInit::Random,
            optimize_phase: true,
        }
    }
}

impl AoConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("eps1", self.mm_tol),
            ("eps2", self.bcd_tol),
            ("eps3", self.dma_tol),
            ("eps4", self.de_tol),
            ("eps5", self.inner_tol),
            ("eps6", self.outer_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(name, "threshold must be positive"));
            }
        }
        if self.max_outer == 0 {
            return Err(Error::invalid("max_outer", "must be at least 1"));
        }
        if let Receiver::Dma(set) = self.receiver {
            set.validate()?;
        }
        Ok(())
    }

    pub fn covariance(&self) -> CovarianceConfig {
        CovarianceConfig {
            max_sweeps: self.max_covariance_sweeps,
            ..CovarianceConfig::default()
        }
    }

    pub fn phase(&self) -> PhaseConfig {
        PhaseConfig {
            mm_tol: self.mm_tol,
            bcd_tol: self.bcd_tol,
            max_mm_steps: self.max_mm_steps,
            max_bcd_iters: self.max_bcd_iters,
            accelerate: true,
        }
    }

    pub fn dma(&self) -> DmaConfig {
        DmaConfig {
            tol: self.dma_tol,
            max_iter: self.max_dma_iters,
        }
    }

    pub fn de(&self) -> DeConfig {
        DeConfig {
            tol: self.de_tol,
            ..DeConfig::default()
        }
    }

    pub fn initial_phases(&self, n: usize) -> PhaseShifts {
        match self.phase_init {
            PhaseInit::Ones => PhaseShifts::ones(n),
            PhaseInit::Random => PhaseShifts::random(n, &mut rng_for(self.seed, PHASE_STREAM)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Covariance,
    Phase,
    Dma,
}

impl Stage {
    pub fn label(&self) -> &'static str {
        match self {
            Stage::Covariance => "covariance",
            Stage::Phase => "phase",
            Stage::Dma => "dma",
        }
    }
}

/// Outcome of one AO run.
#[derive(Debug, Clone)]
pub struct AoTrace {
    /// Objective (bit/s/Hz) at initialization and after every outer
    /// iteration: the SE under full CSI, the DE SE under partial CSI.
    pub se_trace: Vec<f64>,
    /// Stages whose result was discarded because the objective dropped,
    /// with the outer iteration and the size of the drop (bit/s/Hz).
    pub rejected: Vec<(usize, Stage, f64)>,
    /// Wall time per stage in seconds: covariance, phase, DMA.
    pub stage_seconds: [f64; 3],
    pub converged: bool,
    pub q: TransmitCovariances,
    pub duals: DualState,
    pub phi: PhaseShifts,
    /// `None` for the fully digital receiver.
    pub dma: Option<DmaWeights>,
    /// Ṽ1 used for the final objective (I_M for the fully digital receiver).
    pub v1: CMat,
    pub de_state: Option<DeState>,
}

impl AoTrace {
    pub fn final_se(&self) -> f64 {
        *self.se_trace.last().expect("trace has the initial value")
    }

    pub fn outer_iterations(&self) -> usize {
        self.se_trace.len() - 1
    }
}

/// Starting point for a run; the defaults come from the configuration.
#[derive(Debug, Clone, Default)]
pub struct AoStart {
    pub q: Option<TransmitCovariances>,
    pub duals: Option<DualState>,
    pub phi: Option<PhaseShifts>,
    /// Initial DMA weights; ignored by the fully digital receiver.
    pub dma: Option<DmaWeights>,
}

fn bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Objective evaluator for one CSI mode.
enum Objective<'a> {
    Full { ch: &'a ChannelSet },
    Partial { stats: &'a ChannelStatistics, h1: &'a CMat },
}

impl Objective<'_> {
    fn h1(&self) -> &CMat {
        match self {
            Objective::Full { ch } => &ch.h1,
            Objective::Partial { h1, .. } => h1,
        }
    }

    /// Objective in bit/s/Hz, plus the DE state for partial CSI.
    fn eval(
        &self,
        q: &TransmitCovariances,
        phi: &PhaseShifts,
        v1: &CMat,
        sigma2: f64,
        warm: Option<&DeState>,
        de_cfg: &DeConfig,
    ) -> Result<(f64, Option<DeState>)> {
        match self {
            Objective::Full { ch } => Ok((bits(ln_se_from_effective(&effective_channels(phi, v1, ch), q, sigma2)?), None)),
            Objective::Partial { stats, h1 } => {
                let ug = de::effective_u(phi, v1, h1, stats);
                let st = de::de_fixed_point(&ug, stats, q, sigma2, warm, de_cfg)?;
                Ok((st.se_bits(), Some(st)))
            }
        }
    }

    /// P (full CSI) or P̃ (partial CSI).
    fn transmit_side(&self, q: &TransmitCovariances, de_state: Option<&DeState>, sigma2: f64) -> CMat {
        match self {
            Objective::Full { ch } => ris::transmit_side_matrix(&ch.h2, &q.q),
            Objective::Partial { stats, .. } => {
                de::effective_p_tilde(de_state.expect("partial CSI keeps a DE state"), stats, sigma2)
            }
        }
    }

    /// S (full CSI) or S̃ (partial CSI).
    fn receive_side(&self, q: &TransmitCovariances, phi: &PhaseShifts, de_state: Option<&DeState>) -> CMat {
        match self {
            Objective::Full { ch } => {
                dma::receive_side_matrix(&ch.h1, phi, &ris::transmit_side_matrix(&ch.h2, &q.q))
            }
            Objective::Partial { stats, h1 } => {
                de::effective_s_tilde(de_state.expect("partial CSI keeps a DE state"), stats, h1, phi)
            }
        }
    }
}

fn dma_fit(smat: &CMat, set: &FeasibleSet, dims: &SystemDims, cfg: &AoConfig) -> Result<DmaWeights> {
    Ok(dma::optimize_dma(smat, set, dims, &cfg.dma())?.weights)
}

#[allow(clippy::too_many_arguments)]
fn run(
    dims: &SystemDims,
    objective: Objective<'_>,
    constraints: &Constraints,
    sigma2: f64,
    cfg: &AoConfig,
    start: &AoStart,
) -> Result<AoTrace> {
    cfg.validate()?;
    constraints.validate(dims)?;
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "noise variance must be positive"));
    }
    let cov_cfg = cfg.covariance();
    let de_cfg = cfg.de();
    let m = dims.bs_elements();

    let mut q = start.q.clone().unwrap_or_else(|| covariance::feasible_start(dims, constraints));
    let mut duals = start.duals.clone().unwrap_or_else(|| DualState::zeros(constraints));
    let mut phi = start.phi.clone().unwrap_or_else(|| cfg.initial_phases(dims.ris_elements));
    let mut de_state: Option<DeState> = None;

    // Initial receiver: the configured-set fit at (Q⁰, φ⁰).
    let (mut weights, mut v1) = match cfg.receiver {
        Receiver::Conventional => (None, linalg::identity(m)),
        Receiver::Dma(_) if start.dma.is_some() => {
            let w = start.dma.clone().unwrap();
            let v = w.v1_tilde.clone();
            (Some(w), v)
        }
        Receiver::Dma(set) => {
            let smat = match &objective {
                Objective::Full { .. } => objective.receive_side(&q, &phi, None),
                Objective::Partial { .. } => {
                    let (_, st) = objective.eval(&q, &phi, &linalg::identity(m), sigma2, None, &de_cfg)?;
                    objective.receive_side(&q, &phi, st.as_ref())
                }
            };
            let w = dma_fit(&smat, &set, dims, cfg).map_err(|e| e.in_stage("initial dma"))?;
            let v = w.v1_tilde.clone();
            (Some(w), v)
        }
    };
    let (mut eta, st) = objective.eval(&q, &phi, &v1, sigma2, None, &de_cfg)?;
    de_state = st.or(de_state);
    let mut se_trace = vec![eta];
    let mut rejected = Vec::new();
    let mut stage_seconds = [0.0; 3];
    let mut converged = false;
    let mut warm = start.duals.is_some();

    for outer in 1..=cfg.max_outer {
        // Covariance stage.
        let t0 = Instant::now();
        let init_duals = warm.then_some(&duals);
        let (q_new, duals_new, de_new) = match &objective {
            Objective::Full { ch } => {
                let g = effective_channels(&phi, &v1, ch);
                let rep = covariance::solve_full_csi_effective(
                    dims,
                    &g,
                    constraints,
                    sigma2,
                    init_duals.map(|d| (&q, d)),
                    &cov_cfg,
                )
                .map_err(|e| e.in_stage("covariance"))?;
                (rep.q, rep.duals, None)
            }
            Objective::Partial { stats, h1 } => {
                let init = init_duals.map(|d| (&q, d, de_state.as_ref().expect("state kept")));
                let (rep, st) = covariance::solve_partial_csi(
                    dims,
                    stats,
                    h1,
                    &phi,
                    &v1,
                    constraints,
                    sigma2,
                    init,
                    cfg.inner_tol * std::f64::consts::LN_2,
                    &de_cfg,
                    &cov_cfg,
                )
                .map_err(|e| e.in_stage("covariance"))?;
                (rep.q, rep.duals, Some(st))
            }
        };
        let (eta_q, st) = match (&objective, de_new) {
            (Objective::Partial { .. }, Some(st)) => (st.se_bits(), Some(st)),
            _ => objective.eval(&q_new, &phi, &v1, sigma2, None, &de_cfg)?,
        };
        stage_seconds[0] += t0.elapsed().as_secs_f64();
        if eta_q >= eta {
            q = q_new;
            duals = duals_new;
            eta = eta_q;
            de_state = st.or(de_state);
            warm = true;
        } else {
            rejected.push((outer, Stage::Covariance, eta - eta_q));
        }

        // Phase stage.
        if cfg.optimize_phase {
            let t0 = Instant::now();
            let p = objective.transmit_side(&q, de_state.as_ref(), sigma2);
            let rep = ris::optimize_phase(&p, objective.h1(), &v1, sigma2, &phi, &cfg.phase())
                .map_err(|e| e.in_stage("phase"))?;
            let (eta_p, st) = objective.eval(&q, &rep.phi, &v1, sigma2, de_state.as_ref(), &de_cfg)?;
            stage_seconds[1] += t0.elapsed().as_secs_f64();
            if eta_p >= eta {
                phi = rep.phi;
                eta = eta_p;
                de_state = st.or(de_state);
            } else {
                rejected.push((outer, Stage::Phase, eta - eta_p));
            }
        }

        // DMA stage.
        if let Receiver::Dma(set) = cfg.receiver {
            let t0 = Instant::now();
            let smat = objective.receive_side(&q, &phi, de_state.as_ref());
            let w = dma_fit(&smat, &set, dims, cfg).map_err(|e| e.in_stage("dma"))?;
            let (eta_d, st) = objective.eval(&q, &phi, &w.v1_tilde, sigma2, de_state.as_ref(), &de_cfg)?;
            stage_seconds[2] += t0.elapsed().as_secs_f64();
            if eta_d >= eta {
                v1 = w.v1_tilde.clone();
                weights = Some(w);
                eta = eta_d;
                de_state = st.or(de_state);
            } else {
                rejected.push((outer, Stage::Dma, eta - eta_d));
            }
        }

        let prev = *se_trace.last().unwrap();
        se_trace.push(eta);
        if (eta - prev).abs() <= cfg.outer_tol {
            converged = true;
            break;
        }
    }

    Ok(AoTrace {
        se_trace,
        rejected,
        stage_seconds,
        converged,
        q,
        duals,
        phi,
        dma: weights,
        v1,
        de_state,
    })
}

/// AO with instantaneous user-to-RIS channels.
pub fn ao_full_csi(
    dims: &SystemDims,
    ch: &ChannelSet,
    constraints: &Constraints,
    sigma2: f64,
    cfg: &AoConfig,
    start: &AoStart,
) -> Result<AoTrace> {
    ch.validate(dims)?;
    run(dims, Objective::Full { ch }, constraints, sigma2, cfg, start)
}

/// AO on the deterministic-equivalent SE with statistical user-to-RIS CSI.
pub fn ao_partial_csi(
    dims: &SystemDims,
    stats: &ChannelStatistics,
    h1: &CMat,
    constraints: &Constraints,
    sigma2: f64,
    cfg: &AoConfig,
    start: &AoStart,
) -> Result<AoTrace> {
    stats.validate(dims)?;
    linalg::ensure_shape(h1, "H1", dims.bs_elements(), dims.ris_elements)?;
    run(dims, Objective::Partial { stats, h1 }, constraints, sigma2, cfg, start)
}

/// Channel knowledge handed to the drivers.
#[derive(Debug, Clone, Copy)]
pub enum Csi<'a> {
    Full(&'a ChannelSet),
    Partial { stats: &'a ChannelStatistics, h1: &'a CMat },
}

impl<'a> Csi<'a> {
    fn objective(&self) -> Objective<'a> {
        match *self {
            Csi::Full(ch) => Objective::Full { ch },
            Csi::Partial { stats, h1 } => Objective::Partial { stats, h1 },
        }
    }
}

/// Dispatches to [`ao_full_csi`] or [`ao_partial_csi`].
pub fn ao(dims: &SystemDims, csi: Csi<'_>, constraints: &Constraints, sigma2: f64, cfg: &AoConfig, start: &AoStart) -> Result<AoTrace> {
    match csi {
        Csi::Full(ch) => ao_full_csi(dims, ch, constraints, sigma2, cfg, start),
        Csi::Partial { stats, h1 } => ao_partial_csi(dims, stats, h1, constraints, sigma2, cfg, start),
    }
}

/// Objective (bit/s/Hz) of a fixed design.
pub fn evaluate(dims: &SystemDims, csi: Csi<'_>, q: &TransmitCovariances, phi: &PhaseShifts, v1: &CMat, sigma2: f64, cfg: &AoConfig) -> Result<f64> {
    let _ = dims;
    Ok(csi.objective().eval(q, phi, v1, sigma2, None, &cfg.de())?.0)
}

/// `ρ₁,k = min(1, min_i D_{k,i} / (Pmax,k λmax(R_{k,i})))`.
pub fn worst_case_factors(constraints: &Constraints) -> Vec<f64> {
    constraints
        .pmax
        .iter()
        .zip(&constraints.sar)
        .map(|(&p, sar)| {
            sar.r.iter().zip(&sar.d).fold(1.0f64, |acc, (r, &d)| {
                let worst = crate::model::worst_case_sar(r, p);
                if worst > 0.0 {
                    acc.min(d / worst)
                } else {
                    acc
                }
            })
        })
        .collect()
}

/// Result of a backoff baseline.
#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub trace: AoTrace,
    /// Per-user backoff factors.
    pub factors: Vec<f64>,
    /// Objective (bit/s/Hz) of the backed-off design.
    pub se: f64,
}

/// Worst-case backoff: SAR dropped, power budgets shrunk by ρ₁.
pub fn baseline_worst_case(dims: &SystemDims, csi: Csi<'_>, constraints: &Constraints, sigma2: f64, cfg: &AoConfig) -> Result<BaselineResult> {
    let factors = worst_case_factors(constraints);
    let shrunk = Constraints::power_only(constraints.pmax.iter().zip(&factors).map(|(p, r)| p * r).collect());
    let trace = ao(dims, csi, &shrunk, sigma2, cfg, &AoStart::default())?;
    let se = trace.final_se();
    Ok(BaselineResult { trace, factors, se })
}

/// Adaptive backoff: power-only design `Q⁰`, then `Q_k = ρ₂,k Q⁰_k` with
/// `ρ₂,k = min(1, min_i D_{k,i} / tr(R_{k,i} Q⁰_k))`.
pub fn baseline_adaptive(dims: &SystemDims, csi: Csi<'_>, constraints: &Constraints, sigma2: f64, cfg: &AoConfig) -> Result<BaselineResult> {
    let mut trace = ao(dims, csi, &constraints.without_sar(), sigma2, cfg, &AoStart::default())?;
    let factors: Vec<f64> = trace
        .q
        .q
        .iter()
        .zip(&constraints.sar)
        .map(|(q, sar)| {
            sar.r.iter().zip(&sar.d).fold(1.0f64, |acc, (r, &d)| {
                let s = linalg::trace_of_product(r, q).re;
                if s > 0.0 {
                    acc.min(d / s)
                } else {
                    acc
                }
            })
        })
        .collect();
    trace.q = trace.q.scaled(&factors);
    let se = evaluate(dims, csi, &trace.q, &trace.phi, &trace.v1, sigma2, cfg)?;
    Ok(BaselineResult { trace, factors, se })
}

/// Starting point that reproduces the end of `trace`.
pub fn warm_start(trace: &AoTrace) -> AoStart {
    AoStart {
        q: Some(trace.q.clone()),
        duals: Some(trace.duals.clone()),
        phi: Some(trace.phi.clone()),
        dma: trace.dma.clone(),
    }
}

/// Same pipeline with Φ = I and the phase stage skipped.
pub fn no_ris_reference(dims: &SystemDims, csi: Csi<'_>, constraints: &Constraints, sigma2: f64, cfg: &AoConfig) -> Result<AoTrace> {
    let cfg = AoConfig {
        phase_init: PhaseInit::Ones,
        optimize_phase: false,
        ..*cfg
    };
    ao(dims, csi, constraints, sigma2, &cfg, &AoStart::default())
}

/// Fully digital M-antenna receiver (Ṽ1 = I), warm-started from `from`.
pub fn conventional_reference(
    dims: &SystemDims,
    csi: Csi<'_>,
    constraints: &Constraints,
    sigma2: f64,
    cfg: &AoConfig,
    from: Option<&AoTrace>,
) -> Result<AoTrace> {
    let cfg = AoConfig {
        receiver: Receiver::Conventional,
        ..*cfg
    };
    let start = from
        .map(|t| AoStart {
            q: Some(t.q.clone()),
            duals: Some(t.duals.clone()),
            phi: Some(t.phi.clone()),
            dma: None,
        })
        .unwrap_or_default();
    ao(dims, csi, constraints, sigma2, &cfg, &start)
}
