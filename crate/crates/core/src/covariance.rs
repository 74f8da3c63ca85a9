//! Transmit-covariance optimization under per-user power and SAR budgets.
//!
//! For fixed duals `(μ, λ)` the per-user problem
//! `max ln det(I + Γ Q) − tr(K Q)`, `K = μI + Σ λ_i R_i`, is solved in closed
//! form by modified water-filling. The duals are found by one-dimensional
//! monotone root finding on the constraint slacks: for fixed λ, `tr Q(μ)` is
//! nonincreasing in μ, and along each λ_i the slack `D_i − tr(R_i Q)` of the
//! partially minimized dual is nondecreasing.

use crate::de::{self, DeConfig, DeState};
use crate::error::{Error, Result};
use crate::linalg::{self, real, CMat};
use crate::model::{
    effective_channels, ln_se_from_effective, ChannelSet, ChannelStatistics, Constraints, PhaseShifts, SarConstraint,
    SystemDims, TransmitCovariances,
};

/// Smallest power dual; keeps `K` invertible when the power budget is slack.
pub const MU_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct DualState {
    pub mu: Vec<f64>,
    pub lambda: Vec<Vec<f64>>,
}

impl DualState {
    pub fn zeros(constraints: &Constraints) -> Self {
        DualState {
            mu: vec![MU_FLOOR; constraints.pmax.len()],
            lambda: constraints.sar.iter().map(|s| vec![0.0; s.len()]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceConfig {
    /// Stop the user sweeps when the objective changes by at most this (nats).
    pub sweep_tol: f64,
    pub max_sweeps: usize,
    /// Relative tolerance of the dual root finding.
    pub dual_tol: f64,
    pub max_root_iters: usize,
    /// Cyclic passes over the SAR duals when a user has more than one.
    pub max_coordinate_passes: usize,
}

impl Default for CovarianceConfig {
    fn default() -> Self {
        CovarianceConfig {
            sweep_tol: 1e-10,
            max_sweeps: 200,
            dual_tol: 1e-13,
            max_root_iters: 200,
            max_coordinate_passes: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationCounts {
    pub outer: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaterFillReport {
    pub q: TransmitCovariances,
    pub duals: DualState,
    /// `dual · slack` for every power constraint followed by the SAR ones.
    pub kkt_residuals: Vec<f64>,
    pub iterations: IterationCounts,
    /// Objective after every single-user update (nats).
    pub objective_trace: Vec<f64>,
    /// Dual objective after every coordinate update of every user solve.
    pub dual_trace: Vec<f64>,
    pub converged: bool,
}

/// Closed-form maximizer of `ln det(I + Γ Q) − tr(K Q)` over `Q ≽ 0`.
#[derive(Debug, Clone)]
pub struct WaterFilling {
    gram: CMat,
}

/// Water-filling solution for one dual point.
#[derive(Debug, Clone)]
pub struct WaterFillPoint {
    pub q: CMat,
    /// Eigenvalues `p` of `K^{-1/2} Γ K^{-1/2}`, descending.
    pub p: Vec<f64>,
    /// `max_Q ln det(I + Γ Q) − tr(K Q)`.
    pub value: f64,
}

impl WaterFilling {
    /// `gram` is the Hermitian PSD matrix Γ (N_k × N_k).
    pub fn new(gram: CMat) -> Self {
        WaterFilling {
            gram: linalg::hermitize(&gram),
        }
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn gram(&self) -> &CMat {
        &self.gram
    }

    pub fn maximize_with(&self, k: &CMat) -> Result<WaterFillPoint> {
        let k_eig = linalg::eigh(k);
        if !(k_eig.min() > 0.0) {
            return Err(Error::Singular {
                what: "K".into(),
                hint: format!("keep the power dual at or above {MU_FLOOR:e}"),
            });
        }
        let k_inv_sqrt = k_eig.map(|x| 1.0 / x.sqrt());
        let m = &k_inv_sqrt * &self.gram * &k_inv_sqrt;
        let eig = linalg::eigh(&m);
        let w = &k_inv_sqrt * &eig.vectors;
        let n = self.dim();
        let mut q = CMat::zeros(n, n);
        let mut value = 0.0;
        for (j, &p) in eig.values.iter().enumerate() {
            if p > 1.0 {
                let level = 1.0 - 1.0 / p;
                let col = w.column(j);
                q += col * col.adjoint() * real(level);
                value += p.ln() - level;
            }
        }
        Ok(WaterFillPoint {
            q: linalg::hermitize(&q),
            p: eig.values,
            value,
        })
    }

    pub fn maximize(&self, mu: f64, lambda: &[f64], sar: &SarConstraint) -> Result<WaterFillPoint> {
        self.maximize_with(&k_matrix(self.dim(), mu, lambda, sar))
    }

    /// `ln det(I + Γ Q)`.
    pub fn objective(&self, q: &CMat) -> Result<f64> {
        let s = linalg::psd_sqrt(q);
        let m = linalg::identity(self.dim()) + &s * &self.gram * &s;
        linalg::ln_det_hpd(&m, "I + Q^1/2 Gamma Q^1/2")
    }

    /// Gradient `(I + Γ Q)⁻¹ Γ` of the objective.
    pub fn gradient(&self, q: &CMat) -> Result<CMat> {
        let a = linalg::identity(self.dim()) + &self.gram * q;
        let g = a
            .lu()
            .solve(&self.gram)
            .ok_or_else(|| Error::Singular { what: "I + Gamma Q".into(), hint: "Q must be PSD".into() })?;
        Ok(linalg::hermitize(&g))
    }
}

/// `K = μI + Σ λ_i R_i`.
pub fn k_matrix(n: usize, mu: f64, lambda: &[f64], sar: &SarConstraint) -> CMat {
    sar.r
        .iter()
        .zip(lambda)
        .fold(linalg::identity(n) * real(mu), |acc, (r, &l)| acc + r * real(l))
}

/// Per-user dual solution.
#[derive(Debug, Clone)]
pub struct UserSolution {
    pub q: CMat,
    pub mu: f64,
    pub lambda: Vec<f64>,
    pub dual_trace: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

/// Finds a root of a nondecreasing function of `ln x` on `x > 0`.
///
/// `f(lo) < 0 ≤ f(hi)` is maintained throughout and the feasible endpoint
/// `hi` is returned together with its evaluation. Illinois false position
/// with bisection fallback.
fn increasing_root<T>(
    mut eval: impl FnMut(f64) -> Result<(f64, T)>,
    start: f64,
    floor: f64,
    f_tol: f64,
    cfg: &CovarianceConfig,
) -> Result<(f64, T, bool)> {
    let start = start.max(floor * 2.0).max(f64::MIN_POSITIVE);
    let (f0, v0) = eval(start)?;
    let (mut lo, mut flo, mut hi, mut fhi, mut vhi);
    if f0 >= 0.0 {
        hi = start;
        fhi = f0;
        vhi = v0;
        let mut x = start;
        loop {
            let next = (x / 4.0).max(floor);
            let (f, v) = eval(next)?;
            if f < 0.0 {
                lo = next;
                flo = f;
                break;
            }
            hi = next;
            fhi = f;
            vhi = v;
            if next <= floor {
                return Ok((hi, vhi, true));
            }
            x = next;
        }
    } else {
        lo = start;
        flo = f0;
        let mut x = start;
        let mut expansions = 0;
        loop {
            let next = x * 4.0;
            let (f, v) = eval(next)?;
            if f >= 0.0 {
                hi = next;
                fhi = f;
                vhi = v;
                break;
            }
            lo = next;
            flo = f;
            x = next;
            expansions += 1;
            if expansions > 600 || !next.is_finite() {
                return Err(Error::invalid("dual bracket", "slack stays negative for every dual value"));
            }
        }
    }

    let (mut tlo, mut thi) = (lo.ln(), hi.ln());
    let mut side = 0i8;
    for _ in 0..cfg.max_root_iters {
        if fhi <= f_tol || thi - tlo <= cfg.dual_tol * thi.abs().max(1.0) {
            return Ok((thi.exp(), vhi, true));
        }
        let (mut a, mut b) = (flo, fhi);
        if side == -1 {
            b *= 0.5;
        } else if side == 1 {
            a *= 0.5;
        }
        let mut t = tlo - a * (thi - tlo) / (b - a);
        let width = thi - tlo;
        if !(t > tlo + 0.01 * width && t < thi - 0.01 * width) {
            t = 0.5 * (tlo + thi);
        }
        let (f, v) = eval(t.exp())?;
        if f >= 0.0 {
            thi = t;
            fhi = f;
            vhi = v;
            side = if side == 1 { 2 } else { 1 };
        } else {
            tlo = t;
            flo = f;
            side = if side == -1 { -2 } else { -1 };
        }
        if side.abs() == 2 {
            side = 0;
        }
    }
    Ok((thi.exp(), vhi, false))
}

/// Solves the per-user dual problem exactly. `warm` seeds the brackets.
pub fn solve_user(
    wf: &WaterFilling,
    pmax: f64,
    sar: &SarConstraint,
    warm: Option<(f64, &[f64])>,
    cfg: &CovarianceConfig,
) -> Result<UserSolution> {
    let a = sar.len();
    let mut evaluations = 0usize;
    let mut converged = true;
    let last_mu = std::cell::Cell::new(warm.map(|w| w.0).unwrap_or(1.0));

    // Power dual for fixed SAR duals.
    let solve_mu = |lambda: &[f64], evaluations: &mut usize, converged: &mut bool| -> Result<(f64, WaterFillPoint)> {
        let at = |mu: f64| -> Result<(f64, WaterFillPoint)> {
            let pt = wf.maximize(mu, lambda, sar)?;
            Ok((pmax - linalg::trace_re(&pt.q), pt))
        };
        let (f_floor, pt_floor) = at(MU_FLOOR)?;
        *evaluations += 1;
        if f_floor >= 0.0 {
            return Ok((MU_FLOOR, pt_floor));
        }
        let mut count = 0;
        let (mu, pt, ok) = increasing_root(
            |mu| {
                count += 1;
                at(mu)
            },
            last_mu.get(),
            MU_FLOOR,
            1e-13 * pmax.max(f64::MIN_POSITIVE),
            cfg,
        )?;
        *evaluations += count;
        *converged &= ok;
        last_mu.set(mu);
        Ok((mu, pt))
    };

    let mut lambda: Vec<f64> = match warm {
        Some((_, l)) if l.len() == a => l.to_vec(),
        _ => vec![0.0; a],
    };
    let dual_value = |mu: f64, lambda: &[f64], pt: &WaterFillPoint| {
        pt.value + mu * pmax + lambda.iter().zip(&sar.d).map(|(l, d)| l * d).sum::<f64>()
    };
    let (mut mu, mut pt) = solve_mu(&lambda, &mut evaluations, &mut converged)?;
    let mut dual_trace = vec![dual_value(mu, &lambda, &pt)];
    if a == 0 {
        return Ok(UserSolution {
            q: pt.q,
            mu,
            lambda,
            dual_trace,
            evaluations,
            converged,
        });
    }

    let mut passes_converged = false;
    for _ in 0..cfg.max_coordinate_passes {
        let before = lambda.clone();
        for i in 0..a {
            let r = &sar.r[i];
            let d = sar.d[i];
            let slack_at = |li: f64, evaluations: &mut usize, converged: &mut bool| -> Result<(f64, (f64, WaterFillPoint))> {
                let mut l = lambda.clone();
                l[i] = li;
                let (mu, pt) = solve_mu(&l, evaluations, converged)?;
                Ok((d - linalg::trace_of_product(r, &pt.q).re, (mu, pt)))
            };
            let (f0, sol0) = slack_at(0.0, &mut evaluations, &mut converged)?;
            let (li, (m, p)) = if f0 >= 0.0 {
                (0.0, sol0)
            } else {
                let start = if lambda[i] > 0.0 { lambda[i] } else { 1.0 / linalg::lambda_max(r).max(1e-300) };
                let mut ev = 0usize;
                let mut conv = true;
                let (li, sol, ok) = increasing_root(
                    |li| slack_at(li, &mut ev, &mut conv),
                    start,
                    0.0,
                    1e-13 * d,
                    cfg,
                )?;
                evaluations += ev;
                converged &= ok && conv;
                (li, sol)
            };
            lambda[i] = li;
            mu = m;
            pt = p;
            dual_trace.push(dual_value(mu, &lambda, &pt));
        }
        if a == 1 {
            passes_converged = true;
            break;
        }
        let change = lambda
            .iter()
            .zip(&before)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
            .fold(0.0, f64::max);
        if change <= 1e-10 {
            passes_converged = true;
            break;
        }
    }
    Ok(UserSolution {
        q: pt.q,
        mu,
        lambda,
        dual_trace,
        evaluations,
        converged: converged && passes_converged,
    })
}

/// Per-user water-filling with the duals fixed (Prop.-1 closed form).
pub fn optimal_q_given_duals_full(
    k: usize,
    duals: &DualState,
    g: &[CMat],
    q_others: &TransmitCovariances,
    sigma2: f64,
    sar: &SarConstraint,
) -> Result<CMat> {
    let wf = WaterFilling::new(full_csi_gram(k, g, q_others, sigma2)?);
    Ok(wf.maximize(duals.mu[k].max(MU_FLOOR), &duals.lambda[k], sar)?.q)
}

/// `G_kᴴ C_k⁻¹ G_k` with `C_k = σ²I + Σ_{j≠k} G_j Q_j G_jᴴ`.
pub fn full_csi_gram(k: usize, g: &[CMat], q: &TransmitCovariances, sigma2: f64) -> Result<CMat> {
    let s = g[k].nrows();
    let mut c = linalg::identity(s) * real(sigma2);
    for (j, (gj, qj)) in g.iter().zip(&q.q).enumerate() {
        if j != k {
            c += gj * qj * gj.adjoint();
        }
    }
    let c_inv = linalg::inv_hpd(&c, "interference-plus-noise covariance")?;
    Ok(linalg::hermitize(&(g[k].adjoint() * c_inv * &g[k])))
}

/// Feasible starting point `Q_k = c_k I` with
/// `c_k = min(Pmax_k / N_k, min_i D_{k,i} / tr R_{k,i})`.
pub fn feasible_start(dims: &SystemDims, constraints: &Constraints) -> TransmitCovariances {
    let q = dims
        .user_antennas
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let mut c = constraints.pmax[k] / n as f64;
            for (r, &d) in constraints.sar[k].r.iter().zip(&constraints.sar[k].d) {
                let t = linalg::trace_re(r);
                if t > 0.0 {
                    c = c.min(d / t);
                }
            }
            linalg::identity(n) * real(c)
        })
        .collect();
    TransmitCovariances { q }
}

fn kkt_products(q: &TransmitCovariances, duals: &DualState, constraints: &Constraints) -> Vec<f64> {
    let mut out = Vec::new();
    for (k, qk) in q.q.iter().enumerate() {
        let mu = if duals.mu[k] <= MU_FLOOR { 0.0 } else { duals.mu[k] };
        out.push(mu * (constraints.pmax[k] - linalg::trace_re(qk)));
    }
    for (k, qk) in q.q.iter().enumerate() {
        for ((r, &d), &l) in constraints.sar[k].r.iter().zip(&constraints.sar[k].d).zip(&duals.lambda[k]) {
            out.push(l * (d - linalg::trace_of_product(r, qk).re));
        }
    }
    out
}

fn check_inputs(dims: &SystemDims, constraints: &Constraints, sigma2: f64) -> Result<()> {
    constraints.validate(dims)?;
    if !(sigma2 > 0.0) {
        return Err(Error::invalid("sigma2", "noise variance must be positive"));
    }
    Ok(())
}

/// Full-CSI covariance design: Gauss-Seidel sweeps over users, each user
/// solved exactly given the others. `init` defaults to `feasible_start`.
#[allow(clippy::too_many_arguments)]
pub fn solve_full_csi(
    dims: &SystemDims,
    ch: &ChannelSet,
    phi: &PhaseShifts,
    v1: &CMat,
    constraints: &Constraints,
    sigma2: f64,
    init: Option<(&TransmitCovariances, &DualState)>,
    cfg: &CovarianceConfig,
) -> Result<WaterFillReport> {
    check_inputs(dims, constraints, sigma2)?;
    let g = effective_channels(phi, v1, ch);
    solve_full_csi_effective(dims, &g, constraints, sigma2, init, cfg)
}

/// [`solve_full_csi`] on precomputed effective channels `G_k`.
pub fn solve_full_csi_effective(
    dims: &SystemDims,
    g: &[CMat],
    constraints: &Constraints,
    sigma2: f64,
    init: Option<(&TransmitCovariances, &DualState)>,
    cfg: &CovarianceConfig,
) -> Result<WaterFillReport> {
    check_inputs(dims, constraints, sigma2)?;
    let (mut q, mut duals) = match init {
        Some((q, d)) => (q.clone(), d.clone()),
        None => (feasible_start(dims, constraints), DualState::zeros(constraints)),
    };
    let mut warm = init.is_some();
    let mut objective_trace = vec![ln_se_from_effective(g, &q, sigma2)?];
    let mut dual_trace = Vec::new();
    let mut inner = 0;
    let mut converged = false;
    let mut sweeps = 0;
    let mut user_converged = true;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let start = *objective_trace.last().unwrap();
        for k in 0..dims.users() {
            let wf = WaterFilling::new(full_csi_gram(k, g, &q, sigma2)?);
            let warm_duals = warm.then(|| (duals.mu[k], duals.lambda[k].as_slice()));
            let sol = solve_user(&wf, constraints.pmax[k], &constraints.sar[k], warm_duals, cfg)?;
            inner += sol.evaluations;
            user_converged &= sol.converged;
            dual_trace.extend_from_slice(&sol.dual_trace);
            q.q[k] = sol.q;
            duals.mu[k] = sol.mu;
            duals.lambda[k] = sol.lambda;
            objective_trace.push(ln_se_from_effective(g, &q, sigma2)?);
        }
        warm = true;
        let end = *objective_trace.last().unwrap();
        if (end - start).abs() <= cfg.sweep_tol || dims.users() == 1 {
            converged = true;
            break;
        }
    }
    Ok(WaterFillReport {
        kkt_residuals: kkt_products(&q, &duals, constraints),
        q,
        duals,
        iterations: IterationCounts { outer: sweeps, inner },
        objective_trace,
        dual_trace,
        converged: converged && user_converged,
    })
}

const MAX_BACKTRACKS: usize = 40;

fn blend(a: &TransmitCovariances, b: &TransmitCovariances, t: f64) -> TransmitCovariances {
    TransmitCovariances {
        q: a.q.iter().zip(&b.q).map(|(x, y)| x * real(1.0 - t) + y * real(t)).collect(),
    }
}

/// Partial-CSI covariance design: alternates the deterministic-equivalent
/// refresh (Γ_k) with per-user water-filling on `Γ_k / σ²` until the
/// deterministic-equivalent SE changes by at most `tol` (nats).
#[allow(clippy::too_many_arguments)]
pub fn solve_partial_csi(
    dims: &SystemDims,
    stats: &ChannelStatistics,
    h1: &CMat,
    phi: &PhaseShifts,
    v1: &CMat,
    constraints: &Constraints,
    sigma2: f64,
    init: Option<(&TransmitCovariances, &DualState, &DeState)>,
    tol: f64,
    de_cfg: &DeConfig,
    cfg: &CovarianceConfig,
) -> Result<(WaterFillReport, DeState)> {
    check_inputs(dims, constraints, sigma2)?;
    let (mut q, mut duals, mut de_state) = match init {
        Some((q, d, s)) => (q.clone(), d.clone(), Some(s.clone())),
        None => (feasible_start(dims, constraints), DualState::zeros(constraints), None),
    };
    let mut warm = init.is_some();
    let ug = de::effective_u(phi, v1, h1, stats);
    let mut state = de::de_fixed_point(&ug, stats, &q, sigma2, de_state.as_ref(), de_cfg)?;
    let mut objective_trace = vec![state.ln_se];
    let mut dual_trace = Vec::new();
    let mut inner = 0;
    let mut outer = 0;
    let mut converged = false;
    let mut user_converged = true;
    while outer < cfg.max_sweeps {
        outer += 1;
        let gammas = state.gamma_mat.clone();
        let mut target = q.clone();
        for k in 0..dims.users() {
            let wf = WaterFilling::new(&gammas[k] * real(1.0 / sigma2));
            let warm_duals = warm.then(|| (duals.mu[k], duals.lambda[k].as_slice()));
            let sol = solve_user(&wf, constraints.pmax[k], &constraints.sar[k], warm_duals, cfg)?;
            inner += sol.evaluations;
            user_converged &= sol.converged;
            dual_trace.extend_from_slice(&sol.dual_trace);
            target.q[k] = sol.q;
            duals.mu[k] = sol.mu;
            duals.lambda[k] = sol.lambda;
        }
        warm = true;
        // The water-filling point maximizes a concave surrogate whose gradient
        // matches the DE objective at `q`, so `target - q` is an ascent
        // direction; backtrack along it until the DE objective does not drop.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let trial = if step == 1.0 { target.clone() } else { blend(&q, &target, step) };
            let next = de::de_fixed_point(&ug, stats, &trial, sigma2, Some(&state), de_cfg)
                .map_err(|e| e.in_stage("deterministic equivalent refresh"))?;
            if next.ln_se >= state.ln_se {
                accepted = Some((trial, next));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, next)) = accepted else {
            converged = true;
            break;
        };
        let change = next.ln_se - state.ln_se;
        objective_trace.push(next.ln_se);
        q = trial;
        state = next;
        if change <= tol {
            converged = true;
            break;
        }
    }
    de_state = Some(state);
    Ok((
        WaterFillReport {
            kkt_residuals: kkt_products(&q, &duals, constraints),
            q,
            duals,
            iterations: IterationCounts { outer, inner },
            objective_trace,
            dual_trace,
            converged: converged && user_converged,
        },
        de_state.expect("state set above"),
    ))
}
