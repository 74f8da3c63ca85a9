//! Experiment orchestration and CSV output.

mod config;

pub use config::{load_config, parse_config, ExperimentKind, ExperimentSpec, SarMatrixKind};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::ao::{self, AoConfig, AoStart, AoTrace, Csi, CsiMode, Receiver};
use crate::de::{self, DeConfig};
use crate::dma::{self, DmaConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    dbm_to_watts, generate_channels, generate_h1, monte_carlo_ergodic_se, ChannelSet, ChannelStatistics, Constraints,
    FeasibleSet, H1Spec, SystemDims, TransmitCovariances,
};

/// Version of the results CSV layout; bumped whenever columns change.
pub const CSV_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: &str = "experiment,seed,pmax_dbm,sar_budget,csi_mode,dma_set,variant,iteration,se_bits,iterations,error";

pub const TIMING_HEADER: &str = "experiment,seed,pmax_dbm,sar_budget,csi_mode,variant,wall_seconds";

pub const DE_REPORT_HEADER: &str =
    "seed,users,user_antennas,ris_elements,microstrips,elements_per_strip,coupling,pmax_dbm,de_bits,mc_bits,mc_stderr_bits,rel_gap,error";

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "RISDMA_OUT_DIR";

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub pmax_dbm: f64,
    pub sar_budget: f64,
    pub csi_mode: CsiMode,
    /// Feasible-set tag, or `conventional` for the fully digital receiver.
    pub dma_set: String,
    pub variant: String,
    /// Outer-iteration index for trace rows (convergence experiment).
    pub iteration: Option<usize>,
    pub se_bits: Option<f64>,
    pub iterations: usize,
    pub wall_seconds: f64,
    pub error: Option<String>,
}

impl ResultRow {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }
}

/// Channels and constraints at one (seed, Pmax, D) point of a spec.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub dims: SystemDims,
    pub seed: u64,
    pub pmax_dbm: f64,
    pub sar_budget: f64,
    pub sigma2: f64,
    pub stats: ChannelStatistics,
    pub h1: linalg::CMat,
    /// Realization used under full CSI.
    pub ch: ChannelSet,
    pub constraints: Constraints,
}

impl Scenario {
    pub fn new(spec: &ExperimentSpec, seed: u64, pmax_dbm: f64, sar_budget: f64) -> Result<Self> {
        spec.validate()?;
        let dims = spec.dims()?;
        let stats = ChannelStatistics::exponential(&dims, spec.omega_decay, spec.h2_gain())?;
        let h1 = generate_h1(&dims, &H1Spec { seed, hop_loss_db: spec.h1_loss_db });
        let ch = generate_channels(&stats, &dims, &h1, seed, 0)?;
        let pmax = dbm_to_watts(pmax_dbm);
        let constraints = match spec.sar_matrix() {
            Some(r) => Constraints::uniform(&dims, pmax, &r, sar_budget),
            None => Constraints::power_only(vec![pmax; dims.users()]),
        };
        constraints.validate(&dims)?;
        Ok(Scenario { dims, seed, pmax_dbm, sar_budget, sigma2: spec.sigma2(), stats, h1, ch, constraints })
    }

    pub fn csi(&self, mode: CsiMode) -> Csi<'_> {
        match mode {
            CsiMode::Full => Csi::Full(&self.ch),
            CsiMode::Partial => Csi::Partial { stats: &self.stats, h1: &self.h1 },
        }
    }
}

struct Point<'a> {
    spec: &'a ExperimentSpec,
    sc: Scenario,
}

impl std::ops::Deref for Point<'_> {
    type Target = Scenario;

    fn deref(&self) -> &Scenario {
        &self.sc
    }
}

impl<'a> Point<'a> {
    fn new(spec: &'a ExperimentSpec, seed: u64, pmax_dbm: f64, sar_budget: f64) -> Result<Self> {
        Ok(Point { spec, sc: Scenario::new(spec, seed, pmax_dbm, sar_budget)? })
    }

    fn row(&self, mode: CsiMode, dma_set: &str, variant: &str) -> ResultRow {
        ResultRow {
            experiment: self.spec.experiment,
            seed: self.seed,
            pmax_dbm: self.pmax_dbm,
            sar_budget: self.sar_budget,
            csi_mode: mode,
            dma_set: dma_set.to_string(),
            variant: variant.to_string(),
            iteration: None,
            se_bits: None,
            iterations: 0,
            wall_seconds: 0.0,
            error: None,
        }
    }
}

fn receiver_tag(cfg: &AoConfig) -> &'static str {
    match cfg.receiver {
        Receiver::Dma(set) => set.tag(),
        Receiver::Conventional => "conventional",
    }
}

/// Runs `f`, turning its outcome into a row; the trace is handed back for
/// warm starts of later variants.
fn timed<T>(
    p: &Point<'_>,
    mode: CsiMode,
    cfg: &AoConfig,
    variant: &str,
    rows: &mut Vec<ResultRow>,
    f: impl FnOnce() -> Result<(f64, usize, T)>,
) -> Option<T> {
    let t0 = Instant::now();
    let out = f();
    let mut row = p.row(mode, receiver_tag(cfg), variant);
    row.wall_seconds = t0.elapsed().as_secs_f64();
    let kept = match out {
        Ok((se, iterations, extra)) => {
            row.se_bits = Some(se);
            row.iterations = iterations;
            Some(extra)
        }
        Err(e) => {
            row.error = Some(e.to_string());
            None
        }
    };
    rows.push(row);
    kept
}

fn trace_out(t: AoTrace) -> Result<(f64, usize, AoTrace)> {
    Ok((t.final_se(), t.outer_iterations(), t))
}

fn run_point(p: &Point<'_>) -> Vec<ResultRow> {
    let spec = p.spec;
    let base = spec.ao_config(p.seed);
    let sigma2 = p.sigma2;
    let mode = spec.csi_mode;
    let mut rows = Vec::new();
    let dims = &p.dims;
    let cons = &p.constraints;

    match spec.experiment {
        ExperimentKind::Convergence => {
            for mode in [CsiMode::Full, CsiMode::Partial] {
                let cfg = AoConfig { csi_mode: mode, ..base };
                let t0 = Instant::now();
                match ao::ao(dims, p.csi(mode), cons, sigma2, &cfg, &AoStart::default()) {
                    Ok(t) => {
                        let wall = t0.elapsed().as_secs_f64();
                        for (i, se) in t.se_trace.iter().enumerate() {
                            let mut row = p.row(mode, receiver_tag(&cfg), "proposed");
                            row.iteration = Some(i);
                            row.se_bits = Some(*se);
                            row.iterations = t.outer_iterations();
                            row.wall_seconds = if i == t.outer_iterations() { wall } else { 0.0 };
                            if i == t.outer_iterations() && !t.converged {
                                row.error = Some(format!("not converged within {} outer iterations", cfg.max_outer));
                            }
                            rows.push(row);
                        }
                    }
                    Err(e) => {
                        let mut row = p.row(mode, receiver_tag(&cfg), "proposed");
                        row.error = Some(e.to_string());
                        row.wall_seconds = t0.elapsed().as_secs_f64();
                        rows.push(row);
                    }
                }
            }
        }
        ExperimentKind::SeVsPower => {
            timed(p, mode, &base, "proposed", &mut rows, || {
                trace_out(ao::ao(dims, p.csi(mode), cons, sigma2, &base, &AoStart::default())?)
            });
            timed(p, mode, &base, "no_sar", &mut rows, || {
                trace_out(ao::ao(dims, p.csi(mode), &cons.without_sar(), sigma2, &base, &AoStart::default())?)
            });
        }
        ExperimentKind::RisAblation => {
            let fixed = timed(p, mode, &base, "identity_phi", &mut rows, || {
                trace_out(ao::no_ris_reference(dims, p.csi(mode), cons, sigma2, &base)?)
            });
            // Started from the Φ = I solution, so it can only improve on it.
            let start = fixed.as_ref().map(ao::warm_start).unwrap_or_default();
            timed(p, mode, &base, "optimized_phi", &mut rows, || {
                trace_out(ao::ao(dims, p.csi(mode), cons, sigma2, &base, &start)?)
            });
        }
        ExperimentKind::DmaSets => {
            let mut uc = None;
            for set in [
                FeasibleSet::Unconstrained,
                FeasibleSet::LorentzianPhase,
                FeasibleSet::AMPLITUDE_DEFAULT,
                FeasibleSet::BINARY_DEFAULT,
            ] {
                let set = match (set, spec.dma_set) {
                    (FeasibleSet::AmplitudeOnly { .. }, s @ FeasibleSet::AmplitudeOnly { .. }) => s,
                    (FeasibleSet::BinaryAmplitude { .. }, s @ FeasibleSet::BinaryAmplitude { .. }) => s,
                    (s, _) => s,
                };
                let cfg = AoConfig { receiver: Receiver::Dma(set), ..base };
                let t = timed(p, mode, &cfg, set.tag(), &mut rows, || {
                    trace_out(ao::ao(dims, p.csi(mode), cons, sigma2, &cfg, &AoStart::default())?)
                });
                if set == FeasibleSet::Unconstrained {
                    uc = t;
                }
            }
            let cfg = AoConfig { receiver: Receiver::Conventional, ..base };
            timed(p, mode, &cfg, "conventional", &mut rows, || {
                trace_out(ao::conventional_reference(dims, p.csi(mode), cons, sigma2, &base, uc.as_ref())?)
            });
        }
        ExperimentKind::Baselines => {
            timed(p, mode, &base, "proposed", &mut rows, || {
                trace_out(ao::ao(dims, p.csi(mode), cons, sigma2, &base, &AoStart::default())?)
            });
            timed(p, mode, &base, "adaptive_backoff", &mut rows, || {
                let b = ao::baseline_adaptive(dims, p.csi(mode), cons, sigma2, &base)?;
                Ok((b.se, b.trace.outer_iterations(), ()))
            });
            timed(p, mode, &base, "worst_case_backoff", &mut rows, || {
                let b = ao::baseline_worst_case(dims, p.csi(mode), cons, sigma2, &base)?;
                Ok((b.se, b.trace.outer_iterations(), ()))
            });
        }
        ExperimentKind::DeAccuracy => {
            let cfg = AoConfig { csi_mode: CsiMode::Partial, ..base };
            let fixed = fixed_design(dims, &p.h1, cons, &cfg);
            let de_cfg = cfg.de();
            timed(p, CsiMode::Partial, &cfg, "de", &mut rows, || {
                let (q, phi, v1) = fixed.as_ref().map_err(|e| Error::invalid("design", e.to_string()))?;
                let ug = de::effective_u(phi, v1, &p.h1, &p.stats);
                let st = de::de_fixed_point(&ug, &p.stats, q, sigma2, None, &de_cfg)?;
                Ok((st.se_bits(), st.iterations, ()))
            });
            timed(p, CsiMode::Partial, &cfg, "mc", &mut rows, || {
                let (q, phi, v1) = fixed.as_ref().map_err(|e| Error::invalid("design", e.to_string()))?;
                let mc = monte_carlo_ergodic_se(&p.stats, &p.h1, q, phi, v1, sigma2, spec.mc_samples, p.seed)?;
                Ok((mc.mean, mc.samples, ()))
            });
        }
    }
    rows
}

/// Design used by the accuracy checks: the feasible uniform start, the
/// seeded initial phases and the UC fit to `H1 H1ᴴ`.
fn fixed_design(
    dims: &SystemDims,
    h1: &linalg::CMat,
    constraints: &Constraints,
    cfg: &AoConfig,
) -> Result<(TransmitCovariances, crate::model::PhaseShifts, linalg::CMat)> {
    let q = crate::covariance::feasible_start(dims, constraints);
    let phi = cfg.initial_phases(dims.ris_elements);
    let smat = dma::receive_side_matrix(h1, &phi, &linalg::identity(dims.ris_elements));
    let fit = dma::optimize_dma(&smat, &FeasibleSet::Unconstrained, dims, &DmaConfig::default())?;
    Ok((q, phi, fit.weights.v1_tilde))
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))
}

/// Runs every (seed, D, Pmax) point of `spec` on `jobs` workers (0 picks
/// the number of CPUs). Rows come back in a fixed order regardless of
/// completion order; failed runs are recorded in their rows.
pub fn run_experiment(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut points = Vec::new();
    for &seed in &spec.seeds {
        for &d in &spec.sar_budgets {
            for &p in &spec.pmax_dbm {
                points.push((seed, p, d));
            }
        }
    }
    let rows: Vec<Vec<ResultRow>> = pool(jobs)?.install(|| {
        points
            .par_iter()
            .map(|&(seed, p, d)| match Point::new(spec, seed, p, d) {
                Ok(point) => run_point(&point),
                Err(e) => vec![ResultRow {
                    experiment: spec.experiment,
                    seed,
                    pmax_dbm: p,
                    sar_budget: d,
                    csi_mode: spec.csi_mode,
                    dma_set: spec.dma_set.tag().to_string(),
                    variant: "setup".into(),
                    iteration: None,
                    se_bits: None,
                    iterations: 0,
                    wall_seconds: 0.0,
                    error: Some(e.to_string()),
                }],
            })
            .collect()
    });
    Ok(rows.into_iter().flatten().collect())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Results CSV: a schema comment line, the header, then one line per row.
/// Wall times are excluded so identical runs give identical bytes.
pub fn results_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("# risdma results v{CSV_SCHEMA_VERSION}\n{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment.id(),
            r.seed,
            r.pmax_dbm,
            r.sar_budget,
            r.csi_mode.tag(),
            csv_field(&r.dma_set),
            csv_field(&r.variant),
            opt(r.iteration),
            opt(r.se_bits),
            r.iterations,
            csv_field(r.error.as_deref().unwrap_or("")),
        );
    }
    s
}

pub fn timing_csv(rows: &[ResultRow]) -> String {
    let mut s = format!("{TIMING_HEADER}\n");
    for r in rows.iter().filter(|r| r.iteration.is_none() || r.wall_seconds > 0.0) {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.experiment.id(),
            r.seed,
            r.pmax_dbm,
            r.sar_budget,
            r.csi_mode.tag(),
            csv_field(&r.variant),
            r.wall_seconds
        );
    }
    s
}

/// Sidecar path for wall times: `<out>.timing.csv`.
pub fn timing_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".timing.csv");
    out.with_file_name(name)
}

/// Writes the results CSV to `out` and the wall times next to it.
pub fn write_results(rows: &[ResultRow], out: &Path) -> Result<()> {
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(out, results_csv(rows))?;
    std::fs::write(timing_path(out), timing_csv(rows))?;
    Ok(())
}

/// Output file: explicit path, else the spec's `out`, else
/// `$RISDMA_OUT_DIR/<name>`, else `./<name>`.
pub fn resolve_output(explicit: Option<&Path>, spec: &ExperimentSpec, name: &str) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| spec.out.clone())
        .unwrap_or_else(|| match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(name),
            _ => PathBuf::from(name),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeAccuracyRow {
    pub seed: u64,
    pub dims: SystemDims,
    /// Control row with every coupling matrix set to zero.
    pub zero_coupling: bool,
    pub pmax_dbm: f64,
    pub de_bits: f64,
    pub mc_bits: f64,
    pub mc_stderr_bits: f64,
    /// `|DE − MC| / MC` (0 when both vanish).
    pub rel_gap: f64,
    pub error: Option<String>,
}

fn relative_gap(de: f64, mc: f64) -> f64 {
    if mc == 0.0 {
        if de == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (de - mc).abs() / mc
    }
}

/// Deterministic equivalent against Monte Carlo at half, unit and double
/// (N_R, N_k) relative to the spec, at `de_pmax_dbm` without SAR, plus a
/// zero-coupling control row at unit scale.
pub fn de_accuracy_report(spec: &ExperimentSpec, jobs: usize) -> Result<Vec<DeAccuracyRow>> {
    spec.validate()?;
    let half = |n: usize| (n / 2).max(1);
    let scales = [
        (half(spec.ris_elements), half(spec.user_antennas), false),
        (spec.ris_elements, spec.user_antennas, false),
        (2 * spec.ris_elements, 2 * spec.user_antennas, false),
        (spec.ris_elements, spec.user_antennas, true),
    ];
    let mut jobs_list = Vec::new();
    for &seed in &spec.seeds {
        for &(nr, nk, zero) in &scales {
            jobs_list.push((seed, nr, nk, zero));
        }
    }
    let sigma2 = spec.sigma2();
    let rows = pool(jobs)?.install(|| {
        jobs_list
            .par_iter()
            .map(|&(seed, nr, nk, zero)| {
                let dims = SystemDims {
                    user_antennas: vec![nk; spec.users],
                    ris_elements: nr,
                    microstrips: spec.microstrips,
                    elements_per_strip: spec.elements_per_strip,
                };
                let mut row = DeAccuracyRow {
                    seed,
                    dims: dims.clone(),
                    zero_coupling: zero,
                    pmax_dbm: spec.de_pmax_dbm,
                    de_bits: f64::NAN,
                    mc_bits: f64::NAN,
                    mc_stderr_bits: f64::NAN,
                    rel_gap: f64::NAN,
                    error: None,
                };
                let res = (|| -> Result<(f64, f64, f64)> {
                    let mut stats = ChannelStatistics::exponential(&dims, spec.omega_decay, spec.h2_gain())?;
                    if zero {
                        stats = stats.zeroed();
                    }
                    let h1 = generate_h1(&dims, &H1Spec { seed, hop_loss_db: spec.h1_loss_db });
                    let cons = Constraints::power_only(vec![dbm_to_watts(spec.de_pmax_dbm); dims.users()]);
                    let (q, phi, v1) = fixed_design(&dims, &h1, &cons, &spec.ao_config(seed))?;
                    let ug = de::effective_u(&phi, &v1, &h1, &stats);
                    let st = de::de_fixed_point(&ug, &stats, &q, sigma2, None, &DeConfig { tol: spec.eps[3], ..DeConfig::default() })?;
                    let mc = monte_carlo_ergodic_se(&stats, &h1, &q, &phi, &v1, sigma2, spec.mc_samples, seed)?;
                    Ok((st.se_bits(), mc.mean, mc.std_error))
                })();
                match res {
                    Ok((d, m, e)) => {
                        row.de_bits = d;
                        row.mc_bits = m;
                        row.mc_stderr_bits = e;
                        row.rel_gap = relative_gap(d, m);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
                row
            })
            .collect()
    });
    Ok(rows)
}

pub fn de_report_csv(rows: &[DeAccuracyRow]) -> String {
    let mut s = format!("# risdma de-check v{CSV_SCHEMA_VERSION}\n{DE_REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.seed,
            r.dims.users(),
            r.dims.user_antennas[0],
            r.dims.ris_elements,
            r.dims.microstrips,
            r.dims.elements_per_strip,
            if r.zero_coupling { "zero" } else { "exponential" },
            r.pmax_dbm,
            r.de_bits,
            r.mc_bits,
            r.mc_stderr_bits,
            r.rel_gap,
            csv_field(r.error.as_deref().unwrap_or(""))
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ResultRow {
        ResultRow {
            experiment: ExperimentKind::Baselines,
            seed: 3,
            pmax_dbm: 12.5,
            sar_budget: 0.8,
            csi_mode: CsiMode::Full,
            dma_set: "UC".into(),
            variant: "proposed".into(),
            iteration: None,
            se_bits: Some(1.0 / 3.0),
            iterations: 7,
            wall_seconds: 0.25,
            error: None,
        }
    }

    #[test]
    fn csv_keeps_full_precision_and_escapes() {
        let mut r = row();
        let s = results_csv(&[r.clone()]);
        let line = s.lines().nth(2).unwrap();
        assert_eq!(line, "baselines,3,12.5,0.8,full,UC,proposed,,0.3333333333333333,7,");
        r.error = Some("bad \"x\", y".into());
        r.se_bits = None;
        let s = results_csv(&[r]);
        assert!(s.lines().nth(2).unwrap().ends_with(",,7,\"bad \"\"x\"\", y\""));
    }

    #[test]
    fn timing_sidecar_name() {
        assert_eq!(timing_path(Path::new("out/a.csv")), PathBuf::from("out/a.timing.csv"));
    }

    #[test]
    fn relative_gap_cases() {
        assert_eq!(relative_gap(0.0, 0.0), 0.0);
        assert_eq!(relative_gap(1.1, 1.0), 0.10000000000000009);
    }
}
