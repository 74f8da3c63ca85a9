//! C ABI over `risdma-core`.
//!
//! Objects are opaque handles created by `*_new` functions and released by
//! the matching `*_free`. Every fallible call returns a [`RisdmaStatus`];
//! on failure a message is available from [`risdma_last_error_message`] on
//! the same thread until the next failing call. No function unwinds across
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use risdma_core::ao::{self, AoConfig, AoStart, AoTrace, CsiMode, Receiver};
use risdma_core::bench::{self, ExperimentSpec, Scenario};
use risdma_core::model::FeasibleSet;
use risdma_core::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisdmaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument or configuration value is out of range.
    InvalidArgument = 2,
    /// Dimensions of inputs disagree.
    DimensionMismatch = 3,
    /// A numerical routine failed (singular matrix, no convergence, ...).
    Numerical = 4,
    /// Configuration text could not be parsed.
    Config = 5,
    Io = 6,
    /// A caller-provided buffer is too small; the required length is
    /// reported through the length out-parameter.
    BufferTooSmall = 7,
    /// Internal error; the library caught a panic.
    Internal = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisdmaCsiMode {
    Full = 0,
    Partial = 1,
}

/// DMA weight set, or the fully digital receiver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RisdmaReceiver {
    Unconstrained = 0,
    AmplitudeOnly = 1,
    BinaryAmplitude = 2,
    LorentzianPhase = 3,
    Conventional = 4,
}

impl RisdmaReceiver {
    fn from_code(c: u32) -> Option<Self> {
        [
            RisdmaReceiver::Unconstrained,
            RisdmaReceiver::AmplitudeOnly,
            RisdmaReceiver::BinaryAmplitude,
            RisdmaReceiver::LorentzianPhase,
            RisdmaReceiver::Conventional,
        ]
        .into_iter()
        .find(|r| *r as u32 == c)
    }
}

/// Channels and constraints at one operating point.
pub struct RisdmaScenario {
    spec: ExperimentSpec,
    scenario: Scenario,
}

/// Outcome of an optimization run.
pub struct RisdmaResult {
    trace: AoTrace,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RisdmaStatus {
    match e {
        Error::DimensionMismatch { .. } => RisdmaStatus::DimensionMismatch,
        Error::InvalidParameter { .. } => RisdmaStatus::InvalidArgument,
        Error::Config { .. } => RisdmaStatus::Config,
        Error::Io(_) => RisdmaStatus::Io,
        Error::Stage { source, .. } => status_of(source),
        _ => RisdmaStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (RisdmaStatus, String)>) -> RisdmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RisdmaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RisdmaStatus::Internal
        }
    }
}

fn core_err(e: Error) -> (RisdmaStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RisdmaStatus, String) {
    (RisdmaStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (RisdmaStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RisdmaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn risdma_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or null if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn risdma_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Builds a scenario from configuration text (empty text gives the
/// defaults) at one seed, power budget (dBm) and SAR budget (W/kg).
///
/// # Safety
/// `config` must be null or a NUL-terminated string; `out` must be a valid
/// pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn risdma_scenario_new(
    config: *const c_char,
    seed: u64,
    pmax_dbm: f64,
    sar_budget: f64,
    out: *mut *mut RisdmaScenario,
) -> RisdmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let text = if config.is_null() { "" } else { str_arg(config, "config")? };
        let spec = bench::parse_config(text).map_err(core_err)?;
        let scenario = Scenario::new(&spec, seed, pmax_dbm, sar_budget).map_err(core_err)?;
        *out = Box::into_raw(Box::new(RisdmaScenario { spec, scenario }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must be null or a handle from [`risdma_scenario_new`] not yet
/// freed.
#[no_mangle]
pub unsafe extern "C" fn risdma_scenario_free(scenario: *mut RisdmaScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the alternating optimization on `scenario`. `csi` takes a
/// `RisdmaCsiMode` value and `receiver` a `RisdmaReceiver` value; with
/// `optimize_phase` false the RIS phases stay at 1.
///
/// # Safety
/// `scenario` must be a live handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn risdma_optimize(
    scenario: *const RisdmaScenario,
    csi: u32,
    receiver: u32,
    optimize_phase: bool,
    out: *mut *mut RisdmaResult,
) -> RisdmaStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let mode = match csi {
            c if c == RisdmaCsiMode::Full as u32 => CsiMode::Full,
            c if c == RisdmaCsiMode::Partial as u32 => CsiMode::Partial,
            c => return Err((RisdmaStatus::InvalidArgument, format!("unknown CSI mode {c}"))),
        };
        let receiver = RisdmaReceiver::from_code(receiver)
            .ok_or_else(|| (RisdmaStatus::InvalidArgument, format!("unknown receiver {receiver}")))?;
        let rx = match receiver {
            RisdmaReceiver::Unconstrained => Receiver::Dma(FeasibleSet::Unconstrained),
            RisdmaReceiver::AmplitudeOnly => Receiver::Dma(match s.spec.dma_set {
                set @ FeasibleSet::AmplitudeOnly { .. } => set,
                _ => FeasibleSet::AMPLITUDE_DEFAULT,
            }),
            RisdmaReceiver::BinaryAmplitude => Receiver::Dma(match s.spec.dma_set {
                set @ FeasibleSet::BinaryAmplitude { .. } => set,
                _ => FeasibleSet::BINARY_DEFAULT,
            }),
            RisdmaReceiver::LorentzianPhase => Receiver::Dma(FeasibleSet::LorentzianPhase),
            RisdmaReceiver::Conventional => Receiver::Conventional,
        };
        let base = s.spec.ao_config(s.scenario.seed);
        let cfg = AoConfig { csi_mode: mode, receiver: rx, ..base };
        let sc = &s.scenario;
        let trace = if optimize_phase {
            ao::ao(&sc.dims, sc.csi(mode), &sc.constraints, sc.sigma2, &cfg, &AoStart::default())
        } else {
            ao::no_ris_reference(&sc.dims, sc.csi(mode), &sc.constraints, sc.sigma2, &cfg)
        }
        .map_err(core_err)?;
        *out = Box::into_raw(Box::new(RisdmaResult { trace }));
        Ok(())
    })
}

/// # Safety
/// `result` must be null or a handle from [`risdma_optimize`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn risdma_result_free(result: *mut RisdmaResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Final objective in bit/s/Hz (SE under full CSI, its deterministic
/// equivalent under partial CSI).
///
/// # Safety
/// `result` must be a live handle; `se_bits` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn risdma_result_se(result: *const RisdmaResult, se_bits: *mut f64) -> RisdmaStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let out = se_bits.as_mut().ok_or_else(|| null("se_bits"))?;
        *out = r.trace.final_se();
        Ok(())
    })
}

/// Number of outer iterations and whether the run met its tolerance.
///
/// # Safety
/// `result` must be a live handle; the out-pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn risdma_result_status(
    result: *const RisdmaResult,
    iterations: *mut usize,
    converged: *mut bool,
) -> RisdmaStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        *iterations.as_mut().ok_or_else(|| null("iterations"))? = r.trace.outer_iterations();
        *converged.as_mut().ok_or_else(|| null("converged"))? = r.trace.converged;
        Ok(())
    })
}

/// Copies the objective trace (bit/s/Hz, initial value first) into `buf`.
/// `len` holds the capacity on entry and the trace length on exit; a null
/// `buf` only queries the length.
///
/// # Safety
/// `result` must be a live handle; `len` must be valid; `buf` must be null
/// or valid for `*len` writes.
#[no_mangle]
pub unsafe extern "C" fn risdma_result_trace(result: *const RisdmaResult, buf: *mut f64, len: *mut usize) -> RisdmaStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let trace = &r.trace.se_trace;
        let cap = *len;
        *len = trace.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < trace.len() {
            return Err((RisdmaStatus::BufferTooSmall, format!("trace needs {} entries, buffer holds {cap}", trace.len())));
        }
        std::slice::from_raw_parts_mut(buf, trace.len()).copy_from_slice(trace);
        Ok(())
    })
}

/// Per-user transmit powers `tr(Q_k)` in watts; same buffer protocol as
/// [`risdma_result_trace`].
///
/// # Safety
/// As for [`risdma_result_trace`].
#[no_mangle]
pub unsafe extern "C" fn risdma_result_powers(result: *const RisdmaResult, buf: *mut f64, len: *mut usize) -> RisdmaStatus {
    guard(|| {
        let r = result.as_ref().ok_or_else(|| null("result"))?;
        let len = len.as_mut().ok_or_else(|| null("len"))?;
        let powers = r.trace.q.powers();
        let cap = *len;
        *len = powers.len();
        if buf.is_null() {
            return Ok(());
        }
        if cap < powers.len() {
            return Err((RisdmaStatus::BufferTooSmall, format!("need {} entries, buffer holds {cap}", powers.len())));
        }
        std::slice::from_raw_parts_mut(buf, powers.len()).copy_from_slice(&powers);
        Ok(())
    })
}

/// Runs the experiment in the configuration file `config_path` and writes
/// its CSV to `out_path` (null: the configured or default location).
/// `jobs` = 0 uses one worker per CPU. Returns `Numerical` if any run
/// failed; the CSV is written either way.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `out_path` null or one.
#[no_mangle]
pub unsafe extern "C" fn risdma_run_experiment(config_path: *const c_char, out_path: *const c_char, jobs: usize) -> RisdmaStatus {
    guard(|| {
        let cfg = str_arg(config_path, "config_path")?;
        let out = if out_path.is_null() { None } else { Some(Path::new(str_arg(out_path, "out_path")?)) };
        let spec = bench::load_config(Path::new(cfg)).map_err(core_err)?;
        let out = bench::resolve_output(out, &spec, &format!("{}.csv", spec.experiment.id()));
        let rows = bench::run_experiment(&spec, jobs).map_err(core_err)?;
        bench::write_results(&rows, &out).map_err(core_err)?;
        let failed = rows.iter().filter(|r| r.is_error()).count();
        if failed > 0 {
            return Err((RisdmaStatus::Numerical, format!("{failed} of {} runs failed", rows.len())));
        }
        Ok(())
    })
}
