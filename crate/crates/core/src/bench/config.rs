//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional; missing keys take the defaults listed in
//! [`ExperimentSpec::default`]. Lists are comma separated. `pmax_dbm` also
//! accepts `start:step:stop` and `seeds` accepts `start..end` (end
//! exclusive).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::ao::{AoConfig, CsiMode, PhaseInit};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat};
use crate::model::{dbm_to_watts, db_to_linear, reference_sar_matrix, FeasibleSet, SystemDims};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    Convergence,
    SeVsPower,
    RisAblation,
    DmaSets,
    Baselines,
    DeAccuracy,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Convergence,
        ExperimentKind::SeVsPower,
        ExperimentKind::RisAblation,
        ExperimentKind::DmaSets,
        ExperimentKind::Baselines,
        ExperimentKind::DeAccuracy,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            ExperimentKind::Convergence => "convergence",
            ExperimentKind::SeVsPower => "se_vs_power",
            ExperimentKind::RisAblation => "ris_ablation",
            ExperimentKind::DmaSets => "dma_sets",
            ExperimentKind::Baselines => "baselines",
            ExperimentKind::DeAccuracy => "de_accuracy",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.id() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

/// SAR matrix shared by all users.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SarMatrixKind {
    /// The 4 × 4 matrix with trace 32 used throughout the evaluation.
    Reference,
    Identity,
    None,
}

impl SarMatrixKind {
    fn id(&self) -> &'static str {
        match self {
            SarMatrixKind::Reference => "reference",
            SarMatrixKind::Identity => "identity",
            SarMatrixKind::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub experiment: ExperimentKind,
    pub users: usize,
    pub user_antennas: usize,
    pub ris_elements: usize,
    pub microstrips: usize,
    pub elements_per_strip: usize,
    pub noise_dbm: f64,
    /// Total path loss over both hops.
    pub pathloss_db: f64,
    /// Share of the path loss applied to the RIS-to-BS hop.
    pub h1_loss_db: f64,
    /// Decay of the exponential coupling profile.
    pub omega_decay: f64,
    pub sar_matrix: SarMatrixKind,
    pub sar_budgets: Vec<f64>,
    pub pmax_dbm: Vec<f64>,
    pub seeds: Vec<u64>,
    pub csi_mode: CsiMode,
    pub dma_set: FeasibleSet,
    pub phase_init: PhaseInit,
    /// ε₁ … ε₆.
    pub eps: [f64; 6],
    pub max_outer: usize,
    pub mc_samples: usize,
    /// Power budget of the deterministic-equivalent accuracy check.
    pub de_pmax_dbm: f64,
    pub out: Option<PathBuf>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        let ao = AoConfig::default();
        ExperimentSpec {
            experiment: ExperimentKind::SeVsPower,
            users: 4,
            user_antennas: 4,
            ris_elements: 16,
            microstrips: 8,
            elements_per_strip: 8,
            noise_dbm: -96.0,
            pathloss_db: 120.0,
            h1_loss_db: 60.0,
            omega_decay: 0.8,
            sar_matrix: SarMatrixKind::Reference,
            sar_budgets: vec![0.8],
            pmax_dbm: (0..=10).map(|i| -10.0 + 5.0 * i as f64).collect(),
            seeds: (0..10).collect(),
            csi_mode: CsiMode::Partial,
            dma_set: FeasibleSet::Unconstrained,
            phase_init: PhaseInit::Random,
            eps: [ao.mm_tol, ao.bcd_tol, ao.dma_tol, ao.de_tol, ao.inner_tol, ao.outer_tol],
            max_outer: ao.max_outer,
            mc_samples: 10_000,
            de_pmax_dbm: 20.0,
            out: None,
        }
    }
}

const KEYS: &[&str] = &[
    "experiment",
    "users",
    "user_antennas",
    "ris_elements",
    "microstrips",
    "elements_per_strip",
    "noise_dbm",
    "pathloss_db",
    "h1_loss_db",
    "omega_decay",
    "sar_matrix",
    "sar_budgets",
    "pmax_dbm",
    "seeds",
    "csi_mode",
    "dma_set",
    "ao_min",
    "ao_max",
    "ba_level",
    "phase_init",
    "eps1",
    "eps2",
    "eps3",
    "eps4",
    "eps5",
    "eps6",
    "max_outer",
    "mc_samples",
    "de_pmax_dbm",
    "out",
];

fn parse_num<T: FromStr>(v: &str) -> std::result::Result<T, String> {
    v.parse::<T>().map_err(|_| format!("cannot parse `{v}`"))
}

fn parse_list<T: FromStr>(v: &str) -> std::result::Result<Vec<T>, String> {
    v.split(',').map(|x| parse_num(x.trim())).collect()
}

fn parse_pmax(v: &str) -> std::result::Result<Vec<f64>, String> {
    let parts: Vec<&str> = v.split(':').map(str::trim).collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop): (f64, f64, f64) = (parse_num(start)?, parse_num(step)?, parse_num(stop)?);
            if !(step > 0.0) || stop < start {
                return Err("range needs step > 0 and stop ≥ start".into());
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + step * i as f64).collect())
        }
        [_] => parse_list(v),
        _ => Err("expected a list or start:step:stop".into()),
    }
}

fn parse_seeds(v: &str) -> std::result::Result<Vec<u64>, String> {
    match v.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (parse_num(a.trim())?, parse_num(b.trim())?);
            Ok((a..b).collect())
        }
        None => parse_list(v),
    }
}

fn join<T: ToString>(xs: &[T]) -> String {
    xs.iter().map(T::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentSpec {
    pub fn dims(&self) -> Result<SystemDims> {
        SystemDims::new(
            vec![self.user_antennas; self.users],
            self.ris_elements,
            self.microstrips,
            self.elements_per_strip,
        )
    }

    pub fn sigma2(&self) -> f64 {
        dbm_to_watts(self.noise_dbm)
    }

    /// Power gain of the user-to-RIS hop.
    pub fn h2_gain(&self) -> f64 {
        db_to_linear(-(self.pathloss_db - self.h1_loss_db))
    }

    pub fn sar_matrix(&self) -> Option<CMat> {
        match self.sar_matrix {
            SarMatrixKind::Reference => Some(reference_sar_matrix()),
            SarMatrixKind::Identity => Some(linalg::identity(self.user_antennas)),
            SarMatrixKind::None => None,
        }
    }

    pub fn ao_config(&self, seed: u64) -> AoConfig {
        AoConfig {
            mm_tol: self.eps[0],
            bcd_tol: self.eps[1],
            dma_tol: self.eps[2],
            de_tol: self.eps[3],
            inner_tol: self.eps[4],
            outer_tol: self.eps[5],
            max_outer: self.max_outer,
            seed,
            csi_mode: self.csi_mode,
            receiver: crate::ao::Receiver::Dma(self.dma_set),
            phase_init: self.phase_init,
            ..AoConfig::default()
        }
    }

    /// Checks cross-field invariants; the error names the offending key.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = |k: &'static str, v: usize| if v == 0 { Err((k, "must be at least 1".to_string())) } else { Ok(()) };
        positive("users", self.users)?;
        positive("user_antennas", self.user_antennas)?;
        positive("ris_elements", self.ris_elements)?;
        positive("microstrips", self.microstrips)?;
        positive("elements_per_strip", self.elements_per_strip)?;
        positive("max_outer", self.max_outer)?;
        positive("mc_samples", self.mc_samples)?;
        if self.sar_matrix == SarMatrixKind::Reference && self.user_antennas != 4 {
            return Err(("sar_matrix", "the reference SAR matrix needs user_antennas = 4".into()));
        }
        if !(self.omega_decay > 0.0 && self.omega_decay <= 1.0) {
            return Err(("omega_decay", "must lie in (0, 1]".into()));
        }
        for (k, v) in [("noise_dbm", self.noise_dbm), ("pathloss_db", self.pathloss_db), ("h1_loss_db", self.h1_loss_db), ("de_pmax_dbm", self.de_pmax_dbm)] {
            if !v.is_finite() {
                return Err((k, "must be finite".into()));
            }
        }
        if self.h1_loss_db > self.pathloss_db {
            return Err(("h1_loss_db", "cannot exceed pathloss_db".into()));
        }
        if self.sar_budgets.is_empty() || self.sar_budgets.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(("sar_budgets", "need a nonempty list of positive budgets".into()));
        }
        if self.pmax_dbm.is_empty() || self.pmax_dbm.iter().any(|p| !p.is_finite()) {
            return Err(("pmax_dbm", "need a nonempty list of finite values".into()));
        }
        if self.seeds.is_empty() {
            return Err(("seeds", "need at least one seed".into()));
        }
        for (i, e) in self.eps.iter().enumerate() {
            if !(*e > 0.0 && e.is_finite()) {
                return Err((["eps1", "eps2", "eps3", "eps4", "eps5", "eps6"][i], "must be positive".into()));
            }
        }
        match self.dma_set {
            FeasibleSet::AmplitudeOnly { .. } => self.dma_set.validate().map_err(|e| ("ao_min", e.to_string()))?,
            FeasibleSet::BinaryAmplitude { .. } => self.dma_set.validate().map_err(|e| ("ba_level", e.to_string()))?,
            _ => {}
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(k, m)| Error::Config { line: 0, message: format!("{k}: {m}") })
    }

    /// Renders the spec in the format read by [`parse_config`].
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("experiment", self.experiment.id().into());
        kv("users", self.users.to_string());
        kv("user_antennas", self.user_antennas.to_string());
        kv("ris_elements", self.ris_elements.to_string());
        kv("microstrips", self.microstrips.to_string());
        kv("elements_per_strip", self.elements_per_strip.to_string());
        kv("noise_dbm", self.noise_dbm.to_string());
        kv("pathloss_db", self.pathloss_db.to_string());
        kv("h1_loss_db", self.h1_loss_db.to_string());
        kv("omega_decay", self.omega_decay.to_string());
        kv("sar_matrix", self.sar_matrix.id().into());
        kv("sar_budgets", join(&self.sar_budgets));
        kv("pmax_dbm", join(&self.pmax_dbm));
        let contiguous = self.seeds.windows(2).all(|w| w[1] == w[0] + 1);
        kv(
            "seeds",
            if contiguous && !self.seeds.is_empty() {
                format!("{}..{}", self.seeds[0], self.seeds[self.seeds.len() - 1] + 1)
            } else {
                join(&self.seeds)
            },
        );
        kv("csi_mode", self.csi_mode.tag().into());
        kv("dma_set", self.dma_set.tag().to_ascii_lowercase());
        match self.dma_set {
            FeasibleSet::AmplitudeOnly { lo, hi } => {
                kv("ao_min", lo.to_string());
                kv("ao_max", hi.to_string());
            }
            FeasibleSet::BinaryAmplitude { level } => kv("ba_level", level.to_string()),
            _ => {}
        }
        kv(
            "phase_init",
            match self.phase_init {
                PhaseInit::Random => "random",
                PhaseInit::Ones => "ones",
            }
            .into(),
        );
        for (i, e) in self.eps.iter().enumerate() {
            kv(&format!("eps{}", i + 1), e.to_string());
        }
        kv("max_outer", self.max_outer.to_string());
        kv("mc_samples", self.mc_samples.to_string());
        kv("de_pmax_dbm", self.de_pmax_dbm.to_string());
        if let Some(out) = &self.out {
            kv("out", out.display().to_string());
        }
        s
    }
}

/// Parses configuration text; errors carry the 1-based line number (0 for
/// problems not tied to a line).
pub fn parse_config(text: &str) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::default();
    let mut lines: HashMap<&'static str, usize> = HashMap::new();
    let (mut ao_min, mut ao_max, mut ba_level) = (None, None, None);
    let mut set_tag: Option<String> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Config { line: line_no, message };
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let key: &'static str = KEYS
            .iter()
            .find(|k| **k == key)
            .ok_or_else(|| err(format!("unknown key `{key}`")))?;
        if lines.insert(key, line_no).is_some() {
            return Err(err(format!("duplicate key `{key}`")));
        }
        let wrap = |r: std::result::Result<(), String>| r.map_err(|m| err(format!("{key}: {m}")));
        wrap((|| {
            match key {
                "experiment" => spec.experiment = value.parse()?,
                "users" => spec.users = parse_num(value)?,
                "user_antennas" => spec.user_antennas = parse_num(value)?,
                "ris_elements" => spec.ris_elements = parse_num(value)?,
                "microstrips" => spec.microstrips = parse_num(value)?,
                "elements_per_strip" => spec.elements_per_strip = parse_num(value)?,
                "noise_dbm" => spec.noise_dbm = parse_num(value)?,
                "pathloss_db" => spec.pathloss_db = parse_num(value)?,
                "h1_loss_db" => spec.h1_loss_db = parse_num(value)?,
                "omega_decay" => spec.omega_decay = parse_num(value)?,
                "sar_matrix" => {
                    spec.sar_matrix = match value {
                        "reference" => SarMatrixKind::Reference,
                        "identity" => SarMatrixKind::Identity,
                        "none" => SarMatrixKind::None,
                        _ => return Err(format!("expected reference, identity or none, got `{value}`")),
                    }
                }
                "sar_budgets" => spec.sar_budgets = parse_list(value)?,
                "pmax_dbm" => spec.pmax_dbm = parse_pmax(value)?,
                "seeds" => spec.seeds = parse_seeds(value)?,
                "csi_mode" => {
                    spec.csi_mode = match value {
                        "full" => CsiMode::Full,
                        "partial" => CsiMode::Partial,
                        _ => return Err(format!("expected full or partial, got `{value}`")),
                    }
                }
                "dma_set" => set_tag = Some(value.to_string()),
                "ao_min" => ao_min = Some(parse_num::<f64>(value)?),
                "ao_max" => ao_max = Some(parse_num::<f64>(value)?),
                "ba_level" => ba_level = Some(parse_num::<f64>(value)?),
                "phase_init" => {
                    spec.phase_init = match value {
                        "random" => PhaseInit::Random,
                        "ones" => PhaseInit::Ones,
                        _ => return Err(format!("expected random or ones, got `{value}`")),
                    }
                }
                "eps1" | "eps2" | "eps3" | "eps4" | "eps5" | "eps6" => {
                    let i = key[3..].parse::<usize>().expect("key shape") - 1;
                    spec.eps[i] = parse_num(value)?;
                }
                "max_outer" => spec.max_outer = parse_num(value)?,
                "mc_samples" => spec.mc_samples = parse_num(value)?,
                "de_pmax_dbm" => spec.de_pmax_dbm = parse_num(value)?,
                "out" => spec.out = Some(PathBuf::from(value)),
                _ => unreachable!("key list and match agree"),
            }
            Ok(())
        })())?;
    }

    let line_of = |k: &str| lines.get(k).copied().unwrap_or(0);
    if let Some(tag) = set_tag {
        spec.dma_set = FeasibleSet::from_tag(&tag)
            .ok_or_else(|| Error::Config { line: line_of("dma_set"), message: format!("dma_set: unknown set `{tag}`") })?;
    }
    match &mut spec.dma_set {
        FeasibleSet::AmplitudeOnly { lo, hi } => {
            *lo = ao_min.unwrap_or(*lo);
            *hi = ao_max.unwrap_or(*hi);
        }
        FeasibleSet::BinaryAmplitude { level } => *level = ba_level.unwrap_or(*level),
        _ => {
            for k in ["ao_min", "ao_max", "ba_level"] {
                if lines.contains_key(k) {
                    return Err(Error::Config { line: line_of(k), message: format!("{k} does not apply to dma_set {}", spec.dma_set.tag()) });
                }
            }
        }
    }
    spec.check().map_err(|(k, m)| Error::Config { line: line_of(k), message: format!("{k}: {m}") })?;
    Ok(spec)
}

pub fn load_config(path: &Path) -> Result<ExperimentSpec> {
    parse_config(&std::fs::read_to_string(path)?)
}
