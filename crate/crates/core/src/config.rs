//! JSON experiment configuration: schema, defaults, and validation.
//!
//! A config document is parsed into [`RawConfig`] (every field optional,
//! unknown fields rejected) and then validated against the selected
//! experiment kind into a [`ValidatedConfig`]. Validation runs before any
//! computation and reports the first offending field by its JSON path, e.g.
//! `schedule.nu: poly family requires nu in (2/3, 1], got 0.5`.
//!
//! Schema (all sections optional unless the kind requires them):
//!
//! ```json
//! {
//!   "kind": "run-q",
//!   "map": "q",
//!   "mdp": {"path": "mdp.json"},
//!   "policy": {"mu": "mu.json", "pi": "pi.json"},
//!   "schedule": {"family": "poly", "c_alpha": 1.0, "nu": 0.9,
//!                "nu1": null, "nu2": null},
//!   "run": {"steps": 100000, "n_seeds": 10, "master_seed": 7,
//!           "checkpoint_ratio": 1.1, "log_intervals": false,
//!           "horizon_m": 10000, "jobs": 0},
//!   "analysis": {"zeta": 0.3, "p": 2,
//!                "delta_grid": [0.5, 0.2, 0.1, 0.05, 0.02, 0.01],
//!                "samples": 10000, "h_fd": 1e-4},
//!   "out_dir": "out"
//! }
//! ```
//!
//! `mdp` is either `{"path": ...}` or
//! `{"random": {"n_states": n, "n_actions": k, "gamma": g, "seed": s}}`.

use std::fmt;
use std::path::PathBuf;

use serde::Deserialize;
use thiserror::Error;

use crate::schedule::{ScheduleFamily, StepSizeSchedule};

/// A config rejection: the JSON path of the offending field plus what was
/// wrong with it.
#[derive(Debug, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl fmt::Display) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// The experiment selected by the CLI subcommand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    RunSa,
    RunQ,
    RunTd,
    Anchors,
    MoreauCheck,
    RateFit,
    Concentration,
    Lp,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::RunSa => "run-sa",
            Self::RunQ => "run-q",
            Self::RunTd => "run-td",
            Self::Anchors => "anchors",
            Self::MoreauCheck => "moreau-check",
            Self::RateFit => "rate-fit",
            Self::Concentration => "concentration",
            Self::Lp => "lp",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            Self::RunSa,
            Self::RunQ,
            Self::RunTd,
            Self::Anchors,
            Self::MoreauCheck,
            Self::RateFit,
            Self::Concentration,
            Self::Lp,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    fn needs_mdp(self) -> bool {
        !matches!(self, Self::Anchors)
    }

    fn needs_schedule(self) -> bool {
        !matches!(self, Self::MoreauCheck)
    }

    fn needs_steps(self) -> bool {
        matches!(
            self,
            Self::RunSa | Self::RunQ | Self::RunTd | Self::RateFit | Self::Concentration | Self::Lp
        )
    }

    fn min_seeds(self) -> u64 {
        match self {
            Self::Concentration | Self::Lp => 100,
            _ => 1,
        }
    }
}

/// Which update map drives the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapKind {
    QLearning,
    TdLearning,
}

/// Where the MDP comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum MdpSource {
    Path(PathBuf),
    Random {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub kind: Option<String>,
    pub map: Option<String>,
    pub mdp: Option<RawMdp>,
    pub policy: Option<RawPolicy>,
    pub schedule: Option<RawSchedule>,
    pub run: Option<RawRun>,
    pub analysis: Option<RawAnalysis>,
    pub out_dir: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMdp {
    pub path: Option<String>,
    pub random: Option<RawRandomMdp>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRandomMdp {
    pub n_states: Option<usize>,
    pub n_actions: Option<usize>,
    pub gamma: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawPolicy {
    pub mu: Option<String>,
    pub pi: Option<String>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSchedule {
    pub family: Option<String>,
    pub c_alpha: Option<f64>,
    pub nu: Option<f64>,
    pub nu1: Option<f64>,
    pub nu2: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawRun {
    pub steps: Option<u64>,
    pub n_seeds: Option<u64>,
    pub master_seed: Option<u64>,
    pub checkpoint_ratio: Option<f64>,
    pub log_intervals: Option<bool>,
    pub horizon_m: Option<usize>,
    pub jobs: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawAnalysis {
    pub zeta: Option<f64>,
    pub p: Option<u32>,
    pub delta_grid: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub h_fd: Option<f64>,
}

/// Run-section settings after validation.
#[derive(Clone, Debug)]
pub struct RunSettings {
    pub steps: u64,
    pub n_seeds: u64,
    pub master_seed: u64,
    pub checkpoint_ratio: f64,
    pub log_intervals: bool,
    /// Anchor count for the `anchors` experiment.
    pub horizon_m: Option<usize>,
    /// Worker pool size; 0 means all available cores.
    pub jobs: usize,
}

/// Analysis-section settings after validation.
#[derive(Clone, Debug)]
pub struct AnalysisSettings {
    pub zeta: Option<f64>,
    pub p: Option<u32>,
    pub delta_grid: Vec<f64>,
    pub samples: usize,
    pub h_fd: f64,
}

/// A fully validated experiment description; everything the runner needs,
/// with file contents not yet loaded.
#[derive(Clone, Debug)]
pub struct ValidatedConfig {
    pub kind: ExperimentKind,
    pub map: MapKind,
    pub mdp: Option<MdpSource>,
    pub mu_path: Option<PathBuf>,
    pub pi_path: Option<PathBuf>,
    pub schedule: Option<StepSizeSchedule>,
    pub nu1_override: Option<f64>,
    pub nu2_override: Option<f64>,
    pub run: RunSettings,
    pub analysis: AnalysisSettings,
    pub out_dir: PathBuf,
}

/// Command-line overrides applied on top of the config document.
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Parses a config document, rejecting malformed JSON and unknown fields.
pub fn parse(text: &str) -> Result<RawConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError::new("config", e))
}

/// Validates a parsed config for one experiment kind, applying defaults and
/// command-line overrides. Nothing is computed or read from disk here.
pub fn validate(
    raw: &RawConfig,
    kind: ExperimentKind,
    overrides: &CliOverrides,
) -> Result<ValidatedConfig, ConfigError> {
    if let Some(named) = &raw.kind {
        if ExperimentKind::from_name(named).is_none() {
            return Err(ConfigError::new(
                "kind",
                format!("unknown experiment kind {named:?}"),
            ));
        }
        if named != kind.name() {
            return Err(ConfigError::new(
                "kind",
                format!(
                    "config names experiment {named:?} but the {} subcommand was invoked",
                    kind.name()
                ),
            ));
        }
    }

    let map = validate_map(raw, kind)?;
    let mdp = validate_mdp(raw, kind)?;
    let (mu_path, pi_path) = validate_policy(raw, kind, map)?;
    let (schedule, nu1_override, nu2_override) = validate_schedule(raw, kind)?;
    let run = validate_run(raw, kind, overrides)?;
    let analysis = validate_analysis(raw, kind, schedule.as_ref())?;

    let out_dir = overrides
        .out
        .clone()
        .or_else(|| raw.out_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    if out_dir.as_os_str().is_empty() {
        return Err(ConfigError::new("out_dir", "must not be empty"));
    }

    Ok(ValidatedConfig {
        kind,
        map,
        mdp,
        mu_path,
        pi_path,
        schedule,
        nu1_override,
        nu2_override,
        run,
        analysis,
        out_dir,
    })
}

fn validate_map(raw: &RawConfig, kind: ExperimentKind) -> Result<MapKind, ConfigError> {
    let named = match raw.map.as_deref() {
        None => None,
        Some("q") => Some(MapKind::QLearning),
        Some("td") => Some(MapKind::TdLearning),
        Some(other) => {
            return Err(ConfigError::new(
                "map",
                format!("expected \"q\" or \"td\", got {other:?}"),
            ));
        }
    };
    match kind {
        ExperimentKind::RunQ => match named {
            None | Some(MapKind::QLearning) => Ok(MapKind::QLearning),
            Some(MapKind::TdLearning) => Err(ConfigError::new(
                "map",
                "run-q fixes the update map to \"q\"",
            )),
        },
        ExperimentKind::RunTd => match named {
            None | Some(MapKind::TdLearning) => Ok(MapKind::TdLearning),
            Some(MapKind::QLearning) => Err(ConfigError::new(
                "map",
                "run-td fixes the update map to \"td\"",
            )),
        },
        ExperimentKind::RunSa => {
            named.ok_or_else(|| ConfigError::new("map", "run-sa requires \"q\" or \"td\""))
        }
        _ => Ok(named.unwrap_or(MapKind::QLearning)),
    }
}

fn validate_mdp(raw: &RawConfig, kind: ExperimentKind) -> Result<Option<MdpSource>, ConfigError> {
    let section = match &raw.mdp {
        Some(s) => s,
        None => {
            if kind.needs_mdp() {
                return Err(ConfigError::new(
                    "mdp",
                    "required: give {\"path\": ...} or {\"random\": {...}}",
                ));
            }
            return Ok(None);
        }
    };
    match (&section.path, &section.random) {
        (Some(_), Some(_)) => Err(ConfigError::new(
            "mdp",
            "give either path or random, not both",
        )),
        (None, None) => Err(ConfigError::new(
            "mdp",
            "give {\"path\": ...} or {\"random\": {...}}",
        )),
        (Some(p), None) => {
            if p.is_empty() {
                return Err(ConfigError::new("mdp.path", "must not be empty"));
            }
            Ok(Some(MdpSource::Path(PathBuf::from(p))))
        }
        (None, Some(r)) => {
            let n_states = r
                .n_states
                .ok_or_else(|| ConfigError::new("mdp.random.n_states", "required"))?;
            if n_states == 0 {
                return Err(ConfigError::new("mdp.random.n_states", "must be positive"));
            }
            let n_actions = r
                .n_actions
                .ok_or_else(|| ConfigError::new("mdp.random.n_actions", "required"))?;
            if n_actions == 0 {
                return Err(ConfigError::new("mdp.random.n_actions", "must be positive"));
            }
            let gamma = r
                .gamma
                .ok_or_else(|| ConfigError::new("mdp.random.gamma", "required"))?;
            if !(0.0..1.0).contains(&gamma) {
                return Err(ConfigError::new(
                    "mdp.random.gamma",
                    format!("must lie in [0, 1), got {gamma}"),
                ));
            }
            Ok(Some(MdpSource::Random {
                n_states,
                n_actions,
                gamma,
                seed: r.seed.unwrap_or(0),
            }))
        }
    }
}

fn validate_policy(
    raw: &RawConfig,
    kind: ExperimentKind,
    map: MapKind,
) -> Result<(Option<PathBuf>, Option<PathBuf>), ConfigError> {
    let section = raw.policy.clone().unwrap_or_default();
    let mu_path = match section.mu {
        Some(p) if p.is_empty() => {
            return Err(ConfigError::new("policy.mu", "must not be empty"));
        }
        Some(p) => Some(PathBuf::from(p)),
        None => None,
    };
    let pi_path = match section.pi {
        Some(p) if p.is_empty() => {
            return Err(ConfigError::new("policy.pi", "must not be empty"));
        }
        Some(p) => Some(PathBuf::from(p)),
        None => None,
    };
    if map == MapKind::TdLearning && kind.needs_mdp() && pi_path.is_none() {
        return Err(ConfigError::new(
            "policy.pi",
            "the td map needs a target policy file",
        ));
    }
    Ok((mu_path, pi_path))
}

fn validate_schedule(
    raw: &RawConfig,
    kind: ExperimentKind,
) -> Result<(Option<StepSizeSchedule>, Option<f64>, Option<f64>), ConfigError> {
    let section = match &raw.schedule {
        Some(s) => s,
        None => {
            if kind.needs_schedule() {
                return Err(ConfigError::new("schedule", "required"));
            }
            return Ok((None, None, None));
        }
    };
    let family = match section.family.as_deref() {
        Some("poly") => ScheduleFamily::Poly,
        Some("polylog") => ScheduleFamily::PolyLog,
        Some(other) => {
            return Err(ConfigError::new(
                "schedule.family",
                format!("expected \"poly\" or \"polylog\", got {other:?}"),
            ));
        }
        None => return Err(ConfigError::new("schedule.family", "required")),
    };
    match kind {
        ExperimentKind::RateFit if family != ScheduleFamily::Poly => {
            return Err(ConfigError::new(
                "schedule.family",
                "rate-fit requires the poly family",
            ));
        }
        ExperimentKind::Concentration if family != ScheduleFamily::PolyLog => {
            return Err(ConfigError::new(
                "schedule.family",
                "concentration requires the polylog family",
            ));
        }
        _ => {}
    }
    let c_alpha = section
        .c_alpha
        .ok_or_else(|| ConfigError::new("schedule.c_alpha", "required"))?;
    if !(c_alpha > 0.0 && c_alpha.is_finite()) {
        return Err(ConfigError::new(
            "schedule.c_alpha",
            format!("must be a positive finite real, got {c_alpha}"),
        ));
    }
    let nu = section
        .nu
        .ok_or_else(|| ConfigError::new("schedule.nu", "required"))?;
    match family {
        ScheduleFamily::Poly if !(nu > 2.0 / 3.0 && nu <= 1.0) => {
            return Err(ConfigError::new(
                "schedule.nu",
                format!("poly family requires nu in (2/3, 1], got {nu}"),
            ));
        }
        ScheduleFamily::PolyLog if !(nu > 0.0 && nu < 1.0) => {
            return Err(ConfigError::new(
                "schedule.nu",
                format!("polylog family requires nu in (0, 1), got {nu}"),
            ));
        }
        _ => {}
    }
    let schedule = StepSizeSchedule::new(family, c_alpha, nu)
        .map_err(|e| ConfigError::new("schedule", e))?;
    if let Some(nu1) = section.nu1 {
        if !(0.0..1.0).contains(&nu1) {
            return Err(ConfigError::new(
                "schedule.nu1",
                format!("must lie in [0, 1), got {nu1}"),
            ));
        }
        if family == ScheduleFamily::Poly && nu == 1.0 && nu1 == 0.0 {
            return Err(ConfigError::new(
                "schedule.nu1",
                "poly with nu = 1 needs a positive log exponent",
            ));
        }
    }
    if let Some(nu2) = section.nu2 {
        if !(nu2 > 0.0 && nu2 <= 1.0) {
            return Err(ConfigError::new(
                "schedule.nu2",
                format!("must lie in (0, 1], got {nu2}"),
            ));
        }
    }
    Ok((Some(schedule), section.nu1, section.nu2))
}

fn validate_run(
    raw: &RawConfig,
    kind: ExperimentKind,
    overrides: &CliOverrides,
) -> Result<RunSettings, ConfigError> {
    let section = raw.run.clone().unwrap_or_default();
    let steps = match section.steps {
        Some(0) => return Err(ConfigError::new("run.steps", "must be positive")),
        Some(s) => s,
        None if kind.needs_steps() => {
            return Err(ConfigError::new("run.steps", "required"));
        }
        None => 0,
    };
    let n_seeds = section.n_seeds.unwrap_or(1);
    if n_seeds < kind.min_seeds() {
        return Err(ConfigError::new(
            "run.n_seeds",
            format!(
                "{} requires at least {} seeds, got {n_seeds}",
                kind.name(),
                kind.min_seeds()
            ),
        ));
    }
    let checkpoint_ratio = section.checkpoint_ratio.unwrap_or(1.1);
    if !(checkpoint_ratio > 1.0 && checkpoint_ratio.is_finite()) {
        return Err(ConfigError::new(
            "run.checkpoint_ratio",
            format!("must be a finite real above 1, got {checkpoint_ratio}"),
        ));
    }
    if kind == ExperimentKind::Anchors {
        match section.horizon_m {
            None => return Err(ConfigError::new("run.horizon_m", "required")),
            Some(0) => return Err(ConfigError::new("run.horizon_m", "must be positive")),
            Some(_) => {}
        }
    }
    Ok(RunSettings {
        steps,
        n_seeds,
        master_seed: overrides.seed.or(section.master_seed).unwrap_or(0),
        checkpoint_ratio,
        log_intervals: section.log_intervals.unwrap_or(false),
        horizon_m: section.horizon_m,
        jobs: overrides.jobs.or(section.jobs).unwrap_or(0),
    })
}

fn validate_analysis(
    raw: &RawConfig,
    kind: ExperimentKind,
    schedule: Option<&StepSizeSchedule>,
) -> Result<AnalysisSettings, ConfigError> {
    let section = raw.analysis.clone().unwrap_or_default();
    let zeta = section.zeta;
    if kind == ExperimentKind::RateFit {
        let zeta = zeta.ok_or_else(|| ConfigError::new("analysis.zeta", "required"))?;
        let sched = schedule.expect("rate-fit schedule validated above");
        if sched.nu() < 1.0 {
            let limit = 1.5 * sched.nu() - 1.0;
            if !(zeta > 0.0 && zeta < limit) {
                return Err(ConfigError::new(
                    "analysis.zeta",
                    format!("must lie in (0, {limit}) for nu = {}, got {zeta}", sched.nu()),
                ));
            }
        } else if !(zeta > 0.0 && zeta.is_finite()) {
            return Err(ConfigError::new(
                "analysis.zeta",
                format!("must be a positive finite real, got {zeta}"),
            ));
        }
    }
    let p = section.p;
    if kind == ExperimentKind::Lp {
        match p {
            None => return Err(ConfigError::new("analysis.p", "required")),
            Some(p) if p < 2 => {
                return Err(ConfigError::new(
                    "analysis.p",
                    format!("must be at least 2, got {p}"),
                ));
            }
            Some(_) => {}
        }
    }
    let delta_grid = section
        .delta_grid
        .unwrap_or_else(|| crate::analysis::DELTA_GRID.to_vec());
    if delta_grid.is_empty() {
        return Err(ConfigError::new("analysis.delta_grid", "must not be empty"));
    }
    for pair in delta_grid.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(ConfigError::new(
                "analysis.delta_grid",
                "levels must decrease strictly",
            ));
        }
    }
    if delta_grid.iter().any(|d| !(*d > 0.0 && *d < 1.0)) {
        return Err(ConfigError::new(
            "analysis.delta_grid",
            "levels must lie strictly inside (0, 1)",
        ));
    }
    let samples = section.samples.unwrap_or(10_000);
    if samples == 0 {
        return Err(ConfigError::new("analysis.samples", "must be positive"));
    }
    let h_fd = section.h_fd.unwrap_or(1e-4);
    if !(h_fd > 0.0 && h_fd.is_finite()) {
        return Err(ConfigError::new(
            "analysis.h_fd",
            format!("must be a positive finite real, got {h_fd}"),
        ));
    }
    Ok(AnalysisSettings {
        zeta,
        p,
        delta_grid,
        samples,
        h_fd,
    })
}
