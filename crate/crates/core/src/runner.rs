//! Experiment execution behind the `salab` binary: materializes the inputs a
//! validated config points at, runs the selected experiment, and emits
//! bit-stable artifacts plus a `manifest.json` naming every file written.
//!
//! Error discipline: content problems (an unreadable schedule, a policy that
//! does not fit the MDP) surface as [`ConfigError`] with a field path;
//! filesystem problems as [`RunnerError::Io`]; failed numerical checks are
//! never errors, they land in the manifest's verdict table and flip the exit
//! code to 1.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{concentration_with_grid, fit_as_rate_with, lp_moment_curve, run_ensemble};
use crate::chain::NoiseChain;
use crate::config::{ConfigError, ExperimentKind, MapKind, MdpSource, ValidatedConfig};
use crate::diagnostics::{
    decompose_noise, verify_drift_inequality, verify_noise_bounds, write_diagnostics_csv,
    DiagnosticsError, MIN_INTERVALS,
};
use crate::engine::{
    off_policy_td_map, q_learning_map, run_sa, run_skeleton, EngineError, RunSpec,
    TrajectoryRecord, UpdateMap,
};
use crate::lyapunov::{self, MoreauConfig};
use crate::mdp::{Mdp, Policy};
use crate::schedule::{compute_anchors_with, SkeletonAnchors, StepSizeSchedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_BAD_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Largest anchor-table size the runner will grow to when covering a run.
const COVER_CAP: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl RunnerError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => EXIT_BAD_CONFIG,
            _ => EXIT_IO,
        }
    }
}

/// What an experiment produced: named pass/fail verdicts, the files written
/// (manifest included), and the detail block echoed into the manifest.
#[derive(Clone, Debug)]
pub struct Report {
    pub kind: ExperimentKind,
    pub verdicts: BTreeMap<String, bool>,
    pub files: Vec<String>,
    pub out_dir: PathBuf,
    pub details: Value,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.verdicts.values().all(|v| *v)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }
}

/// Seventeen-significant-digit float cell, the CSV-wide convention.
fn f17(x: f64) -> String {
    format!("{x:.16e}")
}

struct Emitter {
    out_dir: PathBuf,
    files: Vec<String>,
}

impl Emitter {
    fn new(out_dir: &Path) -> Result<Self, RunnerError> {
        fs::create_dir_all(out_dir).map_err(|source| RunnerError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            out_dir: out_dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn create(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>), RunnerError> {
        let path = self.out_dir.join(name);
        let file = File::create(&path).map_err(|source| RunnerError::Io {
            path: path.clone(),
            source,
        })?;
        self.files.push(name.to_string());
        Ok((path, BufWriter::new(file)))
    }

    fn write_json(&mut self, name: &str, value: &Value) -> Result<(), RunnerError> {
        let (path, mut out) = self.create(name)?;
        serde_json::to_writer_pretty(&mut out, value)
            .map_err(|source| RunnerError::Json {
                path: path.clone(),
                source,
            })?;
        use std::io::Write;
        writeln!(out).map_err(|source| RunnerError::Io { path, source })
    }
}

/// Runs one validated experiment, writing all artifacts under the config's
/// output directory. `config_echo` is the parsed config document, embedded
/// verbatim in the manifest.
pub fn execute(cfg: &ValidatedConfig, config_echo: &Value) -> Result<Report, RunnerError> {
    let started = Instant::now();
    let mut em = Emitter::new(&cfg.out_dir)?;
    let mut verdicts = BTreeMap::new();
    let mut details = serde_json::Map::new();

    match cfg.kind {
        ExperimentKind::Anchors => run_anchors(cfg, &mut em, &mut details)?,
        ExperimentKind::RunSa | ExperimentKind::RunQ | ExperimentKind::RunTd => {
            run_trajectories(cfg, &mut em, &mut verdicts, &mut details)?
        }
        ExperimentKind::MoreauCheck => run_moreau(cfg, &mut em, &mut verdicts, &mut details)?,
        ExperimentKind::RateFit => run_rate_fit(cfg, &mut em, &mut verdicts, &mut details)?,
        ExperimentKind::Concentration => {
            run_concentration(cfg, &mut em, &mut verdicts, &mut details)?
        }
        ExperimentKind::Lp => run_lp(cfg, &mut em, &mut verdicts, &mut details)?,
    }

    let mut declared = em.files.clone();
    declared.push("manifest.json".to_string());
    let manifest = json!({
        "tool": {"name": "salab", "version": env!("CARGO_PKG_VERSION")},
        "kind": cfg.kind.name(),
        "config": config_echo,
        "effective": {
            "master_seed": cfg.run.master_seed,
            "jobs": cfg.run.jobs,
            "out_dir": cfg.out_dir.display().to_string(),
        },
        "wall_time_s": started.elapsed().as_secs_f64(),
        "verdicts": Value::Object(
            verdicts.iter().map(|(k, v)| (k.clone(), Value::Bool(*v))).collect()
        ),
        "details": Value::Object(details.clone()),
        "files": declared,
    });
    em.write_json("manifest.json", &manifest)?;
    Ok(Report {
        kind: cfg.kind,
        verdicts,
        files: em.files,
        out_dir: cfg.out_dir.clone(),
        details: Value::Object(details),
    })
}

fn schedule_of(cfg: &ValidatedConfig) -> &StepSizeSchedule {
    cfg.schedule
        .as_ref()
        .expect("schedule presence enforced by validation")
}

/// Anchor-target exponents after applying the config's overrides.
fn anchor_exponents(cfg: &ValidatedConfig) -> Result<(f64, f64), ConfigError> {
    let sched = schedule_of(cfg);
    let (d1, d2) = sched
        .regime_parameters(cfg.nu1_override)
        .map_err(|e| ConfigError::new("schedule.nu1", e))?;
    Ok((
        cfg.nu1_override.unwrap_or(d1),
        cfg.nu2_override.unwrap_or(d2),
    ))
}

fn anchors_for(cfg: &ValidatedConfig, horizon_m: usize) -> Result<SkeletonAnchors, ConfigError> {
    let (nu1, nu2) = anchor_exponents(cfg)?;
    compute_anchors_with(schedule_of(cfg), horizon_m, nu1, nu2)
        .map_err(|e| ConfigError::new("schedule", e))
}

/// Grows the anchor table geometrically until it reaches past `steps`.
fn anchors_covering(cfg: &ValidatedConfig, steps: u64) -> Result<SkeletonAnchors, ConfigError> {
    let cap = cfg.run.horizon_m.unwrap_or(COVER_CAP).min(COVER_CAP);
    let mut horizon = 64.min(cap).max(1);
    loop {
        let anchors = anchors_for(cfg, horizon)?;
        if anchors.covers(steps) {
            return Ok(anchors);
        }
        if horizon >= cap {
            return Err(ConfigError::new(
                "run.steps",
                format!(
                    "run of {steps} steps still uncovered by {cap} anchor intervals"
                ),
            ));
        }
        horizon = (horizon * 2).min(cap);
    }
}

fn run_anchors(
    cfg: &ValidatedConfig,
    em: &mut Emitter,
    details: &mut serde_json::Map<String, Value>,
) -> Result<(), RunnerError> {
    let horizon = cfg.run.horizon_m.expect("validated for anchors");
    let anchors = anchors_for(cfg, horizon)?;
    let (path, out) = em.create("anchors.csv")?;
    anchors
        .write_csv(out)
        .map_err(|source| RunnerError::Csv { path, source })?;
    details.insert("horizon_m".into(), json!(anchors.horizon()));
    details.insert("last_anchor".into(), json!(anchors.last_anchor()));
    details.insert("nu1".into(), json!(anchors.nu1));
    details.insert("nu2".into(), json!(anchors.nu2));
    Ok(())
}

fn read_text(path: &Path) -> Result<String, RunnerError> {
    fs::read_to_string(path).map_err(|source| RunnerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn load_mdp(cfg: &ValidatedConfig) -> Result<Mdp, RunnerError> {
    match cfg.mdp.as_ref().expect("mdp presence enforced by validation") {
        MdpSource::Path(path) => {
            let text = read_text(path)?;
            Mdp::from_json_str(&text)
                .map_err(|e| ConfigError::new("mdp.path", e).into())
        }
        MdpSource::Random {
            n_states,
            n_actions,
            gamma,
            seed,
        } => Ok(Mdp::random(*n_states, *n_actions, *gamma, *seed)),
    }
}

fn load_policy(
    path: &Path,
    field: &'static str,
    mdp: &Mdp,
) -> Result<Policy, RunnerError> {
    let text = read_text(path)?;
    let policy =
        Policy::from_json_str(&text).map_err(|e| ConfigError::new(field, e))?;
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(ConfigError::new(
            field,
            format!(
                "policy shaped {}x{} does not fit an mdp with {} states and {} actions",
                policy.n_states(),
                policy.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            ),
        )
        .into());
    }
    Ok(policy)
}

enum BuiltMap {
    Q(crate::engine::QLearningMap),
    Td(crate::engine::OffPolicyTdMap),
}

impl BuiltMap {
    fn map(&self) -> &dyn UpdateMap {
        match self {
            Self::Q(m) => m,
            Self::Td(m) => m,
        }
    }

    fn noise(&self) -> &NoiseChain {
        match self {
            Self::Q(m) => m.noise(),
            Self::Td(m) => m.noise(),
        }
    }
}

fn build_map(cfg: &ValidatedConfig, mdp: &Mdp) -> Result<BuiltMap, RunnerError> {
    let mu = match &cfg.mu_path {
        Some(p) => load_policy(p, "policy.mu", mdp)?,
        None => Policy::uniform(mdp.n_states(), mdp.n_actions()),
    };
    let classify = |e: EngineError| -> RunnerError {
        let field = match &e {
            EngineError::NoExploration { .. } => "policy.mu",
            EngineError::UnreachableState { .. } => "mdp",
            _ => "mdp",
        };
        ConfigError::new(field, e).into()
    };
    match cfg.map {
        MapKind::QLearning => Ok(BuiltMap::Q(
            q_learning_map(mdp, &mu).map_err(classify)?,
        )),
        MapKind::TdLearning => {
            let pi_path = cfg.pi_path.as_ref().expect("validated for td");
            let pi = load_policy(pi_path, "policy.pi", mdp)?;
            off_policy_td_map(mdp, &mu, &pi)
                .map_err(|e| match &e {
                    EngineError::NoExploration { .. } => {
                        RunnerError::from(ConfigError::new("policy.pi", e))
                    }
                    _ => classify(e),
                })
                .map(BuiltMap::Td)
        }
    }
}

fn member_name(base: &str, n_seeds: u64, member: u64) -> String {
    if n_seeds == 1 {
        format!("{base}.csv")
    } else {
        format!("{base}_{member}.csv")
    }
}

fn write_trajectory_csv(
    em: &mut Emitter,
    name: &str,
    record: &TrajectoryRecord,
) -> Result<(), RunnerError> {
    let (path, out) = em.create(name)?;
    let mut w = csv::Writer::from_writer(out);
    let mut step = || -> csv::Result<()> {
        w.write_record(["t", "error_sq"])?;
        for cp in &record.checkpoints {
            w.write_record(&[cp.t.to_string(), f17(cp.error_sq)])?;
        }
        w.flush()?;
        Ok(())
    };
    step().map_err(|source| RunnerError::Csv { path, source })
}

fn write_intervals_csv(
    em: &mut Emitter,
    name: &str,
    record: &TrajectoryRecord,
    map: &dyn UpdateMap,
) -> Result<(), RunnerError> {
    let log = record.interval_log.as_deref().unwrap_or(&[]);
    let norm = map.contraction_norm();
    let (path, out) = em.create(name)?;
    let mut w = csv::Writer::from_writer(out);
    let mut step = || -> csv::Result<()> {
        w.write_record([
            "m",
            "t_m",
            "err_sq_at_anchor",
            "z_norm",
            "z1_norm",
            "z2_norm",
            "z3_norm",
        ])?;
        for iv in log {
            w.write_record(&[
                iv.m.to_string(),
                iv.t_start.to_string(),
                f17(iv.error_sq_at_start),
                f17(norm.eval(&iv.z)),
                f17(norm.eval(&iv.z1)),
                f17(norm.eval(&iv.z2)),
                f17(norm.eval(&iv.z3)),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    step().map_err(|source| RunnerError::Csv { path, source })
}

fn run_trajectories(
    cfg: &ValidatedConfig,
    em: &mut Emitter,
    verdicts: &mut BTreeMap<String, bool>,
    details: &mut serde_json::Map<String, Value>,
) -> Result<(), RunnerError> {
    let mdp = load_mdp(cfg)?;
    let built = build_map(cfg, &mdp)?;
    let map = built.map();
    let sched = schedule_of(cfg);
    let anchors = if cfg.run.log_intervals {
        Some(anchors_covering(cfg, cfg.run.steps)?)
    } else {
        None
    };
    let choice = lyapunov::pick_xi(map.dim(), map.kappa())
        .map_err(|e| ConfigError::new("mdp", e))?;
    let lyap = MoreauConfig::new(map.dim(), choice.xi)
        .map_err(|e| ConfigError::new("mdp", e))?;

    let mut finite = true;
    let mut decomposition = true;
    let mut final_errors = Vec::new();
    let mut divergent = Vec::new();
    let mut bound_rows = Vec::new();
    let mut drift_rows = Vec::new();
    for member in 0..cfg.run.n_seeds {
        let mut spec = RunSpec::new(cfg.run.steps, cfg.run.master_seed)
            .checkpoint_ratio(cfg.run.checkpoint_ratio);
        if cfg.run.n_seeds > 1 {
            spec = spec.member(member);
        }
        let outcome = match &anchors {
            Some(a) => run_skeleton(map, built.noise(), sched, a, &spec),
            None => run_sa(map, built.noise(), sched, &spec),
        };
        let record = match outcome {
            Ok(r) => r,
            Err(EngineError::NonFinite { t }) => {
                finite = false;
                divergent.push(json!({"member": member, "at_step": t}));
                final_errors.push(Value::Null);
                continue;
            }
            Err(e) => return Err(ConfigError::new("run", e).into()),
        };
        final_errors.push(json!(record.final_error_sq));
        write_trajectory_csv(
            em,
            &member_name("trajectory", cfg.run.n_seeds, member),
            &record,
        )?;
        if let Some(a) = &anchors {
            write_intervals_csv(
                em,
                &member_name("intervals", cfg.run.n_seeds, member),
                &record,
                map,
            )?;
            match decompose_noise(&record, map, built.noise().kernel(), a, &lyap) {
                Ok(diags) => {
                    if diags.len() >= MIN_INTERVALS {
                        let bound_ok = match verify_noise_bounds(&diags) {
                            Ok(fit) => {
                                bound_rows.push(json!({
                                    "member": member,
                                    "c1": fit.c1, "c2": fit.c2, "c3": fit.c3,
                                    "m0": fit.m0,
                                }));
                                true
                            }
                            Err(DiagnosticsError::UnstableFit { .. }) => false,
                            Err(e) => return Err(ConfigError::new("run", e).into()),
                        };
                        verdicts
                            .entry("noise_bounds".to_string())
                            .and_modify(|v| *v &= bound_ok)
                            .or_insert(bound_ok);
                        let kp = choice.kappa_prime;
                        match verify_drift_inequality(&diags, &lyap, kp) {
                            Ok(report) => {
                                drift_rows.push(json!({
                                    "member": member,
                                    "c": report.c,
                                    "m0": report.m0,
                                    "coverage": report.coverage,
                                }));
                                let ok = report.coverage == 1.0;
                                verdicts
                                    .entry("drift_coverage".to_string())
                                    .and_modify(|v| *v &= ok)
                                    .or_insert(ok);
                                let name =
                                    member_name("diagnostics", cfg.run.n_seeds, member);
                                let (path, out) = em.create(&name)?;
                                write_diagnostics_csv(&diags, &report, out)
                                    .map_err(|source| RunnerError::Csv { path, source })?;
                            }
                            Err(e) => return Err(ConfigError::new("run", e).into()),
                        }
                    }
                }
                Err(
                    e @ (DiagnosticsError::Reconstruction { .. }
                    | DiagnosticsError::Centering { .. }),
                ) => {
                    decomposition = false;
                    divergent.push(json!({"member": member, "decomposition": e.to_string()}));
                }
                Err(e) => return Err(ConfigError::new("run", e).into()),
            }
        }
    }
    verdicts.insert("finite".into(), finite);
    if anchors.is_some() {
        verdicts.insert("decomposition".into(), decomposition);
    }
    details.insert("kappa".into(), json!(map.kappa()));
    details.insert("kappa_prime".into(), json!(choice.kappa_prime));
    details.insert("final_error_sq".into(), Value::Array(final_errors));
    if !divergent.is_empty() {
        details.insert("divergent".into(), Value::Array(divergent));
    }
    if !bound_rows.is_empty() {
        details.insert("noise_bounds".into(), Value::Array(bound_rows));
    }
    if !drift_rows.is_empty() {
        details.insert("drift".into(), Value::Array(drift_rows));
    }
    Ok(())
}

fn run_moreau(
    cfg: &ValidatedConfig,
    em: &mut Emitter,
    verdicts: &mut BTreeMap<String, bool>,
    details: &mut serde_json::Map<String, Value>,
) -> Result<(), RunnerError> {
    let mdp = load_mdp(cfg)?;
    let built = build_map(cfg, &mdp)?;
    let map = built.map();
    let kappa = map.kappa();
    let choice = lyapunov::pick_xi(map.dim(), kappa)
        .map_err(|e| ConfigError::new("mdp", e))?;
    let cfg_m = MoreauConfig::new(map.dim(), choice.xi)
        .map_err(|e| ConfigError::new("mdp", e))?;
    let samples = cfg.analysis.samples;
    let h_fd = cfg.analysis.h_fd;
    let seed = cfg.run.master_seed;

    // One-dimensional closed form: the envelope of x^2/2 smoothed with
    // parameter xi is exactly x^2 / (2 (1 + xi)).
    let one_d = MoreauConfig::new(1, choice.xi).expect("xi validated");
    let mut closed_gap: f64 = 0.0;
    for w in [0.3, -2.0, 7.0, 0.01, -11.0] {
        let want = w * w / (2.0 * (1.0 + choice.xi));
        let got = lyapunov::moreau_value(&one_d, &[w]);
        closed_gap = closed_gap.max((got - want).abs() / want.max(1e-300));
    }

    let equivalence = lyapunov::check_norm_equivalence(&cfg_m, samples, seed);
    let smoothness = lyapunov::check_smoothness(&cfg_m, samples, h_fd, seed.wrapping_add(1));
    let pairing = lyapunov::check_gradient_pairing(&cfg_m, samples, seed.wrapping_add(2));

    verdicts.insert("closed_form".into(), closed_gap <= 1e-8);
    verdicts.insert("equivalence".into(), equivalence.violations == 0);
    verdicts.insert("smoothness".into(), smoothness.max_violation <= 1e-4);
    verdicts.insert("pairing".into(), pairing.max_excess <= 1e-5);
    verdicts.insert(
        "contraction_margin".into(),
        choice.kappa_prime >= (1.0 - kappa) / 2.0,
    );

    let report = json!({
        "kappa": kappa,
        "xi": choice.xi,
        "kappa_prime": choice.kappa_prime,
        "closed_form_max_rel_gap": closed_gap,
        "equivalence": equivalence,
        "smoothness": smoothness,
        "pairing": pairing,
    });
    em.write_json("moreau.json", &report)?;
    details.insert("kappa".into(), json!(kappa));
    details.insert("xi".into(), json!(choice.xi));
    Ok(())
}

fn run_rate_fit(
    cfg: &ValidatedConfig,
    em: &mut Emitter,
    verdicts: &mut BTreeMap<String, bool>,
    details: &mut serde_json::Map<String, Value>,
) -> Result<(), RunnerError> {
    let mdp = load_mdp(cfg)?;
    let built = build_map(cfg, &mdp)?;
    let map = built.map();
    let sched = schedule_of(cfg);
    let zeta = cfg.analysis.zeta.expect("validated for rate-fit");
    let base = RunSpec::new(cfg.run.steps, cfg.run.master_seed)
        .checkpoint_ratio(cfg.run.checkpoint_ratio);
    let outcomes = run_ensemble(
        map,
        built.noise(),
        sched,
        &base,
        cfg.run.n_seeds,
        cfg.run.jobs,
    );

    let mut all_pass = true;
    let mut per_seed = Vec::new();
    for (member, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(record) => {
                let fit = fit_as_rate_with(record, zeta, cfg.nu1_override)
                    .map_err(|e| ConfigError::new("run.steps", e))?;
                let name = member_name("rate_envelope", cfg.run.n_seeds, member as u64);
                let (path, out) = em.create(&name)?;
                let mut w = csv::Writer::from_writer(out);
                let mut step = || -> csv::Result<()> {
                    w.write_record(["t", "envelope"])?;
                    for &(t, v) in &fit.envelope {
                        w.write_record(&[t.to_string(), f17(v)])?;
                    }
                    w.flush()?;
                    Ok(())
                };
                step().map_err(|source| RunnerError::Csv { path, source })?;
                all_pass &= fit.verdict;
                per_seed.push(json!({
                    "member": member,
                    "finite": true,
                    "slope": fit.slope,
                    "verdict": fit.verdict,
                }));
            }
            Err(EngineError::NonFinite { t }) => {
                all_pass = false;
                per_seed.push(json!({
                    "member": member,
                    "finite": false,
                    "at_step": t,
                    "verdict": false,
                }));
            }
            Err(e) => {
                return Err(ConfigError::new("run", e.to_string()).into());
            }
        }
    }
    let summary = json!({
        "rate_fit": {
            "zeta": zeta,
            "nu": sched.nu(),
            "per_seed": per_seed,
            "all_pass": all_pass,
        }
    });
    em.write_json("summary.json", &summary)?;
    verdicts.insert("rate".into(), all_pass);
    details.insert("kappa".into(), json!(map.kappa()));
    Ok(())
}

fn run_concentration(
    cfg: &ValidatedConfig,
    em: &mut Emitter,
    verdicts: &mut BTreeMap<String, bool>,
    details: &mut serde_json::Map<String, Value>,
) -> Result<(), RunnerError> {
    let mdp = load_mdp(cfg)?;
    let built = build_map(cfg, &mdp)?;
    let summary = concentration_with_grid(
        built.map(),
        built.noise(),
        schedule_of(cfg),
        cfg.run.n_seeds,
        cfg.run.steps,
        cfg.run.master_seed,
        cfg.run.jobs,
        &cfg.analysis.delta_grid,
    )
    .map_err(|e| ConfigError::new("run", e))?;

    let (path, out) = em.create("concentration_quantiles.csv")?;
    let mut w = csv::Writer::from_writer(out);
    let mut step = || -> csv::Result<()> {
        w.write_record(["delta", "quantile", "coverage"])?;
        for i in 0..summary.delta_grid.len() {
            w.write_record(&[
                f17(summary.delta_grid[i]),
                f17(summary.quantiles[i]),
                f17(summary.coverage[i]),
            ])?;
        }
        w.flush()?;
        Ok(())
    };
    step().map_err(|source| RunnerError::Csv { path, source })?;

    let (path, out) = em.create("concentration_seeds.csv")?;
    let mut w = csv::Writer::from_writer(out);
    let mut step = || -> csv::Result<()> {
        w.write_record(["member", "max_weighted_error"])?;
        for (i, m) in summary.per_seed_max.iter().enumerate() {
            w.write_record(&[i.to_string(), f17(*m)])?;
        }
        w.flush()?;
        Ok(())
    };
    step().map_err(|source| RunnerError::Csv { path, source })?;

    let value = serde_json::to_value(&summary).expect("summary serializes");
    em.write_json("summary.json", &json!({ "concentration": value }))?;
    verdicts.insert("concentration".into(), summary.verdict);
    details.insert("c_ind".into(), json!(summary.c_ind));
    details.insert("scale".into(), json!(summary.scale));
    details.insert("n_divergent".into(), json!(summary.divergent.len()));
    Ok(())
}

fn run_lp(
    cfg: &ValidatedConfig,
    em: &mut Emitter,
    verdicts: &mut BTreeMap<String, bool>,
    details: &mut serde_json::Map<String, Value>,
) -> Result<(), RunnerError> {
    let mdp = load_mdp(cfg)?;
    let built = build_map(cfg, &mdp)?;
    let p = cfg.analysis.p.expect("validated for lp");
    let base = RunSpec::new(cfg.run.steps, cfg.run.master_seed)
        .checkpoint_ratio(cfg.run.checkpoint_ratio);
    let outcomes = run_ensemble(
        built.map(),
        built.noise(),
        schedule_of(cfg),
        &base,
        cfg.run.n_seeds,
        cfg.run.jobs,
    );
    let mut records = Vec::with_capacity(outcomes.len());
    let mut divergent = Vec::new();
    for (member, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(EngineError::NonFinite { t }) => {
                divergent.push(json!({"member": member, "at_step": t}))
            }
            Err(e) => return Err(ConfigError::new("run", e.to_string()).into()),
        }
    }
    verdicts.insert("finite".into(), divergent.is_empty());
    if !divergent.is_empty() {
        details.insert("divergent".into(), Value::Array(divergent));
        verdicts.insert("lp_decreasing".into(), false);
        em.write_json("summary.json", &json!({"lp": Value::Null}))?;
        return Ok(());
    }
    let curve = lp_moment_curve(&records, p).map_err(|e| ConfigError::new("run", e))?;

    let (path, out) = em.create("lp_curve.csv")?;
    let mut w = csv::Writer::from_writer(out);
    let mut step = || -> csv::Result<()> {
        w.write_record(["t", "moment", "se"])?;
        for pt in &curve.points {
            w.write_record(&[pt.t.to_string(), f17(pt.moment), f17(pt.se)])?;
        }
        w.flush()?;
        Ok(())
    };
    step().map_err(|source| RunnerError::Csv { path, source })?;

    let value = serde_json::to_value(&curve).expect("curve serializes");
    em.write_json("summary.json", &json!({ "lp": value }))?;
    verdicts.insert("lp_decreasing".into(), curve.verdict);
    details.insert("p".into(), json!(p));
    Ok(())
}
