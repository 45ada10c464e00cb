//! C interface to the stochastic approximation lab.
//!
//! Every fallible call returns an [`SaStatus`] and writes its result through
//! an out pointer only on success. Failures leave a message retrievable with
//! [`sa_last_error`] on the same thread. Handles (`SaMdp`, `SaMap`,
//! `SaRecord`) are created and released in pairs; using a handle after
//! freeing it is undefined behavior, as in any C library.
//!
//! Panics never cross the boundary: every entry point catches them and
//! reports [`SaStatus::Panic`] instead.
//!
//! The generated header lives at `include/sa_lab.h` and is refreshed by the
//! build script.

#![deny(unsafe_op_in_unsafe_fn)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fmt::Display;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use sa_lab::chain::NoiseChain;
use sa_lab::engine::{
    off_policy_td_map, q_learning_map, run_sa, OffPolicyTdMap, QLearningMap, RunSpec,
    TrajectoryRecord, UpdateMap,
};
use sa_lab::mdp::{Mdp, Policy};
use sa_lab::schedule::{compute_anchors, ScheduleFamily, StepSizeSchedule};

/// Result of an API call; `SA_STATUS_OK` is zero and every failure is
/// nonzero.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// An argument was rejected (malformed JSON, an exponent outside its
    /// family's range, a buffer of the wrong length, ...).
    InvalidArgument = 2,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 3,
    /// The computation itself failed, e.g. the iterate left the finite
    /// range.
    RunFailed = 4,
    /// A library bug: an internal panic was caught at the boundary.
    Panic = 5,
}

/// Step-size family selector.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaScheduleFamily {
    /// `alpha_t = c / (t+3)^nu` with `nu` in `(2/3, 1]`.
    Poly = 0,
    /// `alpha_t = c / ((t+3) * ln^nu(t+3))` with `nu` in `(0, 1)`.
    PolyLog = 1,
}

impl From<SaScheduleFamily> for ScheduleFamily {
    fn from(f: SaScheduleFamily) -> Self {
        match f {
            SaScheduleFamily::Poly => ScheduleFamily::Poly,
            SaScheduleFamily::PolyLog => ScheduleFamily::PolyLog,
        }
    }
}

/// Opaque tabular MDP handle.
pub struct SaMdp {
    inner: Mdp,
}

/// Opaque update-map handle: an update rule together with its noise chain,
/// exact fixed point, and contraction modulus.
pub struct SaMap {
    inner: MapKind,
}

enum MapKind {
    Q(QLearningMap),
    Td(OffPolicyTdMap),
}

impl SaMap {
    fn update(&self) -> &dyn UpdateMap {
        match &self.inner {
            MapKind::Q(m) => m,
            MapKind::Td(m) => m,
        }
    }

    fn noise(&self) -> &NoiseChain {
        match &self.inner {
            MapKind::Q(m) => m.noise(),
            MapKind::Td(m) => m.noise(),
        }
    }
}

/// Opaque trajectory handle: geometrically spaced error checkpoints and the
/// final iterate of one run.
pub struct SaRecord {
    inner: TrajectoryRecord,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: SaStatus, msg: impl Display) -> SaStatus {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
    status
}

fn guarded(body: impl FnOnce() -> SaStatus) -> SaStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(SaStatus::Panic, "internal panic caught at the C boundary"),
    }
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message from the most recent failed call on this thread, or an empty
/// string if none failed yet. The pointer stays valid until the next failed
/// call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Frees a string returned by this library, e.g. by `sa_mdp_to_json`.
/// Accepts null.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parses an MDP from a JSON object with fields `n_states`, `n_actions`,
/// `gamma`, `reward` (one row per state, one column per action) and
/// `transition` (indexed `[action][state][next_state]`, rows summing to
/// one).
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_from_json(json: *const c_char, out: *mut *mut SaMdp) -> SaStatus {
    guarded(|| {
        let Some(out) = (unsafe { out.as_mut() }) else {
            return fail(SaStatus::NullPointer, "out is null");
        };
        *out = ptr::null_mut();
        if json.is_null() {
            return fail(SaStatus::NullPointer, "json is null");
        }
        let text = match unsafe { CStr::from_ptr(json) }.to_str() {
            Ok(t) => t,
            Err(e) => return fail(SaStatus::InvalidUtf8, e),
        };
        match Mdp::from_json_str(text) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SaMdp { inner }));
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::InvalidArgument, e),
        }
    })
}

/// Draws an MDP with uniform rewards in `[0, 1)` and flat-Dirichlet
/// transition rows, deterministically from `seed`.
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_random(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    out: *mut *mut SaMdp,
) -> SaStatus {
    guarded(|| {
        let Some(out) = (unsafe { out.as_mut() }) else {
            return fail(SaStatus::NullPointer, "out is null");
        };
        *out = ptr::null_mut();
        if n_states == 0 || n_actions == 0 {
            return fail(
                SaStatus::InvalidArgument,
                "n_states and n_actions must be positive",
            );
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return fail(
                SaStatus::InvalidArgument,
                format!("gamma must lie in (0, 1), got {gamma}"),
            );
        }
        let inner = Mdp::random(n_states, n_actions, gamma, seed);
        *out = Box::into_raw(Box::new(SaMdp { inner }));
        SaStatus::Ok
    })
}

/// Serializes an MDP to a JSON string accepted by `sa_mdp_from_json`.
/// Returns null if `mdp` is null; free the result with `sa_string_free`.
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_to_json(mdp: *const SaMdp) -> *mut c_char {
    let Some(mdp) = (unsafe { mdp.as_ref() }) else {
        return ptr::null_mut();
    };
    match catch_unwind(AssertUnwindSafe(|| mdp.inner.to_json_string())) {
        Ok(text) => CString::new(text).map_or(ptr::null_mut(), CString::into_raw),
        Err(_) => ptr::null_mut(),
    }
}

/// Number of states, or 0 if `mdp` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_n_states(mdp: *const SaMdp) -> usize {
    unsafe { mdp.as_ref() }.map_or(0, |m| m.inner.n_states())
}

/// Number of actions, or 0 if `mdp` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_n_actions(mdp: *const SaMdp) -> usize {
    unsafe { mdp.as_ref() }.map_or(0, |m| m.inner.n_actions())
}

/// Discount factor, or NaN if `mdp` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_gamma(mdp: *const SaMdp) -> f64 {
    unsafe { mdp.as_ref() }.map_or(f64::NAN, |m| m.inner.gamma())
}

/// Frees an MDP handle. Accepts null.
#[no_mangle]
pub unsafe extern "C" fn sa_mdp_free(mdp: *mut SaMdp) {
    if !mdp.is_null() {
        drop(unsafe { Box::from_raw(mdp) });
    }
}

fn policy_from_flat(
    mdp: &Mdp,
    probs: *const f64,
    len: usize,
    name: &str,
) -> Result<Policy, SaStatus> {
    let want = mdp.n_states() * mdp.n_actions();
    if probs.is_null() {
        return Ok(Policy::uniform(mdp.n_states(), mdp.n_actions()));
    }
    if len != want {
        return Err(fail(
            SaStatus::InvalidArgument,
            format!("{name} has length {len}, expected n_states * n_actions = {want}"),
        ));
    }
    let flat = unsafe { slice::from_raw_parts(probs, len) };
    Policy::new(mdp.n_states(), mdp.n_actions(), flat.to_vec())
        .map_err(|e| fail(SaStatus::InvalidArgument, e))
}

/// Builds the synchronous Q-learning map for `mdp` under a behavior policy
/// given row-major as `n_states * n_actions` probabilities (rows summing to
/// one). Pass `mu = NULL` for the uniform policy. The behavior policy must
/// play every action with positive probability and its induced state chain
/// must visit every state.
#[no_mangle]
pub unsafe extern "C" fn sa_map_q(
    mdp: *const SaMdp,
    mu: *const f64,
    mu_len: usize,
    out: *mut *mut SaMap,
) -> SaStatus {
    guarded(|| {
        let Some(out) = (unsafe { out.as_mut() }) else {
            return fail(SaStatus::NullPointer, "out is null");
        };
        *out = ptr::null_mut();
        let Some(mdp) = (unsafe { mdp.as_ref() }) else {
            return fail(SaStatus::NullPointer, "mdp is null");
        };
        let mu = match policy_from_flat(&mdp.inner, mu, mu_len, "mu") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match q_learning_map(&mdp.inner, &mu) {
            Ok(map) => {
                *out = Box::into_raw(Box::new(SaMap {
                    inner: MapKind::Q(map),
                }));
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::InvalidArgument, e),
        }
    })
}

/// Builds the off-policy TD(0) evaluation map for target policy `pi` under
/// behavior policy `mu`, both row-major `n_states * n_actions` probability
/// tables; either may be NULL for the uniform policy. Every action `pi`
/// plays must also be played by `mu`.
#[no_mangle]
pub unsafe extern "C" fn sa_map_td(
    mdp: *const SaMdp,
    mu: *const f64,
    mu_len: usize,
    pi: *const f64,
    pi_len: usize,
    out: *mut *mut SaMap,
) -> SaStatus {
    guarded(|| {
        let Some(out) = (unsafe { out.as_mut() }) else {
            return fail(SaStatus::NullPointer, "out is null");
        };
        *out = ptr::null_mut();
        let Some(mdp) = (unsafe { mdp.as_ref() }) else {
            return fail(SaStatus::NullPointer, "mdp is null");
        };
        let mu = match policy_from_flat(&mdp.inner, mu, mu_len, "mu") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let pi = match policy_from_flat(&mdp.inner, pi, pi_len, "pi") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match off_policy_td_map(&mdp.inner, &mu, &pi) {
            Ok(map) => {
                *out = Box::into_raw(Box::new(SaMap {
                    inner: MapKind::Td(map),
                }));
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::InvalidArgument, e),
        }
    })
}

/// Iterate dimension (`n_states * n_actions` for Q-learning, `n_states` for
/// TD), or 0 if `map` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_map_dim(map: *const SaMap) -> usize {
    unsafe { map.as_ref() }.map_or(0, |m| m.update().dim())
}

/// Contraction modulus of the averaged update in its own norm, or NaN if
/// `map` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_map_kappa(map: *const SaMap) -> f64 {
    unsafe { map.as_ref() }.map_or(f64::NAN, |m| m.update().kappa())
}

/// Copies the exact fixed point into `out`, which must hold `len ==
/// sa_map_dim(map)` doubles.
#[no_mangle]
pub unsafe extern "C" fn sa_map_fixed_point(
    map: *const SaMap,
    out: *mut f64,
    len: usize,
) -> SaStatus {
    guarded(|| {
        let Some(map) = (unsafe { map.as_ref() }) else {
            return fail(SaStatus::NullPointer, "map is null");
        };
        if out.is_null() {
            return fail(SaStatus::NullPointer, "out is null");
        }
        let star = map.update().fixed_point();
        if len != star.len() {
            return fail(
                SaStatus::InvalidArgument,
                format!("out has length {len}, expected {}", star.len()),
            );
        }
        unsafe { slice::from_raw_parts_mut(out, len) }.copy_from_slice(star);
        SaStatus::Ok
    })
}

/// Frees an update-map handle. Accepts null.
#[no_mangle]
pub unsafe extern "C" fn sa_map_free(map: *mut SaMap) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

/// Runs `steps` updates of the stochastic approximation iteration from the
/// zero iterate, with the noise chain started from its stationary law.
/// Runs are reproducible: the same map, schedule, steps, and seed give a
/// bit-identical trajectory. Fails with `SA_STATUS_RUN_FAILED` if the
/// iterate leaves the finite range.
#[no_mangle]
pub unsafe extern "C" fn sa_run(
    map: *const SaMap,
    family: SaScheduleFamily,
    c_alpha: f64,
    nu: f64,
    steps: u64,
    seed: u64,
    out: *mut *mut SaRecord,
) -> SaStatus {
    guarded(|| {
        let Some(out) = (unsafe { out.as_mut() }) else {
            return fail(SaStatus::NullPointer, "out is null");
        };
        *out = ptr::null_mut();
        let Some(map) = (unsafe { map.as_ref() }) else {
            return fail(SaStatus::NullPointer, "map is null");
        };
        let schedule = match StepSizeSchedule::new(family.into(), c_alpha, nu) {
            Ok(s) => s,
            Err(e) => return fail(SaStatus::InvalidArgument, e),
        };
        let spec = RunSpec::new(steps, seed);
        match run_sa(map.update(), map.noise(), &schedule, &spec) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SaRecord { inner }));
                SaStatus::Ok
            }
            Err(e) => fail(SaStatus::RunFailed, e),
        }
    })
}

/// Number of recorded checkpoints, or 0 if `record` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_record_num_checkpoints(record: *const SaRecord) -> usize {
    unsafe { record.as_ref() }.map_or(0, |r| r.inner.checkpoints.len())
}

/// Iterate dimension of the recorded run, or 0 if `record` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_record_dim(record: *const SaRecord) -> usize {
    unsafe { record.as_ref() }.map_or(0, |r| r.inner.final_w.len())
}

/// Reads checkpoint `index`: the step count into `t_out` and the squared
/// error `||w_t - w*||^2` (in the map's contraction norm) into
/// `error_sq_out`. Either output pointer may be null to skip that field.
/// Checkpoint times are geometrically spaced and the last one always equals
/// the run length.
#[no_mangle]
pub unsafe extern "C" fn sa_record_checkpoint(
    record: *const SaRecord,
    index: usize,
    t_out: *mut u64,
    error_sq_out: *mut f64,
) -> SaStatus {
    guarded(|| {
        let Some(record) = (unsafe { record.as_ref() }) else {
            return fail(SaStatus::NullPointer, "record is null");
        };
        let Some(cp) = record.inner.checkpoints.get(index) else {
            return fail(
                SaStatus::InvalidArgument,
                format!(
                    "checkpoint index {index} out of range for {} checkpoints",
                    record.inner.checkpoints.len()
                ),
            );
        };
        if let Some(t) = unsafe { t_out.as_mut() } {
            *t = cp.t;
        }
        if let Some(e) = unsafe { error_sq_out.as_mut() } {
            *e = cp.error_sq;
        }
        SaStatus::Ok
    })
}

/// Squared error of the final iterate, or NaN if `record` is null.
#[no_mangle]
pub unsafe extern "C" fn sa_record_final_error_sq(record: *const SaRecord) -> f64 {
    unsafe { record.as_ref() }.map_or(f64::NAN, |r| r.inner.final_error_sq)
}

/// Copies the final iterate into `out`, which must hold `len ==
/// sa_record_dim(record)` doubles.
#[no_mangle]
pub unsafe extern "C" fn sa_record_final_iterate(
    record: *const SaRecord,
    out: *mut f64,
    len: usize,
) -> SaStatus {
    guarded(|| {
        let Some(record) = (unsafe { record.as_ref() }) else {
            return fail(SaStatus::NullPointer, "record is null");
        };
        if out.is_null() {
            return fail(SaStatus::NullPointer, "out is null");
        }
        let w = &record.inner.final_w;
        if len != w.len() {
            return fail(
                SaStatus::InvalidArgument,
                format!("out has length {len}, expected {}", w.len()),
            );
        }
        unsafe { slice::from_raw_parts_mut(out, len) }.copy_from_slice(w);
        SaStatus::Ok
    })
}

/// Frees a trajectory handle. Accepts null.
#[no_mangle]
pub unsafe extern "C" fn sa_record_free(record: *mut SaRecord) {
    if !record.is_null() {
        drop(unsafe { Box::from_raw(record) });
    }
}

/// Computes the first `count` anchor intervals of the step-size schedule.
/// For interval `m` in `0..count`, `anchors_out[m]` receives `t_{m+1}` (the
/// first step index after the interval, with `t_0 = 0`) and
/// `bar_alpha_out[m]` the realized step mass over `[t_m, t_{m+1})`. Either
/// output may be null to skip it. Deterministic in all arguments.
#[no_mangle]
pub unsafe extern "C" fn sa_anchor_table(
    family: SaScheduleFamily,
    c_alpha: f64,
    nu: f64,
    count: usize,
    anchors_out: *mut u64,
    bar_alpha_out: *mut f64,
) -> SaStatus {
    guarded(|| {
        let schedule = match StepSizeSchedule::new(family.into(), c_alpha, nu) {
            Ok(s) => s,
            Err(e) => return fail(SaStatus::InvalidArgument, e),
        };
        let table = match compute_anchors(&schedule, count) {
            Ok(t) => t,
            Err(e) => return fail(SaStatus::InvalidArgument, e),
        };
        if !anchors_out.is_null() {
            let dst = unsafe { slice::from_raw_parts_mut(anchors_out, count) };
            dst.copy_from_slice(&table.anchors[1..=count]);
        }
        if !bar_alpha_out.is_null() {
            let dst = unsafe { slice::from_raw_parts_mut(bar_alpha_out, count) };
            dst.copy_from_slice(&table.bar_alpha[..count]);
        }
        SaStatus::Ok
    })
}
