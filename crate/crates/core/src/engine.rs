//! Stochastic approximation driver.
//!
//! Runs the iteration `w_{t+1} = w_t + alpha_t (H(w_t, Y_{t+1}) - w_t)` for an
//! [`UpdateMap`] `H` driven by a Markov noise chain, recording errors against
//! the known fixed point on a geometric checkpoint grid. A skeleton run
//! additionally splits the noise accumulated over each anchor interval
//! `[t_m, t_{m+1})` against the frozen reference point `w_{t_m}`, with
//! `G(w, y) = H(w, y) - w` and `g(w) = E[G(w, Y)]` under the stationary law:
//!
//! * `z1 = sum alpha_t (G(w_t, Y_{t+1}) - G(w_{t_m}, Y_{t+1}))`: drift from
//!   evaluating the map along the moving iterate instead of the frozen point,
//! * `z2 = sum alpha_t (G(w_{t_m}, Y_{t+1}) - E_m[G(w_{t_m}, Y_{t+1})])`:
//!   frozen-point noise centered at its conditional mean given the chain
//!   state entering the interval (a martingale sum),
//! * `z3 = sum alpha_t (E_m[G(w_{t_m}, Y_{t+1})] - g(w_{t_m}))`: the gap
//!   between that conditional mean and the stationary mean, which geometric
//!   mixing drives to zero.
//!
//! The three parts sum to `z = sum alpha_t (G(w_t, Y_{t+1}) - g(w_{t_m}))` by
//! construction; the decomposition is purely observational and the iterate
//! path of a skeleton run is bit-identical to a plain run under the same seed.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::chain::{ChainError, NoiseChain, TransitionKernel};
use crate::mdp::{
    importance_ratios, induced_triple_chain, triple_stationary, Mdp, MdpError, Policy,
};
use crate::norm::NormTag;
use crate::rng;
use crate::schedule::{SkeletonAnchors, StepSizeSchedule};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("iterate left the finite range at step {t}")]
    NonFinite { t: u64 },
    #[error("start state {given} out of range for a noise chain with {n} states")]
    BadStart { given: usize, n: usize },
    #[error("checkpoint ratio must exceed 1, got {0}")]
    BadCheckpointRatio(f64),
    #[error("anchor table ends at t = {last} but the run covers {steps} steps")]
    UncoveredHorizon { last: u64, steps: u64 },
    #[error("behavior policy never plays action {action} in state {state}")]
    NoExploration { state: usize, action: usize },
    #[error("state {state} has zero stationary mass under the behavior policy")]
    UnreachableState { state: usize },
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// A fixed-point update rule `H` together with its stationary expectation `h`
/// and the exact fixed point of `h`.
pub trait UpdateMap: Sync {
    /// Iterate dimension.
    fn dim(&self) -> usize;

    /// Writes `H(w, y)` into `out` for noise state `y`.
    fn apply(&self, w: &[f64], y: usize, out: &mut [f64]);

    /// Writes `h(w) = E[H(w, Y)]` under the stationary noise law into `out`.
    fn expected(&self, w: &[f64], out: &mut [f64]);

    /// Fixed point `w*` of `h`.
    fn fixed_point(&self) -> &[f64];

    /// Contraction modulus of `h` under [`Self::contraction_norm`].
    fn kappa(&self) -> f64;

    /// Norm in which `h` contracts and errors are measured.
    fn contraction_norm(&self) -> NormTag {
        NormTag::Sup
    }
}

/// How the noise chain is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseStart {
    /// Draw `Y_0` from the stationary law (consumes one uniform variate).
    Stationary,
    /// Start at a fixed chain state (cold start; consumes no variate).
    Fixed(usize),
}

/// Run parameters shared by plain and skeleton runs.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub steps: u64,
    /// Master seed; see [`crate::rng`] for the stream convention.
    pub seed: u64,
    /// Ensemble member index, or `None` for a standalone run.
    pub member: Option<u64>,
    pub start: NoiseStart,
    /// Geometric spacing of error checkpoints; consecutive checkpoint times
    /// grow by at least this factor (and by at least one step).
    pub checkpoint_ratio: f64,
    /// Initial iterate; zero if absent.
    pub w0: Option<Vec<f64>>,
}

impl RunSpec {
    pub fn new(steps: u64, seed: u64) -> Self {
        Self {
            steps,
            seed,
            member: None,
            start: NoiseStart::Stationary,
            checkpoint_ratio: 1.1,
            w0: None,
        }
    }

    pub fn member(mut self, index: u64) -> Self {
        self.member = Some(index);
        self
    }

    pub fn start(mut self, start: NoiseStart) -> Self {
        self.start = start;
        self
    }

    pub fn checkpoint_ratio(mut self, ratio: f64) -> Self {
        self.checkpoint_ratio = ratio;
        self
    }

    pub fn w0(mut self, w0: Vec<f64>) -> Self {
        self.w0 = Some(w0);
        self
    }
}

/// Iterate snapshot at a checkpoint time.
#[derive(Clone, Debug, Serialize)]
pub struct Checkpoint {
    pub t: u64,
    pub w: Vec<f64>,
    /// Squared error `‖w_t - w*‖^2` in the map's contraction norm.
    pub error_sq: f64,
}

/// Per-interval record of a skeleton run.
#[derive(Clone, Debug, Serialize)]
pub struct IntervalLog {
    pub m: usize,
    pub t_start: u64,
    pub t_end: u64,
    /// Realized step mass over the interval.
    pub bar_alpha: f64,
    /// Chain state entering the interval.
    pub y_start: usize,
    /// Iterate at the interval start.
    pub w_start: Vec<f64>,
    pub error_sq_at_start: f64,
    /// Accumulated noise `sum alpha_t (G(w_t, Y_{t+1}) - g(w_{t_m}))` against
    /// the frozen stationary mean.
    pub z: Vec<f64>,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
}

/// Output of [`run_sa`] / [`run_skeleton`].
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub seed: u64,
    pub member: Option<u64>,
    pub schedule: StepSizeSchedule,
    pub steps: u64,
    pub checkpoints: Vec<Checkpoint>,
    pub interval_log: Option<Vec<IntervalLog>>,
    pub final_w: Vec<f64>,
    pub final_error_sq: f64,
}

impl TrajectoryRecord {
    /// `(t, error_sq)` pairs over the checkpoint grid.
    pub fn error_curve(&self) -> Vec<(u64, f64)> {
        self.checkpoints.iter().map(|c| (c.t, c.error_sq)).collect()
    }
}

/// Runs the stochastic approximation iteration.
pub fn run_sa<M: UpdateMap + ?Sized>(
    map: &M,
    noise: &NoiseChain,
    schedule: &StepSizeSchedule,
    spec: &RunSpec,
) -> Result<TrajectoryRecord, EngineError> {
    run_core(map, noise, schedule, spec, None)
}

/// Runs the iteration while logging the noise decomposition over each anchor
/// interval that completes within the run.
///
/// The iterate path is bit-identical to [`run_sa`] under the same spec; the
/// decomposition never touches the iterate or the generator.
pub fn run_skeleton<M: UpdateMap + ?Sized>(
    map: &M,
    noise: &NoiseChain,
    schedule: &StepSizeSchedule,
    anchors: &SkeletonAnchors,
    spec: &RunSpec,
) -> Result<TrajectoryRecord, EngineError> {
    if !anchors.covers(spec.steps) {
        return Err(EngineError::UncoveredHorizon {
            last: anchors.last_anchor(),
            steps: spec.steps,
        });
    }
    run_core(map, noise, schedule, spec, Some(&anchors.anchors))
}

fn run_core<M: UpdateMap + ?Sized>(
    map: &M,
    noise: &NoiseChain,
    schedule: &StepSizeSchedule,
    spec: &RunSpec,
    boundaries: Option<&[u64]>,
) -> Result<TrajectoryRecord, EngineError> {
    if !(spec.checkpoint_ratio > 1.0) {
        return Err(EngineError::BadCheckpointRatio(spec.checkpoint_ratio));
    }
    let dim = map.dim();
    let n_y = noise.len();
    let norm = map.contraction_norm();
    let star = map.fixed_point().to_vec();
    debug_assert_eq!(star.len(), dim);

    let mut rng = match spec.member {
        None => rng::single(spec.seed),
        Some(i) => rng::ensemble_member(spec.seed, i),
    };
    let mut y = match spec.start {
        NoiseStart::Stationary => noise.sample_stationary(rng.random()),
        NoiseStart::Fixed(y0) => {
            if y0 >= n_y {
                return Err(EngineError::BadStart { given: y0, n: n_y });
            }
            y0
        }
    };

    let mut w = match &spec.w0 {
        Some(w0) => {
            debug_assert_eq!(w0.len(), dim);
            w0.clone()
        }
        None => vec![0.0; dim],
    };
    // Abort while the squared error is still representable: beyond this
    // per-coordinate distance, error_sq overflows under either norm.
    let err_cap = (f64::MAX / dim as f64).sqrt();
    let grid = checkpoint_grid(spec.steps, spec.checkpoint_ratio);
    let mut grid_idx = 0usize;
    let mut checkpoints = Vec::with_capacity(grid.len());
    let mut h_buf = vec![0.0; dim];
    let mut skel = boundaries.map(|b| SkeletonTracker::new(b, spec.steps, dim, noise.kernel()));
    let mut intervals: Vec<IntervalLog> = Vec::new();

    for t in 0..spec.steps {
        if let Some(st) = skel.as_mut() {
            st.roll(t, &w, y, map, norm, &star, &mut intervals);
        }
        if grid_idx < grid.len() && grid[grid_idx] == t {
            checkpoints.push(Checkpoint {
                t,
                w: w.clone(),
                error_sq: sq(norm.eval_diff(&w, &star)),
            });
            grid_idx += 1;
        }
        let alpha = schedule.step_size(t);
        let u: f64 = rng.random();
        let y_next = noise.sample_next(y, u);
        map.apply(&w, y_next, &mut h_buf);
        if let Some(st) = skel.as_mut() {
            st.absorb(alpha, &w, y_next, &h_buf);
        }
        let mut in_range = true;
        for i in 0..dim {
            w[i] += alpha * (h_buf[i] - w[i]);
            in_range &= w[i].is_finite() && (w[i] - star[i]).abs() <= err_cap;
        }
        if !in_range {
            return Err(EngineError::NonFinite { t });
        }
        y = y_next;
    }
    if let Some(st) = skel.as_mut() {
        st.roll(spec.steps, &w, y, map, norm, &star, &mut intervals);
    }
    let final_error_sq = sq(norm.eval_diff(&w, &star));
    checkpoints.push(Checkpoint {
        t: spec.steps,
        w: w.clone(),
        error_sq: final_error_sq,
    });

    Ok(TrajectoryRecord {
        seed: spec.seed,
        member: spec.member,
        schedule: *schedule,
        steps: spec.steps,
        checkpoints,
        interval_log: skel.map(|_| intervals),
        final_w: w,
        final_error_sq,
    })
}

fn sq(x: f64) -> f64 {
    x * x
}

/// `{0} ∪ {t_k} ∪ {steps}` with `t_{k+1} = max(t_k + 1, ceil(t_k * ratio))`.
fn checkpoint_grid(steps: u64, ratio: f64) -> Vec<u64> {
    let mut grid = vec![0u64];
    let mut t = 1u64;
    while t < steps {
        grid.push(t);
        let scaled = (t as f64 * ratio).ceil() as u64;
        t = scaled.max(t + 1);
    }
    grid.push(steps);
    grid.dedup();
    grid
}

/// Per-interval accumulator state for a skeleton run. Logging only: nothing
/// here feeds back into the iterate or the random stream.
struct SkeletonTracker<'a> {
    /// Anchor prefix with values `<= steps`.
    boundaries: &'a [u64],
    kernel: &'a TransitionKernel,
    cur: usize,
    open: bool,
    w_start: Vec<f64>,
    y_start: usize,
    /// `G(w_start, y)` for every chain state, row-major `y * dim + i`.
    frozen: Vec<f64>,
    /// `g(w_start)`.
    g_start: Vec<f64>,
    /// Conditional law of the current chain state given the interval start.
    dist: Vec<f64>,
    dist_next: Vec<f64>,
    cond: Vec<f64>,
    bar_alpha: f64,
    z: Vec<f64>,
    z1: Vec<f64>,
    z2: Vec<f64>,
    z3: Vec<f64>,
}

impl<'a> SkeletonTracker<'a> {
    fn new(anchors: &'a [u64], steps: u64, dim: usize, kernel: &'a TransitionKernel) -> Self {
        let cut = anchors.partition_point(|&a| a <= steps);
        let n_y = kernel.len();
        Self {
            boundaries: &anchors[..cut],
            kernel,
            cur: 0,
            open: false,
            w_start: vec![0.0; dim],
            y_start: 0,
            frozen: vec![0.0; n_y * dim],
            g_start: vec![0.0; dim],
            dist: vec![0.0; n_y],
            dist_next: vec![0.0; n_y],
            cond: vec![0.0; dim],
            bar_alpha: 0.0,
            z: vec![0.0; dim],
            z1: vec![0.0; dim],
            z2: vec![0.0; dim],
            z3: vec![0.0; dim],
        }
    }

    /// Closes the interval ending at `t` and opens the one starting there.
    #[allow(clippy::too_many_arguments)]
    fn roll<M: UpdateMap + ?Sized>(
        &mut self,
        t: u64,
        w: &[f64],
        y: usize,
        map: &M,
        norm: NormTag,
        star: &[f64],
        out: &mut Vec<IntervalLog>,
    ) {
        if self.open && self.cur + 1 < self.boundaries.len() && self.boundaries[self.cur + 1] == t {
            out.push(IntervalLog {
                m: self.cur,
                t_start: self.boundaries[self.cur],
                t_end: t,
                bar_alpha: self.bar_alpha,
                y_start: self.y_start,
                w_start: self.w_start.clone(),
                error_sq_at_start: sq(norm.eval_diff(&self.w_start, star)),
                z: self.z.clone(),
                z1: self.z1.clone(),
                z2: self.z2.clone(),
                z3: self.z3.clone(),
            });
            self.cur += 1;
            self.open = false;
        }
        if !self.open && self.cur + 1 < self.boundaries.len() && self.boundaries[self.cur] == t {
            self.open_at(w, y, map);
        }
    }

    fn open_at<M: UpdateMap + ?Sized>(&mut self, w: &[f64], y: usize, map: &M) {
        let dim = w.len();
        self.w_start.copy_from_slice(w);
        self.y_start = y;
        for state in 0..self.kernel.len() {
            let row = &mut self.frozen[state * dim..(state + 1) * dim];
            map.apply(w, state, row);
            for i in 0..dim {
                row[i] -= w[i];
            }
        }
        map.expected(w, &mut self.g_start);
        for i in 0..dim {
            self.g_start[i] -= w[i];
        }
        self.dist.fill(0.0);
        self.dist[y] = 1.0;
        self.bar_alpha = 0.0;
        self.z.fill(0.0);
        self.z1.fill(0.0);
        self.z2.fill(0.0);
        self.z3.fill(0.0);
        self.open = true;
    }

    /// Folds one step into the open interval; `w` and `h` are the pre-update
    /// iterate and `H(w, y_next)`.
    fn absorb(&mut self, alpha: f64, w: &[f64], y_next: usize, h: &[f64]) {
        if !self.open {
            return;
        }
        let dim = w.len();
        let n_y = self.kernel.len();

        // Advance the conditional law one transition, then read it.
        self.dist_next.fill(0.0);
        for from in 0..n_y {
            let p = self.dist[from];
            if p == 0.0 {
                continue;
            }
            let row = self.kernel.row(from);
            for (to, &q) in row.iter().enumerate() {
                self.dist_next[to] += p * q;
            }
        }
        std::mem::swap(&mut self.dist, &mut self.dist_next);
        self.cond.fill(0.0);
        for state in 0..n_y {
            let p = self.dist[state];
            if p == 0.0 {
                continue;
            }
            let row = &self.frozen[state * dim..(state + 1) * dim];
            for i in 0..dim {
                self.cond[i] += p * row[i];
            }
        }

        let frozen_sample = &self.frozen[y_next * dim..(y_next + 1) * dim];
        for i in 0..dim {
            let g_cur = h[i] - w[i];
            self.z[i] += alpha * (g_cur - self.g_start[i]);
            self.z1[i] += alpha * (g_cur - frozen_sample[i]);
            self.z2[i] += alpha * (frozen_sample[i] - self.cond[i]);
            self.z3[i] += alpha * (self.cond[i] - self.g_start[i]);
        }
        self.bar_alpha += alpha;
    }
}

/// Synchronous Q-learning update driven by the behavior-policy triple chain:
/// the sampled `(s, a, s')` coordinate moves toward its one-step optimality
/// target and every other coordinate is left alone.
pub struct QLearningMap {
    mdp: Mdp,
    triples: Vec<(usize, usize, usize)>,
    noise: NoiseChain,
    /// Stationary visit probability of each `(s, a)` pair.
    pair_weight: Vec<f64>,
    q_star: Vec<f64>,
    kappa: f64,
}

/// Builds the Q-learning map for `mdp` under behavior policy `mu`.
///
/// Requires `mu` to play every action with positive probability in every
/// state and the induced state chain to visit every state, so the expected
/// update contracts with modulus `1 - (1-gamma) * min_{s,a} d(s,a) < 1`.
pub fn q_learning_map(mdp: &Mdp, mu: &Policy) -> Result<QLearningMap, EngineError> {
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            if mu.prob(s, a) <= 0.0 {
                return Err(EngineError::NoExploration { state: s, action: a });
            }
        }
    }
    let triple = induced_triple_chain(mdp, mu)?;
    let stat = triple_stationary(mdp, &triple)?;
    let na = mdp.n_actions();
    let mut pair_weight = vec![0.0; mdp.n_states() * na];
    for (k, &(s, a, _)) in triple.triples.iter().enumerate() {
        pair_weight[s * na + a] += stat.probs[k];
    }
    let d_min = pair_weight.iter().copied().fold(f64::INFINITY, f64::min);
    if d_min <= 0.0 {
        let state = pair_weight
            .iter()
            .position(|&p| p <= 0.0)
            .map(|i| i / na)
            .unwrap_or(0);
        return Err(EngineError::UnreachableState { state });
    }
    let kappa = 1.0 - (1.0 - mdp.gamma()) * d_min;
    let q_star = mdp.solve_q_star(1e-12);
    let noise = NoiseChain::new(triple.kernel.clone())?;
    Ok(QLearningMap {
        mdp: mdp.clone(),
        triples: triple.triples,
        noise,
        pair_weight,
        q_star,
        kappa,
    })
}

impl QLearningMap {
    pub fn noise(&self) -> &NoiseChain {
        &self.noise
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    /// Stationary visit probability of each `(s, a)` pair.
    pub fn pair_weight(&self) -> &[f64] {
        &self.pair_weight
    }
}

impl UpdateMap for QLearningMap {
    fn dim(&self) -> usize {
        self.mdp.n_states() * self.mdp.n_actions()
    }

    fn apply(&self, w: &[f64], y: usize, out: &mut [f64]) {
        out.copy_from_slice(w);
        let (s, a, sp) = self.triples[y];
        let na = self.mdp.n_actions();
        let mut best = f64::NEG_INFINITY;
        for ap in 0..na {
            best = best.max(w[sp * na + ap]);
        }
        let idx = s * na + a;
        out[idx] = w[idx] + (self.mdp.reward(s, a) + self.mdp.gamma() * best - w[idx]);
    }

    fn expected(&self, w: &[f64], out: &mut [f64]) {
        self.mdp.bellman_optimality(w, out);
        for i in 0..w.len() {
            out[i] = w[i] + self.pair_weight[i] * (out[i] - w[i]);
        }
    }

    fn fixed_point(&self) -> &[f64] {
        &self.q_star
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Off-policy temporal-difference update for evaluating `pi` from a chain
/// generated by `mu`, with importance ratios correcting the action law: the
/// visited state moves toward its reweighted one-step target.
pub struct OffPolicyTdMap {
    mdp: Mdp,
    pi: Policy,
    triples: Vec<(usize, usize, usize)>,
    noise: NoiseChain,
    rho: Vec<f64>,
    rho_max: f64,
    /// Stationary visit probability of each state under `mu`.
    state_weight: Vec<f64>,
    v_pi: Vec<f64>,
    kappa: f64,
}

/// Builds the off-policy TD map; `pi` must be covered by `mu` (no action
/// with `pi > 0` and `mu = 0`) and the `mu`-chain must visit every state.
pub fn off_policy_td_map(mdp: &Mdp, mu: &Policy, pi: &Policy) -> Result<OffPolicyTdMap, EngineError> {
    let ratios = importance_ratios(pi, mu)?;
    let triple = induced_triple_chain(mdp, mu)?;
    let stat = triple_stationary(mdp, &triple)?;
    let d_min = stat
        .state_marginal
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if d_min <= 0.0 {
        let state = stat
            .state_marginal
            .iter()
            .position(|&p| p <= 0.0)
            .unwrap_or(0);
        return Err(EngineError::UnreachableState { state });
    }
    let kappa = 1.0 - (1.0 - mdp.gamma()) * d_min;
    let v_pi = mdp.solve_v_pi(pi)?;
    let noise = NoiseChain::new(triple.kernel.clone())?;
    Ok(OffPolicyTdMap {
        mdp: mdp.clone(),
        pi: pi.clone(),
        triples: triple.triples,
        noise,
        rho: ratios.ratios,
        rho_max: ratios.rho_max,
        state_weight: stat.state_marginal,
        v_pi,
        kappa,
    })
}

impl OffPolicyTdMap {
    pub fn noise(&self) -> &NoiseChain {
        &self.noise
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    /// Stationary visit probability of each state.
    pub fn state_weight(&self) -> &[f64] {
        &self.state_weight
    }
}

impl UpdateMap for OffPolicyTdMap {
    fn dim(&self) -> usize {
        self.mdp.n_states()
    }

    fn apply(&self, w: &[f64], y: usize, out: &mut [f64]) {
        out.copy_from_slice(w);
        let (s, a, sp) = self.triples[y];
        let rho = self.rho[s * self.mdp.n_actions() + a];
        out[s] = w[s] + rho * (self.mdp.reward(s, a) + self.mdp.gamma() * w[sp] - w[s]);
    }

    fn expected(&self, w: &[f64], out: &mut [f64]) {
        self.mdp.bellman_policy(&self.pi, w, out);
        for s in 0..w.len() {
            out[s] = w[s] + self.state_weight[s] * (out[s] - w[s]);
        }
    }

    fn fixed_point(&self) -> &[f64] {
        &self.v_pi
    }

    fn kappa(&self) -> f64 {
        self.kappa
    }
}

/// Largest observed ratio `‖f(a) - f(b)‖ / ‖a - b‖` over random pairs whose
/// coordinates are uniform at a scale drawn log-uniformly from `[0.01, 100]`.
pub fn measured_modulus<F>(dim: usize, mut f: F, norm: NormTag, pairs: usize, seed: u64) -> f64
where
    F: FnMut(&[f64], &mut [f64]),
{
    let mut rng = rng::single(seed);
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut fa = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        fill_random(&mut rng, &mut a);
        fill_random(&mut rng, &mut b);
        let gap = norm.eval_diff(&a, &b);
        if gap < 1e-12 {
            continue;
        }
        f(&a, &mut fa);
        f(&b, &mut fb);
        worst = worst.max(norm.eval_diff(&fa, &fb) / gap);
    }
    worst
}

/// [`measured_modulus`] of the map's expected update `h`.
pub fn measured_contraction<M: UpdateMap + ?Sized>(map: &M, pairs: usize, seed: u64) -> f64 {
    measured_modulus(
        map.dim(),
        |w, out| map.expected(w, out),
        map.contraction_norm(),
        pairs,
        seed,
    )
}

/// Largest observed per-noise-state Lipschitz ratio of `w -> H(w, y)`.
pub fn measured_step_lipschitz<M: UpdateMap + ?Sized>(
    map: &M,
    noise_states: usize,
    pairs: usize,
    seed: u64,
) -> f64 {
    let dim = map.dim();
    let norm = map.contraction_norm();
    let mut rng = rng::single(seed);
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    let mut fa = vec![0.0; dim];
    let mut fb = vec![0.0; dim];
    let mut worst = 0.0_f64;
    for _ in 0..pairs {
        fill_random(&mut rng, &mut a);
        fill_random(&mut rng, &mut b);
        let gap = norm.eval_diff(&a, &b);
        if gap < 1e-12 {
            continue;
        }
        for y in 0..noise_states {
            map.apply(&a, y, &mut fa);
            map.apply(&b, y, &mut fb);
            worst = worst.max(norm.eval_diff(&fa, &fb) / gap);
        }
    }
    worst
}

fn fill_random<R: Rng>(rng: &mut R, out: &mut [f64]) {
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    for x in out.iter_mut() {
        *x = scale * rng.random_range(-1.0..1.0);
    }
}
