//! Trajectory-level and ensemble-level convergence checks.
//!
//! Three consumers of the engine's error curves live here:
//!
//! * [`fit_as_rate`]: turns a single run into a weighted-error envelope
//!   `t -> sup_{s >= t} t_weight(s) * error^2(s)` and a pass/fail decay
//!   verdict, plus a log-log slope for diagnostics;
//! * [`concentration_ensemble`]: runs many seeds, reduces each to its
//!   maximal shape-weighted error, and fits a polylog tail bound
//!   `scale * shape(t) * [ln(1/delta) + c' + L(t)]^C` over the ensemble;
//! * [`lp_moment_curve`]: empirical `E error^{2p}` curves with standard
//!   errors at shared checkpoints.
//!
//! Ensembles fan out one seed per task and reduce sequentially in seed
//! order, so summaries are bitwise independent of worker count.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::chain::NoiseChain;
use crate::engine::{run_sa, EngineError, RunSpec, TrajectoryRecord, UpdateMap};
use crate::schedule::{ScheduleFamily, StepSizeSchedule};

/// Confidence levels the concentration summary is evaluated at.
pub const DELTA_GRID: [f64; 6] = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01];
/// Minimum ensemble size for quantile statements.
pub const MIN_SEEDS: u64 = 100;
/// Checkpoint span (max time over min positive time) counted as one decade.
const DECADE: f64 = 10.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("operation requires the {need} step-size family")]
    WrongSchedule { need: &'static str },
    #[error("zeta = {zeta} outside (0, {limit}) for this schedule")]
    BadZeta { zeta: f64, limit: f64 },
    #[error("checkpoints span a factor of {span:.1} but at least {need:.0} is required")]
    InsufficientCheckpoints { span: f64, need: f64 },
    #[error("ensemble has {got} seeds but at least {need} are required")]
    TooFewSeeds { got: u64, need: u64 },
    #[error("moment order must be at least 2, got {0}")]
    BadMomentOrder(u32),
    #[error("ensemble records disagree on the checkpoint grid")]
    RaggedEnsemble,
    #[error("seed {member} diverged: {source}")]
    DivergentSeed { member: u64, source: EngineError },
    #[error(transparent)]
    Schedule(#[from] crate::schedule::ScheduleError),
}

/// Weighted-error envelope of one run and its decay verdict.
#[derive(Clone, Debug, Serialize)]
pub struct RateFit {
    /// Exponent of the time weight.
    pub zeta: f64,
    /// Log exponent of the weight on the `nu = 1` branch, absent otherwise.
    pub nu1: Option<f64>,
    /// `(t, sup over checkpoints s >= t of weight(s) error^2(s))`;
    /// non-increasing in `t` by construction.
    pub envelope: Vec<(u64, f64)>,
    /// Least-squares slope of `ln error^2` against `ln t` over the final two
    /// decades; NaN when too few usable points exist.
    pub slope: f64,
    /// Decay verdict: on the power branch the envelope must at least halve
    /// over the final decade; on the `nu = 1` branch it must be strictly
    /// decreasing across the final two decade marks.
    pub verdict: bool,
}

impl RateFit {
    /// Envelope value at the first checkpoint no earlier than `t` (the last
    /// value if `t` lies beyond the grid).
    pub fn envelope_at(&self, t: u64) -> f64 {
        match self.envelope.iter().find(|(s, _)| *s >= t) {
            Some(&(_, v)) => v,
            None => self.envelope.last().map(|&(_, v)| v).unwrap_or(f64::NAN),
        }
    }

    /// True when every decade step over the trailing `decades` shrinks the
    /// envelope by at least `factor`.
    pub fn shrinks_per_decade(&self, decades: u32, factor: f64) -> bool {
        let Some(&(t_last, _)) = self.envelope.last() else {
            return false;
        };
        let mut t_hi = t_last;
        for _ in 0..decades {
            let t_lo = t_hi / 10;
            if t_lo == 0 {
                return false;
            }
            if !(self.envelope_at(t_hi) <= factor * self.envelope_at(t_lo)) {
                return false;
            }
            t_hi = t_lo;
        }
        true
    }
}

/// Fits the weighted-error envelope of a polynomial-step run with the
/// default log exponent on the `nu = 1` branch.
pub fn fit_as_rate(record: &TrajectoryRecord, zeta: f64) -> Result<RateFit, AnalysisError> {
    fit_as_rate_with(record, zeta, None)
}

/// As [`fit_as_rate`] with an explicit log exponent for the `nu = 1` weight.
pub fn fit_as_rate_with(
    record: &TrajectoryRecord,
    zeta: f64,
    nu1_choice: Option<f64>,
) -> Result<RateFit, AnalysisError> {
    if record.schedule.family() != ScheduleFamily::Poly {
        return Err(AnalysisError::WrongSchedule { need: "poly" });
    }
    let nu = record.schedule.nu();
    let log_branch = nu == 1.0;
    let nu1 = if log_branch {
        Some(record.schedule.regime_parameters(nu1_choice)?.0)
    } else {
        let limit = 1.5 * nu - 1.0;
        if !(zeta > 0.0 && zeta < limit) {
            return Err(AnalysisError::BadZeta { zeta, limit });
        }
        None
    };
    if log_branch && !(zeta > 0.0 && zeta.is_finite()) {
        return Err(AnalysisError::BadZeta { zeta, limit: f64::INFINITY });
    }

    let curve: Vec<(u64, f64)> = record
        .checkpoints
        .iter()
        .filter(|c| c.t >= 1)
        .map(|c| (c.t, c.error_sq))
        .collect();
    let need = DECADE.powi(3);
    let span = match (curve.first(), curve.last()) {
        (Some(&(t0, _)), Some(&(t1, _))) if t0 > 0 => t1 as f64 / t0 as f64,
        _ => 0.0,
    };
    if span < need {
        return Err(AnalysisError::InsufficientCheckpoints { span, need });
    }

    let weight = |t: u64| -> f64 {
        let tf = t as f64;
        match nu1 {
            Some(n1) => (zeta * tf.ln().powf(1.0 / (1.0 + n1))).exp(),
            None => tf.powf(zeta),
        }
    };
    let mut envelope: Vec<(u64, f64)> = curve
        .iter()
        .map(|&(t, e)| (t, weight(t) * e))
        .collect();
    let mut running = f64::NEG_INFINITY;
    for entry in envelope.iter_mut().rev() {
        running = running.max(entry.1);
        entry.1 = running;
    }

    let t_last = curve.last().unwrap().0;
    let tail_from = (t_last as f64 / DECADE.powi(2)).max(1.0);
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .filter(|&&(t, e)| t as f64 >= tail_from && e > 0.0)
        .map(|&(t, e)| ((t as f64).ln(), e.ln()))
        .collect();
    let slope = least_squares_slope(&pts);

    let fit = RateFit {
        zeta,
        nu1,
        envelope,
        slope,
        verdict: false,
    };
    let verdict = if log_branch {
        let e2 = fit.envelope_at(t_last / 100);
        let e1 = fit.envelope_at(t_last / 10);
        let e0 = fit.envelope_at(t_last);
        t_last >= 100 && e0 < e1 && e1 < e2
    } else {
        fit.shrinks_per_decade(1, 0.5)
    };
    Ok(RateFit { verdict, ..fit })
}

fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for &(x, y) in pts {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        f64::NAN
    } else {
        sxy / sxx
    }
}

/// Runs `n_seeds` independent members of the same configuration and returns
/// the outcomes in seed order. `jobs = 0` uses the process-wide worker pool;
/// any other value builds a pool of exactly that many workers. The output is
/// identical for every `jobs` value.
pub fn run_ensemble<M: UpdateMap + ?Sized>(
    map: &M,
    noise: &NoiseChain,
    schedule: &StepSizeSchedule,
    base: &RunSpec,
    n_seeds: u64,
    jobs: usize,
) -> Vec<Result<TrajectoryRecord, EngineError>> {
    let run_one = |i: u64| run_sa(map, noise, schedule, &base.clone().member(i));
    match jobs {
        1 => (0..n_seeds).map(run_one).collect(),
        0 => (0..n_seeds).into_par_iter().map(run_one).collect(),
        j => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j)
                .build()
                .expect("worker pool");
            pool.install(|| (0..n_seeds).into_par_iter().map(run_one).collect())
        }
    }
}

/// Ensemble tail summary: per-seed maximal shape-weighted errors, their
/// quantiles, and a fitted polylog dominance bound.
#[derive(Clone, Debug, Serialize)]
pub struct EnsembleSummary {
    pub n_seeds: u64,
    /// Step-size exponent the shape function is built from.
    pub nu: f64,
    /// `max_t error^2(t) / shape(t)` per seed; NaN marks a divergent seed.
    pub per_seed_max: Vec<f64>,
    /// Seed indices whose run left the finite range.
    pub divergent: Vec<u64>,
    pub delta_grid: Vec<f64>,
    /// Empirical `(1 - delta)`-quantiles of the per-seed maxima;
    /// non-decreasing as `delta` shrinks.
    pub quantiles: Vec<f64>,
    /// Least-squares slope of `ln quantile` against `ln ln(1/delta)`.
    pub slope: f64,
    /// Integer exponent of the fitted bracket, at least 1.
    pub c_ind: u32,
    /// Additive offset inside the bracket.
    pub c_prime: f64,
    /// Smallest scale whose bound dominates a `(1 - delta)`-fraction of
    /// seeds at every grid level.
    pub scale: f64,
    /// Fraction of seeds fully dominated at each grid level.
    pub coverage: Vec<f64>,
    /// All seeds finite and every coverage at least `1 - delta`.
    pub verdict: bool,
}

/// Decay shape `exp(-ln^{1-nu}(t+1) / (1-nu))` of the slow-schedule tail
/// bound.
pub fn shape_weight(nu: f64, t: u64) -> f64 {
    let l = ((t + 1) as f64).ln();
    (-(l.powf(1.0 - nu)) / (1.0 - nu)).exp()
}

/// Bracket `ln(1/delta) + c' + ln^{1-nu}(t+1)/(1-nu)` of the tail bound.
fn bracket(nu: f64, c_prime: f64, delta: f64, t: u64) -> f64 {
    let l = ((t + 1) as f64).ln();
    (1.0 / delta).ln() + c_prime + l.powf(1.0 - nu) / (1.0 - nu)
}

/// Empirical `(1 - delta)`-quantile of an ascending-sorted sample.
fn upper_quantile(sorted: &[f64], delta: f64) -> f64 {
    let n = sorted.len();
    let idx = (((1.0 - delta) * n as f64).ceil() as usize).saturating_sub(1);
    sorted[idx.min(n - 1)]
}

/// Runs a slow-schedule ensemble and fits the maximal-error tail bound.
///
/// Per seed the statistic is `M = max_t error^2(t) / shape(t)` over the
/// checkpoint grid; divergent seeds are recorded, excluded from quantiles,
/// and fail the verdict. The fitted bound at level `delta` is
/// `scale * shape(t) * bracket(delta, t)^c_ind` with `c_prime = 1`.
pub fn concentration_ensemble<M: UpdateMap + ?Sized>(
    map: &M,
    noise: &NoiseChain,
    schedule: &StepSizeSchedule,
    n_seeds: u64,
    steps: u64,
    master_seed: u64,
    jobs: usize,
) -> Result<EnsembleSummary, AnalysisError> {
    concentration_with_grid(
        map,
        noise,
        schedule,
        n_seeds,
        steps,
        master_seed,
        jobs,
        &DELTA_GRID,
    )
}

/// [`concentration_ensemble`] over a caller-chosen confidence grid; levels
/// must lie in `(0, 1)` and decrease strictly.
#[allow(clippy::too_many_arguments)]
pub fn concentration_with_grid<M: UpdateMap + ?Sized>(
    map: &M,
    noise: &NoiseChain,
    schedule: &StepSizeSchedule,
    n_seeds: u64,
    steps: u64,
    master_seed: u64,
    jobs: usize,
    deltas: &[f64],
) -> Result<EnsembleSummary, AnalysisError> {
    if schedule.family() != ScheduleFamily::PolyLog {
        return Err(AnalysisError::WrongSchedule { need: "polylog" });
    }
    if n_seeds < MIN_SEEDS {
        return Err(AnalysisError::TooFewSeeds {
            got: n_seeds,
            need: MIN_SEEDS,
        });
    }
    debug_assert!(deltas.windows(2).all(|w| w[1] < w[0]));
    debug_assert!(deltas.iter().all(|d| (0.0..1.0).contains(d) && *d > 0.0));
    let nu = schedule.nu();
    let base = RunSpec::new(steps, master_seed);
    let outcomes = run_ensemble(map, noise, schedule, &base, n_seeds, jobs);

    let mut per_seed_max = Vec::with_capacity(outcomes.len());
    let mut divergent = Vec::new();
    let mut kept: Vec<&TrajectoryRecord> = Vec::with_capacity(outcomes.len());
    for (i, outcome) in outcomes.iter().enumerate() {
        match outcome {
            Ok(rec) => {
                let m = rec
                    .checkpoints
                    .iter()
                    .map(|c| c.error_sq / shape_weight(nu, c.t))
                    .fold(0.0_f64, f64::max);
                per_seed_max.push(m);
                kept.push(rec);
            }
            Err(_) => {
                per_seed_max.push(f64::NAN);
                divergent.push(i as u64);
            }
        }
    }

    let mut sorted: Vec<f64> = per_seed_max.iter().copied().filter(|m| m.is_finite()).collect();
    sorted.sort_unstable_by(f64::total_cmp);
    let (quantiles, slope, c_ind, scale, coverage, verdict);
    if sorted.is_empty() {
        quantiles = vec![f64::NAN; deltas.len()];
        slope = f64::NAN;
        c_ind = 1;
        scale = f64::NAN;
        coverage = vec![0.0; deltas.len()];
        verdict = false;
    } else {
        quantiles = deltas
            .iter()
            .map(|&d| upper_quantile(&sorted, d))
            .collect::<Vec<f64>>();
        let pts: Vec<(f64, f64)> = deltas
            .iter()
            .zip(&quantiles)
            .filter(|&(_, &q)| q > 0.0)
            .map(|(&d, &q)| ((1.0 / d).ln().ln(), q.ln()))
            .collect();
        let s = least_squares_slope(&pts);
        slope = if s.is_finite() { s } else { 0.0 };
        c_ind = slope.ceil().max(1.0) as u32;

        let c_prime = 1.0;
        // One bracket-weighted maximum per (delta, seed), shared between the
        // scale fit and the coverage count; recomputing the domination test
        // in a different arithmetic order would let the quantile seed miss
        // its own bound by an ulp.
        let weighted: Vec<Vec<f64>> = deltas
            .iter()
            .map(|&delta| {
                kept.iter()
                    .map(|rec| {
                        rec.checkpoints
                            .iter()
                            .map(|c| {
                                c.error_sq
                                    / (shape_weight(nu, c.t)
                                        * bracket(nu, c_prime, delta, c.t)
                                            .powi(c_ind as i32))
                            })
                            .fold(0.0_f64, f64::max)
                    })
                    .collect()
            })
            .collect();
        scale = deltas
            .iter()
            .zip(&weighted)
            .map(|(&d, ms)| {
                let mut s = ms.clone();
                s.sort_unstable_by(f64::total_cmp);
                upper_quantile(&s, d)
            })
            .fold(0.0_f64, f64::max);

        coverage = weighted
            .iter()
            .map(|ms| {
                ms.iter().filter(|&&m| m <= scale).count() as f64 / n_seeds as f64
            })
            .collect::<Vec<f64>>();
        verdict = divergent.is_empty()
            && deltas
                .iter()
                .zip(&coverage)
                .all(|(&d, &cov)| cov >= 1.0 - d);
    }

    Ok(EnsembleSummary {
        n_seeds,
        nu,
        per_seed_max,
        divergent,
        delta_grid: deltas.to_vec(),
        quantiles,
        slope,
        c_ind,
        c_prime: 1.0,
        scale,
        coverage,
        verdict,
    })
}

/// One time point of an empirical moment curve.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MomentPoint {
    pub t: u64,
    /// Sample mean of `error^{2p}` across seeds.
    pub moment: f64,
    /// Standard error of that mean.
    pub se: f64,
}

/// Empirical `E error^{2p}` curve over the shared checkpoint grid.
#[derive(Clone, Debug, Serialize)]
pub struct MomentCurve {
    pub p: u32,
    pub n_seeds: u64,
    pub points: Vec<MomentPoint>,
    /// Strict decrease across the final decade of checkpoints.
    pub verdict: bool,
}

/// Reduces completed ensemble records to the `2p`-th moment curve of the
/// error with standard-error bars.
pub fn lp_moment_curve(
    records: &[TrajectoryRecord],
    p: u32,
) -> Result<MomentCurve, AnalysisError> {
    if p < 2 {
        return Err(AnalysisError::BadMomentOrder(p));
    }
    let n = records.len() as u64;
    if n < MIN_SEEDS {
        return Err(AnalysisError::TooFewSeeds {
            got: n,
            need: MIN_SEEDS,
        });
    }
    let grid: Vec<u64> = records[0].checkpoints.iter().map(|c| c.t).collect();
    for rec in &records[1..] {
        if rec.checkpoints.len() != grid.len()
            || rec.checkpoints.iter().zip(&grid).any(|(c, &t)| c.t != t)
        {
            return Err(AnalysisError::RaggedEnsemble);
        }
    }

    let nf = n as f64;
    let points: Vec<MomentPoint> = grid
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let mut mean = 0.0;
            for rec in records {
                mean += rec.checkpoints[k].error_sq.powi(p as i32);
            }
            mean /= nf;
            let mut var = 0.0;
            for rec in records {
                let d = rec.checkpoints[k].error_sq.powi(p as i32) - mean;
                var += d * d;
            }
            var /= nf - 1.0;
            MomentPoint {
                t,
                moment: mean,
                se: (var / nf).sqrt(),
            }
        })
        .collect();

    let t_last = grid.last().copied().unwrap_or(0);
    let tail: Vec<&MomentPoint> = points
        .iter()
        .filter(|pt| pt.t as f64 >= t_last as f64 / DECADE && pt.t > 0)
        .collect();
    let verdict =
        tail.len() >= 2 && tail.windows(2).all(|w| w[1].moment < w[0].moment);

    Ok(MomentCurve {
        p,
        n_seeds: n,
        points,
        verdict,
    })
}
