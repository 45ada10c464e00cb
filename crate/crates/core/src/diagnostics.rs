//! Interval-level verification of a logged skeleton run.
//!
//! [`decompose_noise`] revalidates the engine's online `z1`/`z2`/`z3` split:
//! it rebuilds the reconstruction identity `z1 + z2 + z3 = z` and recomputes
//! the conditional means `E_m[G(w_{t_m}, Y_{t+1})]` from cached binary powers
//! of the noise kernel, a different float path from the run loop's
//! distribution propagation, so the centering of `z2` is checked against an
//! independent route. [`verify_noise_bounds`] and [`verify_drift_inequality`]
//! then fit the smallest stable constants for the per-interval envelopes
//!
//! ```text
//! ‖z1‖_m <= c1 T_m^2 (e_m + 1)        ‖z2‖_m <= c2 T_m (e_m + 1)
//! ‖z3‖_m <= c3 T_m^2 (e_m + 1)
//! e'^2 <= (1 - T_m k') e^2 + <grad ‖.‖_m^2, z2> + C T_m^2
//! ```
//!
//! where `e_m` is the Moreau-norm error at the interval start and `e'` the
//! error at its end. Constants are fitted as tail maxima of the observed
//! ratios; the reported `m0` is the first index from which the ratio stays
//! within 5% of that tail level.

use std::io::Write as IoWrite;

use thiserror::Error;

use crate::chain::TransitionKernel;
use crate::engine::{TrajectoryRecord, UpdateMap};
use crate::lyapunov::{self, MoreauConfig};
use crate::norm::sup_norm;
use crate::schedule::SkeletonAnchors;

/// Absolute tolerance for `z1 + z2 + z3 = z`.
pub const RECON_TOL: f64 = 1e-10;
/// Absolute tolerance for the recomputed conditional centering of `z2`.
pub const CENTER_TOL: f64 = 1e-10;
/// Minimum number of intervals a constant fit is allowed to see.
pub const MIN_INTERVALS: usize = 100;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("trajectory record carries no interval log")]
    MissingIntervalLog,
    #[error("interval log holds {got} intervals but the anchor table covers {cover}")]
    AnchorsMismatch { got: usize, cover: usize },
    #[error("noise parts fail to rebuild the total at interval {m}: gap {gap:e}")]
    Reconstruction { m: usize, gap: f64 },
    #[error("conditional centering of z2 fails at interval {m}: gap {gap:e}")]
    Centering { m: usize, gap: f64 },
    #[error("need at least {need} intervals, got {got}")]
    TooFewIntervals { got: usize, need: usize },
    #[error("{which} fit unstable: {full:e} over the kept range vs {tail:e} over the tail")]
    UnstableFit {
        which: &'static str,
        full: f64,
        tail: f64,
    },
}

/// One interval of a skeleton run with the quantities the lemma checks need.
#[derive(Clone, Debug)]
pub struct IntervalDiagnostics {
    pub m: usize,
    pub t_start: u64,
    pub t_end: u64,
    /// Interval mass target `T_m`.
    pub big_t: f64,
    pub z1: Vec<f64>,
    pub z2: Vec<f64>,
    pub z3: Vec<f64>,
    /// Moreau norms of the three parts.
    pub z1_m: f64,
    pub z2_m: f64,
    pub z3_m: f64,
    /// Moreau-norm error at the interval start.
    pub e_m: f64,
    /// Moreau-norm error at the interval end; absent only when the run
    /// stopped inside the following interval.
    pub e_end_m: Option<f64>,
    /// `w_{t_m} - w*`.
    pub v_start: Vec<f64>,
    /// `sup_i |z1 + z2 + z3 - z|` as logged.
    pub recon_gap: f64,
    /// `sup_i |z3 - z3_indep|` against the kernel-power conditional means;
    /// equals the conditional mean of `z2`, which is zero in exact
    /// arithmetic.
    pub centering_gap: f64,
}

/// Binary powers `P^(2^j)` used to evaluate `e_y P^k` without replaying the
/// run loop's step-by-step propagation.
struct KernelPowers {
    n: usize,
    squarings: Vec<Vec<f64>>,
}

impl KernelPowers {
    fn new(kernel: &TransitionKernel, max_offset: u64) -> Self {
        let n = kernel.len();
        let mut base = vec![0.0; n * n];
        for i in 0..n {
            base[i * n..(i + 1) * n].copy_from_slice(kernel.row(i));
        }
        let levels = 64 - max_offset.max(1).leading_zeros() as usize;
        let mut squarings = vec![base];
        for j in 1..levels {
            let prev = &squarings[j - 1];
            let mut next = vec![0.0; n * n];
            for i in 0..n {
                for k in 0..n {
                    let p = prev[i * n + k];
                    if p == 0.0 {
                        continue;
                    }
                    for c in 0..n {
                        next[i * n + c] += p * prev[k * n + c];
                    }
                }
            }
            squarings.push(next);
        }
        Self { n, squarings }
    }

    /// Writes the row `e_{y0} P^k` into `out`.
    fn conditional_row(&self, y0: usize, k: u64, out: &mut [f64], scratch: &mut [f64]) {
        out.fill(0.0);
        out[y0] = 1.0;
        let mut bits = k;
        let mut level = 0;
        while bits != 0 {
            if bits & 1 == 1 {
                let mat = &self.squarings[level];
                scratch.fill(0.0);
                for from in 0..self.n {
                    let p = out[from];
                    if p == 0.0 {
                        continue;
                    }
                    for to in 0..self.n {
                        scratch[to] += p * mat[from * self.n + to];
                    }
                }
                out.copy_from_slice(scratch);
            }
            bits >>= 1;
            level += 1;
        }
    }
}

/// Validates the logged decomposition interval by interval and packages the
/// Moreau-norm quantities the lemma fits consume.
///
/// Fails if the reconstruction identity or the independently recomputed
/// conditional centering of `z2` exceeds 1e-10 anywhere.
pub fn decompose_noise<M: UpdateMap + ?Sized>(
    record: &TrajectoryRecord,
    map: &M,
    kernel: &TransitionKernel,
    anchors: &SkeletonAnchors,
    lyap: &MoreauConfig,
) -> Result<Vec<IntervalDiagnostics>, DiagnosticsError> {
    let log = record
        .interval_log
        .as_ref()
        .ok_or(DiagnosticsError::MissingIntervalLog)?;
    if log.len() > anchors.horizon() {
        return Err(DiagnosticsError::AnchorsMismatch {
            got: log.len(),
            cover: anchors.horizon(),
        });
    }
    let dim = map.dim();
    let n_y = kernel.len();
    let star = map.fixed_point().to_vec();
    let max_len = log
        .iter()
        .map(|iv| iv.t_end - iv.t_start)
        .max()
        .unwrap_or(1);
    let powers = KernelPowers::new(kernel, max_len);

    let mut out = Vec::with_capacity(log.len());
    let mut frozen = vec![0.0; n_y * dim];
    let mut g_start = vec![0.0; dim];
    let mut row = vec![0.0; n_y];
    let mut scratch = vec![0.0; n_y];
    let mut z3_indep = vec![0.0; dim];
    for iv in log {
        let recon_gap = (0..dim)
            .map(|i| (iv.z1[i] + iv.z2[i] + iv.z3[i] - iv.z[i]).abs())
            .fold(0.0_f64, f64::max);
        if recon_gap > RECON_TOL {
            return Err(DiagnosticsError::Reconstruction {
                m: iv.m,
                gap: recon_gap,
            });
        }

        for y in 0..n_y {
            let dest = &mut frozen[y * dim..(y + 1) * dim];
            map.apply(&iv.w_start, y, dest);
            for i in 0..dim {
                dest[i] -= iv.w_start[i];
            }
        }
        map.expected(&iv.w_start, &mut g_start);
        for i in 0..dim {
            g_start[i] -= iv.w_start[i];
        }
        z3_indep.fill(0.0);
        for t in iv.t_start..iv.t_end {
            let offset = t + 1 - iv.t_start;
            powers.conditional_row(iv.y_start, offset, &mut row, &mut scratch);
            let alpha = record.schedule.step_size(t);
            for i in 0..dim {
                let mut cond = 0.0;
                for y in 0..n_y {
                    let p = row[y];
                    if p != 0.0 {
                        cond += p * frozen[y * dim + i];
                    }
                }
                z3_indep[i] += alpha * (cond - g_start[i]);
            }
        }
        let centering_gap = (0..dim)
            .map(|i| (z3_indep[i] - iv.z3[i]).abs())
            .fold(0.0_f64, f64::max);
        if centering_gap > CENTER_TOL {
            return Err(DiagnosticsError::Centering {
                m: iv.m,
                gap: centering_gap,
            });
        }

        let v_start: Vec<f64> = iv.w_start.iter().zip(&star).map(|(w, s)| w - s).collect();
        let e_end_m = end_iterate(record, iv.m, iv.t_end).map(|w_end| {
            let v: Vec<f64> = w_end.iter().zip(&star).map(|(w, s)| w - s).collect();
            lyapunov::norm_m(lyap, &v)
        });
        out.push(IntervalDiagnostics {
            m: iv.m,
            t_start: iv.t_start,
            t_end: iv.t_end,
            big_t: anchors.big_t[iv.m],
            z1: iv.z1.clone(),
            z2: iv.z2.clone(),
            z3: iv.z3.clone(),
            z1_m: lyapunov::norm_m(lyap, &iv.z1),
            z2_m: lyapunov::norm_m(lyap, &iv.z2),
            z3_m: lyapunov::norm_m(lyap, &iv.z3),
            e_m: lyapunov::norm_m(lyap, &v_start),
            e_end_m,
            v_start,
            recon_gap,
            centering_gap,
        });
    }
    Ok(out)
}

/// Iterate at an interval's end: the next interval's start, or the run's
/// final iterate when the run stops exactly there.
fn end_iterate<'a>(record: &'a TrajectoryRecord, m: usize, t_end: u64) -> Option<&'a [f64]> {
    let log = record.interval_log.as_ref()?;
    if let Some(next) = log.get(m + 1) {
        return Some(&next.w_start);
    }
    (t_end == record.steps).then_some(record.final_w.as_slice())
}

/// Tail-fitted envelope constants for the three noise parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseBoundFit {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// First interval from which all three ratios stay within the fit.
    pub m0: usize,
}

/// Fits the smallest stable `(c1, c2, c3, m0)` with
/// `‖z1‖_m <= c1 T^2 (e+1)`, `‖z2‖_m <= c2 T (e+1)`, `‖z3‖_m <= c3 T^2 (e+1)`
/// for all `m >= m0`.
pub fn verify_noise_bounds(
    diags: &[IntervalDiagnostics],
) -> Result<NoiseBoundFit, DiagnosticsError> {
    if diags.len() < MIN_INTERVALS {
        return Err(DiagnosticsError::TooFewIntervals {
            got: diags.len(),
            need: MIN_INTERVALS,
        });
    }
    let ratios = |f: &dyn Fn(&IntervalDiagnostics) -> f64| -> Vec<f64> {
        diags.iter().map(|d| f(d)).collect()
    };
    let r1 = ratios(&|d| d.z1_m / (d.big_t * d.big_t * (d.e_m + 1.0)));
    let r2 = ratios(&|d| d.z2_m / (d.big_t * (d.e_m + 1.0)));
    let r3 = ratios(&|d| d.z3_m / (d.big_t * d.big_t * (d.e_m + 1.0)));

    let (m0_1, tail1) = settle_index(&r1);
    let (m0_2, tail2) = settle_index(&r2);
    let (m0_3, tail3) = settle_index(&r3);
    let m0 = m0_1.max(m0_2).max(m0_3);

    let fit = |r: &[f64], tail: f64, which: &'static str| -> Result<f64, DiagnosticsError> {
        let full = r[m0..].iter().copied().fold(0.0_f64, f64::max);
        if full > 2.0 * tail + 1e-15 {
            return Err(DiagnosticsError::UnstableFit { which, full, tail });
        }
        Ok(full * (1.0 + 1e-9))
    };
    Ok(NoiseBoundFit {
        c1: fit(&r1, tail1, "z1")?,
        c2: fit(&r2, tail2, "z2")?,
        c3: fit(&r3, tail3, "z3")?,
        m0,
    })
}

/// Tail max of the ratio sequence and the first index from which every later
/// ratio stays within 5% of it.
fn settle_index(ratios: &[f64]) -> (usize, f64) {
    let half = ratios.len() / 2;
    let tail = ratios[half..].iter().copied().fold(0.0_f64, f64::max);
    let threshold = 1.05 * tail + 1e-15;
    let mut m0 = 0;
    for (i, &r) in ratios.iter().enumerate().rev() {
        if r > threshold {
            m0 = i + 1;
            break;
        }
    }
    (m0, tail)
}

/// Per-interval drift inequality evaluation.
#[derive(Clone, Copy, Debug)]
pub struct DriftRow {
    pub m: usize,
    /// `‖w_{t_{m+1}} - w*‖_m^2`.
    pub lhs: f64,
    /// `(1 - T_m k') e_m^2 + <grad, z2> + C T_m^2` at the fitted `C`.
    pub rhs: f64,
}

/// Outcome of [`verify_drift_inequality`].
#[derive(Clone, Debug)]
pub struct DriftReport {
    /// Fitted constant in front of `T_m^2`.
    pub c: f64,
    /// First interval from which the inequality holds through the horizon.
    pub m0: usize,
    /// Fraction of intervals `m >= m0` satisfying the inequality.
    pub coverage: f64,
    pub rows: Vec<DriftRow>,
}

/// Relative step for the finite-difference gradient of the squared
/// Moreau norm.
const GRAD_STEP: f64 = 1e-5;

/// Checks the interval drift inequality
/// `e'^2 <= (1 - T_m k') e_m^2 + <grad ‖.‖_m^2 (v_m), z2> + C T_m^2`
/// with `C` fitted as a stable tail constant. The gradient is evaluated by
/// central differences of the Moreau envelope at `v_m = w_{t_m} - w*`.
pub fn verify_drift_inequality(
    diags: &[IntervalDiagnostics],
    lyap: &MoreauConfig,
    kappa_prime: f64,
) -> Result<DriftReport, DiagnosticsError> {
    if diags.len() < MIN_INTERVALS {
        return Err(DiagnosticsError::TooFewIntervals {
            got: diags.len(),
            need: MIN_INTERVALS,
        });
    }
    let mut grad = vec![0.0; lyap.dim()];
    let mut residuals = Vec::with_capacity(diags.len());
    let mut bases = Vec::with_capacity(diags.len());
    for d in diags {
        let Some(e_end) = d.e_end_m else { continue };
        let h = GRAD_STEP * sup_norm(&d.v_start).max(1.0);
        lyapunov::fd_gradient(lyap, &d.v_start, h, &mut grad);
        // grad of the squared m-norm is twice the envelope gradient.
        let inner: f64 = grad.iter().zip(&d.z2).map(|(g, z)| 2.0 * g * z).sum();
        let base = (1.0 - d.big_t * kappa_prime) * d.e_m * d.e_m + inner;
        let residual = (e_end * e_end - base) / (d.big_t * d.big_t);
        residuals.push(residual);
        bases.push((d.m, base, e_end * e_end, d.big_t));
    }
    let half = residuals.len() / 2;
    let tail = residuals[half..]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let c = (tail * (1.0 + 1e-9)).max(0.0);
    let mut m0 = 0;
    for (i, &r) in residuals.iter().enumerate().rev() {
        if r > c + 1e-12 {
            m0 = i + 1;
            break;
        }
    }
    let kept = &residuals[m0..];
    let covered = kept.iter().filter(|&&r| r <= c + 1e-12).count();
    let coverage = if kept.is_empty() {
        0.0
    } else {
        covered as f64 / kept.len() as f64
    };
    let rows = bases
        .iter()
        .map(|&(m, base, lhs, big_t)| DriftRow {
            m,
            lhs,
            rhs: base + c * big_t * big_t,
        })
        .collect();
    Ok(DriftReport {
        c,
        m0,
        coverage,
        rows,
    })
}

/// Fitted constant for the within-interval excursion bound
/// `‖w_t - w_{t_m}‖ <= bar_alpha_m C (‖w_{t_m} - w*‖ + 1)` in the map's
/// contraction norm, evaluated at every checkpoint falling inside a logged
/// interval and at every interval endpoint.
pub fn fit_interval_excursion<M: UpdateMap + ?Sized>(
    record: &TrajectoryRecord,
    map: &M,
    anchors: &SkeletonAnchors,
) -> Result<f64, DiagnosticsError> {
    let log = record
        .interval_log
        .as_ref()
        .ok_or(DiagnosticsError::MissingIntervalLog)?;
    if log.len() > anchors.horizon() {
        return Err(DiagnosticsError::AnchorsMismatch {
            got: log.len(),
            cover: anchors.horizon(),
        });
    }
    let norm = map.contraction_norm();
    let star = map.fixed_point();
    let mut worst = 0.0_f64;
    let mut push = |iv: &crate::engine::IntervalLog, w: &[f64]| {
        let lhs = norm.eval_diff(w, &iv.w_start);
        let e = norm.eval_diff(&iv.w_start, star);
        worst = worst.max(lhs / (iv.bar_alpha * (e + 1.0)));
    };
    for (m, iv) in log.iter().enumerate() {
        for cp in &record.checkpoints {
            if cp.t > iv.t_start && cp.t <= iv.t_end {
                push(iv, &cp.w);
            }
        }
        if let Some(w_end) = end_iterate(record, m, iv.t_end) {
            push(iv, w_end);
        }
    }
    Ok(worst * (1.0 + 1e-9))
}

/// Writes the per-interval diagnostics table.
///
/// Columns: `m,T_m,e_m,z1_m_norm,z2_m_norm,z3_m_norm,ratio1,ratio2,ratio3,
/// drift_lhs,drift_rhs`; drift cells are empty for intervals whose endpoint
/// was never reached.
pub fn write_diagnostics_csv<W: IoWrite>(
    diags: &[IntervalDiagnostics],
    drift: &DriftReport,
    out: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "m",
        "T_m",
        "e_m",
        "z1_m_norm",
        "z2_m_norm",
        "z3_m_norm",
        "ratio1",
        "ratio2",
        "ratio3",
        "drift_lhs",
        "drift_rhs",
    ])?;
    for d in diags {
        let denom2 = d.big_t * d.big_t * (d.e_m + 1.0);
        let denom1 = d.big_t * (d.e_m + 1.0);
        let drift = drift.rows.iter().find(|r| r.m == d.m);
        let fmt = |x: f64| format!("{x:.16e}");
        let (lhs, rhs) = match drift {
            Some(r) => (fmt(r.lhs), fmt(r.rhs)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            d.m.to_string(),
            fmt(d.big_t),
            fmt(d.e_m),
            fmt(d.z1_m),
            fmt(d.z2_m),
            fmt(d.z3_m),
            fmt(d.z1_m / denom2),
            fmt(d.z2_m / denom1),
            fmt(d.z3_m / denom2),
            lhs,
            rhs,
        ])?;
    }
    w.flush()?;
    Ok(())
}
