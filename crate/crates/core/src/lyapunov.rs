//! Smoothed Lyapunov norm built from the Moreau envelope of the squared
//! sup norm:
//!
//! `M(w) = min_u { 1/2 ||u||_sup^2 + 1/(2 xi) ||w - u||_2^2 }`
//!
//! `M` is a squared norm: `norm_m(w) = sqrt(2 M(w))` is equivalent to the
//! sup norm with explicit constants and is `(1/xi)`-smooth in the Euclidean
//! sense, which is what the interval drift analysis trades a bit of
//! contraction for.
//!
//! The minimization reduces to one dimension: with `r = ||u||_sup`, the best
//! `u` clamps `w` to `[-r, r]` componentwise, leaving
//! `min_{r>=0} 1/2 r^2 + 1/(2 xi) sum_i max(|w_i| - r, 0)^2`, a strictly
//! convex piecewise-quadratic problem whose exact minimizer falls out of a
//! sorted scan over the breakpoints `|w_i|`.

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::norm::NormTag;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("dimension must be at least 1")]
    BadDim,
    #[error("xi must be a positive finite real, got {0}")]
    BadXi(f64),
    #[error("only a sup-norm base with Euclidean smoothing is supported, got {base:?}/{smooth:?}")]
    UnsupportedNorms { base: NormTag, smooth: NormTag },
    #[error("contraction modulus {0} outside [0, 1)")]
    BadKappa(f64),
    #[error("no xi on the search grid reaches the target effective contraction for kappa = {kappa}")]
    NoFeasibleXi { kappa: f64 },
}

/// Parameters of the envelope norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MoreauConfig {
    dim: usize,
    xi: f64,
    base: NormTag,
    smooth: NormTag,
}

impl MoreauConfig {
    /// Sup-norm base, Euclidean smoothing.
    pub fn new(dim: usize, xi: f64) -> Result<Self, LyapunovError> {
        Self::with_norms(dim, xi, NormTag::Sup, NormTag::L2)
    }

    pub fn with_norms(
        dim: usize,
        xi: f64,
        base: NormTag,
        smooth: NormTag,
    ) -> Result<Self, LyapunovError> {
        if dim == 0 {
            return Err(LyapunovError::BadDim);
        }
        if !(xi > 0.0 && xi.is_finite()) {
            return Err(LyapunovError::BadXi(xi));
        }
        if base != NormTag::Sup || smooth != NormTag::L2 {
            return Err(LyapunovError::UnsupportedNorms { base, smooth });
        }
        Ok(Self {
            dim,
            xi,
            base,
            smooth,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn xi(&self) -> f64 {
        self.xi
    }

    /// `l_cs ||w||_2 <= ||w||_sup <= u_cs ||w||_2`.
    pub fn base_equivalence(&self) -> (f64, f64) {
        (1.0 / (self.dim as f64).sqrt(), 1.0)
    }

    /// `l_cm norm_m(w) <= ||w||_sup <= u_cm norm_m(w)`, with
    /// `l_cm = sqrt(1 + xi l_cs^2)` and `u_cm = sqrt(1 + xi u_cs^2)`.
    pub fn envelope_equivalence(&self) -> (f64, f64) {
        let (l_cs, u_cs) = self.base_equivalence();
        (
            (1.0 + self.xi * l_cs * l_cs).sqrt(),
            (1.0 + self.xi * u_cs * u_cs).sqrt(),
        )
    }

    /// Effective contraction modulus `1 - (u_cm / l_cm) kappa` left after
    /// paying the norm-equivalence toll.
    pub fn kappa_prime(&self, kappa: f64) -> f64 {
        let (l_cm, u_cm) = self.envelope_equivalence();
        1.0 - (u_cm / l_cm) * kappa
    }
}

/// Radius `||u*||_sup` of the envelope minimizer, solved exactly.
pub fn prox_radius(cfg: &MoreauConfig, w: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), cfg.dim);
    let mut mags: Vec<f64> = w.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    // With the k largest magnitudes active, the stationarity condition
    // r = (1/xi) sum (a_i - r) gives r = S_k / (xi + k); the true k is the
    // one whose candidate lands inside its own breakpoint segment.
    let mut partial = 0.0;
    for k in 1..=mags.len() {
        partial += mags[k - 1];
        let r = partial / (cfg.xi + k as f64);
        let upper = mags[k - 1];
        let lower = if k < mags.len() { mags[k] } else { 0.0 };
        if r >= lower && r <= upper {
            return r;
        }
    }
    0.0
}

/// Envelope value `M(w)`.
pub fn moreau_value(cfg: &MoreauConfig, w: &[f64]) -> f64 {
    let r = prox_radius(cfg, w);
    let mut tail = 0.0;
    for &x in w {
        let e = x.abs() - r;
        if e > 0.0 {
            tail += e * e;
        }
    }
    0.5 * r * r + tail / (2.0 * cfg.xi)
}

/// Exact gradient `(w - u*) / xi`, componentwise
/// `sign(w_i) max(|w_i| - r*, 0) / xi`.
pub fn moreau_gradient(cfg: &MoreauConfig, w: &[f64], out: &mut [f64]) {
    let r = prox_radius(cfg, w);
    for (o, &x) in out.iter_mut().zip(w) {
        let e = x.abs() - r;
        *o = if e > 0.0 { x.signum() * e / cfg.xi } else { 0.0 };
    }
}

/// Central finite-difference gradient of `M`.
pub fn fd_gradient(cfg: &MoreauConfig, w: &[f64], h: f64, out: &mut [f64]) {
    let mut probe = w.to_vec();
    for i in 0..w.len() {
        probe[i] = w[i] + h;
        let plus = moreau_value(cfg, &probe);
        probe[i] = w[i] - h;
        let minus = moreau_value(cfg, &probe);
        probe[i] = w[i];
        out[i] = (plus - minus) / (2.0 * h);
    }
}

/// The envelope norm `sqrt(2 M(w))`.
pub fn norm_m(cfg: &MoreauConfig, w: &[f64]) -> f64 {
    (2.0 * moreau_value(cfg, w)).sqrt()
}

/// Chosen smoothing parameter and the contraction it leaves.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct XiChoice {
    pub xi: f64,
    pub kappa_prime: f64,
}

/// Largest `xi` on the grid `10 * 0.9^k` (down to 1e-10) whose effective
/// contraction satisfies `kappa_prime >= (1 - kappa) / 2`. Always succeeds
/// for `kappa < 1` since the equivalence ratio tends to 1 as `xi -> 0`.
pub fn pick_xi(dim: usize, kappa: f64) -> Result<XiChoice, LyapunovError> {
    if dim == 0 {
        return Err(LyapunovError::BadDim);
    }
    if !(0.0..1.0).contains(&kappa) {
        return Err(LyapunovError::BadKappa(kappa));
    }
    let target = (1.0 - kappa) / 2.0;
    let mut xi = 10.0;
    while xi >= 1e-10 {
        let cfg = MoreauConfig::new(dim, xi)?;
        let kp = cfg.kappa_prime(kappa);
        if kp >= target {
            return Ok(XiChoice {
                xi,
                kappa_prime: kp,
            });
        }
        xi *= 0.9;
    }
    Err(LyapunovError::NoFeasibleXi { kappa })
}

/// Outcome of the descent-lemma sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SmoothnessReport {
    pub samples: usize,
    /// Max relative violation of
    /// `M(w') <= M(w) + <g, w' - w> + 1/(2 xi) ||w' - w||_2^2`.
    pub max_violation: f64,
    /// Same sweep with the inner product reversed to `<g, w - w'>`; reported
    /// for reference, not asserted (see `check_smoothness`).
    pub max_violation_reversed: f64,
    pub h_fd: f64,
}

fn descent_violations(
    cfg: &MoreauConfig,
    w: &[f64],
    wp: &[f64],
    grad_at_w: &[f64],
    modulus: f64,
) -> (f64, f64) {
    let mw = moreau_value(cfg, w);
    let mwp = moreau_value(cfg, wp);
    let mut inner = 0.0;
    let mut dd = 0.0;
    for i in 0..w.len() {
        let d = wp[i] - w[i];
        inner += grad_at_w[i] * d;
        dd += d * d;
    }
    let quad = 0.5 * modulus * dd;
    let denom = 1.0_f64.max(mw.abs()).max(mwp.abs()).max(quad);
    let standard = ((mwp - mw - inner - quad) / denom).max(0.0);
    let reversed = ((mwp - mw + inner - quad) / denom).max(0.0);
    (standard, reversed)
}

fn sample_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    let scale = 10f64.powi(rng.random_range(-2..=2));
    (0..dim)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// Sweeps random pairs through the descent lemma with modulus `1/xi` and
/// finite-difference gradients. The asserted direction is the standard
/// `<g, w' - w>`; the reversed orientation is measured alongside because
/// the two appear interchangeably in the literature and only one can be
/// meant.
pub fn check_smoothness(
    cfg: &MoreauConfig,
    samples: usize,
    h_fd: f64,
    seed: u64,
) -> SmoothnessReport {
    let mut rng = crate::rng::single(seed);
    let mut grad = vec![0.0; cfg.dim];
    let mut max_std: f64 = 0.0;
    let mut max_rev: f64 = 0.0;
    for _ in 0..samples {
        let w = sample_vector(&mut rng, cfg.dim);
        let wp = sample_vector(&mut rng, cfg.dim);
        fd_gradient(cfg, &w, h_fd, &mut grad);
        let (s, r) = descent_violations(cfg, &w, &wp, &grad, 1.0 / cfg.xi);
        max_std = max_std.max(s);
        max_rev = max_rev.max(r);
    }
    SmoothnessReport {
        samples,
        max_violation: max_std,
        max_violation_reversed: max_rev,
        h_fd,
    }
}

/// Outcome of the gradient-pairing sweep
/// `<grad M(w), w'> <= norm_m(w) norm_m(w')`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PairingReport {
    pub samples: usize,
    pub max_excess: f64,
}

/// The gradient here is the exact prox form, not a finite difference: the
/// difference quotient carries an `O(h / xi)` error wherever a probe
/// straddles a curvature breakpoint of the envelope, which drowns a 1e-5
/// tolerance for any moderate smoothing parameter.
pub fn check_gradient_pairing(cfg: &MoreauConfig, samples: usize, seed: u64) -> PairingReport {
    let mut rng = crate::rng::single(seed);
    let mut grad = vec![0.0; cfg.dim];
    let mut max_excess: f64 = 0.0;
    for _ in 0..samples {
        let w = sample_vector(&mut rng, cfg.dim);
        let wp = sample_vector(&mut rng, cfg.dim);
        moreau_gradient(cfg, &w, &mut grad);
        let inner: f64 = grad.iter().zip(&wp).map(|(g, x)| g * x).sum();
        let bound = norm_m(cfg, &w) * norm_m(cfg, &wp);
        let excess = (inner - bound) / 1.0_f64.max(bound);
        max_excess = max_excess.max(excess);
    }
    PairingReport {
        samples,
        max_excess,
    }
}

/// Outcome of the norm-equivalence sweep.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct EquivalenceReport {
    pub samples: usize,
    pub violations: usize,
    /// Worst relative breach of `l_cm norm_m(w) <= ||w||_sup`.
    pub max_lower_excess: f64,
    /// Worst relative breach of `||w||_sup <= u_cm norm_m(w)`.
    pub max_upper_excess: f64,
}

pub fn check_norm_equivalence(cfg: &MoreauConfig, samples: usize, seed: u64) -> EquivalenceReport {
    let (l_cm, u_cm) = cfg.envelope_equivalence();
    let mut rng = crate::rng::single(seed);
    let mut violations = 0;
    let mut max_lower: f64 = 0.0;
    let mut max_upper: f64 = 0.0;
    for _ in 0..samples {
        let w = sample_vector(&mut rng, cfg.dim);
        let sup = crate::norm::sup_norm(&w);
        if sup == 0.0 {
            continue;
        }
        let nm = norm_m(cfg, &w);
        let lower = l_cm * nm / sup - 1.0;
        let upper = sup / (u_cm * nm) - 1.0;
        max_lower = max_lower.max(lower);
        max_upper = max_upper.max(upper);
        if lower > 1e-9 || upper > 1e-9 {
            violations += 1;
        }
    }
    EquivalenceReport {
        samples,
        violations,
        max_lower_excess: max_lower,
        max_upper_excess: max_upper,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent oracle: minimize the defining objective
    /// `1/2 r^2 + 1/(2 xi) ||w - u||_2^2` over the epigraph `|u_i| <= r`
    /// by projected gradient. Linear convergence with factor
    /// `1 - min(1/xi,1)/max(1/xi,1)`, so keep xi in [0.05, 10] here.
    fn moreau_by_projected_gradient(cfg: &MoreauConfig, w: &[f64]) -> f64 {
        let xi = cfg.xi();
        let lip = (1.0 / xi).max(1.0);
        let step = 1.0 / lip;
        let mut u = w.to_vec();
        let mut r = crate::norm::sup_norm(w);
        for _ in 0..8000 {
            for (ui, &wi) in u.iter_mut().zip(w) {
                *ui -= step * (*ui - wi) / xi;
            }
            r -= step * r;
            r = project_epigraph(&mut u, r);
        }
        let mut tail = 0.0;
        for (ui, &wi) in u.iter().zip(w) {
            tail += (wi - ui) * (wi - ui);
        }
        0.5 * r * r + tail / (2.0 * xi)
    }

    /// Euclidean projection onto `{(u, r) : |u_i| <= r}`; clamps `u` in
    /// place and returns the projected radius.
    fn project_epigraph(u: &mut [f64], r: f64) -> f64 {
        let vmax = crate::norm::sup_norm(u);
        if vmax <= r {
            return r;
        }
        let mut mags: Vec<f64> = u.iter().map(|x| x.abs()).collect();
        mags.sort_unstable_by(|a, b| b.total_cmp(a));
        // Root of (rho - r) - sum max(|u_i| - rho, 0) over rho >= 0.
        let mut rho = 0.0;
        let mut partial = 0.0;
        for k in 1..=mags.len() {
            partial += mags[k - 1];
            let cand = (r + partial) / (1.0 + k as f64);
            let upper = mags[k - 1];
            let lower = if k < mags.len() { mags[k] } else { f64::MIN };
            if cand >= lower && cand <= upper {
                rho = cand;
                break;
            }
        }
        let rho = rho.max(0.0);
        for x in u.iter_mut() {
            *x = x.clamp(-rho, rho);
        }
        rho
    }

    fn cfg(dim: usize, xi: f64) -> MoreauConfig {
        MoreauConfig::new(dim, xi).unwrap()
    }

    #[test]
    fn zero_vector_and_one_d_closed_form() {
        let c = cfg(3, 0.7);
        assert_eq!(moreau_value(&c, &[0.0, 0.0, 0.0]), 0.0);
        let c1 = cfg(1, 1.0);
        assert!((moreau_value(&c1, &[2.0]) - 1.0).abs() <= 1e-14);
        for xi in [0.01, 0.5, 2.0, 10.0] {
            let c1 = cfg(1, xi);
            for w in [0.3, -2.0, 7.0] {
                let want = w * w / (2.0 * (1.0 + xi));
                assert!((moreau_value(&c1, &[w]) - want).abs() <= 1e-12 * want.max(1.0));
                let r = prox_radius(&c1, &[w]);
                assert!((r - w.abs() / (1.0 + xi)).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn quadratic_scaling_and_norm_homogeneity() {
        let c = cfg(5, 0.4);
        let w = [1.5, -0.2, 0.0, 3.0, -1.1];
        let m = moreau_value(&c, &w);
        let doubled: Vec<f64> = w.iter().map(|x| 2.0 * x).collect();
        assert!((moreau_value(&c, &doubled) - 4.0 * m).abs() <= 1e-8 * (4.0 * m).max(1.0));
        let tripled: Vec<f64> = w.iter().map(|x| 3.0 * x).collect();
        assert!((norm_m(&c, &tripled) - 3.0 * norm_m(&c, &w)).abs() <= 1e-7);
    }

    #[test]
    fn projected_gradient_oracle_agrees() {
        let mut rng = crate::rng::single(71);
        for &dim in &[1usize, 2, 4, 6] {
            for &xi in &[0.05, 0.3, 1.0, 5.0] {
                let c = cfg(dim, xi);
                for _ in 0..4 {
                    let w: Vec<f64> =
                        (0..dim).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
                    let exact = moreau_value(&c, &w);
                    let pg = moreau_by_projected_gradient(&c, &w);
                    assert!(
                        (exact - pg).abs() <= 1e-6 * exact.max(1.0),
                        "dim={dim} xi={xi} exact={exact} pg={pg}"
                    );
                }
            }
        }
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let c = cfg(4, 0.6);
        let mut rng = crate::rng::single(5);
        let h = 1e-6;
        let mut analytic = vec![0.0; 4];
        let mut numeric = vec![0.0; 4];
        let mut tested = 0;
        while tested < 20 {
            let w: Vec<f64> = (0..4).map(|_| 6.0 * rng.random::<f64>() - 3.0).collect();
            let r = prox_radius(&c, &w);
            // Skip vectors with a component magnitude within 10 h of the
            // kink radius, where finite differences straddle the crease.
            if w.iter().any(|x| (x.abs() - r).abs() < 10.0 * h) {
                continue;
            }
            moreau_gradient(&c, &w, &mut analytic);
            fd_gradient(&c, &w, h, &mut numeric);
            for i in 0..4 {
                assert!(
                    (analytic[i] - numeric[i]).abs() <= 1e-6 * analytic[i].abs().max(1.0),
                    "w={w:?} i={i} a={} n={}",
                    analytic[i],
                    numeric[i]
                );
            }
            tested += 1;
        }
    }

    #[test]
    fn gradient_euler_identity() {
        // Degree-2 homogeneity forces <grad M(w), w> = 2 M(w) exactly.
        let c = cfg(6, 1.3);
        let mut rng = crate::rng::single(6);
        let mut grad = vec![0.0; 6];
        for _ in 0..50 {
            let w: Vec<f64> = (0..6).map(|_| 10.0 * rng.random::<f64>() - 5.0).collect();
            moreau_gradient(&c, &w, &mut grad);
            let inner: f64 = grad.iter().zip(&w).map(|(g, x)| g * x).sum();
            let m = moreau_value(&c, &w);
            assert!((inner - 2.0 * m).abs() <= 1e-10 * m.max(1.0));
        }
    }

    #[test]
    fn triangle_inequality_on_random_triples() {
        let c = cfg(5, 0.8);
        let mut rng = crate::rng::single(7);
        for _ in 0..200 {
            let x: Vec<f64> = (0..5).map(|_| 8.0 * rng.random::<f64>() - 4.0).collect();
            let y: Vec<f64> = (0..5).map(|_| 8.0 * rng.random::<f64>() - 4.0).collect();
            let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            assert!(norm_m(&c, &sum) <= norm_m(&c, &x) + norm_m(&c, &y) + 1e-9);
        }
    }

    #[test]
    fn positivity_off_zero() {
        let c = cfg(3, 0.5);
        assert!(norm_m(&c, &[0.0, 1e-12, 0.0]) > 0.0);
    }

    #[test]
    fn equivalence_constants_are_correct_and_tight() {
        let c = cfg(4, 0.7);
        let (l_cm, u_cm) = c.envelope_equivalence();
        assert!((l_cm - (1.0_f64 + 0.7 / 4.0).sqrt()).abs() <= 1e-15);
        assert!((u_cm - 1.7_f64.sqrt()).abs() <= 1e-15);
        let report = check_norm_equivalence(&c, 1000, 11);
        assert_eq!(report.violations, 0, "{report:?}");
        // A single spike saturates the upper constant, the all-ones vector
        // the lower one.
        let spike = [2.0, 0.0, 0.0, 0.0];
        assert!((crate::norm::sup_norm(&spike) - u_cm * norm_m(&c, &spike)).abs() <= 1e-12);
        let ones = [1.0; 4];
        assert!((crate::norm::sup_norm(&ones) - l_cm * norm_m(&c, &ones)).abs() <= 1e-12);
    }

    #[test]
    fn xi_selection_meets_contraction_target() {
        for &dim in &[2usize, 10] {
            for &kappa in &[0.0, 0.5, 0.9] {
                let choice = pick_xi(dim, kappa).unwrap();
                assert!(choice.kappa_prime >= (1.0 - kappa) / 2.0);
                if kappa == 0.0 {
                    assert_eq!(choice.xi, 10.0);
                    assert_eq!(choice.kappa_prime, 1.0);
                } else if choice.xi < 10.0 {
                    // The previous, larger grid point must fail the target.
                    let coarser = MoreauConfig::new(dim, choice.xi / 0.9).unwrap();
                    assert!(coarser.kappa_prime(kappa) < (1.0 - kappa) / 2.0);
                }
            }
        }
        assert!(matches!(pick_xi(3, 1.0), Err(LyapunovError::BadKappa(_))));
    }

    #[test]
    fn kappa_prime_monotone_in_kappa() {
        let c = cfg(4, 0.3);
        let mut prev = f64::INFINITY;
        for i in 0..10 {
            let kp = c.kappa_prime(i as f64 * 0.1);
            assert!(kp <= prev);
            prev = kp;
        }
    }

    #[test]
    fn smoothness_sweep_stays_within_tolerance() {
        let c = cfg(4, 0.6);
        let report = check_smoothness(&c, 1000, 1e-4, 17);
        assert!(report.max_violation <= 1e-4, "{report:?}");
        assert!(report.max_violation_reversed.is_finite());
    }

    #[test]
    fn smoothness_trivial_and_one_d_exact_cases() {
        let c = cfg(3, 0.9);
        let w = [1.0, -2.0, 0.5];
        let mut g = vec![0.0; 3];
        moreau_gradient(&c, &w, &mut g);
        let (s, r) = descent_violations(&c, &w, &w, &g, 1.0 / c.xi());
        assert_eq!(s, 0.0);
        assert_eq!(r, 0.0);
        // In one dimension M is the exact quadratic w^2/(2(1+xi)), so the
        // descent inequality is tight already at modulus 1/(1+xi).
        let c1 = cfg(1, 0.9);
        let mut rng = crate::rng::single(23);
        for _ in 0..100 {
            let w = [6.0 * rng.random::<f64>() - 3.0];
            let wp = [6.0 * rng.random::<f64>() - 3.0];
            let g = [w[0] / (1.0 + c1.xi())];
            let (s, _) = descent_violations(&c1, &w, &wp, &g, 1.0 / (1.0 + c1.xi()));
            assert!(s <= 1e-12, "violation {s}");
        }
    }

    #[test]
    fn gradient_pairing_bound_holds() {
        // The exact-gradient inequality is scale-free, so it must hold at
        // machine precision even for smoothing parameters small enough to
        // defeat difference quotients.
        for xi in [0.4, 1e-3] {
            let c = cfg(5, xi);
            let report = check_gradient_pairing(&c, 1000, 29);
            assert!(report.max_excess <= 1e-12, "xi={xi}: {report:?}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn envelope_properties_hold(
            dim in 1usize..6,
            xi in 0.05f64..10.0,
            lambda in 0.1f64..3.0,
            seed in 0u64..1000,
        ) {
            let c = MoreauConfig::new(dim, xi).unwrap();
            let mut rng = crate::rng::single(seed);
            let w: Vec<f64> = (0..dim).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
            let m = moreau_value(&c, &w);
            prop_assert!(m >= 0.0);
            let pg = moreau_by_projected_gradient(&c, &w);
            prop_assert!((m - pg).abs() <= 1e-5 * m.max(1.0), "m={} pg={}", m, pg);
            let scaled: Vec<f64> = w.iter().map(|x| lambda * x).collect();
            let ms = moreau_value(&c, &scaled);
            prop_assert!((ms - lambda * lambda * m).abs() <= 1e-9 * (lambda * lambda * m).max(1.0));
            let mut grad = vec![0.0; dim];
            moreau_gradient(&c, &w, &mut grad);
            let inner: f64 = grad.iter().zip(&w).map(|(g, x)| g * x).sum();
            prop_assert!((inner - 2.0 * m).abs() <= 1e-9 * m.max(1.0));
        }
    }
}
