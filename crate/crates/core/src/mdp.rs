//! Tabular MDPs, Bellman operators, exact solvers, and the induced
//! state-action-state noise chain.
//!
//! Q-tables are flat `Vec<f64>` indexed `s * n_actions + a`; value tables
//! are indexed by state.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{self, ChainError, TransitionKernel};

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MdpError {
    #[error("{what} has wrong shape: expected {expected}, got {got}")]
    BadShape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("discount factor {0} outside [0, 1)")]
    BadGamma(f64),
    #[error("transition row for (s={s}, a={a}) sums to {sum}, expected 1 within {ROW_SUM_TOL:e}")]
    BadTransitionRow { s: usize, a: usize, sum: f64 },
    #[error("probability {value} at (s={s}, a={a}) is invalid")]
    BadProbability { s: usize, a: usize, value: f64 },
    #[error("policy row for state {s} sums to {sum}, expected 1 within {ROW_SUM_TOL:e}")]
    BadPolicyRow { s: usize, sum: f64 },
    #[error("behavior policy gives action {a} in state {s} probability 0 while the target needs it")]
    CoverageViolation { s: usize, a: usize },
    #[error("policy-evaluation solve failed (residual {residual:e})")]
    EvaluationFailed { residual: f64 },
    #[error("reading MDP JSON: {0}")]
    Json(String),
    #[error(transparent)]
    Chain(#[from] ChainError),
}

/// Finite MDP with rewards on state-action pairs.
#[derive(Clone, Debug)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    /// `reward[s * n_actions + a]`
    reward: Vec<f64>,
    /// `transition[(s * n_actions + a) * n_states + s']`
    transition: Vec<f64>,
}

/// On-disk form: `reward` is states x actions, `transition` is one
/// states x states matrix per action.
#[derive(Serialize, Deserialize)]
struct MdpJson {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    reward: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if n_states == 0 || n_actions == 0 {
            return Err(MdpError::BadShape {
                what: "state/action space",
                expected: 1,
                got: 0,
            });
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(MdpError::BadGamma(gamma));
        }
        if reward.len() != n_states * n_actions {
            return Err(MdpError::BadShape {
                what: "reward table",
                expected: n_states * n_actions,
                got: reward.len(),
            });
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(MdpError::BadShape {
                what: "transition table",
                expected: n_states * n_actions * n_states,
                got: transition.len(),
            });
        }
        for s in 0..n_states {
            for a in 0..n_actions {
                let row = &transition[(s * n_actions + a) * n_states..][..n_states];
                let mut sum = 0.0;
                for &p in row {
                    if !p.is_finite() || p < 0.0 {
                        return Err(MdpError::BadProbability { s, a, value: p });
                    }
                    sum += p;
                }
                if (sum - 1.0).abs() > ROW_SUM_TOL {
                    return Err(MdpError::BadTransitionRow { s, a, sum });
                }
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            reward,
            transition,
        })
    }

    /// Dirichlet(1, ..., 1) transition rows and uniform `[0, 1]` rewards.
    pub fn random(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Self {
        let mut rng = crate::rng::single(seed);
        let mut reward = Vec::with_capacity(n_states * n_actions);
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            reward.push(rng.random::<f64>());
            // A flat Dirichlet row is exponentials normalized by their sum.
            let exps: Vec<f64> = (0..n_states)
                .map(|_| -(1.0 - rng.random::<f64>()).ln())
                .collect();
            let total: f64 = exps.iter().sum();
            transition.extend(exps.iter().map(|e| e / total));
        }
        Self::new(n_states, n_actions, gamma, reward, transition)
            .expect("generated rows are normalized")
    }

    pub fn from_json_str(text: &str) -> Result<Self, MdpError> {
        let raw: MdpJson = serde_json::from_str(text).map_err(|e| MdpError::Json(e.to_string()))?;
        let reward = flatten2(&raw.reward, raw.n_states, raw.n_actions, "reward")?;
        if raw.transition.len() != raw.n_actions {
            return Err(MdpError::BadShape {
                what: "transition table",
                expected: raw.n_actions,
                got: raw.transition.len(),
            });
        }
        let mut transition = vec![0.0; raw.n_states * raw.n_actions * raw.n_states];
        for (a, per_action) in raw.transition.iter().enumerate() {
            if per_action.len() != raw.n_states {
                return Err(MdpError::BadShape {
                    what: "transition matrix",
                    expected: raw.n_states,
                    got: per_action.len(),
                });
            }
            for (s, row) in per_action.iter().enumerate() {
                if row.len() != raw.n_states {
                    return Err(MdpError::BadShape {
                        what: "transition row",
                        expected: raw.n_states,
                        got: row.len(),
                    });
                }
                let base = (s * raw.n_actions + a) * raw.n_states;
                transition[base..base + raw.n_states].copy_from_slice(row);
            }
        }
        Self::new(raw.n_states, raw.n_actions, raw.gamma, reward, transition)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, MdpError> {
        let text = std::fs::read_to_string(path).map_err(|e| MdpError::Json(e.to_string()))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let raw = MdpJson {
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            reward: (0..self.n_states)
                .map(|s| self.reward[s * self.n_actions..][..self.n_actions].to_vec())
                .collect(),
            transition: (0..self.n_actions)
                .map(|a| {
                    (0..self.n_states)
                        .map(|s| self.transition_row(s, a).to_vec())
                        .collect()
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("serializable")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[(s * self.n_actions + a) * self.n_states..][..self.n_states]
    }

    /// Optimality operator: `out(s,a) = r(s,a) + gamma * E_{s'}[max_a' q(s',a')]`.
    pub fn bellman_optimality(&self, q: &[f64], out: &mut [f64]) {
        debug_assert_eq!(q.len(), self.n_states * self.n_actions);
        let maxes: Vec<f64> = (0..self.n_states).map(|s| row_max(q, s, self.n_actions)).collect();
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let mut exp = 0.0;
                for (sp, &p) in self.transition_row(s, a).iter().enumerate() {
                    exp += p * maxes[sp];
                }
                out[s * self.n_actions + a] = self.reward(s, a) + self.gamma * exp;
            }
        }
    }

    /// Policy operator on state values:
    /// `out(s) = sum_a pi(a|s) * (r(s,a) + gamma * E_{s'}[v(s')])`.
    pub fn bellman_policy(&self, pi: &Policy, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n_states);
        for s in 0..self.n_states {
            let mut total = 0.0;
            for a in 0..self.n_actions {
                let weight = pi.prob(s, a);
                if weight == 0.0 {
                    continue;
                }
                let mut exp = 0.0;
                for (sp, &p) in self.transition_row(s, a).iter().enumerate() {
                    exp += p * v[sp];
                }
                total += weight * (self.reward(s, a) + self.gamma * exp);
            }
            out[s] = total;
        }
    }

    /// Optimal Q-table by value iteration.
    ///
    /// Iterates until successive tables differ by at most
    /// `tol * (1 - gamma) / (2 gamma)` in sup norm, which pins the result
    /// within `tol / 2` of the fixed point; the returned table additionally
    /// satisfies `||T q - q||_inf <= tol * (1 - gamma)`.
    pub fn solve_q_star(&self, tol: f64) -> Vec<f64> {
        let dim = self.n_states * self.n_actions;
        let mut q = vec![0.0; dim];
        let mut next = vec![0.0; dim];
        if self.gamma == 0.0 {
            self.bellman_optimality(&q, &mut next);
            return next;
        }
        let threshold = (tol * (1.0 - self.gamma) / (2.0 * self.gamma))
            .min(tol * (1.0 - self.gamma));
        loop {
            self.bellman_optimality(&q, &mut next);
            let diff = crate::norm::NormTag::Sup.eval_diff(&next, &q);
            std::mem::swap(&mut q, &mut next);
            if diff <= threshold {
                return q;
            }
        }
    }

    /// Value of a fixed policy by the exact linear solve
    /// `(I - gamma P_pi) v = r_pi`, certified to residual `1e-10`.
    pub fn solve_v_pi(&self, pi: &Policy) -> Result<Vec<f64>, MdpError> {
        let n = self.n_states;
        let mut a = DMatrix::<f64>::identity(n, n);
        let mut b = DVector::<f64>::zeros(n);
        for s in 0..n {
            for act in 0..self.n_actions {
                let weight = pi.prob(s, act);
                if weight == 0.0 {
                    continue;
                }
                b[s] += weight * self.reward(s, act);
                for (sp, &p) in self.transition_row(s, act).iter().enumerate() {
                    a[(s, sp)] -= self.gamma * weight * p;
                }
            }
        }
        let v = a
            .clone()
            .lu()
            .solve(&b)
            .ok_or(MdpError::EvaluationFailed { residual: f64::NAN })?;
        let residual = (&a * &v - &b).amax();
        if residual > 1e-10 {
            return Err(MdpError::EvaluationFailed { residual });
        }
        Ok(v.iter().copied().collect())
    }

    /// State kernel under a behavior policy:
    /// `P_mu(s, s') = sum_a mu(a|s) p(s'|s,a)`.
    pub fn state_kernel(&self, mu: &Policy) -> TransitionKernel {
        let n = self.n_states;
        let mut rows = vec![0.0; n * n];
        for s in 0..n {
            for a in 0..self.n_actions {
                let weight = mu.prob(s, a);
                if weight == 0.0 {
                    continue;
                }
                for (sp, &p) in self.transition_row(s, a).iter().enumerate() {
                    rows[s * n + sp] += weight * p;
                }
            }
        }
        TransitionKernel::new(n, rows).expect("policy mixture of stochastic rows")
    }
}

fn row_max(q: &[f64], s: usize, n_actions: usize) -> f64 {
    q[s * n_actions..(s + 1) * n_actions]
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

fn flatten2(
    table: &[Vec<f64>],
    rows: usize,
    cols: usize,
    what: &'static str,
) -> Result<Vec<f64>, MdpError> {
    if table.len() != rows {
        return Err(MdpError::BadShape {
            what,
            expected: rows,
            got: table.len(),
        });
    }
    let mut flat = Vec::with_capacity(rows * cols);
    for row in table {
        if row.len() != cols {
            return Err(MdpError::BadShape {
                what,
                expected: cols,
                got: row.len(),
            });
        }
        flat.extend_from_slice(row);
    }
    Ok(flat)
}

/// Stationary (Markov) policy: `probs[s * n_actions + a] = pi(a|s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self, MdpError> {
        if probs.len() != n_states * n_actions {
            return Err(MdpError::BadShape {
                what: "policy table",
                expected: n_states * n_actions,
                got: probs.len(),
            });
        }
        for s in 0..n_states {
            let row = &probs[s * n_actions..(s + 1) * n_actions];
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(MdpError::BadProbability { s, a: 0, value: p });
                }
                sum += p;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MdpError::BadPolicyRow { s, sum });
            }
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self, MdpError> {
        let rows: Vec<Vec<f64>> =
            serde_json::from_str(text).map_err(|e| MdpError::Json(e.to_string()))?;
        let n_states = rows.len();
        let n_actions = rows.first().map(Vec::len).unwrap_or(0);
        let flat = flatten2(&rows, n_states, n_actions, "policy table")?;
        Self::new(n_states, n_actions, flat)
    }

    pub fn from_json_file(path: &Path) -> Result<Self, MdpError> {
        let text = std::fs::read_to_string(path).map_err(|e| MdpError::Json(e.to_string()))?;
        Self::from_json_str(&text)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }
}

/// The noise chain observed by a sampled-update learner: states are
/// `(s, a, s')` triples with positive probability under the behavior policy.
#[derive(Clone, Debug)]
pub struct TripleChain {
    /// Triple for each chain state, in lexicographic order.
    pub triples: Vec<(usize, usize, usize)>,
    pub kernel: TransitionKernel,
    /// Dense lookup `(s * n_actions + a) * n_states + s' -> chain state`.
    index: Vec<Option<usize>>,
}

impl TripleChain {
    pub fn state_of(&self, s: usize, a: usize, sp: usize, mdp: &Mdp) -> Option<usize> {
        self.index[(s * mdp.n_actions() + a) * mdp.n_states() + sp]
    }
}

/// Builds the triple chain induced by running `mu` in `mdp`.
///
/// The transition law factors through the landing state:
/// `P((s,a,s') -> (s', a', s'')) = mu(a'|s') p(s''|s', a')`.
pub fn induced_triple_chain(mdp: &Mdp, mu: &Policy) -> Result<TripleChain, MdpError> {
    let ns = mdp.n_states();
    let na = mdp.n_actions();
    let mut triples = Vec::new();
    let mut index = vec![None; ns * na * ns];
    for s in 0..ns {
        for a in 0..na {
            if mu.prob(s, a) == 0.0 {
                continue;
            }
            for (sp, &p) in mdp.transition_row(s, a).iter().enumerate() {
                if p > 0.0 {
                    index[(s * na + a) * ns + sp] = Some(triples.len());
                    triples.push((s, a, sp));
                }
            }
        }
    }
    let n = triples.len();
    let mut rows = vec![0.0; n * n];
    for (from, &(_, _, sp)) in triples.iter().enumerate() {
        for (to, &(s2, a2, sp2)) in triples.iter().enumerate() {
            if s2 == sp {
                rows[from * n + to] = mu.prob(s2, a2) * mdp.transition_row(s2, a2)[sp2];
            }
        }
    }
    let kernel = TransitionKernel::new(n, rows)?;
    Ok(TripleChain {
        triples,
        kernel,
        index,
    })
}

/// Target-over-behavior likelihood ratios for off-policy corrections.
#[derive(Clone, Debug)]
pub struct ImportanceRatios {
    /// `ratios[s * n_actions + a] = pi(a|s) / mu(a|s)` (0 where both vanish).
    pub ratios: Vec<f64>,
    pub rho_max: f64,
}

/// Requires coverage: wherever `mu` puts zero mass, `pi` must too.
pub fn importance_ratios(pi: &Policy, mu: &Policy) -> Result<ImportanceRatios, MdpError> {
    let ns = pi.n_states();
    let na = pi.n_actions();
    let mut ratios = vec![0.0; ns * na];
    let mut rho_max = 0.0_f64;
    for s in 0..ns {
        for a in 0..na {
            let num = pi.prob(s, a);
            let den = mu.prob(s, a);
            if den == 0.0 {
                if num > 0.0 {
                    return Err(MdpError::CoverageViolation { s, a });
                }
                continue;
            }
            let r = num / den;
            ratios[s * na + a] = r;
            rho_max = rho_max.max(r);
        }
    }
    Ok(ImportanceRatios { ratios, rho_max })
}

/// Stationary distribution over triples together with its state marginal.
#[derive(Clone, Debug)]
pub struct TripleStationary {
    pub probs: Vec<f64>,
    /// `d_mu(s)`: marginal probability of the leading state.
    pub state_marginal: Vec<f64>,
}

pub fn triple_stationary(mdp: &Mdp, triple: &TripleChain) -> Result<TripleStationary, MdpError> {
    let stat = chain::stationary_distribution(&triple.kernel)?;
    let mut state_marginal = vec![0.0; mdp.n_states()];
    for (&(s, _, _), &p) in triple.triples.iter().zip(&stat.probs) {
        state_marginal[s] += p;
    }
    Ok(TripleStationary {
        probs: stat.probs,
        state_marginal,
    })
}
