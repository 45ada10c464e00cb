//! Vector norms used throughout the lab.

use serde::{Deserialize, Serialize};

/// Identifies which norm an operator contracts in or an error is measured in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormTag {
    /// Maximum absolute coordinate.
    Sup,
    /// Euclidean norm.
    L2,
}

impl NormTag {
    /// Evaluates the tagged norm.
    pub fn eval(self, w: &[f64]) -> f64 {
        match self {
            NormTag::Sup => sup_norm(w),
            NormTag::L2 => l2_norm(w),
        }
    }

    /// Norm of the difference `a - b` without allocating.
    pub fn eval_diff(self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match self {
            NormTag::Sup => a
                .iter()
                .zip(b)
                .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs())),
            NormTag::L2 => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
        }
    }
}

/// `max_i |w_i|`.
pub fn sup_norm(w: &[f64]) -> f64 {
    w.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// `sqrt(sum_i w_i^2)`.
pub fn l2_norm(w: &[f64]) -> f64 {
    w.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sup_and_l2_agree_on_axis_vectors() {
        let w = [0.0, -3.0, 0.0];
        assert_eq!(sup_norm(&w), 3.0);
        assert_eq!(l2_norm(&w), 3.0);
    }

    #[test]
    fn diff_norm_matches_explicit_subtraction() {
        let a = [1.0, 2.0, -4.0];
        let b = [0.5, 2.5, -1.0];
        let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        assert_eq!(NormTag::Sup.eval_diff(&a, &b), sup_norm(&d));
        assert!((NormTag::L2.eval_diff(&a, &b) - l2_norm(&d)).abs() < 1e-15);
    }
}
