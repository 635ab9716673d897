//! Studentized permutation test on standardized residuals, the percentile
//! interval built from its distribution, and the grid-search interval that
//! inverts one-sided permutation tests.

mod engine;
mod search;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{check_alpha, InferenceResult, Method};
use crate::reml::FittedModel;

pub use engine::{permutation_distribution, standardized_residuals, PermutationEngine};
pub use search::{search_ci, search_interval, GridEvaluation, SearchGrid, SearchInterval, Side};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOptions {
    pub n_perm: usize,
    pub seed: u64,
    /// Variance structure for [`permutation_distribution`]; engines built
    /// from an existing fit follow that fit instead.
    pub equal_variances: bool,
    pub max_iter: usize,
    /// Largest tolerated share of failed refits.
    pub max_failed_fraction: f64,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        Self {
            n_perm: 10_000,
            seed: 0,
            equal_variances: true,
            max_iter: 500,
            max_failed_fraction: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationDraws {
    pub t_observed: f64,
    /// Statistics of the successful refits, in permutation order.
    pub t_perm: Vec<f64>,
    pub n_permutations: usize,
    pub seed: u64,
    pub n_failed: usize,
}

impl PermutationDraws {
    /// `N' = N - n_failed`.
    pub fn n_effective(&self) -> usize {
        self.t_perm.len()
    }

    /// `#{t_p >= t_observed}`.
    pub fn count_at_least(&self) -> usize {
        self.t_perm
            .iter()
            .filter(|&&t| t >= self.t_observed)
            .count()
    }

    /// Type-7 empirical quantile of the permuted statistics.
    pub fn quantile(&self, prob: f64) -> Result<f64> {
        if self.t_perm.is_empty() {
            return Err(Error::NoDraws);
        }
        let mut sorted = self.t_perm.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(type7_quantile(&sorted, prob))
    }
}

pub(crate) fn type7_quantile(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    TwoSided,
    /// `H1: theta < theta0`.
    Less,
    /// `H1: theta > theta0`.
    Greater,
}

pub fn permutation_p_value(draws: &PermutationDraws, alternative: Alternative) -> Result<f64> {
    permutation_p_value_with(draws, alternative, false)
}

/// With `smoothing` each one-sided p-value becomes `(1 + count) / (N' + 1)`.
pub fn permutation_p_value_with(
    draws: &PermutationDraws,
    alternative: Alternative,
    smoothing: bool,
) -> Result<f64> {
    let n = draws.n_effective();
    if n == 0 {
        return Err(Error::NoDraws);
    }
    let ge = draws.count_at_least();
    let (greater, less) = if smoothing {
        let d = (n + 1) as f64;
        ((1 + ge) as f64 / d, (1 + n - ge) as f64 / d)
    } else {
        let g = ge as f64 / n as f64;
        (g, 1.0 - g)
    };
    Ok(match alternative {
        Alternative::Greater => greater,
        Alternative::Less => less,
        Alternative::TwoSided => (2.0 * less).min(2.0 * greater).min(1.0),
    })
}

/// `[theta - t*_{1-a/2} se, theta - t*_{a/2} se]` from the permutation
/// quantiles, with the two-sided permutation p-value.
pub fn percentile_ci(
    fit: &FittedModel,
    draws: &PermutationDraws,
    alpha: f64,
) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let q_hi = draws.quantile(1.0 - alpha / 2.0)?;
    let q_lo = draws.quantile(alpha / 2.0)?;
    Ok(InferenceResult {
        method: Method::Permutation,
        estimate: fit.theta_hat,
        t_value: draws.t_observed,
        df: f64::INFINITY,
        se_used: fit.se_theta,
        p_value: permutation_p_value(draws, Alternative::TwoSided)?,
        ci_lower: fit.theta_hat - q_hi * fit.se_theta,
        ci_upper: fit.theta_hat - q_lo * fit.se_theta,
        alpha,
    })
}
