use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::inference::{check_alpha, InferenceResult, Method};
use crate::model::IpdDataset;
use crate::reml::FittedModel;
use crate::rng;

use super::{permutation_p_value, Alternative, PermutationEngine, PermutationOptions};

/// Candidate values for the two interval bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchGrid {
    /// `[a, b]` searched from `b` downwards.
    pub lower_range: (f64, f64),
    /// `[a, b]` searched from `a` upwards.
    pub upper_range: (f64, f64),
    /// Points per side, including both ends.
    pub m_points: usize,
    pub alpha: f64,
}

impl SearchGrid {
    pub fn new(
        lower_range: (f64, f64),
        upper_range: (f64, f64),
        m_points: usize,
        alpha: f64,
    ) -> Result<Self> {
        check_alpha(alpha)?;
        if m_points < 2 {
            return Err(Error::InvalidArgument(
                "a search grid needs at least two points".into(),
            ));
        }
        for (a, b) in [lower_range, upper_range] {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                return Err(Error::InvalidArgument(format!(
                    "invalid search range [{a}, {b}]"
                )));
            }
        }
        Ok(Self {
            lower_range,
            upper_range,
            m_points,
            alpha,
        })
    }

    /// `theta +- [z_{1-a/2} se, t_{2,1-a/2} se]`.
    pub fn recommended(theta_hat: f64, se: f64, alpha: f64, m_points: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let z = dist::normal_quantile(1.0 - alpha / 2.0);
        let t2 = dist::t_quantile(1.0 - alpha / 2.0, 2.0);
        Self::around(theta_hat, se, z, t2, alpha, m_points)
    }

    /// `theta +- [z_{1-a/2} se, 4 se]`, the range used in the simulations.
    pub fn simulation(theta_hat: f64, se: f64, alpha: f64, m_points: usize) -> Result<Self> {
        check_alpha(alpha)?;
        let z = dist::normal_quantile(1.0 - alpha / 2.0);
        Self::around(theta_hat, se, z, 4.0_f64.max(z), alpha, m_points)
    }

    fn around(theta: f64, se: f64, near: f64, far: f64, alpha: f64, m: usize) -> Result<Self> {
        Self::new(
            (theta - far * se, theta - near * se),
            (theta + near * se, theta + far * se),
            m,
            alpha,
        )
    }

    fn points(&self, (a, b): (f64, f64)) -> Vec<f64> {
        let m = self.m_points;
        (0..m)
            .map(|i| {
                if i + 1 == m {
                    b
                } else {
                    a + i as f64 * (b - a) / (m - 1) as f64
                }
            })
            .collect()
    }

    /// Upper-bound candidates in search order (ascending).
    pub fn upper_points(&self) -> Vec<f64> {
        self.points(self.upper_range)
    }

    /// Lower-bound candidates in search order (descending).
    pub fn lower_points(&self) -> Vec<f64> {
        let mut v = self.points(self.lower_range);
        v.reverse();
        v
    }

    fn check_brackets(&self, theta_hat: f64) -> Result<()> {
        if self.upper_range.0 < theta_hat || self.lower_range.1 > theta_hat {
            return Err(Error::InvalidArgument(format!(
                "search ranges must lie on either side of the estimate {theta_hat}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    fn name(self) -> &'static str {
        match self {
            Side::Lower => "lower",
            Side::Upper => "upper",
        }
    }
}

/// One permutation test performed during the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub side: Side,
    pub theta0: f64,
    pub p_value: f64,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchInterval {
    pub lower: f64,
    pub upper: f64,
    pub evaluations: Vec<GridEvaluation>,
}

/// Bounds of the search interval. The test at grid point `i` of a side uses
/// the seed derived from `(opts.seed, side, i)`.
pub fn search_interval(
    dataset: &IpdDataset,
    fit: &FittedModel,
    grid: &SearchGrid,
    opts: &PermutationOptions,
) -> Result<SearchInterval> {
    grid.check_brackets(fit.theta_hat)?;
    let mut evaluations = Vec::new();
    let mut bound = |side: Side| -> Result<f64> {
        let (points, alternative, tag) = match side {
            Side::Upper => (grid.upper_points(), Alternative::Less, 1),
            Side::Lower => (grid.lower_points(), Alternative::Greater, 0),
        };
        for (i, &theta0) in points.iter().enumerate() {
            let engine = PermutationEngine::shifted_from_fit(dataset, fit, theta0, opts)?;
            let draws = engine.draws(opts.n_perm, rng::derive(opts.seed, &[tag, i as u64]))?;
            let p = permutation_p_value(&draws, alternative)?;
            evaluations.push(GridEvaluation {
                side,
                theta0,
                p_value: p,
                n_failed: draws.n_failed,
            });
            if p <= grid.alpha / 2.0 {
                return Ok(theta0);
            }
        }
        Err(Error::OpenEndpoint {
            side: side.name(),
            from: points[0],
            to: points[points.len() - 1],
        })
    };
    let lower = bound(Side::Lower)?;
    let upper = bound(Side::Upper)?;
    Ok(SearchInterval {
        lower,
        upper,
        evaluations,
    })
}

/// Search interval together with the two-sided permutation test of
/// `theta = 0` (run with the same number of permutations).
pub fn search_ci(
    dataset: &IpdDataset,
    fit: &FittedModel,
    grid: &SearchGrid,
    opts: &PermutationOptions,
) -> Result<InferenceResult> {
    let interval = search_interval(dataset, fit, grid, opts)?;
    let draws = PermutationEngine::from_fit(dataset, fit, opts)?
        .draws(opts.n_perm, rng::derive(opts.seed, &[2]))?;
    Ok(InferenceResult {
        method: Method::PermutationSearch,
        estimate: fit.theta_hat,
        t_value: draws.t_observed,
        df: f64::INFINITY,
        se_used: fit.se_theta,
        p_value: permutation_p_value(&draws, Alternative::TwoSided)?,
        ci_lower: interval.lower,
        ci_upper: interval.upper,
        alpha: grid.alpha,
    })
}
