//! Monte Carlo evaluation of the inference methods on simulated
//! meta-analyses.

mod config;
mod generate;
mod table;

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, InferenceResult, Method};
use crate::permutation::{
    percentile_ci, search_interval, PermutationEngine, PermutationOptions, SearchGrid,
};
use crate::reml::{fit_reml, FitOptions, FittedModel};
use crate::rng;

pub use config::{preset, SimulationConfig, PRESETS};
pub use generate::generate_dataset;
pub use table::{ResultRow, ResultsTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeRegime {
    /// `0.8 U(15, 30) + 0.2 U(30, 100)`
    VerySmall,
    /// `U(30, 100)`
    Small,
    /// `U(100, 200)`
    Medium,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidualLaw {
    Normal,
    /// Student t with 3 df, scaled to variance `sigma^2`.
    #[serde(rename = "student_t3_scaled")]
    StudentT3Scaled,
    /// Centred log-normal(0, 1), scaled to variance `sigma^2`.
    LognormalScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaPattern {
    /// All residual standard deviations 1.
    Equal,
    /// `(0.9, 0.9, 0.9, 1.4)`; four studies only.
    Unequal,
}

impl SizeRegime {
    pub fn name(self) -> &'static str {
        match self {
            SizeRegime::VerySmall => "very_small",
            SizeRegime::Small => "small",
            SizeRegime::Medium => "medium",
        }
    }
}

impl ResidualLaw {
    pub fn name(self) -> &'static str {
        match self {
            ResidualLaw::Normal => "normal",
            ResidualLaw::StudentT3Scaled => "student_t3_scaled",
            ResidualLaw::LognormalScaled => "lognormal_scaled",
        }
    }
}

impl SigmaPattern {
    pub fn name(self) -> &'static str {
        match self {
            SigmaPattern::Equal => "equal",
            SigmaPattern::Unequal => "unequal",
        }
    }
}

/// One cell of the simulation grid together with the analysis settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub k: usize,
    pub size_regime: SizeRegime,
    pub theta: f64,
    pub tau: f64,
    pub sigma: SigmaPattern,
    pub residual_law: ResidualLaw,
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_sd: f64,
    /// Range of the per-study treated share.
    pub allocation: (f64, f64),
    pub replicates: usize,
    pub alpha: f64,
    /// Permutations for the test and the percentile interval.
    pub n_perm: usize,
    /// Permutations per grid point of the search interval.
    pub n_perm_search: usize,
    pub m_grid: usize,
    /// Variance structure of the analysis model.
    pub equal_variances: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            k: 4,
            size_regime: SizeRegime::Small,
            theta: 0.0,
            tau: 0.5,
            sigma: SigmaPattern::Equal,
            residual_law: ResidualLaw::Normal,
            intercepts: vec![0.9, 2.3, 0.3, 0.1],
            slopes: vec![0.8, 0.7, 0.9, 0.9],
            baseline_mean: 4.0,
            baseline_sd: 1.0,
            allocation: (0.5, 0.7),
            replicates: 1000,
            alpha: 0.05,
            n_perm: 10_000,
            n_perm_search: 2_000,
            m_grid: 5,
            equal_variances: true,
        }
    }
}

impl ScenarioConfig {
    pub fn sigma_values(&self) -> Vec<f64> {
        match self.sigma {
            SigmaPattern::Equal => vec![1.0; self.k],
            SigmaPattern::Unequal => vec![0.9, 0.9, 0.9, 1.4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 2 {
            return bad(format!(
                "k = {} but at least two studies are needed",
                self.k
            ));
        }
        if self.intercepts.len() != self.k || self.slopes.len() != self.k {
            return bad(format!("intercepts and slopes need {} entries", self.k));
        }
        if self.sigma == SigmaPattern::Unequal && self.k != 4 {
            return bad("the unequal sigma pattern is defined for k = 4".into());
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) || !self.theta.is_finite() {
            return bad(format!(
                "invalid theta = {} or tau = {}",
                self.theta, self.tau
            ));
        }
        if !(self.baseline_sd > 0.0) || !self.baseline_mean.is_finite() {
            return bad("baseline law needs a finite mean and positive sd".into());
        }
        let (lo, hi) = self.allocation;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!(
                "allocation range ({lo}, {hi}) must lie inside (0, 1)"
            ));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} must lie in (0, 1)", self.alpha));
        }
        if self.n_perm == 0 || self.n_perm_search == 0 {
            return bad("permutation counts must be positive".into());
        }
        if self.m_grid < 2 {
            return bad("m_grid must be at least 2".into());
        }
        Ok(())
    }
}

/// Result of one method on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodOutcome {
    pub method: Method,
    pub result: Option<InferenceResult>,
    pub error: Option<String>,
}

impl MethodOutcome {
    /// Rejection of `theta = 0`. For the search interval this is the dual
    /// decision `0 not in [lower, upper]`.
    pub fn rejects(&self) -> Option<bool> {
        let r = self.result.as_ref()?;
        Some(match self.method {
            Method::PermutationSearch => !r.covers(0.0),
            _ => r.rejects(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub index: usize,
    pub theta_hat: f64,
    pub se_theta: f64,
    pub tau2_hat: f64,
    pub outcomes: Vec<MethodOutcome>,
}

/// Seed of replicate `r`; the same in every cell of a sweep.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    rng::derive(seed, &[r as u64])
}

fn apply(
    method: Method,
    cfg: &ScenarioConfig,
    data: &crate::model::IpdDataset,
    fit: &FittedModel,
    seed: u64,
    engine: &mut Option<PermutationEngine>,
) -> Result<InferenceResult> {
    let alpha = cfg.alpha;
    match method {
        Method::Normal => inference::wald_normal(fit, alpha),
        Method::Satterthwaite => inference::satterthwaite_ci(fit, alpha),
        Method::KenwardRoger => inference::kenward_roger(fit, alpha),
        Method::Permutation => {
            if engine.is_none() {
                let opts = PermutationOptions {
                    equal_variances: cfg.equal_variances,
                    ..PermutationOptions::default()
                };
                *engine = Some(PermutationEngine::from_fit(data, fit, &opts)?);
            }
            let draws = engine
                .as_ref()
                .expect("set above")
                .draws(cfg.n_perm, rng::derive(seed, &[1]))?;
            percentile_ci(fit, &draws, alpha)
        }
        Method::PermutationSearch => {
            let grid = SearchGrid::simulation(fit.theta_hat, fit.se_theta, alpha, cfg.m_grid)?;
            let opts = PermutationOptions {
                n_perm: cfg.n_perm_search,
                seed: rng::derive(seed, &[2]),
                equal_variances: cfg.equal_variances,
                ..PermutationOptions::default()
            };
            let iv = search_interval(data, fit, &grid, &opts)?;
            Ok(InferenceResult {
                method,
                estimate: fit.theta_hat,
                t_value: fit.t_statistic(),
                df: f64::INFINITY,
                se_used: fit.se_theta,
                p_value: f64::NAN,
                ci_lower: iv.lower,
                ci_upper: iv.upper,
                alpha,
            })
        }
    }
}

/// Simulates replicate `r` and applies every method. An error means the
/// model could not be fitted.
pub fn run_replicate(
    cfg: &ScenarioConfig,
    methods: &[Method],
    seed: u64,
    r: usize,
) -> Result<ReplicateOutcome> {
    let rseed = replicate_seed(seed, r);
    let data = generate_dataset(cfg, rng::derive(rseed, &[0]));
    let fit = fit_reml(
        &data,
        &FitOptions {
            equal_variances: cfg.equal_variances,
            ..FitOptions::default()
        },
    )?;
    let mut engine = None;
    let outcomes = methods
        .iter()
        .map(|&m| match apply(m, cfg, &data, &fit, rseed, &mut engine) {
            Ok(res) => MethodOutcome {
                method: m,
                result: Some(res),
                error: None,
            },
            Err(e) => MethodOutcome {
                method: m,
                result: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    Ok(ReplicateOutcome {
        index: r,
        theta_hat: fit.theta_hat,
        se_theta: fit.se_theta,
        tau2_hat: fit.vc_hat.tau2,
        outcomes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: Method,
    /// Replicates where the method produced a result.
    pub n_ok: usize,
    pub rejection_rate: f64,
    pub rejection_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub mean_ci_length: f64,
    pub mean_df: f64,
    /// Replicates where the model was fitted but the method failed.
    pub failure_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMetrics {
    pub config: ScenarioConfig,
    pub seed: u64,
    /// Replicates whose model fit failed.
    pub replicate_failures: usize,
    /// More than 10% of replicates failed.
    pub failed: bool,
    pub methods: Vec<MethodMetrics>,
}

/// `sqrt(r (1 - r) / n)`.
pub fn mc_standard_error(rate: f64, n: usize) -> f64 {
    (rate * (1.0 - rate) / n as f64).sqrt()
}

fn aggregate(method: Method, theta: f64, reps: &[ReplicateOutcome]) -> MethodMetrics {
    let (mut n, mut rej, mut cov, mut len, mut df, mut failed) =
        (0usize, 0usize, 0usize, 0.0, 0.0, 0usize);
    for rep in reps {
        let Some(o) = rep.outcomes.iter().find(|o| o.method == method) else {
            continue;
        };
        match (&o.result, o.rejects()) {
            (Some(res), Some(reject)) => {
                n += 1;
                rej += usize::from(reject);
                cov += usize::from(res.covers(theta));
                len += res.length();
                df += res.df;
            }
            _ => failed += 1,
        }
    }
    let nf = n as f64;
    let (rr, cr) = (rej as f64 / nf, cov as f64 / nf);
    MethodMetrics {
        method,
        n_ok: n,
        rejection_rate: rr,
        rejection_mcse: mc_standard_error(rr, n),
        coverage: cr,
        coverage_mcse: mc_standard_error(cr, n),
        mean_ci_length: len / nf,
        mean_df: df / nf,
        failure_count: failed,
    }
}

/// Metrics without turning a failed scenario into an error.
pub fn evaluate_scenario(
    cfg: &ScenarioConfig,
    methods: &[Method],
    seed: u64,
) -> Result<ScenarioMetrics> {
    cfg.validate()?;
    let outcomes: Vec<Option<ReplicateOutcome>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| run_replicate(cfg, methods, seed, r).ok())
        .collect();
    let replicate_failures = outcomes.iter().filter(|o| o.is_none()).count();
    let reps: Vec<ReplicateOutcome> = outcomes.into_iter().flatten().collect();
    Ok(ScenarioMetrics {
        config: cfg.clone(),
        seed,
        replicate_failures,
        failed: replicate_failures as f64 > 0.1 * cfg.replicates as f64,
        methods: methods
            .iter()
            .map(|&m| aggregate(m, cfg.theta, &reps))
            .collect(),
    })
}

pub fn run_scenario(
    cfg: &ScenarioConfig,
    methods: &[Method],
    seed: u64,
) -> Result<ScenarioMetrics> {
    let m = evaluate_scenario(cfg, methods, seed)?;
    if m.failed {
        return Err(Error::ScenarioFailed {
            failed: m.replicate_failures,
            total: cfg.replicates,
        });
    }
    Ok(m)
}

/// Every cell with the same master seed; failed cells are kept and flagged.
pub fn sweep(grid: &[ScenarioConfig], methods: &[Method], seed: u64) -> Result<ResultsTable> {
    sweep_with_progress(grid, methods, seed, &|_, _| {})
}

/// [`sweep`], calling `progress(done, total)` after each finished cell.
pub fn sweep_with_progress(
    grid: &[ScenarioConfig],
    methods: &[Method],
    seed: u64,
    progress: &(dyn Fn(usize, usize) + Sync),
) -> Result<ResultsTable> {
    for cfg in grid {
        cfg.validate()?;
    }
    let done = AtomicUsize::new(0);
    let cells: Vec<ScenarioMetrics> = grid
        .par_iter()
        .map(|cfg| {
            let m = evaluate_scenario(cfg, methods, seed);
            progress(done.fetch_add(1, Ordering::SeqCst) + 1, grid.len());
            m
        })
        .collect::<Result<_>>()?;
    Ok(ResultsTable::from_metrics(&cells))
}
