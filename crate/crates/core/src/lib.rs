//! Permutation and small-sample inference for the overall treatment effect
//! in individual-participant-data meta-analysis.
//!
//! The model is the stratified-intercept random-effects linear model
//!
//! ```text
//! y_ij = b0_i + b1_i * y0_ij + u_i * z_ij + e_ij,   u_i ~ N(theta, tau2),   e_ij ~ N(0, sigma2_i)
//! ```
//!
//! fitted by REML. On top of the fit the crate provides Wald-normal,
//! Satterthwaite and Kenward-Roger inference, a studentized permutation test
//! on standardized residuals with two permutation confidence intervals, and a
//! Monte Carlo harness to compare them.
//!
//! ```no_run
//! use ipdperm::{fit_reml, FitOptions, IpdDataset};
//!
//! let data = IpdDataset::from_csv_path("trial.csv")?;
//! let fit = fit_reml(&data, &FitOptions::default())?;
//! let kr = ipdperm::kenward_roger(&fit, 0.05)?;
//! println!("theta = {:.3} [{:.3}, {:.3}]", fit.theta_hat, kr.ci_lower, kr.ci_upper);
//! # Ok::<(), ipdperm::Error>(())
//! ```

pub mod cli;
pub mod dist;
pub mod error;
pub mod inference;
pub mod model;
pub mod permutation;
pub mod reml;
pub mod rng;
pub mod simulation;

pub use error::{Error, Result};
pub use inference::{
    kenward_roger, kenward_roger_adjustment, satterthwaite_ci, satterthwaite_df, wald_normal,
    InferenceResult, Method,
};
pub use model::{
    build_design, marginal_covariance, upper_triangular_factor, IpdDataset, Record,
    VarianceComponents,
};
pub use permutation::{
    percentile_ci, permutation_distribution, permutation_p_value, search_ci,
    standardized_residuals, Alternative, PermutationDraws, PermutationOptions, SearchGrid,
};
pub use reml::{fit_reml, restricted_log_likelihood, t_statistic, FitOptions, FittedModel};
pub use simulation::{generate_dataset, run_scenario, sweep, ScenarioConfig, ScenarioMetrics};
