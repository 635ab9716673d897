use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    build_design, marginal_covariance, upper_triangular_factor, Factor, IpdDataset,
    VarianceComponents,
};
use crate::reml::{self, Component, FittedModel, ModelStats, LOG_TAU2_FLOOR};
use crate::rng;

use super::{PermutationDraws, PermutationOptions};

/// `(W')^{-1} (Y - X beta)` for a null-constrained fit.
pub fn standardized_residuals(dataset: &IpdDataset, null_fit: &FittedModel) -> Result<Vec<f64>> {
    if !null_fit.null_constrained {
        return Err(Error::InvalidArgument(
            "standardized residuals need the fit without the treatment effect".into(),
        ));
    }
    let fitted = fixed_part(dataset, &null_fit.beta_hat);
    let factor = covariance_factor(dataset, &null_fit.vc_hat)?;
    let raw: Vec<f64> = dataset
        .outcomes()
        .iter()
        .zip(&fitted)
        .map(|(y, f)| y - f)
        .collect();
    Ok(factor.solve_transpose(&raw))
}

/// `X beta` with `beta = (b0_1..b0_k, b1_1..b1_k)`.
fn fixed_part(dataset: &IpdDataset, beta: &[f64]) -> Vec<f64> {
    let k = dataset.k();
    let mut out = vec![0.0; dataset.n_total()];
    for (i, block) in dataset.blocks().iter().enumerate() {
        for r in block.clone() {
            out[r] = beta[i] + beta[k + i] * dataset.baselines()[r];
        }
    }
    out
}

fn covariance_factor(dataset: &IpdDataset, vc: &VarianceComponents) -> Result<Factor> {
    let design = build_design(dataset)?;
    upper_triangular_factor(&marginal_covariance(vc, &design))
}

/// Optimizer coordinates equivalent to the components of `fit`.
pub(crate) fn warm_coords(fit: &FittedModel) -> Vec<f64> {
    let vc = &fit.vc_hat;
    let log_tau2 = |scale: f64| {
        if vc.tau2 > 0.0 {
            (vc.tau2 / scale).ln().max(LOG_TAU2_FLOOR)
        } else {
            LOG_TAU2_FLOOR
        }
    };
    if is_equal(fit) {
        vec![log_tau2(vc.sigma2[0])]
    } else {
        let mut x = vec![log_tau2(1.0)];
        x.extend(vc.sigma2.iter().map(|s| s.ln()));
        x
    }
}

pub(crate) fn is_equal(fit: &FittedModel) -> bool {
    fit.components.contains(&Component::Sigma2)
}

/// Refits of the full model on responses rebuilt from permuted standardized
/// residuals of the null model.
#[derive(Debug, Clone)]
pub struct PermutationEngine {
    dataset: IpdDataset,
    stats: ModelStats,
    equal_variances: bool,
    max_iter: usize,
    max_failed_fraction: f64,
    fitted: Vec<f64>,
    factor: Factor,
    residuals: Vec<f64>,
    warm: Vec<f64>,
    theta_hat: f64,
    se_theta: f64,
}

impl PermutationEngine {
    /// Fits both models on `dataset` from scratch.
    pub fn new(dataset: &IpdDataset, opts: &PermutationOptions) -> Result<Self> {
        let stats = ModelStats::new(dataset, true);
        let (theta, se, opt) = reml::quick_t(&stats, opts.equal_variances, None, opts.max_iter)?;
        if !opt.converged {
            return Err(not_converged(dataset, opts, opt.iterations));
        }
        Self::assemble(
            dataset.clone(),
            stats,
            theta,
            se,
            opt.coords,
            opts.equal_variances,
            opts,
        )
    }

    /// Reuses the full-model fit of `dataset`; the variance structure follows
    /// the fit.
    pub fn from_fit(
        dataset: &IpdDataset,
        fit: &FittedModel,
        opts: &PermutationOptions,
    ) -> Result<Self> {
        Self::shifted_from_fit(dataset, fit, 0.0, opts)
    }

    /// Engine for `Y - theta0 Z 1` given the full fit on `Y`. The shift lies in
    /// the column space of the full design, so only the estimate moves.
    pub fn shifted_from_fit(
        dataset: &IpdDataset,
        fit: &FittedModel,
        theta0: f64,
        opts: &PermutationOptions,
    ) -> Result<Self> {
        if fit.null_constrained {
            return Err(Error::InvalidArgument(
                "the observed fit must include the treatment effect".into(),
            ));
        }
        let data = if theta0 == 0.0 {
            dataset.clone()
        } else {
            dataset.shifted(theta0)
        };
        let stats = ModelStats::new(&data, true);
        let equal = is_equal(fit);
        Self::assemble(
            data,
            stats,
            fit.theta_hat - theta0,
            fit.se_theta,
            warm_coords(fit),
            equal,
            opts,
        )
    }

    fn assemble(
        dataset: IpdDataset,
        stats: ModelStats,
        theta_hat: f64,
        se_theta: f64,
        warm: Vec<f64>,
        equal_variances: bool,
        opts: &PermutationOptions,
    ) -> Result<Self> {
        let null_stats = ModelStats::new(&dataset, false);
        let null = reml::locate(&null_stats, equal_variances, None, opts.max_iter)?;
        if !null.converged {
            return Err(not_converged(&dataset, opts, null.iterations));
        }
        let k = dataset.k();
        let sigma2 = if null.sigma2.len() == 1 {
            vec![null.sigma2[0]; k]
        } else {
            null.sigma2.clone()
        };
        let vc = VarianceComponents::new(null.tau2, sigma2)?;
        let ev = null_stats.evaluate(vc.tau2, &vc.sigma2)?;
        let beta = null_stats.uncentre_beta(&ev.beta);
        let fitted = fixed_part(&dataset, &beta);
        let factor = covariance_factor(&dataset, &vc)?;
        let raw: Vec<f64> = dataset
            .outcomes()
            .iter()
            .zip(&fitted)
            .map(|(y, f)| y - f)
            .collect();
        let residuals = factor.solve_transpose(&raw);
        Ok(Self {
            dataset,
            stats,
            equal_variances,
            max_iter: opts.max_iter,
            max_failed_fraction: opts.max_failed_fraction,
            fitted,
            factor,
            residuals,
            warm,
            theta_hat,
            se_theta,
        })
    }

    pub fn t_observed(&self) -> f64 {
        if self.theta_hat == 0.0 {
            0.0
        } else {
            self.theta_hat / self.se_theta
        }
    }

    pub fn standardized_residuals(&self) -> &[f64] {
        &self.residuals
    }

    fn refit(&self, eps: &[f64]) -> Option<f64> {
        let mut y = vec![0.0; eps.len()];
        self.factor.apply_transpose_into(eps, &mut y);
        for (v, f) in y.iter_mut().zip(&self.fitted) {
            *v += f;
        }
        let stats = self.stats.with_outcomes(&self.dataset, &y);
        match reml::quick_t(
            &stats,
            self.equal_variances,
            Some(&self.warm),
            self.max_iter,
        ) {
            Ok((theta, se, opt)) if opt.converged && se > 0.0 => {
                let t = theta / se;
                t.is_finite().then_some(t)
            }
            _ => None,
        }
    }

    /// t statistic after applying `perm` to the standardized residuals
    /// (`eps_p[j] = eps[perm[j]]`); `None` when the refit fails.
    pub fn t_for_permutation(&self, perm: &[usize]) -> Result<Option<f64>> {
        let n = self.residuals.len();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&j| j >= n || std::mem::replace(&mut seen[j], true))
        {
            return Err(Error::InvalidArgument(format!(
                "not a permutation of 0..{n}"
            )));
        }
        let eps: Vec<f64> = perm.iter().map(|&j| self.residuals[j]).collect();
        Ok(self.refit(&eps))
    }

    /// `n_perm` uniformly random permutations; permutation `p` draws from
    /// substream `(seed, p)`.
    pub fn draws(&self, n_perm: usize, seed: u64) -> Result<PermutationDraws> {
        if n_perm == 0 {
            return Err(Error::InvalidArgument(
                "at least one permutation is required".into(),
            ));
        }
        let results: Vec<Option<f64>> = (0..n_perm)
            .into_par_iter()
            .map(|p| {
                let mut rng = rng::substream(seed, &[p as u64]);
                let mut eps = self.residuals.clone();
                eps.shuffle(&mut rng);
                self.refit(&eps)
            })
            .collect();
        let t_perm: Vec<f64> = results.into_iter().flatten().collect();
        let n_failed = n_perm - t_perm.len();
        if n_failed as f64 > self.max_failed_fraction * n_perm as f64 {
            return Err(Error::UnreliablePermutation {
                failed: n_failed,
                total: n_perm,
            });
        }
        Ok(PermutationDraws {
            t_observed: self.t_observed(),
            t_perm,
            n_permutations: n_perm,
            seed,
            n_failed,
        })
    }
}

fn not_converged(dataset: &IpdDataset, opts: &PermutationOptions, iterations: usize) -> Error {
    // report the cold fit state for diagnosis
    let fit_opts = reml::FitOptions {
        equal_variances: opts.equal_variances,
        max_iter: opts.max_iter,
        ..Default::default()
    };
    match reml::fit_reml(dataset, &fit_opts) {
        Err(e) => e,
        Ok(fit) => Error::NotConverged {
            iterations,
            best: Box::new(fit),
        },
    }
}

/// Permutation distribution of the t statistic on `dataset`, fitted from scratch.
pub fn permutation_distribution(
    dataset: &IpdDataset,
    opts: &PermutationOptions,
) -> Result<PermutationDraws> {
    PermutationEngine::new(dataset, opts)?.draws(opts.n_perm, opts.seed)
}
