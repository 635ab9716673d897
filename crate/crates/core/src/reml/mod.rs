//! Restricted maximum likelihood for the stratified-intercept model.
//!
//! The fixed effects are always profiled out by generalised least squares.
//! With a shared residual variance the residual scale is profiled as well,
//! leaving a one-dimensional search over `ln(tau2 / sigma2)`; per-study
//! variances are fitted by projected BFGS over the log components.

mod criterion;
mod information;
mod optimize;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IpdDataset, VarianceComponents};

pub(crate) use criterion::ModelStats;
pub use information::{derivatives, Component, CovarianceDerivatives};
use optimize::{bfgs_max, bracket_from, brent_max, BfgsSettings};

/// Lower limit for `ln tau2` (and `ln(tau2/sigma2)` in the profiled search).
/// An estimate at this floor is reported as `tau2 = 0`.
pub const LOG_TAU2_FLOOR: f64 = -27.631_021_115_928_547; // ln(1e-12)
const LOG_RATIO_CEIL: f64 = 23.025_850_929_940_457; // ln(1e10)
const SCAN_STEP: f64 = 1.5;
const X_TOL: f64 = 1e-8;
const HESSIAN_STEP: f64 = 1e-4;
/// Criterion difference below which `tau2 = 0` is preferred.
const BOUNDARY_TOL: f64 = 1e-9;

/// How the covariance of the variance-component estimates is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InformationKind {
    /// `tr(P S_a P S_b) / 2`, evaluated in closed form.
    #[default]
    Expected,
    /// Negative central-difference Hessian of the restricted log-likelihood
    /// (step `1e-4` on the log scale), mapped to the variance scale.
    Observed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub equal_variances: bool,
    /// Include the fixed treatment column; `false` fits the null model.
    pub include_treatment: bool,
    /// Hypothesised effect subtracted from treated outcomes before fitting.
    pub theta_offset: f64,
    pub information: InformationKind,
    pub max_iter: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            equal_variances: true,
            include_treatment: true,
            theta_offset: 0.0,
            information: InformationKind::default(),
            max_iter: 500,
        }
    }
}

impl FitOptions {
    pub fn null_model(mut self) -> Self {
        self.include_treatment = false;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    /// Treatment effect estimate (0 for a null-constrained fit).
    pub theta_hat: f64,
    /// Standard error of `theta_hat` (0 for a null-constrained fit).
    pub se_theta: f64,
    /// `(b0_1..b0_k, b1_1..b1_k)`.
    pub beta_hat: Vec<f64>,
    pub vc_hat: VarianceComponents,
    /// Asymptotic covariance of `(beta, theta)`, theta last.
    pub fixed_cov: DMatrix<f64>,
    /// Order of the rows of `vc_info_inv`.
    pub components: Vec<Component>,
    /// Asymptotic covariance of the variance-component estimates; `None`
    /// when the information matrix is singular.
    pub vc_info_inv: Option<DMatrix<f64>>,
    pub restricted_loglik: f64,
    pub converged: bool,
    pub null_constrained: bool,
    pub tau2_on_boundary: bool,
    pub iterations: usize,
    pub residual_df: f64,
    #[serde(skip)]
    pub(crate) derivatives: Option<CovarianceDerivatives>,
}

impl FittedModel {
    pub fn t_statistic(&self) -> f64 {
        t_statistic(self)
    }

    pub fn derivatives(&self) -> Option<&CovarianceDerivatives> {
        self.derivatives.as_ref()
    }

    /// Index of theta in `fixed_cov`.
    pub fn theta_index(&self) -> usize {
        self.beta_hat.len()
    }
}

pub fn t_statistic(fit: &FittedModel) -> f64 {
    if fit.theta_hat == 0.0 {
        return 0.0;
    }
    fit.theta_hat / fit.se_theta
}

/// REML criterion `-(log|S| + log|C' S^{-1} C| + r' S^{-1} r) / 2`, additive
/// constant dropped.
pub fn restricted_log_likelihood(
    vc: &VarianceComponents,
    dataset: &IpdDataset,
    include_treatment: bool,
) -> Result<f64> {
    vc.validate()?;
    if vc.k() != dataset.k() {
        return Err(Error::InvalidArgument(format!(
            "{} residual variances for {} studies",
            vc.k(),
            dataset.k()
        )));
    }
    let stats = ModelStats::new(dataset, include_treatment);
    Ok(stats.evaluate(vc.tau2, &vc.sigma2)?.criterion())
}

/// Location of the optimum, before the expensive post-processing.
#[derive(Debug, Clone)]
pub(crate) struct Optimum {
    pub tau2: f64,
    pub sigma2: Vec<f64>,
    /// Optimizer coordinates, reusable as a warm start.
    pub coords: Vec<f64>,
    #[allow(dead_code)]
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub on_boundary: bool,
}

fn check_df(stats: &ModelStats) -> Result<()> {
    if stats.residual_df() < 1.0 {
        return Err(Error::NonIdentifiable(format!(
            "{} observations leave no residual degrees of freedom for {} fixed effects",
            stats.n_total(),
            stats.p()
        )));
    }
    Ok(())
}

/// Shared-variance optimum. Without a warm start the whole admissible range
/// of `ln(tau2/sigma2)` is scanned before refining.
pub(crate) fn optimize_equal(
    stats: &ModelStats,
    warm: Option<f64>,
    max_iter: usize,
) -> Result<Optimum> {
    let f = |rho: f64| {
        stats
            .profiled(rho)
            .map(|v| v.0)
            .unwrap_or(f64::NEG_INFINITY)
    };
    // surface identifiability errors before searching
    stats.profiled(0.0)?;

    let (lo, hi) = match warm {
        Some(w) => bracket_from(&f, w, 1.0, LOG_TAU2_FLOOR, LOG_RATIO_CEIL),
        None => {
            let mut best = (LOG_TAU2_FLOOR, f(LOG_TAU2_FLOOR));
            let mut rho = LOG_TAU2_FLOOR;
            while rho < LOG_RATIO_CEIL {
                rho = (rho + SCAN_STEP).min(LOG_RATIO_CEIL);
                let v = f(rho);
                if v > best.1 {
                    best = (rho, v);
                }
            }
            (
                (best.0 - SCAN_STEP).max(LOG_TAU2_FLOOR),
                (best.0 + SCAN_STEP).min(LOG_RATIO_CEIL),
            )
        }
    };
    let m = brent_max(f, lo, hi, X_TOL, max_iter);
    let mut rho = m.x[0];
    // the criterion is flat as tau2 -> 0; snap to the floor when it is as good
    if f(LOG_TAU2_FLOOR) >= m.value - BOUNDARY_TOL {
        rho = LOG_TAU2_FLOOR;
    }
    let (value, s2) = stats.profiled(rho)?;
    let on_boundary = rho - LOG_TAU2_FLOOR < 1e-6;
    Ok(Optimum {
        tau2: if on_boundary { 0.0 } else { rho.exp() * s2 },
        sigma2: vec![s2],
        coords: vec![rho],
        value,
        iterations: m.iterations,
        converged: m.converged,
        on_boundary,
    })
}

/// Per-study variances by projected BFGS over `(ln tau2, ln sigma2_i)`.
pub(crate) fn optimize_unequal(
    stats: &ModelStats,
    start: &[f64],
    max_iter: usize,
) -> Result<Optimum> {
    let k = stats.k();
    let f = |x: &[f64]| {
        let s2: Vec<f64> = x[1..].iter().map(|v| v.exp()).collect();
        stats
            .evaluate(x[0].exp(), &s2)
            .map(|e| e.criterion())
            .unwrap_or(f64::NEG_INFINITY)
    };
    let s2: Vec<f64> = start[1..].iter().map(|v| v.exp()).collect();
    stats.evaluate(start[0].exp(), &s2)?;

    let mut lower = vec![-700.0; k + 1];
    lower[0] = LOG_TAU2_FLOOR;
    let settings = BfgsSettings {
        max_iter,
        ..BfgsSettings::default()
    };
    let mut m = bfgs_max(f, start, &lower, &settings);
    let mut at_floor = m.x.clone();
    at_floor[0] = LOG_TAU2_FLOOR;
    let floor_value = f(&at_floor);
    if floor_value >= m.value - BOUNDARY_TOL {
        m.x = at_floor;
        m.value = m.value.max(floor_value);
    }
    let on_boundary = m.x[0] - LOG_TAU2_FLOOR < 1e-6;
    Ok(Optimum {
        tau2: if on_boundary { 0.0 } else { m.x[0].exp() },
        sigma2: m.x[1..].iter().map(|v| v.exp()).collect(),
        coords: m.x,
        value: m.value,
        iterations: m.iterations,
        converged: m.converged,
        on_boundary,
    })
}

/// Optimum for either variance structure; `warm` are coordinates of a
/// previous optimum of the same structure.
pub(crate) fn locate(
    stats: &ModelStats,
    equal_variances: bool,
    warm: Option<&[f64]>,
    max_iter: usize,
) -> Result<Optimum> {
    check_df(stats)?;
    if equal_variances {
        return optimize_equal(stats, warm.map(|w| w[0]), max_iter);
    }
    let start = match warm {
        Some(w) => w.to_vec(),
        None => {
            let eq = optimize_equal(stats, None, max_iter)?;
            let mut x = vec![(eq.tau2.max(1e-12)).ln()];
            x.extend(std::iter::repeat_n(eq.sigma2[0].ln(), stats.k()));
            x
        }
    };
    optimize_unequal(stats, &start, max_iter)
}

pub fn fit_reml(dataset: &IpdDataset, opts: &FitOptions) -> Result<FittedModel> {
    let shifted;
    let data = if opts.theta_offset != 0.0 {
        shifted = dataset.shifted(opts.theta_offset);
        &shifted
    } else {
        dataset
    };
    let stats = ModelStats::new(data, opts.include_treatment);
    let opt = locate(&stats, opts.equal_variances, None, opts.max_iter)?;
    let fit = finalize(data, &stats, &opt, opts)?;
    if !fit.converged {
        return Err(Error::NotConverged {
            iterations: fit.iterations,
            best: Box::new(fit),
        });
    }
    Ok(fit)
}

fn finalize(
    data: &IpdDataset,
    stats: &ModelStats,
    opt: &Optimum,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let k = data.k();
    let sigma2 = if opt.sigma2.len() == 1 {
        vec![opt.sigma2[0]; k]
    } else {
        opt.sigma2.clone()
    };
    let vc = VarianceComponents::new(opt.tau2, sigma2)?;
    let ev = stats.evaluate(vc.tau2, &vc.sigma2)?;
    let mut beta = stats.uncentre_beta(&ev.beta);

    let components = Component::list(k, opts.equal_variances);
    let (info, der) = derivatives(data, &vc, opts.include_treatment, &components);
    let fixed_cov = info
        .cholesky()
        .ok_or_else(|| Error::NonIdentifiable("fixed-effects information is singular".into()))?
        .inverse();

    let (theta_hat, se_theta) = if opts.include_treatment {
        let t = stats.theta_index();
        let theta = beta.pop().expect("theta present");
        (theta, fixed_cov[(t, t)].sqrt())
    } else {
        (0.0, 0.0)
    };

    let vc_info_inv = match opts.information {
        InformationKind::Expected => der.expected_information(&fixed_cov).try_inverse(),
        InformationKind::Observed => {
            observed_information(stats, opts.equal_variances, &vc, opt.on_boundary)
                .and_then(|m| invert_with_boundary(m, opt.on_boundary))
        }
    }
    .filter(|m| m.iter().all(|v| v.is_finite()));

    Ok(FittedModel {
        theta_hat,
        se_theta,
        beta_hat: beta,
        vc_hat: vc,
        fixed_cov,
        components,
        vc_info_inv,
        restricted_loglik: ev.criterion(),
        converged: opt.converged,
        null_constrained: !opts.include_treatment,
        tau2_on_boundary: opt.on_boundary,
        iterations: opt.iterations,
        residual_df: stats.residual_df(),
        derivatives: Some(der),
    })
}

/// Negative Hessian of the criterion with respect to the natural variance
/// components, by central differences on the log scale.
fn observed_information(
    stats: &ModelStats,
    equal_variances: bool,
    vc: &VarianceComponents,
    on_boundary: bool,
) -> Option<DMatrix<f64>> {
    let mut x = vec![vc.tau2.max(1e-12).ln()];
    if equal_variances {
        x.push(vc.sigma2[0].ln());
    } else {
        x.extend(vc.sigma2.iter().map(|s| s.ln()));
    }
    let f = |x: &[f64]| -> f64 {
        let s2: Vec<f64> = x[1..].iter().map(|v| v.exp()).collect();
        stats
            .evaluate(x[0].exp(), &s2)
            .map(|e| e.criterion())
            .unwrap_or(f64::NAN)
    };
    let n = x.len();
    let h = HESSIAN_STEP;
    let f0 = f(&x);
    let mut hess = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for a in 0..n {
        for b in a..n {
            let v = if a == b {
                xp[a] = x[a] + h;
                let fp = f(&xp);
                xp[a] = x[a] - h;
                let fm = f(&xp);
                xp[a] = x[a];
                (fp - 2.0 * f0 + fm) / (h * h)
            } else {
                let mut eval = |da: f64, db: f64| {
                    xp[a] = x[a] + da;
                    xp[b] = x[b] + db;
                    let v = f(&xp);
                    xp[a] = x[a];
                    xp[b] = x[b];
                    v
                };
                (eval(h, h) - eval(h, -h) - eval(-h, h) + eval(-h, -h)) / (4.0 * h * h)
            };
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    // chain rule to the variance scale (gradient term vanishes at the optimum)
    let scale: Vec<f64> = x.iter().map(|v| v.exp()).collect();
    let info = DMatrix::from_fn(n, n, |a, b| -hess[(a, b)] / (scale[a] * scale[b]));
    if on_boundary {
        // tau2 pinned at zero: treat it as known
        let mut m = info;
        for j in 0..n {
            m[(0, j)] = 0.0;
            m[(j, 0)] = 0.0;
        }
        return Some(m);
    }
    Some(info)
}

fn invert_with_boundary(info: DMatrix<f64>, on_boundary: bool) -> Option<DMatrix<f64>> {
    if !on_boundary {
        return info.try_inverse();
    }
    let n = info.nrows();
    let sub = info
        .view((1, 1), (n - 1, n - 1))
        .clone_owned()
        .try_inverse()?;
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((1, 1), (n - 1, n - 1)).copy_from(&sub);
    Some(out)
}

/// Lightweight refit returning only `(theta_hat, se, optimum)`; used for the
/// permutation refits where the variance-component information is not needed.
pub(crate) fn quick_t(
    stats: &ModelStats,
    equal_variances: bool,
    warm: Option<&[f64]>,
    max_iter: usize,
) -> Result<(f64, f64, Optimum)> {
    let opt = locate(stats, equal_variances, warm, max_iter)?;
    let (theta, var) = stats.theta_and_variance(opt.tau2, &opt.sigma2)?;
    Ok((theta, var.sqrt(), opt))
}
