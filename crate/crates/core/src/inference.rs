//! Wald-normal, Satterthwaite and Kenward-Roger inference for the treatment
//! effect, and the shared result type used by every method.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist;
use crate::error::{Error, Result};
use crate::reml::FittedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Normal,
    Satterthwaite,
    KenwardRoger,
    /// Studentized permutation test with the percentile interval.
    Permutation,
    /// Grid-search interval inverting one-sided permutation tests.
    PermutationSearch,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Normal,
        Method::Satterthwaite,
        Method::KenwardRoger,
        Method::Permutation,
        Method::PermutationSearch,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Normal => "normal",
            Method::Satterthwaite => "satterthwaite",
            Method::KenwardRoger => "kenward-roger",
            Method::Permutation => "permutation",
            Method::PermutationSearch => "permutation-search",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "wald" => Method::Normal,
            "satterthwaite" | "s" => Method::Satterthwaite,
            "kenward-roger" | "kr" => Method::KenwardRoger,
            "permutation" | "p1" => Method::Permutation,
            "permutation-search" | "search" | "p2" => Method::PermutationSearch,
            other => {
                return Err(Error::InvalidArgument(format!("unknown method `{other}`")));
            }
        })
    }
}

/// Test and confidence interval for one method. `df` is infinite for the
/// normal and permutation methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub method: Method,
    pub estimate: f64,
    pub t_value: f64,
    #[serde(with = "df_serde")]
    pub df: f64,
    pub se_used: f64,
    pub p_value: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub alpha: f64,
}

impl InferenceResult {
    pub fn length(&self) -> f64 {
        self.ci_upper - self.ci_lower
    }

    pub fn covers(&self, theta: f64) -> bool {
        self.ci_lower <= theta && theta <= self.ci_upper
    }

    pub fn rejects(&self) -> bool {
        self.p_value <= self.alpha
    }
}

/// Infinite degrees of freedom serialize as the string `"inf"`.
mod df_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid df `{t}`"))),
        }
    }
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "alpha = {alpha} must lie in (0, 1)"
        )))
    }
}

fn check_fit(fit: &FittedModel) -> Result<()> {
    if fit.null_constrained {
        return Err(Error::InvalidArgument(
            "inference on theta needs a fit that includes the treatment effect".into(),
        ));
    }
    Ok(())
}

/// `estimate +- t_{df, 1-alpha/2} se` with its two-sided p-value.
pub fn t_interval(method: Method, estimate: f64, se: f64, df: f64, alpha: f64) -> InferenceResult {
    let q = dist::t_quantile(1.0 - alpha / 2.0, df);
    let t = estimate / se;
    InferenceResult {
        method,
        estimate,
        t_value: t,
        df,
        se_used: se,
        p_value: dist::t_two_sided_p(t, df),
        ci_lower: estimate - q * se,
        ci_upper: estimate + q * se,
        alpha,
    }
}

pub fn wald_normal(fit: &FittedModel, alpha: f64) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    check_fit(fit)?;
    Ok(t_interval(
        Method::Normal,
        fit.theta_hat,
        fit.se_theta,
        f64::INFINITY,
        alpha,
    ))
}

fn theta_column(fit: &FittedModel) -> DVector<f64> {
    fit.fixed_cov.column(fit.theta_index()).clone_owned()
}

/// Gradient of `Var(theta_hat) = ((C' S^{-1} C)^{-1})_{theta,theta}` with
/// respect to the variance components, in the order of `fit.components`.
pub fn theta_variance_gradient(fit: &FittedModel) -> Result<Vec<f64>> {
    check_fit(fit)?;
    let der = fit
        .derivatives()
        .ok_or_else(|| Error::DfUndefined("fit carries no covariance derivatives".into()))?;
    let phi = theta_column(fit);
    // d(Phi)/da = -Phi P_a Phi
    Ok(der.p.iter().map(|pa| -(phi.dot(&(pa * &phi)))).collect())
}

/// Moment-matched degrees of freedom `2 v^2 / (g' W g)`.
pub fn satterthwaite_from_parts(
    var_theta: f64,
    gradient: &[f64],
    vc_cov: &DMatrix<f64>,
) -> Result<f64> {
    let g = DVector::from_column_slice(gradient);
    let denom = g.dot(&(vc_cov * &g));
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::DfUndefined(format!("quadratic form g'Wg = {denom}")));
    }
    Ok(2.0 * var_theta * var_theta / denom)
}

pub fn satterthwaite_df(fit: &FittedModel) -> Result<f64> {
    let w = fit
        .vc_info_inv
        .as_ref()
        .ok_or_else(|| Error::DfUndefined("variance-component information is singular".into()))?;
    let g = theta_variance_gradient(fit)?;
    satterthwaite_from_parts(fit.se_theta * fit.se_theta, &g, w)
}

pub fn satterthwaite_ci(fit: &FittedModel, alpha: f64) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let df = satterthwaite_df(fit)?;
    Ok(t_interval(
        Method::Satterthwaite,
        fit.theta_hat,
        fit.se_theta,
        df,
        alpha,
    ))
}

/// The bias-corrected fixed-effects covariance `Phi_A = Phi + 2 Lambda`.
#[derive(Debug, Clone)]
pub struct KrAdjustment {
    pub adjusted_cov: DMatrix<f64>,
    /// `Lambda_{theta,theta}`; nonnegative in regular problems.
    pub lambda_theta: f64,
    pub se_kr: f64,
}

/// Kenward-Roger adjustment for a covariance that is linear in its
/// components (second-derivative terms vanish):
/// `Lambda = Phi [sum_ab W_ab (Q_ab - P_a Phi P_b)] Phi`.
pub fn kenward_roger_adjustment(fit: &FittedModel, vc_cov: &DMatrix<f64>) -> Result<KrAdjustment> {
    check_fit(fit)?;
    let der = fit
        .derivatives()
        .ok_or_else(|| Error::DfUndefined("fit carries no covariance derivatives".into()))?;
    let phi = &fit.fixed_cov;
    let p = phi.nrows();
    let nc = der.components.len();
    let mut inner = DMatrix::zeros(p, p);
    for a in 0..nc {
        let pa_phi = &der.p[a] * phi;
        for b in 0..nc {
            let w = vc_cov[(a, b)];
            if w == 0.0 {
                continue;
            }
            inner += (&der.q[a][b] - &pa_phi * &der.p[b]) * w;
        }
    }
    let lambda = phi * inner * phi;
    let adjusted = phi + &lambda * 2.0;
    let t = fit.theta_index();
    let v = adjusted[(t, t)];
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::AdjustmentFailed(v));
    }
    Ok(KrAdjustment {
        lambda_theta: lambda[(t, t)],
        se_kr: v.sqrt(),
        adjusted_cov: adjusted,
    })
}

pub fn kenward_roger(fit: &FittedModel, alpha: f64) -> Result<InferenceResult> {
    check_alpha(alpha)?;
    let df = satterthwaite_df(fit)?;
    let w = fit
        .vc_info_inv
        .as_ref()
        .expect("checked by satterthwaite_df");
    let adj = kenward_roger_adjustment(fit, w)?;
    Ok(t_interval(
        Method::KenwardRoger,
        fit.theta_hat,
        adj.se_kr,
        df,
        alpha,
    ))
}
