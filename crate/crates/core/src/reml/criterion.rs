//! Restricted log-likelihood from per-study sufficient statistics.
//!
//! Within study `i` the marginal covariance is `s2 I + t2 z z'`, whose inverse
//! is `(I - g z z') / s2` with `g = t2 / (s2 + t2 m)`. Every quadratic form the
//! criterion needs therefore reduces to inner products of the four vectors
//! `(1, y0, z, y)` and their sums over treated patients, so one evaluation
//! costs O(k) plus a dense solve in the fixed-effect dimension.
//!
//! Outcomes and baselines are centred within study. That leaves the column
//! space of the stratified design unchanged and avoids cancellation in
//! `y' S^{-1} y - u' beta`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::IpdDataset;

const ONE: usize = 0;
const BASE: usize = 1;
const TRT: usize = 2;
const OUT: usize = 3;

#[derive(Debug, Clone)]
pub(crate) struct StudyStats {
    pub n: f64,
    pub m: f64,
    gram: [[f64; 4]; 4],
    treated: [f64; 4],
    pub y_mean: f64,
    pub y0_mean: f64,
}

impl StudyStats {
    fn from_slices(y: &[f64], y0: &[f64], z: &[bool]) -> Self {
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let y0_mean = y0.iter().sum::<f64>() / n;
        let mut gram = [[0.0; 4]; 4];
        let mut treated = [0.0; 4];
        for ((&yv, &bv), &t) in y.iter().zip(y0).zip(z) {
            let v = [1.0, bv - y0_mean, if t { 1.0 } else { 0.0 }, yv - y_mean];
            for a in 0..4 {
                for b in a..4 {
                    gram[a][b] += v[a] * v[b];
                }
                if t {
                    treated[a] += v[a];
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                gram[a][b] = gram[b][a];
            }
        }
        Self {
            n,
            m: treated[TRT],
            gram,
            treated,
            y_mean,
            y0_mean,
        }
    }

    /// `a' S_i^{-1} b` for two of the basis vectors.
    #[inline]
    fn form(&self, a: usize, b: usize, gamma: f64, inv_s2: f64) -> f64 {
        (self.gram[a][b] - gamma * self.treated[a] * self.treated[b]) * inv_s2
    }
}

/// Sufficient statistics of one dataset for one model (with or without the
/// fixed treatment column).
#[derive(Debug, Clone)]
pub(crate) struct ModelStats {
    pub studies: Vec<StudyStats>,
    pub include_treatment: bool,
}

/// One evaluation of the GLS problem at fixed variance components.
pub(crate) struct Evaluation {
    pub logdet_sigma: f64,
    pub logdet_m: f64,
    /// `r' S^{-1} r` at the GLS estimate.
    pub quad: f64,
    /// GLS estimate in centred coordinates.
    pub beta: DVector<f64>,
    pub chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl Evaluation {
    pub fn criterion(&self) -> f64 {
        -0.5 * (self.logdet_sigma + self.logdet_m + self.quad)
    }
}

impl ModelStats {
    pub fn new(dataset: &IpdDataset, include_treatment: bool) -> Self {
        let studies = dataset
            .blocks()
            .iter()
            .map(|b| {
                StudyStats::from_slices(
                    &dataset.outcomes()[b.clone()],
                    &dataset.baselines()[b.clone()],
                    &dataset.arms()[b.clone()],
                )
            })
            .collect();
        Self {
            studies,
            include_treatment,
        }
    }

    /// Statistics for a new outcome vector on the same design.
    pub fn with_outcomes(&self, dataset: &IpdDataset, y: &[f64]) -> Self {
        let studies = dataset
            .blocks()
            .iter()
            .map(|b| {
                StudyStats::from_slices(
                    &y[b.clone()],
                    &dataset.baselines()[b.clone()],
                    &dataset.arms()[b.clone()],
                )
            })
            .collect();
        Self {
            studies,
            include_treatment: self.include_treatment,
        }
    }

    pub fn k(&self) -> usize {
        self.studies.len()
    }

    pub fn n_total(&self) -> f64 {
        self.studies.iter().map(|s| s.n).sum()
    }

    /// Number of fixed effects.
    pub fn p(&self) -> usize {
        2 * self.k() + usize::from(self.include_treatment)
    }

    /// Residual degrees of freedom `N - p`.
    pub fn residual_df(&self) -> f64 {
        self.n_total() - self.p() as f64
    }

    pub fn theta_index(&self) -> usize {
        2 * self.k()
    }

    /// Solves the GLS problem. `sigma2` has length 1 (shared) or k.
    pub fn evaluate(&self, tau2: f64, sigma2: &[f64]) -> Result<Evaluation> {
        let k = self.k();
        let p = self.p();
        let mut m = DMatrix::<f64>::zeros(p, p);
        let mut u = DVector::<f64>::zeros(p);
        let mut q = 0.0;
        let mut logdet_sigma = 0.0;

        let basis: &[usize] = if self.include_treatment {
            &[ONE, BASE, TRT]
        } else {
            &[ONE, BASE]
        };
        for (i, st) in self.studies.iter().enumerate() {
            let s2 = if sigma2.len() == 1 {
                sigma2[0]
            } else {
                sigma2[i]
            };
            let inv_s2 = 1.0 / s2;
            let gamma = tau2 / (s2 + tau2 * st.m);
            logdet_sigma += st.n * s2.ln() + (tau2 * st.m * inv_s2).ln_1p();

            let cols = [i, k + i, 2 * k];
            for (ai, &a) in basis.iter().enumerate() {
                for (bi, &b) in basis.iter().enumerate().skip(ai) {
                    let v = st.form(a, b, gamma, inv_s2);
                    m[(cols[ai], cols[bi])] += v;
                    if ai != bi {
                        m[(cols[bi], cols[ai])] += v;
                    }
                }
                u[cols[ai]] += st.form(a, OUT, gamma, inv_s2);
            }
            q += st.form(OUT, OUT, gamma, inv_s2);
        }

        let chol = nalgebra::Cholesky::new(m).ok_or_else(|| {
            Error::NonIdentifiable(
                "fixed-effects information is singular (constant baseline within a study?)".into(),
            )
        })?;
        let logdet_m = 2.0
            * chol
                .l_dirty()
                .diagonal()
                .iter()
                .map(|d| d.ln())
                .sum::<f64>();
        let beta = chol.solve(&u);
        let quad = (q - u.dot(&beta)).max(0.0);
        Ok(Evaluation {
            logdet_sigma,
            logdet_m,
            quad,
            beta,
            chol,
        })
    }

    /// Restricted log-likelihood with `sigma2` profiled out, as a function of
    /// `rho = ln(tau2 / sigma2)`. Returns `(criterion, sigma2_hat)`.
    pub fn profiled(&self, rho: f64) -> Result<(f64, f64)> {
        let ev = self.evaluate(rho.exp(), &[1.0])?;
        let df = self.residual_df();
        let s2 = (ev.quad / df).max(f64::MIN_POSITIVE);
        let value = -0.5 * (df * (s2.ln() + 1.0) + ev.logdet_sigma + ev.logdet_m);
        Ok((value, s2))
    }

    /// Variance of the treatment estimate and the estimate itself at the
    /// given components: `((C' S^{-1} C)^{-1})_{theta,theta}`.
    pub fn theta_and_variance(&self, tau2: f64, sigma2: &[f64]) -> Result<(f64, f64)> {
        debug_assert!(self.include_treatment);
        let ev = self.evaluate(tau2, sigma2)?;
        let t = self.theta_index();
        let mut e = DVector::zeros(self.p());
        e[t] = 1.0;
        let col = ev.chol.solve(&e);
        Ok((ev.beta[t], col[t]))
    }

    /// Maps centred-coordinate coefficients back to the original design:
    /// intercepts absorb the study means of outcome and baseline.
    pub fn uncentre_beta(&self, beta_c: &DVector<f64>) -> Vec<f64> {
        let k = self.k();
        let mut beta: Vec<f64> = beta_c.iter().copied().collect();
        for (i, st) in self.studies.iter().enumerate() {
            beta[i] = beta_c[i] + st.y_mean - beta_c[k + i] * st.y0_mean;
        }
        beta
    }
}
