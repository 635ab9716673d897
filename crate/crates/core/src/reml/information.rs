//! Derivatives of the marginal covariance with respect to the variance
//! components, and the REML information they induce.
//!
//! The covariance is linear in every component: `dS/dtau2 = Z Z'` and
//! `dS/dsigma2_i = I` on the rows of study `i`. For each component `a` this
//! module assembles (in the original, uncentred fixed-effect coordinates)
//!
//! * `P_a = -C' S^{-1} S_a S^{-1} C`
//! * `Q_ab = C' S^{-1} S_a S^{-1} S_b S^{-1} C`
//! * `T_ab = tr(S^{-1} S_a S^{-1} S_b)`
//!
//! from which the expected information is
//! `I_ab = (T_ab - 2 tr(Phi Q_ab) + tr(Phi P_a Phi P_b)) / 2` with
//! `Phi = (C' S^{-1} C)^{-1}`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{IpdDataset, VarianceComponents};

/// A variance parameter of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Tau2,
    /// One residual variance shared by all studies.
    Sigma2,
    /// Residual variance of study `i` (0-based).
    Sigma2Study(usize),
}

impl Component {
    pub fn list(k: usize, equal_variances: bool) -> Vec<Component> {
        let mut v = vec![Component::Tau2];
        if equal_variances {
            v.push(Component::Sigma2);
        } else {
            v.extend((0..k).map(Component::Sigma2Study));
        }
        v
    }

    fn kind_in(self, study: usize) -> Kind {
        match self {
            Component::Tau2 => Kind::Outer,
            Component::Sigma2 => Kind::Identity,
            Component::Sigma2Study(j) if j == study => Kind::Identity,
            Component::Sigma2Study(_) => Kind::Zero,
        }
    }

    /// Current value of this component in `vc`.
    pub fn value(self, vc: &VarianceComponents) -> f64 {
        match self {
            Component::Tau2 => vc.tau2,
            Component::Sigma2 => vc.sigma2[0],
            Component::Sigma2Study(i) => vc.sigma2[i],
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Zero,
    Outer,
    Identity,
}

#[derive(Debug, Clone)]
pub struct CovarianceDerivatives {
    pub components: Vec<Component>,
    pub p: Vec<DMatrix<f64>>,
    pub q: Vec<Vec<DMatrix<f64>>>,
    pub traces: DMatrix<f64>,
}

/// Per-study quantities in the local columns (intercept, slope[, treatment]).
struct Local {
    cols: Vec<usize>,
    /// C' S^{-1} C
    ctac: DMatrix<f64>,
    /// A' A with A = S^{-1} C
    ata: DMatrix<f64>,
    /// A' S^{-1} A
    atb: DMatrix<f64>,
    /// z' A
    az: Vec<f64>,
    /// z' S^{-1} A
    bz: Vec<f64>,
    zsz: f64,
    zs2z: f64,
    tr_s2: f64,
}

fn local_pieces(
    dataset: &IpdDataset,
    study: usize,
    tau2: f64,
    s2: f64,
    include_treatment: bool,
) -> Local {
    let k = dataset.k();
    let range = dataset.blocks()[study].clone();
    let n = range.len() as f64;
    let z: Vec<f64> = dataset.arms()[range.clone()]
        .iter()
        .map(|&t| if t { 1.0 } else { 0.0 })
        .collect();
    let m: f64 = z.iter().sum();
    let inv = 1.0 / s2;
    let gamma = tau2 / (s2 + tau2 * m);
    let shrink = 1.0 - gamma * m;

    let mut cols = vec![study, k + study];
    if include_treatment {
        cols.push(2 * k);
    }
    let q = cols.len();
    let c: Vec<Vec<f64>> = range
        .clone()
        .zip(&z)
        .map(|(r, &zv)| {
            let mut row = vec![1.0, dataset.baselines()[r]];
            if include_treatment {
                row.push(zv);
            }
            row
        })
        .collect();
    let zc: Vec<f64> = (0..q)
        .map(|j| c.iter().zip(&z).map(|(row, zv)| row[j] * zv).sum())
        .collect();
    // A = S^{-1} C, B = S^{-1} A, both via the rank-one inverse
    let a: Vec<Vec<f64>> = c
        .iter()
        .zip(&z)
        .map(|(row, &zv)| {
            (0..q)
                .map(|j| inv * (row[j] - gamma * zv * zc[j]))
                .collect()
        })
        .collect();
    let az: Vec<f64> = zc.iter().map(|v| inv * shrink * v).collect();
    let b: Vec<Vec<f64>> = a
        .iter()
        .zip(&z)
        .map(|(row, &zv)| {
            (0..q)
                .map(|j| inv * (row[j] - gamma * zv * az[j]))
                .collect()
        })
        .collect();
    let bz: Vec<f64> = az.iter().map(|v| inv * shrink * v).collect();

    let gram = |x: &[Vec<f64>], y: &[Vec<f64>]| {
        DMatrix::from_fn(q, q, |i, j| x.iter().zip(y).map(|(r, s)| r[i] * s[j]).sum())
    };
    Local {
        ctac: gram(&c, &a),
        ata: gram(&a, &a),
        atb: gram(&a, &b),
        az,
        bz,
        zsz: inv * m * shrink,
        zs2z: inv * inv * m * shrink * shrink,
        tr_s2: inv * inv * (n - 2.0 * gamma * m + gamma * gamma * m * m),
        cols,
    }
}

fn scatter(target: &mut DMatrix<f64>, cols: &[usize], local: &DMatrix<f64>, scale: f64) {
    for (i, &ci) in cols.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            target[(ci, cj)] += scale * local[(i, j)];
        }
    }
}

fn outer(x: &[f64], y: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), y.len(), |i, j| x[i] * y[j])
}

/// Fixed-effects information `C' S^{-1} C` (original coordinates) and the
/// covariance derivatives at `vc`.
pub fn derivatives(
    dataset: &IpdDataset,
    vc: &VarianceComponents,
    include_treatment: bool,
    components: &[Component],
) -> (DMatrix<f64>, CovarianceDerivatives) {
    let k = dataset.k();
    let p = 2 * k + usize::from(include_treatment);
    let nc = components.len();
    let mut info = DMatrix::zeros(p, p);
    let mut pm = vec![DMatrix::zeros(p, p); nc];
    let mut qm = vec![vec![DMatrix::zeros(p, p); nc]; nc];
    let mut traces = DMatrix::zeros(nc, nc);

    for i in 0..k {
        let l = local_pieces(dataset, i, vc.tau2, vc.sigma2[i], include_treatment);
        scatter(&mut info, &l.cols, &l.ctac, 1.0);
        let azaz = outer(&l.az, &l.az);
        let azbz = outer(&l.az, &l.bz);
        let bzaz = outer(&l.bz, &l.az);
        for (a, ca) in components.iter().enumerate() {
            match ca.kind_in(i) {
                Kind::Zero => continue,
                Kind::Outer => scatter(&mut pm[a], &l.cols, &azaz, -1.0),
                Kind::Identity => scatter(&mut pm[a], &l.cols, &l.ata, -1.0),
            }
            for (b, cb) in components.iter().enumerate() {
                let (qpart, tr) = match (ca.kind_in(i), cb.kind_in(i)) {
                    (_, Kind::Zero) | (Kind::Zero, _) => continue,
                    (Kind::Outer, Kind::Outer) => (&azaz * l.zsz, l.zsz * l.zsz),
                    (Kind::Outer, Kind::Identity) => (azbz.clone(), l.zs2z),
                    (Kind::Identity, Kind::Outer) => (bzaz.clone(), l.zs2z),
                    (Kind::Identity, Kind::Identity) => (l.atb.clone(), l.tr_s2),
                };
                scatter(&mut qm[a][b], &l.cols, &qpart, 1.0);
                traces[(a, b)] += tr;
            }
        }
    }
    (
        info,
        CovarianceDerivatives {
            components: components.to_vec(),
            p: pm,
            q: qm,
            traces,
        },
    )
}

impl CovarianceDerivatives {
    /// Expected REML information for the variance components given the
    /// fixed-effects covariance `phi`.
    pub fn expected_information(&self, phi: &DMatrix<f64>) -> DMatrix<f64> {
        let nc = self.components.len();
        let phi_p: Vec<DMatrix<f64>> = self.p.iter().map(|pa| phi * pa).collect();
        DMatrix::from_fn(nc, nc, |a, b| {
            let tr_q = (phi * &self.q[a][b]).trace();
            let tr_pp = (&phi_p[a] * &phi_p[b]).trace();
            0.5 * (self.traces[(a, b)] - 2.0 * tr_q + tr_pp)
        })
    }
}
