//! Design matrices, variance components and the block-diagonal marginal
//! covariance `tau^2 Z Z' + R` with its upper-triangular factor.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::IpdDataset;

/// `X` holds the stratified intercepts then the stratified baseline slopes,
/// so `beta = (b0_1..b0_k, b1_1..b1_k)`. `Z` has one treatment-indicator
/// column per study.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub x: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub study_blocks: Vec<Range<usize>>,
}

impl DesignMatrices {
    pub fn k(&self) -> usize {
        self.study_blocks.len()
    }

    /// The treatment column `Z 1_k`.
    pub fn treatment_column(&self) -> DVector<f64> {
        DVector::from_fn(self.z.nrows(), |r, _| self.z.row(r).sum())
    }
}

pub fn build_design(dataset: &IpdDataset) -> Result<DesignMatrices> {
    let k = dataset.k();
    let n = dataset.n_total();
    let mut x = DMatrix::zeros(n, 2 * k);
    let mut z = DMatrix::zeros(n, k);
    for (i, block) in dataset.blocks().iter().enumerate() {
        let arms = &dataset.arms()[block.clone()];
        if arms.iter().all(|&t| t) || arms.iter().all(|&t| !t) {
            return Err(Error::NonIdentifiable(format!(
                "study {} has patients in only one arm",
                dataset.labels()[i]
            )));
        }
        for r in block.clone() {
            x[(r, i)] = 1.0;
            x[(r, k + i)] = dataset.baselines()[r];
            if dataset.arms()[r] {
                z[(r, i)] = 1.0;
            }
        }
    }
    Ok(DesignMatrices {
        x,
        z,
        study_blocks: dataset.blocks().to_vec(),
    })
}

/// Between-study variance `tau2` and per-study residual variances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub tau2: f64,
    pub sigma2: Vec<f64>,
}

impl VarianceComponents {
    pub fn new(tau2: f64, sigma2: Vec<f64>) -> Result<Self> {
        let vc = Self { tau2, sigma2 };
        vc.validate()?;
        Ok(vc)
    }

    pub fn equal(tau2: f64, sigma2: f64, k: usize) -> Result<Self> {
        Self::new(tau2, vec![sigma2; k])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau2 >= 0.0 && self.tau2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "tau2 = {} must be >= 0",
                self.tau2
            )));
        }
        if self.sigma2.is_empty() || self.sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(
                "residual variances must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.sigma2.len()
    }
}

/// Block-diagonal covariance: one dense block per study.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub blocks: Vec<DMatrix<f64>>,
    pub study_blocks: Vec<Range<usize>>,
}

impl Covariance {
    pub fn dim(&self) -> usize {
        self.study_blocks.last().map_or(0, |b| b.end)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut full = DMatrix::zeros(self.dim(), self.dim());
        for (block, range) in self.blocks.iter().zip(&self.study_blocks) {
            full.view_mut((range.start, range.start), (range.len(), range.len()))
                .copy_from(block);
        }
        full
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

pub fn marginal_covariance(vc: &VarianceComponents, design: &DesignMatrices) -> Covariance {
    let blocks = design
        .study_blocks
        .iter()
        .enumerate()
        .map(|(i, range)| {
            let n = range.len();
            let z: Vec<f64> = range.clone().map(|r| design.z[(r, i)]).collect();
            DMatrix::from_fn(n, n, |a, b| {
                let mut v = vc.tau2 * z[a] * z[b];
                if a == b {
                    v += vc.sigma2[i];
                }
                v
            })
        })
        .collect();
    Covariance {
        blocks,
        study_blocks: design.study_blocks.clone(),
    }
}

/// `W` with `W' W = Sigma`, stored blockwise as the lower factor `L = W'`.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    lower: Vec<DMatrix<f64>>,
    study_blocks: Vec<Range<usize>>,
}

pub fn upper_triangular_factor(cov: &Covariance) -> Result<Factor> {
    let lower = cov
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| {
            nalgebra::Cholesky::new(b.clone())
                .map(|c| c.unpack())
                .ok_or(Error::Factorization { study: i + 1 })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Factor {
        lower,
        study_blocks: cov.study_blocks.clone(),
    })
}

impl Factor {
    /// Upper-triangular block `W_i` of study `i` (0-based).
    pub fn upper(&self, i: usize) -> DMatrix<f64> {
        self.lower[i].transpose()
    }

    pub fn to_dense_upper(&self) -> DMatrix<f64> {
        let n = self.study_blocks.last().map_or(0, |b| b.end);
        let mut full = DMatrix::zeros(n, n);
        for (l, range) in self.lower.iter().zip(&self.study_blocks) {
            full.view_mut((range.start, range.start), (range.len(), range.len()))
                .copy_from(&l.transpose());
        }
        full
    }

    /// `W' v`.
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        self.apply_transpose_into(v, &mut out);
        out
    }

    pub(crate) fn apply_transpose_into(&self, v: &[f64], out: &mut [f64]) {
        for (l, range) in self.lower.iter().zip(&self.study_blocks) {
            let off = range.start;
            for a in 0..range.len() {
                let mut acc = 0.0;
                for b in 0..=a {
                    acc += l[(a, b)] * v[off + b];
                }
                out[off + a] = acc;
            }
        }
    }

    /// `(W')^{-1} v` by forward substitution.
    pub fn solve_transpose(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for (l, range) in self.lower.iter().zip(&self.study_blocks) {
            let off = range.start;
            for a in 0..range.len() {
                let mut acc = v[off + a];
                for b in 0..a {
                    acc -= l[(a, b)] * out[off + b];
                }
                out[off + a] = acc / l[(a, a)];
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Record;
    use approx::assert_relative_eq;

    #[test]
    fn single_study_pattern() {
        let ds = IpdDataset::from_records(vec![
            Record::new(1, 1.0, 0.5, true),
            Record::new(1, 2.0, 1.5, true),
            Record::new(1, 3.0, 2.5, false),
        ])
        .unwrap();
        let d = build_design(&ds).unwrap();
        assert_eq!(d.x.shape(), (3, 2));
        assert_eq!(d.x.column(0).as_slice(), &[1.0, 1.0, 1.0]);
        assert_eq!(d.x.column(1).as_slice(), &[0.5, 1.5, 2.5]);
        assert_eq!(d.z.column(0).as_slice(), &[1.0, 1.0, 0.0]);
    }

    #[test]
    fn two_by_two_covariance_and_factor() {
        let cov = Covariance {
            blocks: vec![DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])],
            study_blocks: vec![0..2],
        };
        let f = upper_triangular_factor(&cov).unwrap();
        let w = f.upper(0);
        assert_relative_eq!(w[(0, 0)], 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(w[(0, 1)], 1.0 / 2f64.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(w[(1, 1)], 1.5f64.sqrt(), epsilon = 1e-14);
        assert_eq!(w[(1, 0)], 0.0);
    }

    #[test]
    fn zero_tau_gives_diagonal() {
        let ds = IpdDataset::from_records(
            (0..8).map(|j| Record::new(1 + j / 4, j as f64, (j * j) as f64, j % 2 == 0)),
        )
        .unwrap();
        let d = build_design(&ds).unwrap();
        let vc = VarianceComponents::new(0.0, vec![1.5, 0.25]).unwrap();
        let dense = marginal_covariance(&vc, &d).to_dense();
        let expect =
            DMatrix::from_diagonal(&DVector::from_vec([vec![1.5; 4], vec![0.25; 4]].concat()));
        assert_eq!(dense, expect);
    }

    #[test]
    fn non_positive_definite_block_is_reported() {
        let cov = Covariance {
            blocks: vec![
                DMatrix::identity(2, 2),
                DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            ],
            study_blocks: vec![0..2, 2..4],
        };
        assert!(matches!(
            upper_triangular_factor(&cov),
            Err(Error::Factorization { study: 2 })
        ));
    }

    #[test]
    fn solve_inverts_apply() {
        let cov = Covariance {
            blocks: vec![DMatrix::from_row_slice(
                3,
                3,
                &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0],
            )],
            study_blocks: vec![0..3],
        };
        let f = upper_triangular_factor(&cov).unwrap();
        let v = [0.3, -1.2, 2.5];
        let back = f.apply_transpose(&f.solve_transpose(&v));
        for (a, b) in back.iter().zip(&v) {
            assert_relative_eq!(a, b, epsilon = 1e-13);
        }
    }
}
