//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use ipdperm::{IpdDataset, Record};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Fixed-effects design `[intercepts | slopes | treatment]`, built row by row.
pub fn dense_c(ds: &IpdDataset, include_treatment: bool) -> DMatrix<f64> {
    let k = ds.k();
    let n = ds.n_total();
    let p = 2 * k + usize::from(include_treatment);
    let mut c = DMatrix::zeros(n, p);
    for (i, block) in ds.blocks().iter().enumerate() {
        for r in block.clone() {
            c[(r, i)] = 1.0;
            c[(r, k + i)] = ds.baselines()[r];
            if include_treatment && ds.arms()[r] {
                c[(r, 2 * k)] = 1.0;
            }
        }
    }
    c
}

/// `Sigma` entry by entry from the scalar formula.
pub fn dense_sigma(ds: &IpdDataset, tau2: f64, sigma2: &[f64]) -> DMatrix<f64> {
    let n = ds.n_total();
    let mut study = vec![0; n];
    for (i, b) in ds.blocks().iter().enumerate() {
        for r in b.clone() {
            study[r] = i;
        }
    }
    let z = |r: usize| if ds.arms()[r] { 1.0 } else { 0.0 };
    DMatrix::from_fn(n, n, |a, b| {
        if study[a] != study[b] {
            return 0.0;
        }
        let s2 = if sigma2.len() == 1 {
            sigma2[0]
        } else {
            sigma2[study[a]]
        };
        tau2 * z(a) * z(b) + if a == b { s2 } else { 0.0 }
    })
}

/// `-(log|S| + log|C' S^-1 C| + r' S^-1 r) / 2` with dense linear algebra.
pub fn dense_reml(ds: &IpdDataset, tau2: f64, sigma2: &[f64], include_treatment: bool) -> f64 {
    let c = dense_c(ds, include_treatment);
    let s = dense_sigma(ds, tau2, sigma2);
    let y = DVector::from_column_slice(ds.outcomes());
    let chol = s.clone().cholesky().expect("pd");
    let logdet_s: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let si_c = chol.solve(&c);
    let m = c.transpose() * &si_c;
    let mchol = m.clone().cholesky().expect("identifiable");
    let logdet_m: f64 = 2.0 * mchol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let beta = mchol.solve(&(si_c.transpose() * &y));
    let r = &y - &c * beta;
    let quad = r.dot(&chol.solve(&r));
    -0.5 * (logdet_s + logdet_m + quad)
}

/// `(C' S^-1 C)^-1` at the given components.
pub fn dense_fixed_cov(ds: &IpdDataset, tau2: f64, sigma2: &[f64]) -> DMatrix<f64> {
    let c = dense_c(ds, true);
    let s = dense_sigma(ds, tau2, sigma2);
    let si = s.try_inverse().unwrap();
    (c.transpose() * si * &c).try_inverse().unwrap()
}

/// Random small meta-analysis: `k` in 2..=6, sizes 4..=40.
pub fn fuzz_dataset(rng: &mut impl Rng) -> IpdDataset {
    let k = rng.random_range(2..=6);
    let theta: f64 = rng.random_range(-2.0..2.0);
    let tau: f64 = rng.random_range(0.0..1.5);
    let mut rows = Vec::new();
    for i in 0..k {
        let n = rng.random_range(4..=40);
        let sigma: f64 = rng.random_range(0.3..2.0);
        let b0: f64 = rng.random_range(-2.0..3.0);
        let b1: f64 = rng.random_range(0.0..1.5);
        let u = theta + tau * normal(rng);
        let mut arms: Vec<bool> = (0..n).map(|_| rng.random_bool(0.55)).collect();
        arms[0] = true;
        arms[1] = false;
        for t in arms {
            let y0 = 4.0 + normal(rng);
            let y = b0 + b1 * y0 + if t { u } else { 0.0 } + sigma * normal(rng);
            rows.push(Record::new(i + 1, y, y0, t));
        }
    }
    IpdDataset::from_records(rows).unwrap()
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}
