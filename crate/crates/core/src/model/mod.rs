//! Stratified-intercept random-effects model: data, design and covariance.

mod dataset;
mod design;

pub use dataset::{IpdDataset, Record, StudySummary};
pub use design::{
    build_design, marginal_covariance, upper_triangular_factor, Covariance, DesignMatrices, Factor,
    VarianceComponents,
};
