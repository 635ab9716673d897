use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::rng::GENERATOR;

use super::ScenarioMetrics;

/// Rule used to turn drawn study sizes into integers.
pub const SIZE_ROUNDING: &str = "nearest-min3";

/// One row of the long-format results file: a (cell, method) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub k: usize,
    pub size_regime: String,
    pub theta: f64,
    pub tau: f64,
    pub sigma: String,
    pub residual_law: String,
    pub equal_variances: bool,
    pub replicates: usize,
    pub alpha: f64,
    pub n_perm: usize,
    pub n_perm_search: usize,
    pub m_grid: usize,
    pub method: String,
    pub n_ok: usize,
    pub rejection_rate: f64,
    pub rejection_mcse: f64,
    pub coverage: f64,
    pub coverage_mcse: f64,
    pub mean_ci_length: f64,
    pub mean_df: f64,
    pub failure_count: usize,
    pub replicate_failures: usize,
    pub scenario_failed: bool,
    pub seed: u64,
    pub size_rounding: String,
    pub generator: String,
    pub version: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn from_metrics(cells: &[ScenarioMetrics]) -> Self {
        let rows = cells
            .iter()
            .flat_map(|cell| {
                let c = &cell.config;
                cell.methods.iter().map(move |m| ResultRow {
                    k: c.k,
                    size_regime: c.size_regime.name().into(),
                    theta: c.theta,
                    tau: c.tau,
                    sigma: c.sigma.name().into(),
                    residual_law: c.residual_law.name().into(),
                    equal_variances: c.equal_variances,
                    replicates: c.replicates,
                    alpha: c.alpha,
                    n_perm: c.n_perm,
                    n_perm_search: c.n_perm_search,
                    m_grid: c.m_grid,
                    method: m.method.name().into(),
                    n_ok: m.n_ok,
                    rejection_rate: m.rejection_rate,
                    rejection_mcse: m.rejection_mcse,
                    coverage: m.coverage,
                    coverage_mcse: m.coverage_mcse,
                    mean_ci_length: m.mean_ci_length,
                    mean_df: m.mean_df,
                    failure_count: m.failure_count,
                    replicate_failures: cell.replicate_failures,
                    scenario_failed: cell.failed,
                    seed: cell.seed,
                    size_rounding: SIZE_ROUNDING.into(),
                    generator: GENERATOR.into(),
                    version: env!("CARGO_PKG_VERSION").into(),
                })
            })
            .collect();
        Self { rows }
    }

    pub fn write<W: Write>(&self, out: W, delimiter: u8) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(delimiter)
            .from_writer(out);
        for row in &self.rows {
            w.serialize(row).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf, b',').expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read<R: std::io::Read>(input: R, delimiter: u8) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .from_reader(input);
        let rows = r
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_io)?;
        Ok(Self { rows })
    }
}

fn csv_io(e: csv::Error) -> crate::error::Error {
    crate::error::Error::Io(std::io::Error::other(e))
}
