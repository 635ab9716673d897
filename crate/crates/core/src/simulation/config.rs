use serde::Deserialize;

use crate::error::{Error, Result};
use crate::inference::Method;

use super::{ResidualLaw, ScenarioConfig, SigmaPattern, SizeRegime};

/// Simulation run description, read from TOML.
///
/// ```toml
/// replicates = 500
/// n_perm = 1000
/// methods = ["normal", "satterthwaite", "kenward-roger", "permutation"]
///
/// [grid]
/// tau = [0.01, 0.1, 0.3, 0.5, 0.7, 1.0]
/// residual_law = ["normal", "student_t3_scaled", "lognormal_scaled"]
/// ```
///
/// Every `[grid]` key takes a list; the cells are the Cartesian product.
/// Omitted keys take the default of [`ScenarioConfig`].
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: Option<u64>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub replicates: Option<usize>,
    pub alpha: Option<f64>,
    pub n_perm: Option<usize>,
    pub n_perm_search: Option<usize>,
    pub m_grid: Option<usize>,
    pub equal_variances: Option<bool>,
    pub k: Option<usize>,
    pub intercepts: Option<Vec<f64>>,
    pub slopes: Option<Vec<f64>>,
    #[serde(default)]
    pub grid: Grid,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub size_regime: Option<Vec<SizeRegime>>,
    pub sigma: Option<Vec<SigmaPattern>>,
    pub residual_law: Option<Vec<ResidualLaw>>,
    pub theta: Option<Vec<f64>>,
    pub tau: Option<Vec<f64>>,
}

fn all_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

/// Bundled configurations, by name.
pub const PRESETS: &[(&str, &str)] = &[
    ("paper-fig1", include_str!("../../presets/paper-fig1.toml")),
    ("paper-fig2", include_str!("../../presets/paper-fig2.toml")),
    ("paper-fig3", include_str!("../../presets/paper-fig3.toml")),
    ("paper-fig4", include_str!("../../presets/paper-fig4.toml")),
    (
        "paper-appendix",
        include_str!("../../presets/paper-appendix.toml"),
    ),
    ("desk-scale", include_str!("../../presets/desk-scale.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| *text)
}

impl SimulationConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if cfg.methods.is_empty() {
            return Err(Error::Config("`methods` is empty".into()));
        }
        Ok(cfg)
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        let text = preset(name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            Error::Config(format!(
                "unknown preset `{name}` (available: {})",
                names.join(", ")
            ))
        })?;
        Self::from_toml(text)
    }

    /// The grid cells, last key varying fastest (size, sigma, law, theta, tau).
    pub fn cells(&self) -> Result<Vec<ScenarioConfig>> {
        let mut base = ScenarioConfig::default();
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    base.$f = v.clone();
                }
            )*};
        }
        set!(
            replicates,
            alpha,
            n_perm,
            n_perm_search,
            m_grid,
            equal_variances,
            k,
            intercepts,
            slopes
        );
        let g = &self.grid;
        let sizes = g.size_regime.clone().unwrap_or(vec![base.size_regime]);
        let sigmas = g.sigma.clone().unwrap_or(vec![base.sigma]);
        let laws = g.residual_law.clone().unwrap_or(vec![base.residual_law]);
        let thetas = g.theta.clone().unwrap_or(vec![base.theta]);
        let taus = g.tau.clone().unwrap_or(vec![base.tau]);
        let mut cells = Vec::new();
        for &size_regime in &sizes {
            for &sigma in &sigmas {
                for &residual_law in &laws {
                    for &theta in &thetas {
                        for &tau in &taus {
                            let c = ScenarioConfig {
                                size_regime,
                                sigma,
                                residual_law,
                                theta,
                                tau,
                                ..base.clone()
                            };
                            c.validate()?;
                            cells.push(c);
                        }
                    }
                }
            }
        }
        if cells.is_empty() {
            return Err(Error::Config("the grid has no cells".into()));
        }
        Ok(cells)
    }
}
