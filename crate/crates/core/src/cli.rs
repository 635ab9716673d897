//! The `ipdperm` command-line tool.
//!
//! Exit codes: 0 success, 1 I/O, 2 usage, 3 malformed input, 4 non-identifiable
//! design, 5 unreliable permutation distribution or open search interval,
//! 6 convergence or degrees-of-freedom failure, 7 invalid configuration.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, InferenceResult, Method};
use crate::model::{IpdDataset, StudySummary};
use crate::permutation::{
    percentile_ci, search_ci, PermutationEngine, PermutationOptions, SearchGrid,
};
use crate::reml::{fit_reml, FitOptions, FittedModel};
use crate::rng;
use crate::simulation::{sweep_with_progress, SimulationConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "ipdperm",
    version,
    about = "Permutation inference for IPD meta-analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a CSV file and report every requested method.
    Analyze(AnalyzeArgs),
    /// Run a simulation grid and write the long-format results table.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridRule {
    /// Between the normal and t(2) critical values.
    Recommended,
    /// Between the normal critical value and 4 standard errors.
    Simulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Csv,
    Tsv,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// CSV with columns study,y,y0,z.
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated subset of normal, satterthwaite, kenward-roger,
    /// permutation, permutation-search.
    #[arg(long, value_delimiter = ',', default_values_t = Method::ALL)]
    pub methods: Vec<Method>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Permutations for the test and the percentile interval.
    #[arg(long, default_value_t = 10_000)]
    pub n_perm: usize,
    /// Permutations per grid point of the search interval.
    #[arg(long, default_value_t = 2_000)]
    pub n_perm_search: usize,
    /// Grid points per side of the search interval.
    #[arg(long, default_value_t = 5)]
    pub m_grid: usize,
    #[arg(long, value_enum, default_value = "recommended")]
    pub grid: GridRule,
    /// Drawn from system entropy (and printed) when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub equal_variances: bool,
    /// Machine-readable JSON report.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// What to print on standard output.
    #[arg(long, value_enum, default_value = "text")]
    pub format: ReportFormat,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML run description.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// Bundled configuration: paper-fig1..4, paper-appendix or desk-scale.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: TableFormat,
    /// Overrides the replicate count of every cell.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Overrides the permutation count of every cell.
    #[arg(long)]
    pub n_perm: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub k: usize,
    pub n_total: usize,
    pub studies: Vec<StudySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub theta_hat: f64,
    pub se_theta: f64,
    pub tau2_hat: f64,
    pub sigma2_hat: Vec<f64>,
    pub beta_hat: Vec<f64>,
    pub restricted_loglik: f64,
    pub tau2_on_boundary: bool,
    pub equal_variances: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSettings {
    pub alpha: f64,
    pub n_perm: usize,
    pub n_perm_search: usize,
    pub m_grid: usize,
    pub grid: GridRule,
    pub seed: u64,
    pub generator: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub software_version: String,
    pub dataset: DatasetSummary,
    pub fit: FitSummary,
    pub settings: AnalysisSettings,
    pub results: Vec<InferenceResult>,
    pub warnings: Vec<String>,
    /// Wall-clock seconds per step; kept out of the JSON so that reruns are
    /// byte-identical.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Analyze(a) => {
            let workers = a.workers;
            with_workers(workers, || run_analyze(&a))
        }
        Command::Simulate(s) => {
            let workers = s.workers;
            with_workers(workers, || run_simulate(&s))
        }
    }
}

fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T> + Send,
) -> Result<T> {
    match workers {
        None => f(),
        Some(0) => Err(Error::InvalidArgument(
            "--workers must be at least 1".into(),
        )),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?
            .install(f),
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = rng::entropy_seed();
        eprintln!("seed: {s}");
        s
    })
}

fn run_analyze(args: &AnalyzeArgs) -> Result<()> {
    let seed = resolve_seed(args.seed);
    let data = IpdDataset::from_csv_path(&args.input)?;
    let report = cmd_analyze(&data, args, seed)?;
    if let Some(path) = &args.output {
        write_atomic(path, report_json(&report)?.as_bytes())?;
    }
    let text = match args.format {
        ReportFormat::Text => render_text(&report),
        ReportFormat::Json => report_json(&report)?,
    };
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

pub fn report_json(report: &AnalysisReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report).map_err(|e| Error::Io(e.into()))?;
    s.push('\n');
    Ok(s)
}

/// Fits the model and runs `args.methods` in order (duplicates removed).
pub fn cmd_analyze(data: &IpdDataset, args: &AnalyzeArgs, seed: u64) -> Result<AnalysisReport> {
    inference::check_alpha(args.alpha)?;
    let mut timings = Vec::new();
    let mut warnings = Vec::new();
    let clock = Instant::now();
    let fit = fit_reml(
        data,
        &FitOptions {
            equal_variances: args.equal_variances,
            ..FitOptions::default()
        },
    )?;
    timings.push(("fit".to_string(), clock.elapsed().as_secs_f64()));
    if fit.tau2_on_boundary {
        warnings.push("tau2 estimate is on the boundary (reported as 0)".to_string());
    }

    let mut methods = Vec::new();
    for &m in &args.methods {
        if !methods.contains(&m) {
            methods.push(m);
        }
    }
    let mut results = Vec::new();
    for &method in &methods {
        let clock = Instant::now();
        results.push(run_method(method, data, &fit, args, seed, &mut warnings)?);
        timings.push((method.name().to_string(), clock.elapsed().as_secs_f64()));
    }

    let sigma2_hat = if args.equal_variances {
        vec![fit.vc_hat.sigma2[0]]
    } else {
        fit.vc_hat.sigma2.clone()
    };
    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset: DatasetSummary {
            k: data.k(),
            n_total: data.n_total(),
            studies: data.summary(),
        },
        fit: FitSummary {
            theta_hat: fit.theta_hat,
            se_theta: fit.se_theta,
            tau2_hat: fit.vc_hat.tau2,
            sigma2_hat,
            beta_hat: fit.beta_hat.clone(),
            restricted_loglik: fit.restricted_loglik,
            tau2_on_boundary: fit.tau2_on_boundary,
            equal_variances: args.equal_variances,
            iterations: fit.iterations,
        },
        settings: AnalysisSettings {
            alpha: args.alpha,
            n_perm: args.n_perm,
            n_perm_search: args.n_perm_search,
            m_grid: args.m_grid,
            grid: args.grid,
            seed,
            generator: rng::GENERATOR.to_string(),
        },
        results,
        warnings,
        timings,
    })
}

/// Number of times the search grid is doubled when no grid point rejects.
const MAX_WIDENINGS: u32 = 3;

fn run_method(
    method: Method,
    data: &IpdDataset,
    fit: &FittedModel,
    args: &AnalyzeArgs,
    seed: u64,
    warnings: &mut Vec<String>,
) -> Result<InferenceResult> {
    let alpha = args.alpha;
    match method {
        Method::Normal => inference::wald_normal(fit, alpha),
        Method::Satterthwaite => inference::satterthwaite_ci(fit, alpha),
        Method::KenwardRoger => match inference::kenward_roger(fit, alpha) {
            Err(Error::AdjustmentFailed(v)) => {
                warnings.push(format!(
                    "Kenward-Roger adjusted variance {v} is not positive; unadjusted standard error used"
                ));
                let mut r = inference::satterthwaite_ci(fit, alpha)?;
                r.method = Method::KenwardRoger;
                Ok(r)
            }
            other => other,
        },
        Method::Permutation => {
            let opts = PermutationOptions {
                n_perm: args.n_perm,
                seed: rng::derive(seed, &[0]),
                ..PermutationOptions::default()
            };
            let draws =
                PermutationEngine::from_fit(data, fit, &opts)?.draws(opts.n_perm, opts.seed)?;
            if draws.n_failed > 0 {
                warnings.push(format!(
                    "{} of {} permutation refits failed and were dropped",
                    draws.n_failed, draws.n_permutations
                ));
            }
            percentile_ci(fit, &draws, alpha)
        }
        Method::PermutationSearch => {
            let opts = PermutationOptions {
                n_perm: args.n_perm_search,
                seed: rng::derive(seed, &[1]),
                ..PermutationOptions::default()
            };
            let mut stretch = 1.0;
            for attempt in 0..=MAX_WIDENINGS {
                let grid = search_grid(args.grid, fit, alpha, args.m_grid, stretch)?;
                match search_ci(data, fit, &grid, &opts) {
                    Err(Error::OpenEndpoint { side, from, to }) if attempt < MAX_WIDENINGS => {
                        warnings.push(format!(
                            "no rejection for the {side} bound in [{from:.4}, {to:.4}]; search range widened"
                        ));
                        stretch *= 2.0;
                    }
                    other => return other,
                }
            }
            unreachable!("the last attempt returns")
        }
    }
}

fn search_grid(
    rule: GridRule,
    fit: &FittedModel,
    alpha: f64,
    m: usize,
    stretch: f64,
) -> Result<SearchGrid> {
    let base = match rule {
        GridRule::Recommended => SearchGrid::recommended(fit.theta_hat, fit.se_theta, alpha, m)?,
        GridRule::Simulation => SearchGrid::simulation(fit.theta_hat, fit.se_theta, alpha, m)?,
    };
    if stretch == 1.0 {
        return Ok(base);
    }
    // keep the near ends, push the far ends out
    let (ln, lf) = (base.lower_range.1, base.lower_range.0);
    let (un, uf) = (base.upper_range.0, base.upper_range.1);
    SearchGrid::new(
        (ln - stretch * (ln - lf), ln),
        (un, un + stretch * (uf - un)),
        m,
        alpha,
    )
}

pub fn render_text(r: &AnalysisReport) -> String {
    let mut s = String::new();
    let sizes: Vec<String> = r
        .dataset
        .studies
        .iter()
        .map(|st| st.n.to_string())
        .collect();
    let _ = writeln!(
        s,
        "studies: {} (n = {}; total {})",
        r.dataset.k,
        sizes.join(", "),
        r.dataset.n_total
    );
    let f = &r.fit;
    let _ = writeln!(
        s,
        "theta_hat = {:.6}  se = {:.6}  tau2 = {:.6}",
        f.theta_hat, f.se_theta, f.tau2_hat
    );
    let sig: Vec<String> = f.sigma2_hat.iter().map(|v| format!("{v:.6}")).collect();
    let _ = writeln!(
        s,
        "sigma2 = {}  restricted loglik = {:.6}",
        sig.join(", "),
        f.restricted_loglik
    );
    let _ = writeln!(
        s,
        "seed = {}  alpha = {}",
        r.settings.seed, r.settings.alpha
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<20} {:>10} {:>10} {:>10} {:>10} {:>11} {:>11}",
        "method", "t", "df", "se", "p", "lower", "upper"
    );
    for res in &r.results {
        let df = if res.df.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.3}", res.df)
        };
        let _ = writeln!(
            s,
            "{:<20} {:>10.4} {:>10} {:>10.5} {:>10.4} {:>11.5} {:>11.5}",
            res.method.name(),
            res.t_value,
            df,
            res.se_used,
            res.p_value,
            res.ci_lower,
            res.ci_upper
        );
    }
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    if !r.timings.is_empty() {
        let _ = writeln!(s);
        for (step, secs) in &r.timings {
            let _ = writeln!(s, "time {step}: {secs:.3}s");
        }
    }
    s
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => SimulationConfig::from_toml(&std::fs::read_to_string(path)?)?,
        (None, Some(name)) => SimulationConfig::from_preset(name)?,
        (None, None) => {
            return Err(Error::Config(
                "either --config or --preset is required".into(),
            ))
        }
    };
    let seed = match args.seed.or(cfg.seed) {
        Some(s) => s,
        None => resolve_seed(None),
    };
    let mut cells = cfg.cells()?;
    for c in &mut cells {
        if let Some(r) = args.replicates {
            c.replicates = r;
        }
        if let Some(n) = args.n_perm {
            c.n_perm = n;
        }
        c.validate()?;
    }
    eprintln!("{} cells, methods: {}", cells.len(), names(&cfg.methods));
    let table = sweep_with_progress(&cells, &cfg.methods, seed, &|done, total| {
        eprintln!("cell {done}/{total} done");
    })?;
    let delimiter = match args.format {
        TableFormat::Csv => b',',
        TableFormat::Tsv => b'\t',
    };
    let mut buf = Vec::new();
    table.write(&mut buf, delimiter)?;
    write_atomic(&args.output, &buf)
}

fn names(methods: &[Method]) -> String {
    methods
        .iter()
        .map(|m| m.name())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Writes through a temporary file in the target directory, so a failed run
/// never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}
