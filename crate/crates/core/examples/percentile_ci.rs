//! Percentile interval from the permutation distribution of t.
//!
//! cargo run --example percentile_ci -- [data.csv] [n_perm] [seed]

use ipdperm::permutation::PermutationEngine;
use ipdperm::{fit_reml, percentile_ci, wald_normal, FitOptions, IpdDataset, PermutationOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_ipd.csv").to_string()
    });
    let n_perm: usize = args.next().map_or(Ok(5000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(7), |s| s.parse())?;

    let data = IpdDataset::from_csv_path(&path)?;
    let fit = fit_reml(&data, &FitOptions::default())?;
    let engine = PermutationEngine::from_fit(&data, &fit, &PermutationOptions::default())?;
    let draws = engine.draws(n_perm, seed)?;

    for alpha in [0.1, 0.05, 0.01] {
        let p = percentile_ci(&fit, &draws, alpha)?;
        let n = wald_normal(&fit, alpha)?;
        println!(
            "{:>4.0}%  permutation [{:.4}, {:.4}]   normal [{:.4}, {:.4}]",
            100.0 * (1.0 - alpha),
            p.ci_lower,
            p.ci_upper,
            n.ci_lower,
            n.ci_upper
        );
    }
    println!(
        "two-sided permutation p = {:.4}",
        percentile_ci(&fit, &draws, 0.05)?.p_value
    );
    Ok(())
}
