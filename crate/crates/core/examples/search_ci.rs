//! Interval from the grid search over hypothesised effects: each bound is
//! the grid value closest to the estimate at which the one-sided
//! permutation test rejects at level alpha/2.
//!
//! cargo run --example search_ci -- [data.csv] [n_perm] [m_grid]

use ipdperm::permutation::search_interval;
use ipdperm::{fit_reml, FitOptions, IpdDataset, PermutationOptions, SearchGrid};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_ipd.csv").to_string()
    });
    let n_perm: usize = args.next().map_or(Ok(1000), |s| s.parse())?;
    let m_grid: usize = args.next().map_or(Ok(5), |s| s.parse())?;

    let data = IpdDataset::from_csv_path(&path)?;
    let fit = fit_reml(&data, &FitOptions::default())?;
    let grid = SearchGrid::recommended(fit.theta_hat, fit.se_theta, 0.05, m_grid)?;
    let opts = PermutationOptions {
        n_perm,
        seed: 2024,
        ..Default::default()
    };
    let iv = search_interval(&data, &fit, &grid, &opts)?;

    println!("theta_hat = {:.4}, se = {:.4}", fit.theta_hat, fit.se_theta);
    for e in &iv.evaluations {
        println!(
            "{:?} side: theta0 = {:>8.4}  one-sided p = {:.4}",
            e.side, e.theta0, e.p_value
        );
    }
    println!("95% search interval: [{:.4}, {:.4}]", iv.lower, iv.upper);
    Ok(())
}
