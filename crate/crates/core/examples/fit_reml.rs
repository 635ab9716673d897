//! REML fit of the stratified-intercept model, with shared and with
//! per-study residual variances.
//!
//! cargo run --example fit_reml -- [data.csv]

use ipdperm::{fit_reml, FitOptions, IpdDataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_ipd.csv").to_string()
    });
    let data = IpdDataset::from_csv_path(&path)?;
    for s in data.summary() {
        println!(
            "{:<10} n = {:>3} ({} treated, {} control)",
            s.label, s.n, s.treated, s.control
        );
    }

    for equal_variances in [true, false] {
        let fit = fit_reml(
            &data,
            &FitOptions {
                equal_variances,
                ..Default::default()
            },
        )?;
        println!();
        println!("equal variances: {equal_variances}");
        println!(
            "  theta = {:.4} (se {:.4}, t = {:.3})",
            fit.theta_hat,
            fit.se_theta,
            fit.t_statistic()
        );
        println!(
            "  tau2  = {:.5}{}",
            fit.vc_hat.tau2,
            if fit.tau2_on_boundary {
                " (boundary)"
            } else {
                ""
            }
        );
        let s2: Vec<String> = fit
            .vc_hat
            .sigma2
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect();
        println!("  sigma2 = [{}]", s2.join(", "));
        println!("  restricted log-likelihood = {:.4}", fit.restricted_loglik);
        println!("  iterations = {}", fit.iterations);
    }
    Ok(())
}
