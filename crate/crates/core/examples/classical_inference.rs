//! Wald-normal, Satterthwaite and Kenward-Roger intervals side by side.
//!
//! cargo run --example classical_inference -- [data.csv] [alpha]

use ipdperm::inference::kenward_roger_adjustment;
use ipdperm::{fit_reml, kenward_roger, satterthwaite_ci, wald_normal, FitOptions, IpdDataset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args.next().unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_ipd.csv").to_string()
    });
    let alpha: f64 = args.next().map_or(Ok(0.05), |s| s.parse())?;

    let data = IpdDataset::from_csv_path(&path)?;
    let fit = fit_reml(&data, &FitOptions::default())?;

    println!(
        "{:<15} {:>9} {:>9} {:>9} {:>9} {:>10} {:>10}",
        "method", "se", "df", "t", "p", "lower", "upper"
    );
    for r in [
        wald_normal(&fit, alpha)?,
        satterthwaite_ci(&fit, alpha)?,
        kenward_roger(&fit, alpha)?,
    ] {
        println!(
            "{:<15} {:>9.4} {:>9.2} {:>9.3} {:>9.4} {:>10.4} {:>10.4}",
            r.method.name(),
            r.se_used,
            r.df,
            r.t_value,
            r.p_value,
            r.ci_lower,
            r.ci_upper
        );
    }

    if let Some(w) = &fit.vc_info_inv {
        let adj = kenward_roger_adjustment(&fit, w)?;
        println!();
        println!(
            "Kenward-Roger correction of Var(theta): 2 * {:.3e}",
            adj.lambda_theta
        );
    }
    Ok(())
}
