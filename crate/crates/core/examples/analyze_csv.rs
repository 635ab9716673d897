//! Full analysis of a CSV file, as done by `ipdperm analyze`, printed as the
//! text report followed by the JSON document.
//!
//! cargo run --release --example analyze_csv -- [data.csv]

use clap::Parser;
use ipdperm::cli::{cmd_analyze, render_text, report_json, Cli, Command};
use ipdperm::IpdDataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).unwrap_or_else(|| {
        concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_ipd.csv").to_string()
    });
    let cli = Cli::parse_from([
        "ipdperm",
        "analyze",
        "--input",
        &path,
        "--n-perm",
        "2000",
        "--n-perm-search",
        "500",
    ]);
    let Command::Analyze(args) = cli.command else {
        unreachable!()
    };
    let data = IpdDataset::from_csv_path(&args.input)?;
    let report = cmd_analyze(&data, &args, 11)?;
    print!("{}", render_text(&report));
    println!();
    print!("{}", report_json(&report)?);
    Ok(())
}
