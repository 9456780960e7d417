//! `report`: side-by-side comparison of two or more report files.

use std::path::PathBuf;

use clap::Args;
use rlalign::evalkit;
use rlalign::Result;
use serde::Serialize;

use crate::config;

#[derive(Args)]
pub struct ReportArgs {
    /// Report files (reports.jsonl) to compare; at least two
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,

    /// Write comparison.txt and comparison.csv here
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Serialize)]
struct Effective {
    command: String,
    reports: Vec<String>,
}

pub fn run(args: ReportArgs) -> Result<()> {
    let sets = args
        .reports
        .iter()
        .map(|p| evalkit::read_reports(p))
        .collect::<Result<Vec<_>>>()?;
    let comparison = evalkit::compare(&sets)?;
    print!("{}", comparison.text);
    if let Some(out_dir) = args.out_dir {
        std::fs::create_dir_all(&out_dir)?;
        std::fs::write(out_dir.join("comparison.txt"), &comparison.text)?;
        std::fs::write(out_dir.join("comparison.csv"), &comparison.csv)?;
        config::write_effective(
            &out_dir,
            &Effective {
                command: "report".into(),
                reports: args.reports.iter().map(|p| p.display().to_string()).collect(),
            },
        )?;
    }
    Ok(())
}
