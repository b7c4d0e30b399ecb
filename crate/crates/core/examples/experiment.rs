// Run the small replica plan end to end, resume it, and render the report
// as a text table and as CSV.

use std::path::Path;

use mtlab::harness::{render_report, run_experiment, ExperimentPlan, ReportFormat, REPLICA_SMOKE_PLAN};

pub fn run() -> Result<(), Box<dyn std::error::Error>> {
    let plan = ExperimentPlan::parse(REPLICA_SMOKE_PLAN, "replica-smoke.plan", Path::new("."))?;
    let dir = tempfile::tempdir()?;
    let first = run_experiment(&plan, dir.path())?;
    println!("first run: {} training steps, {:.1}s", first.training_steps, first.wall_seconds);
    let again = run_experiment(&plan, dir.path())?;
    println!("resumed:   {} training steps", again.training_steps);

    let text = render_report(&again, ReportFormat::TextTable);
    // The configuration appendix is long; show the table part.
    for line in text.lines().take_while(|l| !l.starts_with("Configuration")) {
        println!("{line}");
    }
    println!("{}", render_report(&again, ReportFormat::Csv).lines().take(3).collect::<Vec<_>>().join("\n"));
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
