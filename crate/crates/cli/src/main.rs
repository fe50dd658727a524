//! Command-line front end: runs experiment specs, generates feedback logs,
//! scores baselines, compares finished runs, and prints the calibrated
//! action model.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use feedbench_core::action::{
    binary_satisfaction, calibrate_binary, calibrate_sigmoid, defaults, SatisfactionScore,
    SigmoidShape,
};
use feedbench_core::eval::{z_scores, AggregateReport};
use feedbench_core::runner::{self, ExperimentSpec, RunOutput, RunnerError};
use feedbench_core::TaskFormat;

#[derive(Parser)]
#[command(
    name = "feedbench",
    version,
    about = "Measures whether memory-augmented LLM systems learn from user feedback"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the protocol described by an experiment spec
    Run {
        /// Experiment spec file (JSON)
        #[arg(long)]
        spec: PathBuf,
    },
    /// Simulate one feedback session per training case and write the log
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        /// Where to write the log (default: <output_dir>/sessions.jsonl)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the test split against corpus-only memory, skipping feedback
    Evaluate {
        #[arg(long)]
        spec: PathBuf,
    },
    /// Compare finished runs: per-dataset means plus cross-run z-scores
    Report {
        /// report.json files from finished runs
        #[arg(required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
    },
    /// Print the calibrated feedback action model
    Calibrate,
}

enum CliError {
    Runner(RunnerError),
    Report(String),
}

impl From<RunnerError> for CliError {
    fn from(e: RunnerError) -> Self {
        CliError::Runner(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Runner(e) => e.fmt(f),
            CliError::Report(msg) => msg.fmt(f),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Runner(e) => e.exit_code(),
            CliError::Report(_) => 2,
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = dispatch(cli.command) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Run { spec } => {
            let spec = runner::load_spec(&spec)?;
            let out = runner::execute(&spec)?;
            print_run(&spec, &out);
            Ok(())
        }
        Command::Simulate { spec, out } => {
            let spec = runner::load_spec(&spec)?;
            let (log, failures) = runner::generate_log(&spec)?;
            let path = out.unwrap_or_else(|| spec.output_dir.join("sessions.jsonl"));
            log.save_jsonl(&path).map_err(RunnerError::from)?;
            println!(
                "wrote {} sessions to {}",
                log.sessions.len(),
                path.display()
            );
            for failure in &failures {
                println!("failed: {} ({})", failure.case_id, failure.error);
            }
            Ok(())
        }
        Command::Evaluate { spec } => {
            let spec = runner::load_spec(&spec)?;
            let out = runner::evaluate_only(&spec)?;
            print_run(&spec, &out);
            Ok(())
        }
        Command::Report { reports } => print_comparison(&reports),
        Command::Calibrate => {
            print_calibration().map_err(RunnerError::from)?;
            Ok(())
        }
    }
}

fn print_run(spec: &ExperimentSpec, out: &RunOutput) {
    let manifest = &out.manifest;
    if manifest.steps.len() > 1 {
        for step in &manifest.steps {
            println!(
                "step {:>3}  overall {:.4}",
                step.step, step.overall_normalized_mean
            );
        }
    }
    let report = out
        .reports
        .last()
        .expect("every run evaluates at least once");
    println!(
        "{:<20} {:>6} {:>7} {:>10} {:>10}",
        "dataset", "cases", "failed", "raw mean", "norm mean"
    );
    for row in &report.per_dataset {
        println!(
            "{:<20} {:>6} {:>7} {:>10.4} {:>10.4}",
            row.dataset, row.cases, row.failed, row.raw_mean, row.normalized_mean
        );
    }
    println!(
        "overall normalized mean: {:.4}",
        report.overall_normalized_mean
    );
    if !manifest.failed_training_cases.is_empty() {
        println!(
            "training failures: {}",
            manifest.failed_training_cases.len()
        );
    }
    if let Some(secs) = manifest.timing.memory_avg_seconds {
        println!("memory time avg: {:.3}s per session", secs);
    }
    if let Some(secs) = manifest.timing.predict_avg_seconds {
        println!("predict time avg: {:.3}s per case", secs);
    }
    println!("report hash: {}", report.hash());
    println!("artifacts in {}", spec.output_dir.display());
}

/// One column per run, one row per dataset plus an overall row. Cells hold
/// the normalized mean; with two or more runs each cell also carries that
/// run's z-score within the row.
fn print_comparison(paths: &[PathBuf]) -> Result<(), CliError> {
    let mut runs: Vec<(String, AggregateReport)> = Vec::new();
    for path in paths {
        let report = AggregateReport::load(path)
            .map_err(|e| CliError::Report(format!("{}: {e}", path.display())))?;
        runs.push((label_for(path), report));
    }
    let show_z = runs.len() >= 2;
    let width = runs
        .iter()
        .map(|(label, _)| label.len())
        .max()
        .unwrap_or(0)
        .max(16)
        + 2;

    print!("{:<20}", "dataset");
    for (label, _) in &runs {
        print!("{label:>width$}");
    }
    println!();

    let datasets: BTreeSet<String> = runs
        .iter()
        .flat_map(|(_, r)| r.per_dataset.iter().map(|d| d.dataset.clone()))
        .collect();
    for dataset in &datasets {
        let means: Vec<Option<f64>> = runs
            .iter()
            .map(|(_, r)| {
                r.per_dataset
                    .iter()
                    .find(|d| d.dataset == *dataset)
                    .map(|d| d.normalized_mean)
            })
            .collect();
        print_row(dataset, &means, show_z, width);
    }
    let overall: Vec<Option<f64>> = runs
        .iter()
        .map(|(_, r)| Some(r.overall_normalized_mean))
        .collect();
    print_row("overall", &overall, show_z, width);
    Ok(())
}

fn print_row(name: &str, means: &[Option<f64>], show_z: bool, width: usize) {
    let present: Vec<f64> = means.iter().flatten().copied().collect();
    let z = z_scores(&present);
    let mut z_iter = z.iter();
    print!("{name:<20}");
    for mean in means {
        let cell = match mean {
            Some(value) if show_z => {
                let z = z_iter.next().expect("one z per present value");
                format!("{value:.4} (z {z:+.2})")
            }
            Some(value) => format!("{value:.4}"),
            None => "-".to_string(),
        };
        print!("{cell:>width$}");
    }
    println!();
}

/// Labels a report column by its file stem, or the parent directory when the
/// file is just `report.json`.
fn label_for(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    if stem == "report" {
        path.parent()
            .and_then(|p| p.file_name())
            .and_then(|s| s.to_str())
            .unwrap_or(stem)
            .to_string()
    } else {
        stem.to_string()
    }
}

fn print_calibration() -> Result<(), feedbench_core::action::CalibrationError> {
    let dist = defaults::score_distribution();
    let targets = defaults::targets();
    println!(
        "targets: feedback rate {}, like share {}",
        pct(targets.feedback_rate),
        pct(targets.like_share)
    );

    let model = calibrate_sigmoid(&dist, targets, SigmoidShape::default())?;
    println!(
        "graded model: c_like = {:.10}, c_dislike = {:.10}",
        model.c_like, model.c_dislike
    );
    println!(
        "{:>5} {:>9} {:>9} {:>9} {:>9}",
        "score", "like", "dislike", "none", "copy*"
    );
    for grade in SatisfactionScore::MIN..=SatisfactionScore::MAX {
        let score = SatisfactionScore::new(grade).expect("grades stay in range");
        let probs = model.probabilities(score, TaskFormat::SiLo);
        println!(
            "{:>5} {:>9} {:>9} {:>9} {:>9}",
            grade,
            pct(probs.p_like),
            pct(probs.p_dislike),
            pct(probs.p_none),
            pct(probs.p_copy)
        );
    }
    println!("* copy fires on long-output tasks only, at min(4 x like, 1)");

    let binary = calibrate_binary(
        &dist,
        targets,
        binary_satisfaction(true),
        binary_satisfaction(false),
    )?;
    println!(
        "binary model: like {} at score {}, dislike {} at score {}",
        pct(binary.p_like_given_high),
        binary.high.get(),
        pct(binary.p_dislike_given_low),
        binary.low.get()
    );
    Ok(())
}

fn pct(p: f64) -> String {
    format!("{:.3}%", 100.0 * p)
}
