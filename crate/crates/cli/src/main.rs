//! `onebit` command-line front end.
//!
//! Exit codes: 0 on success, 2 for bad flags or configs, 3 for file I/O,
//! 1 when an experiment fails at run time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use onebit::data::{generate_synthetic, plan_budget, save_dataset, QuotaRounding};
use onebit::orchestrator::{run_baseline, run_experiment, ExperimentConfig};
use onebit::report::{load_report, write_report, SavedReport};
use onebit::theory::{efficiency_curve, efficiency_target, efficiency_threshold, ClassCount};
use onebit::Error;

const SEED_ENV: &str = "OBS_SEED";

#[derive(Parser)]
#[command(name = "onebit", version, about = "One-bit supervision simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded Gaussian-mixture dataset file.
    GenData(GenData),
    /// Split a bit budget into full labels and one-bit queries.
    Plan(Plan),
    /// Query the efficiency threshold.
    #[command(subcommand)]
    Theory(Theory),
    /// Run an experiment from a JSON config and write its report.
    Run(Run),
    /// Summarize a report directory, optionally against another.
    Analyze(Analyze),
}

#[derive(Args)]
struct GenData {
    #[arg(long, value_parser = clap::value_parser!(u16).range(2..))]
    classes: u16,
    #[arg(long, value_parser = clap::value_parser!(u32).range(2..))]
    per_class: u32,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    dim: u32,
    #[arg(long, default_value_t = 4.0)]
    sep: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("budget").required(true).args(["total_bits", "full_equivalent"])))]
struct Plan {
    #[arg(long)]
    total_bits: Option<f64>,
    /// Budget expressed as a number of fully labeled samples.
    #[arg(long)]
    full_equivalent: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u16).range(2..))]
    classes: u16,
    #[arg(long, default_value_t = 0)]
    n_full: usize,
    /// Round the query count to the nearest thousand, possibly exceeding the budget.
    #[arg(long)]
    allow_overshoot: bool,
}

#[derive(Subcommand)]
enum Theory {
    /// Print the smallest guess accuracy at which one-bit queries pay off.
    Threshold {
        #[arg(long, value_parser = clap::value_parser!(u16).range(3..))]
        classes: u16,
    },
    /// Write the efficiency curve as CSV.
    Curve {
        #[arg(long, value_parser = clap::value_parser!(u16).range(3..))]
        classes: u16,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 99, value_parser = clap::value_parser!(u32).range(1..))]
        points: u32,
    },
}

#[derive(Args)]
struct Run {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Run the equal-bits full-label baseline instead of the one-bit arm.
    #[arg(long)]
    baseline: bool,
}

#[derive(Args)]
struct Analyze {
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    compare: Option<PathBuf>,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Training { .. } | Error::Protocol(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure {
        code: 3,
        message: format!("{}: {e}", path.display()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Plan(a) => plan(a),
        Command::Theory(t) => theory(t),
        Command::Run(a) => run(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn gen_data(a: GenData) -> Result<(), Failure> {
    let d = generate_synthetic(a.classes as usize, a.per_class as usize, a.dim as usize, a.sep, a.seed)?;
    save_dataset(&d, &a.out)?;
    println!("N={} d={} C={}", d.len(), d.dim(), d.classes().get());
    Ok(())
}

fn plan(a: Plan) -> Result<(), Failure> {
    let classes = ClassCount::new(a.classes as usize)?;
    let total = match (a.total_bits, a.full_equivalent) {
        (Some(t), _) => t,
        (None, Some(n)) => n as f64 * classes.log2(),
        (None, None) => unreachable!("clap requires one budget flag"),
    };
    let rounding = if a.allow_overshoot {
        QuotaRounding::NearestMultiple(1000)
    } else {
        QuotaRounding::Floor
    };
    let p = plan_budget(total, classes, a.n_full, rounding)?;
    let full_bits = p.n_full as f64 * classes.log2();
    println!("total bits: {:.1}", p.total_bits);
    println!("{:<10} {:>12} {:>14}", "kind", "count", "bits");
    println!("{:<10} {:>12} {:>14.1}", "full", p.n_full, full_bits);
    println!("{:<10} {:>12} {:>14.1}", "one-bit", p.n_queries, p.n_queries as f64);
    println!("{:<10} {:>12} {:>14.1}", "planned", p.n_full + p.n_queries, p.planned_bits);
    if p.overshoot() > 0.0 {
        println!("overshoot: {:.1} bits", p.overshoot());
    }
    Ok(())
}

fn theory(t: Theory) -> Result<(), Failure> {
    match t {
        Theory::Threshold { classes } => {
            println!("{:.6}", efficiency_threshold(classes as usize)?);
        }
        Theory::Curve { classes, out, points } => {
            let rhs = efficiency_target(ClassCount::new(classes as usize)?);
            let mut text = String::from("p,f,rhs\n");
            for i in 1..=points {
                let p = i as f64 / (points + 1) as f64;
                text.push_str(&format!("{p},{},{rhs}\n", efficiency_curve(p)));
            }
            std::fs::write(&out, text).map_err(|e| io_failure(&out, e))?;
        }
    }
    Ok(())
}

fn run(a: Run) -> Result<(), Failure> {
    let mut config = ExperimentConfig::load(&a.config)?;
    if let Ok(raw) = std::env::var(SEED_ENV) {
        config.seed = raw.trim().parse().map_err(|_| Failure {
            code: 2,
            message: format!("{SEED_ENV}={raw:?} is not an unsigned integer"),
        })?;
    }
    let report = if a.baseline {
        run_baseline(&config)?
    } else {
        run_experiment(&config)?
    };
    write_report(&report, &a.out)?;
    println!("{}", report.arrow_line());
    Ok(())
}

fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

fn print_report(r: &SavedReport) {
    println!(
        "arm {}: {:.1} of {:.1} bits, {} full labels, {} queries",
        r.ledger.arm, r.ledger.spent_bits, r.ledger.total_bits, r.ledger.n_full, r.ledger.n_queries
    );
    println!("{:>5} {:>8} {:>6} {:>6} {:>9} {:>10}", "stage", "acc%", "pos", "neg", "guess%", "bits");
    for s in &r.stages {
        let guess = s.guess_accuracy().map_or_else(|| "-".to_string(), percent);
        println!(
            "{:>5} {:>8} {:>6} {:>6} {:>9} {:>10.1}",
            s.stage,
            percent(s.accuracy),
            s.n_pos,
            s.n_neg,
            guess,
            s.bits
        );
    }
    println!("class groups (under / near / over the expected count):");
    for (s, g) in r.stages.iter().zip(&r.groups) {
        println!("{:>5} {:>6} {:>6} {:>6}", s.stage, g.g0, g.g1, g.g2);
    }
}

fn analyze(a: Analyze) -> Result<(), Failure> {
    let main = load_report(&a.report)?;
    print_report(&main);
    let Some(other_dir) = a.compare else {
        return Ok(());
    };
    let other = load_report(&other_dir)?;
    println!();
    println!("compared with {}:", other_dir.display());
    for (x, y) in main.stages.iter().zip(&other.stages) {
        println!("{:>5} {:>+8.2}", x.stage, 100.0 * (x.accuracy - y.accuracy));
    }
    let (fx, fy) = (main.stages.last(), other.stages.last());
    if let (Some(x), Some(y)) = (fx, fy) {
        println!("final accuracy delta: {:+.2} points", 100.0 * (x.accuracy - y.accuracy));
    }
    let bits_delta = main.ledger.total_bits - other.ledger.total_bits;
    if bits_delta.abs() <= 1e-9 * main.ledger.total_bits.abs().max(1.0) {
        println!("equal bits: yes ({:.1})", main.ledger.total_bits);
    } else {
        println!("equal bits: no ({:+.1})", bits_delta);
    }
    Ok(())
}
