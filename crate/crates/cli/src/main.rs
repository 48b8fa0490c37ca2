use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use loopsoup_cli::experiments::write_report;
use loopsoup_cli::sample::{self, SampleKind};
use loopsoup_cli::{graphs, run_and_write, Experiment, ExperimentConfig};
use loopsoup_core::report::{merge, StatReport};

#[derive(Parser)]
#[command(name = "loopsoup", version, about = "Loop soups on metric graphs: samplers and statistical checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw samples and dump them.
    Sample(SampleArgs),
    /// Run a statistical check; exits with 0 only when every row passes.
    Verify(VerifyArgs),
    /// Operate on report files.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Args)]
struct SampleArgs {
    kind: SampleKind,
    /// Built-in graph name or path to a JSON graph file.
    #[arg(long, default_value = "triangle")]
    graph: String,
    #[arg(long, default_value_t = 1)]
    reps: u64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Grid points per edge for occupation fields.
    #[arg(long, default_value_t = 33)]
    grid: usize,
    /// Output file; defaults to a file named after the kind in --out.
    #[arg(long)]
    emit: Option<PathBuf>,
    #[arg(long, default_value = "loopsoup-out")]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    experiment: Experiment,
    /// Built-in graph name or path to a JSON graph file.
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Half-width of the local-time windows.
    #[arg(long, default_value_t = 0.05)]
    eps: f64,
    /// Grid points per edge.
    #[arg(long)]
    grid: Option<usize>,
    /// Decreasing caps on the star local times.
    #[arg(long, value_delimiter = ',', default_value = "0.4,0.2,0.1")]
    caps: Vec<f64>,
    /// Star vertex names.
    #[arg(long, value_delimiter = ',')]
    star: Vec<String>,
    /// Local-time window centres, one value or one per vertex.
    #[arg(long = "centre", value_delimiter = ',')]
    centres: Vec<f64>,
    #[arg(long, default_value = "loopsoup-out")]
    out: PathBuf,
    /// Print only the pass or fail line.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Merge report files into one.
    Merge {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, default_value = "loopsoup-out")]
        out: PathBuf,
    },
}

fn print(report: &StatReport, quiet: bool) {
    if quiet {
        println!("{}: {}", report.experiment, if report.pass { "PASS" } else { "FAIL" });
    } else {
        print!("{}", report.summary());
    }
}

fn sample_command(args: SampleArgs) -> Result<bool> {
    let g = graphs::load(&args.graph)?;
    let (text, name) = match args.kind {
        SampleKind::Loops => (sample::loops_text(&g, args.reps, args.seed)?, "loops.txt"),
        SampleKind::Field => (sample::field_csv(&g, args.reps, args.grid, args.seed)?, "field.csv"),
        SampleKind::Gff => (sample::gff_csv(&g, args.reps, args.seed)?, "gff.csv"),
    };
    let path = args.emit.unwrap_or_else(|| args.out.join(name));
    sample::write(&path, &text)?;
    println!("wrote {}", path.display());
    Ok(true)
}

fn verify_command(args: VerifyArgs) -> Result<bool> {
    let cfg = ExperimentConfig {
        experiment: args.experiment,
        graph: args.graph,
        reps: args.reps,
        seed: args.seed,
        eps: args.eps,
        grid: args.grid,
        caps: args.caps,
        star: args.star,
        centres: args.centres,
        out: args.out,
    };
    let report = run_and_write(&cfg)?;
    print(&report, args.quiet);
    Ok(report.pass)
}

fn report_command(command: ReportCommand) -> Result<bool> {
    match command {
        ReportCommand::Merge { files, out } => {
            let mut reports = Vec::new();
            for f in &files {
                let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
                reports.push(StatReport::from_file_json(&text).with_context(|| format!("parsing {}", f.display()))?);
            }
            let merged = merge(&reports);
            write_report(&out, &merged, 0.0)?;
            print(&merged, false);
            Ok(merged.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sample(args) => sample_command(args),
        Command::Verify(args) => verify_command(args),
        Command::Report { command } => report_command(command),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
