use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use anisofem::harness::{
    run_experiment_dumping, write_report, write_summary, ExperimentConfig, ExperimentKind,
};

/// Run finite element experiments for anisotropic diffusion problems.
#[derive(Parser)]
#[command(name = "anisofem", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single solve of the perturbed or limit problem.
    Solve(RunArgs),
    /// Distance to the limit solution against eps.
    SweepEps(RunArgs),
    /// Uniform-in-eps error against h on nested meshes.
    SweepH(RunArgs),
    /// Norms of the cutoff decomposition of the source against delta.
    CheckDecomp(RunArgs),
    /// Discrete second-derivative indicators across eps.
    CheckH2(RunArgs),
    /// Check the declared assumptions of the problem.
    Validate(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: the config's `output`, else `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write solution fields as CSV.
    #[arg(long)]
    dump_fields: bool,
}

fn run(kind: ExperimentKind, args: RunArgs) -> anisofem::Result<bool> {
    let mut cfg = ExperimentConfig::from_path(&args.config)?.with_kind(kind)?;
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    let out = args
        .out
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out)?;
    let report = run_experiment_dumping(&cfg, args.dump_fields.then_some(out.as_path()))?;
    let stem = cfg.stem();
    write_report(&report, &out.join(format!("{stem}.csv")))?;
    write_summary(&report, &out.join(format!("{stem}.txt")))?;
    print!("{}", report.summary());
    Ok(report.pass != Some(false))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (kind, args) = match cli.command {
        Command::Solve(a) => (ExperimentKind::Solve, a),
        Command::SweepEps(a) => (ExperimentKind::SweepEps, a),
        Command::SweepH(a) => (ExperimentKind::SweepHUniform, a),
        Command::CheckDecomp(a) => (ExperimentKind::CheckDecomp, a),
        Command::CheckH2(a) => (ExperimentKind::CheckH2, a),
        Command::Validate(a) => (ExperimentKind::Validate, a),
    };
    match run(kind, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
