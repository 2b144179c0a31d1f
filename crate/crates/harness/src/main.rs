use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mbrain::report::render;
use mbrain::{
    emit_report, run_bottleneck_sweep, run_lifelong_sequence, run_routing_ablation, run_split_mnist,
    ExperimentConfig, ExperimentReport, ReportFormat,
};

const EXIT_METRIC_FAILURE: u8 = 2;
const EXIT_INPUT_ERROR: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "mbrain", version, about = "Run mbrain continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    experiment: Experiment,
    /// Config file of `key = value` lines applied over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory holding the four MNIST IDX files.
    #[arg(long, global = true, default_value = "data/mnist")]
    data_dir: PathBuf,
    /// Report destination; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "text")]
    format: ReportFormat,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the router sweep (0 = rayon default).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Record wall-clock time in the report (breaks byte-identical reruns).
    #[arg(long, global = true)]
    timing: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Experiment {
    /// Split-MNIST A then B, with the naive baseline.
    SplitMnist,
    /// Bottleneck width sweep on the crowded manifold.
    SweepK,
    /// Autonomous A -> B -> A retrieval on the crowded manifold.
    Lifelong,
    /// Router kind by input representation routing accuracy.
    Ablation,
}

fn run(cli: &Cli) -> mbrain_core::Result<ExperimentReport> {
    let mut cfg = match cli.experiment {
        Experiment::SplitMnist | Experiment::Ablation => ExperimentConfig::vision(),
        Experiment::SweepK | Experiment::Lifelong => ExperimentConfig::synthetic(),
    };
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    let started = Instant::now();
    let mut report = match cli.experiment {
        Experiment::SplitMnist => run_split_mnist(&cfg, &cli.data_dir)?,
        Experiment::SweepK => run_bottleneck_sweep(&cfg)?,
        Experiment::Lifelong => run_lifelong_sequence(&cfg)?,
        Experiment::Ablation => run_routing_ablation(&cfg, &cli.data_dir)?,
    };
    if cli.timing {
        report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT_ERROR);
        }
    }
    let report = match run(&cli) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INPUT_ERROR);
        }
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = emit_report(&report, path, cli.format) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INPUT_ERROR);
            }
        }
        None => print!("{}", render(&report, cli.format)),
    }
    for m in report.failures() {
        eprintln!("FAIL {} = {}", m.name, m.value);
    }
    if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_METRIC_FAILURE)
    }
}
