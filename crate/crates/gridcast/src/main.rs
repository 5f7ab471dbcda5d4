//! Command-line front end: generate synthetic traces, validate accounting
//! files, replay per-class forecasting with anomaly detection, run the
//! deadline scheduler simulation, and emit plot-ready reports.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gridcast::classing::ClassKeySpec;
use gridcast::pipeline::{run_pipeline, PipelineConfig, PipelineError, RunMode, RunSummary};
use gridcast::sim::ClusterSpec;
use gridcast::synth::{gen_workload, workload_to_trace, WorkloadMixSpec};

#[derive(Parser)]
#[command(name = "gridcast", version, about = "Execution-time forecasting and probabilistic deadline scheduling for cluster workloads")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by the pipeline subcommands; each overrides the matching
/// config-file key.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON pipeline configuration (all keys optional).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input accounting trace(s).
    #[arg(long = "input", value_name = "PATH")]
    inputs: Vec<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Requested confidence level in (0,1).
    #[arg(long)]
    confidence: Option<f64>,
    /// Class key flags, comma separated: group,owner,host,window.
    #[arg(long = "class-key")]
    class_key: Option<String>,
    /// Cluster shape NODESxSLOTS, e.g. 8x4.
    #[arg(long)]
    cluster: Option<String>,
    /// Minimum observations before a class is modellable.
    #[arg(long = "min-class-size")]
    min_class_size: Option<usize>,
    /// Fit models to log-durations.
    #[arg(long = "log-transform")]
    log_transform: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic accounting trace.
    Synth {
        /// JSON workload mix specification; defaults to a 4-class mix.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Total jobs, split evenly across the default classes (ignored
        /// when --config is given).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Parse and validate traces; write ingest statistics.
    Ingest(CommonArgs),
    /// Ingest plus duration-CDF report.
    Report(CommonArgs),
    /// Per-class forecast + anomaly replay with full artifacts.
    Replay(CommonArgs),
    /// Replay plus the deadline scheduler simulation.
    Simulate(CommonArgs),
}

fn parse_cluster(s: &str) -> Result<ClusterSpec, PipelineError> {
    let (nodes, slots) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| PipelineError::Config(format!("cluster shape must be NxS, got {s:?}")))?;
    let nodes: usize = nodes
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("bad node count in {s:?}")))?;
    let slots: u32 = slots
        .trim()
        .parse()
        .map_err(|_| PipelineError::Config(format!("bad slot count in {s:?}")))?;
    Ok(ClusterSpec::uniform(nodes, slots))
}

fn build_config(args: &CommonArgs) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &args.config {
        Some(path) => PipelineConfig::from_json_file(path)?,
        None => PipelineConfig::default(),
    };
    if !args.inputs.is_empty() {
        cfg.inputs = args.inputs.clone();
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(c) = args.confidence {
        cfg.confidence = c;
    }
    if let Some(spec) = &args.class_key {
        cfg.class_key = ClassKeySpec::parse_flags(spec).map_err(PipelineError::Config)?;
    }
    if let Some(shape) = &args.cluster {
        cfg.cluster = parse_cluster(shape)?;
    }
    if let Some(m) = args.min_class_size {
        cfg.min_class_size = m;
    }
    if args.log_transform {
        cfg.ensemble.log_transform = true;
    }
    Ok(cfg)
}

fn print_summary(mode: RunMode, summary: &RunSummary) {
    let s = &summary.ingest;
    println!(
        "ingest: parsed={} skipped={} malformed={} filtered_short={} failed={}",
        s.parsed, s.skipped, s.malformed, s.filtered_short, s.failed
    );
    if mode >= RunMode::Replay {
        println!("classes: {}", summary.classes);
    }
    if let Some(r) = &summary.sim_report {
        println!(
            "simulation: admitted={} rejected={} unmodellable={} hits={} misses={} utilisation={:.3}",
            r.admitted, r.rejected, r.unmodellable, r.deadline_hits, r.deadline_misses, r.utilisation
        );
    }
    for f in &summary.files {
        println!("wrote {}", f.display());
    }
}

fn run_mode(args: &CommonArgs, mode: RunMode) -> Result<(), PipelineError> {
    let cfg = build_config(args)?;
    let summary = run_pipeline(&cfg, mode)?;
    print_summary(mode, &summary);
    Ok(())
}

fn run_synth(
    config: Option<PathBuf>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    jobs: Option<usize>,
) -> Result<(), PipelineError> {
    let mut mix = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            serde_json::from_str::<WorkloadMixSpec>(&text)
                .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?
        }
        None => {
            let mut mix = WorkloadMixSpec::default();
            if let Some(total) = jobs {
                let per_class = (total / mix.classes.len()).max(1);
                for c in &mut mix.classes {
                    c.gen.n_jobs = per_class;
                }
            }
            mix
        }
    };
    if let Some(seed) = seed {
        mix.seed = seed;
    }
    mix.validate().map_err(PipelineError::Config)?;

    let out_dir = out.unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out_dir)?;
    let records = gen_workload(&mix);
    let path = out_dir.join("trace.txt");
    std::fs::write(&path, workload_to_trace(&mix, &records))?;
    println!("wrote {} ({} records)", path.display(), records.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out, seed, jobs } => run_synth(config, out, seed, jobs),
        Command::Ingest(args) => run_mode(&args, RunMode::Ingest),
        Command::Report(args) => run_mode(&args, RunMode::Report),
        Command::Replay(args) => run_mode(&args, RunMode::Replay),
        Command::Simulate(args) => run_mode(&args, RunMode::Simulate),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
