use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use trainsim::config::{load_cluster, load_model, load_sweep, GB};
use trainsim::strategy::{build_trace, enumerate_strategies, footprint_per_node, write_trace_csv, ParallelConfig, ZeroStage};
use trainsim::sweep::{emit_csv, run_sweep, simulate_one, ResultTable};
use trainsim::workload::build_graph;
use trainsim::{Error, Result};

#[derive(Parser)]
#[command(name = "trainsim", version, about = "Analytical simulator for distributed DL training clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one training iteration and write a one-row CSV.
    Simulate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cluster: PathBuf,
        /// Model-parallel degree (requires --dp).
        #[arg(long, requires = "dp")]
        mp: Option<u64>,
        /// Data-parallel degree (requires --mp).
        #[arg(long, requires = "mp")]
        dp: Option<u64>,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=3))]
        zero: u8,
        #[arg(long)]
        out: PathBuf,
        /// Also write the per-layer workload trace (.csv or .json).
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run a parameter sweep and write one CSV row per point.
    Sweep {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        cluster: PathBuf,
        #[arg(long)]
        sweep: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Print the per-node memory footprint of every (MP, DP) split.
    Footprint {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        nodes: u64,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(0..=3))]
        zero: u8,
    },
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 3 } else { 2 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { model, cluster, mp, dp, zero, out, trace } => {
            let hp = load_model(&model)?;
            let cluster = load_cluster(&cluster)?;
            let zero = ZeroStage::from_index(zero)?;
            let config = match (mp, dp) {
                (Some(mp), Some(dp)) => Some(ParallelConfig::new(mp, dp)?),
                _ => None,
            };
            let result = simulate_one(&hp, &cluster, config, zero)?;
            if let Some(path) = trace {
                let graph = build_graph(&hp)?;
                let t = build_trace(&graph, result.config, zero, &cluster.node_spec())?;
                write_trace(&t, &path)?;
            }
            emit_csv(&ResultTable::single(result), &out)
        }
        Command::Sweep { model, cluster, sweep, out, jobs } => {
            let hp = load_model(&model)?;
            let cluster = load_cluster(&cluster)?;
            let spec = load_sweep(&sweep)?;
            let base_dir = sweep.parent().unwrap_or(Path::new("."));
            let table = run_sweep(&hp, &cluster, &spec, base_dir, jobs)?;
            emit_csv(&table, &out)
        }
        Command::Footprint { model, nodes, zero } => {
            let hp = load_model(&model)?;
            let zero = ZeroStage::from_index(zero)?;
            let graph = build_graph(&hp)?;
            println!(
                "{:<14} {:>12} {:>12} {:>12} {:>12} {:>12}",
                "config", "params_gb", "grads_gb", "optim_gb", "activ_gb", "total_gb"
            );
            for cfg in enumerate_strategies(nodes)? {
                let fp = hp.validate(cfg.mp).and_then(|_| footprint_per_node(&graph, cfg, zero));
                match fp {
                    Ok(f) => println!(
                        "{:<14} {:>12.2} {:>12.2} {:>12.2} {:>12.2} {:>12.2}",
                        cfg.to_string(),
                        f.parameters as f64 / GB,
                        f.gradients as f64 / GB,
                        f.optimizer_states as f64 / GB,
                        f.activations as f64 / GB,
                        f.total() as f64 / GB
                    ),
                    Err(Error::Config { field, .. }) => println!("{:<14} not applicable ({field})", cfg.to_string()),
                    Err(e) => return Err(e),
                }
            }
            Ok(())
        }
    }
}

fn write_trace(trace: &trainsim::strategy::WorkloadTrace, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::to_writer_pretty(file, trace).map_err(|e| Error::Io(e.into()))
    } else {
        write_trace_csv(trace, file)
    }
}
