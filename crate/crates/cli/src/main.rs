use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use qcs::applications::{Client, FederatedInstance, SchedulingInstance, Server};
use qcs::async_engine::DelayModel;
use qcs::bounds::BoundInputs;
use qcs::experiment::{
    presets, run_experiment, run_sweep, summary_json, sweep_csv, write_artifacts, write_sweep_artifacts,
    ExperimentConfig, ExperimentReport, GraphSpec, InitSpec, Mode, OutputFormat, SweepReport,
};
use qcs::Digraph;

#[derive(Parser)]
#[command(name = "qcs", version, about = "Quantized consensus simulator with finite-time termination")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Copy, Clone, ValueEnum)]
enum EngineMode {
    Sync,
    Async,
}

#[derive(Args, Clone)]
struct Common {
    /// Base seed; trial i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Directory for output artifacts. Without it a JSON summary goes to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Edge-list file replacing the configured graph.
    #[arg(long)]
    graph_file: Option<PathBuf>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(path) = &self.graph_file {
            cfg.graph = GraphSpec::File { path: path.clone() };
        }
    }
}

#[derive(Args)]
struct AppArgs {
    /// JSON instance file (per-node list under "nodes").
    #[arg(long)]
    instance: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sync")]
    mode: EngineMode,
    /// Delay bound for async mode.
    #[arg(long, default_value_t = 5)]
    max_delay: u32,
    /// Edge probability of the random graph when no graph file is given.
    #[arg(long, default_value_t = 0.5)]
    edge_prob: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials described by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a config over its (n, B) sweep grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Print the convergence bounds for one instance.
    Bounds {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        max_delay: u32,
        /// Size of the random graph when neither a config nor a graph file is given.
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        edge_prob: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Synchronous load balancing on 20 nodes with alternating capacities.
    Fig1 {
        #[command(flatten)]
        common: Common,
    },
    /// Asynchronous load balancing over sizes and delay bounds.
    #[command(name = "fig2-desk")]
    Fig2Desk {
        /// Use the full grid of sizes, delays and trial counts (very slow).
        #[arg(long)]
        full_scale: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Federated aggregation, synchronous and asynchronous on matched instances.
    Fig3 {
        #[command(flatten)]
        common: Common,
    },
    /// Balance task workloads across servers.
    #[command(name = "app-scheduling")]
    AppScheduling {
        #[command(flatten)]
        app: AppArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate local model parameters weighted by dataset size.
    #[command(name = "app-federated")]
    AppFederated {
        #[command(flatten)]
        app: AppArgs,
        /// Use the parameter itself as the initial mass instead of size times parameter.
        #[arg(long)]
        literal: bool,
        #[command(flatten)]
        common: Common,
    },
}

fn emit(report: &ExperimentReport, common: &Common) -> Result<()> {
    match &common.out {
        Some(dir) => {
            for path in write_artifacts(report, dir, common.format.into())? {
                info!("wrote {}", path.display());
            }
            let s = &report.stats;
            println!(
                "trials={} converged={} mean={:.2} std={:.2} min={} max={} agreement_failures={}",
                s.trials, s.converged, s.mean, s.std, s.min, s.max, report.agreement_failures
            );
            if let Some(b) = &report.bounds {
                println!(
                    "within_bound={:.4} required={:.3e} passes={}",
                    b.fraction_within_bound, b.required_confidence, b.passes
                );
            }
        }
        None => println!("{}", summary_json(report)?),
    }
    Ok(())
}

fn emit_sweep(report: &SweepReport, common: &Common) -> Result<()> {
    if let Some(dir) = &common.out {
        for path in write_sweep_artifacts(report, dir, common.format.into())? {
            info!("wrote {}", path.display());
        }
    }
    print!("{}", sweep_csv(report));
    Ok(())
}

fn run(cfg: &ExperimentConfig, common: &Common) -> Result<ExperimentReport> {
    run_experiment(cfg, common.workers).context("experiment failed")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn app_config(app: &AppArgs, n: usize, init: InitSpec, common: &Common) -> Result<ExperimentConfig> {
    if n < 2 && common.graph_file.is_none() {
        bail!("instance needs at least two nodes");
    }
    let mode = match app.mode {
        EngineMode::Sync => Mode::Sync,
        EngineMode::Async => Mode::Async,
    };
    let mut cfg = ExperimentConfig::new(mode, GraphSpec::Random { n, edge_prob: app.edge_prob }, init);
    if mode == Mode::Async {
        cfg.delay = Some(DelayModel::uniform(app.max_delay));
    }
    common.apply(&mut cfg);
    Ok(cfg)
}

fn print_solutions(report: &ExperimentReport, label: &str) {
    for t in &report.trials {
        let values: Vec<String> = t
            .recovered
            .iter()
            .map(|v| v.map_or_else(|| "-".into(), |x| x.to_string()))
            .collect();
        println!(
            "trial {} converged={} steps={} q_s={} {label}=[{}] error={}",
            t.trial,
            t.converged,
            t.steps,
            t.q_s.map_or_else(|| "-".into(), |q| q.to_string()),
            values.join(", "),
            t.solution_error.map_or_else(|| "-".into(), |e| format!("{e:.4}")),
        );
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QCS_LOG_LEVEL", "warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, common } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            common.apply(&mut cfg);
            emit(&run(&cfg, &common)?, &common)?;
        }
        Command::Sweep { config, common } => {
            let mut cfg = ExperimentConfig::from_file(&config)?;
            common.apply(&mut cfg);
            emit_sweep(&run_sweep(&cfg, common.workers)?, &common)?;
        }
        Command::Bounds { config, epsilon, max_delay, n, edge_prob, common } => {
            let (graph, initial) = match config {
                Some(path) => {
                    let mut cfg = ExperimentConfig::from_file(&path)?;
                    common.apply(&mut cfg);
                    qcs::experiment::instance(&cfg, 0)?
                }
                None => {
                    let graph = match &common.graph_file {
                        Some(p) => std::fs::read_to_string(p)?.parse::<Digraph>()?,
                        None => qcs::generate_random_digraph(n, edge_prob, common.seed.unwrap_or(0), 1000)?,
                    };
                    let initial = vec![(1, 1); graph.node_count()];
                    (graph, initial)
                }
            };
            let inputs = BoundInputs::from_instance(&graph, &DelayModel::uniform(max_delay), epsilon, &initial)?;
            print!("{}", inputs.report()?.to_table());
        }
        Command::Fig1 { common } => {
            let mut cfg = presets::fig1(0, 1);
            common.apply(&mut cfg);
            emit(&run(&cfg, &common)?, &common)?;
        }
        Command::Fig2Desk { full_scale, common } => {
            if full_scale {
                warn!("full-scale grid requested: sizes up to 3000 nodes, 3000 trials per cell; expect a very long run");
            }
            let mut cfg = presets::fig2_desk(0, if full_scale { 3000 } else { 50 }, full_scale);
            common.apply(&mut cfg);
            emit_sweep(&run_sweep(&cfg, common.workers)?, &common)?;
        }
        Command::Fig3 { common } => {
            let (mut sync, mut asy) = presets::fig3(0, 1);
            common.apply(&mut sync);
            common.apply(&mut asy);
            for (name, cfg) in [("sync", sync), ("async", asy)] {
                let report = run(&cfg, &common)?;
                let sub = Common {
                    out: common.out.as_ref().map(|d| d.join(name)),
                    ..common.clone()
                };
                println!("[{name}]");
                emit(&report, &sub)?;
            }
        }
        Command::AppScheduling { app, common } => {
            let inst: SchedulingInstance = match &app.instance {
                Some(p) => read_json(p)?,
                None => SchedulingInstance {
                    nodes: vec![Server { l: 40, u: 0, pi_max: 100 }, Server { l: 40, u: 0, pi_max: 300 }],
                },
            };
            let cfg = app_config(&app, inst.nodes.len(), InitSpec::Scheduling(inst), &common)?;
            let report = run(&cfg, &common)?;
            print_solutions(&report, "w*");
            if common.out.is_some() {
                emit(&report, &common)?;
            }
        }
        Command::AppFederated { app, literal, common } => {
            let instance: FederatedInstance = match &app.instance {
                Some(p) => read_json(p)?,
                None => FederatedInstance {
                    nodes: vec![Client { r_size: 10, w_local: 100 }, Client { r_size: 30, w_local: 200 }],
                },
            };
            let n = instance.nodes.len();
            let cfg = app_config(&app, n, InitSpec::Federated { instance, literal }, &common)?;
            let report = run(&cfg, &common)?;
            print_solutions(&report, "W");
            if common.out.is_some() {
                emit(&report, &common)?;
            }
        }
    }
    Ok(())
}
