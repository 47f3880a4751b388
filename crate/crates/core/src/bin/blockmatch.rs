use std::path::PathBuf;
use std::process::ExitCode;

use blockmatch::cli::{self, CliError, RunConfig};
use blockmatch::engine::StrategyKind;
use clap::{Args, Parser, Subcommand};

/// Memory-budget-aware feature matching.
#[derive(Parser)]
#[command(name = "blockmatch", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; every stage seed is split from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    strategy: Option<StrategyKind>,
    #[arg(long, global = true)]
    size_blk: Option<usize>,
    /// Device budget in descriptor units.
    #[arg(long, global = true)]
    gpu_memory_units: Option<u64>,
    /// Ratio-test threshold.
    #[arg(long, global = true)]
    ratio: Option<f64>,
    /// Images retrieved per image.
    #[arg(long, global = true)]
    top_n: Option<usize>,
    /// Synthetic scene size.
    #[arg(long, global = true)]
    images: Option<usize>,
    #[arg(long, global = true)]
    points: Option<usize>,
    #[arg(long, global = true)]
    band: Option<usize>,
    /// Also write the initial matches.
    #[arg(long, global = true)]
    keep_initial: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene with ground truth.
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Select match pairs and write the view graph.
    Retrieve {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Plan block schedules for a view graph.
    Schedule {
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Image sizes come from these features when given.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Execute a plan: match and verify.
    Match {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write occupancy.csv.
        #[arg(long)]
        occupancy: bool,
    },
    /// Retrieval, scheduling, matching and verification.
    Run {
        /// Generates the configured scene when omitted.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        occupancy: bool,
    },
    /// Data-movement counters of all strategies on one graph.
    Compare {
        #[arg(long)]
        graph: Option<PathBuf>,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inlier summaries from pair_stats.jsonl.
    Stats {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration.
    Config,
}

fn load_config(g: &Global) -> Result<RunConfig, CliError> {
    let mut c = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(v) = g.seed {
        c.seed = v;
    }
    if let Some(v) = g.strategy {
        c.schedule.strategy = v;
    }
    if let Some(v) = g.size_blk {
        c.schedule.size_blk = v;
    }
    if let Some(v) = g.gpu_memory_units {
        c.schedule.gpu_memory_units = v;
    }
    if let Some(v) = g.ratio {
        c.engine.hash.ratio = v;
    }
    if let Some(v) = g.top_n {
        c.retrieval.retrieval_top_n = v;
    }
    if let Some(v) = g.images {
        c.scene.n_images = v;
    }
    if let Some(v) = g.points {
        c.scene.points_per_image = v;
    }
    if let Some(v) = g.band {
        c.scene.overlap_band = v;
    }
    if g.keep_initial {
        c.engine.keep_initial = true;
    }
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        if c.engine.verify_workers == 0 || c.engine.verify_workers > t {
            c.engine.verify_workers = t;
        }
    }
    c.validate()?;
    Ok(c)
}

fn set(slot: &mut PathBuf, v: Option<PathBuf>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = load_config(&cli.global)?;
    if let Some(t) = cli.global.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let p = &mut cfg.paths;
    match cli.command {
        Command::Gen { out } => {
            set(&mut p.features_dir, out);
            cli::cmd_gen(&cfg)
        }
        Command::Retrieve { features, out } => {
            set(&mut p.features_dir, features);
            set(&mut p.graph, out);
            cli::cmd_retrieve(&cfg)
        }
        Command::Schedule {
            graph,
            features,
            out,
        } => {
            set(&mut p.graph, graph);
            set(&mut p.plan, out);
            set(&mut p.features_dir, features.clone());
            cli::cmd_schedule(&cfg, features.as_deref())
        }
        Command::Match {
            features,
            graph,
            plan,
            out,
            occupancy,
        } => {
            set(&mut p.features_dir, features);
            set(&mut p.graph, graph);
            set(&mut p.plan, plan);
            set(&mut p.out_dir, out);
            cli::cmd_match(&cfg, occupancy)
        }
        Command::Run {
            features,
            out,
            occupancy,
        } => {
            set(&mut p.out_dir, out);
            set(&mut p.features_dir, features.clone());
            cli::cmd_run(&cfg, features.as_deref(), occupancy)
        }
        Command::Compare {
            graph,
            features,
            out,
        } => {
            set(&mut p.graph, graph);
            set(&mut p.out_dir, out);
            set(&mut p.features_dir, features.clone());
            cli::cmd_compare(&cfg, features.as_deref())
        }
        Command::Stats { input, out } => {
            set(&mut p.out_dir, out);
            cli::cmd_stats(&cfg, &input)
        }
        Command::Config => Ok(serde_json::to_value(cfg.resolved()).expect("config serializes")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            println!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
