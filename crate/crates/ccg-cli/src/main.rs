//! `ccg` — causal concept graph pipeline runner.
//!
//! Subcommands map onto the pipeline stages: `synth` makes ground-truth
//! bundles, `train-sae` and `train-graph` fit the two models, `eval-cfs`
//! scores intervention fidelity, `stats` runs the paired significance
//! protocol, `sweep` grids over hyperparameters and `report` re-aggregates
//! existing outputs.

use std::path::PathBuf;

use ccg_core::cfs::{CfsConfig, TargetMethod};
use clap::{Args, Parser, Subcommand};

use ccg_cli::commands::{self, OutputFormat};
use ccg_cli::config::ExperimentConfig;
use ccg_cli::error::{CliError, Result};

#[derive(Parser)]
#[command(name = "ccg", version, about = "Causal concept graph pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config JSON; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base seed; replaces the config's seed list with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for concurrent sweep cells.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Summary output format: json, csv, or both when omitted.
    #[arg(long, global = true)]
    format: Option<String>,
}

#[derive(Args, Debug, Default)]
struct SynthArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    density: Option<f64>,
    #[arg(long)]
    hubs: Option<usize>,
    #[arg(long)]
    examples: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    dict_dim: Option<usize>,
    #[arg(long)]
    sparsity: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct SaeArgs {
    #[arg(long)]
    dict_size: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

#[derive(Args, Debug, Default)]
struct GraphArgs {
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    graph_epochs: Option<usize>,
    #[arg(long)]
    edge_threshold: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth bundle.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Train a TopK sparse autoencoder on an activation matrix.
    TrainSae {
        /// Activation matrix (CCGA binary or headerless CSV).
        #[arg(long)]
        input: PathBuf,
        /// Also write the encoded concept matrix as concepts.ccga.
        #[arg(long)]
        emit_concepts: bool,
        #[command(flatten)]
        sae: SaeArgs,
    },
    /// Learn a concept graph from a concept matrix or a checkpoint plus
    /// activations.
    TrainGraph {
        /// Concept matrix file (N x K).
        #[arg(long)]
        concepts: Option<PathBuf>,
        /// SAE checkpoint, used with --activations.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Activation matrix to encode through --model.
        #[arg(long)]
        activations: Option<PathBuf>,
        #[command(flatten)]
        graph: GraphArgs,
    },
    /// Score intervention fidelity for one or more target-selection methods.
    EvalCfs {
        /// Trained graph JSON.
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        activations: Option<PathBuf>,
        /// Comma-separated methods (graph,variance,magnitude,random).
        #[arg(long, default_value = "graph,variance,magnitude,random")]
        methods: String,
        /// Comma-separated seeds; overrides the config seed list.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        s: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        tau: Option<f64>,
        /// Draw random targets only among positive out-degree nodes.
        #[arg(long)]
        condition_random: bool,
        /// Evaluate on the held-out last fraction of rows.
        #[arg(long)]
        split: Option<f64>,
    },
    /// Paired one-sided t-tests with Bonferroni correction across methods.
    Stats {
        /// Report directories, one per dataset (dir name is the dataset key).
        #[arg(long, required = true, num_args = 1..)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "graph")]
        reference: String,
        #[arg(long, default_value_t = 2000)]
        replicates: usize,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
    },
    /// Run the full pipeline over a hyperparameter grid.
    Sweep {
        /// Grid axis, e.g. `k=5,13,25,50` or `lambda2=0,0.05`. Repeatable.
        #[arg(long = "grid")]
        grids: Vec<String>,
    },
    /// Re-aggregate summaries from existing report files.
    Report,
}

fn parse_methods(spec: &str) -> Result<Vec<TargetMethod>> {
    spec.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| s.trim().parse::<TargetMethod>().map_err(CliError::from))
        .collect()
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    spec.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| CliError::input(format!("bad seed '{s}'")))
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seeds = vec![seed];
        config.sae.seed = seed;
        config.graph.seed = seed;
        config.cfs.seed = seed;
        if let Some(synth) = &mut config.synth {
            synth.seed = seed;
        }
    }
    let format = match &cli.format {
        Some(spec) => spec.parse::<OutputFormat>()?,
        None => OutputFormat::Both,
    };

    match cli.command {
        Command::Synth { synth } => {
            let mut cfg = config.synth.clone().unwrap_or_default();
            if let Some(v) = synth.m {
                cfg.m = v;
            }
            if let Some(v) = synth.density {
                cfg.dag_density = v;
            }
            if let Some(v) = synth.hubs {
                cfg.hub_count = v;
            }
            if let Some(v) = synth.examples {
                cfg.n_examples = v;
            }
            if let Some(v) = synth.sigma {
                cfg.noise_sigma = v;
            }
            if let Some(v) = synth.dict_dim {
                cfg.dict_dim = v;
            }
            if let Some(v) = synth.sparsity {
                cfg.concept_sparsity = v;
            }
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            commands::cmd_synth(&cfg, &cli.out)
        }
        Command::TrainSae {
            input,
            emit_concepts,
            sae,
        } => {
            let mut cfg = config.sae.clone();
            if let Some(v) = sae.dict_size {
                cfg.dict_size = v;
            }
            if let Some(v) = sae.k {
                cfg.k = v;
            }
            if let Some(v) = sae.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = sae.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = sae.lambda {
                cfg.lambda_l1 = v;
            }
            if let Some(v) = sae.beta {
                cfg.beta = v;
            }
            if let Some(v) = sae.learning_rate {
                cfg.learning_rate = v;
            }
            commands::cmd_train_sae(&input, &cfg, &cli.out, emit_concepts)
        }
        Command::TrainGraph {
            concepts,
            model,
            activations,
            graph,
        } => {
            let mut cfg = config.graph.clone();
            if let Some(v) = graph.m {
                cfg.m = v;
            }
            if let Some(v) = graph.lambda1 {
                cfg.lambda1 = v;
            }
            if let Some(v) = graph.lambda2 {
                cfg.lambda2 = v;
            }
            if let Some(v) = graph.graph_epochs {
                cfg.epochs = v;
            }
            if let Some(v) = graph.edge_threshold {
                cfg.edge_threshold = v;
            }
            let concept_matrix = commands::load_concepts(
                concepts.as_deref(),
                model.as_deref(),
                activations.as_deref(),
            )?;
            commands::cmd_train_graph(&concept_matrix, &cfg, &cli.out)
        }
        Command::EvalCfs {
            graph,
            concepts,
            model,
            activations,
            methods,
            seeds,
            s,
            delta,
            tau,
            condition_random,
            split,
        } => {
            let mut cfg = CfsConfig {
                condition_random_on_outdegree: condition_random,
                ..config.cfs.clone()
            };
            if let Some(v) = s {
                cfg.s = v;
            }
            if let Some(v) = delta {
                cfg.delta = v;
            }
            if let Some(v) = tau {
                cfg.tau = v;
            }
            let methods = parse_methods(&methods)?;
            let seeds = match seeds {
                Some(spec) => parse_seeds(&spec)?,
                None => config.seeds.clone(),
            };
            let concept_matrix = commands::load_concepts(
                concepts.as_deref(),
                model.as_deref(),
                activations.as_deref(),
            )?;
            commands::cmd_eval_cfs(
                &graph,
                &concept_matrix,
                &methods,
                &seeds,
                &cfg,
                split.or(config.eval_split),
                &cli.out,
                format,
            )
        }
        Command::Stats {
            reports,
            reference,
            replicates,
            alpha,
        } => {
            let reference = reference.parse::<TargetMethod>().map_err(CliError::from)?;
            let seed = cli.seed.unwrap_or_else(|| config.seeds[0]);
            commands::cmd_stats(&reports, reference, replicates, alpha, seed, &cli.out, format)
        }
        Command::Sweep { grids } => {
            config.require_source()?;
            let axes = grids
                .iter()
                .map(|g| commands::parse_grid_axis(g))
                .collect::<Result<Vec<_>>>()?;
            commands::cmd_sweep(&config, &axes, &cli.out, cli.threads.max(1), format)
        }
        Command::Report => commands::cmd_report(&cli.out, format),
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
