//! `sthsep` command line: synthetic data, graph inspection, training,
//! evaluation, and ablation sweeps. Exit codes: 0 success, 1 runtime
//! failure, 2 usage or input-parse failure.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sthsep_core::TensorF;
use sthsep_data::{load_dataset, GeoSource};
use sthsep_graph::adjacency::default_sigma;
use sthsep_graph::{
    adaptive_adjacency_eval, gaussian_incident, hop_hyperedges, hyperedge_features_eval,
    knn_hyperedges, Hypergraph,
};
use sthsep_model::ModelConfig;

use sthsep_cli::config_file::load_config;
use sthsep_cli::runner::{evaluate_checkpoint, run_ablation, run_experiment, Sweep};
use sthsep_cli::synth::{default_periods, generate, write_csv, SynthConfig};
use sthsep_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "sthsep", version, about = "Decoupled spatio-temporal forecasting harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a spatial regime switch.
    Synth(SynthArgs),
    /// Build a graph or hypergraph from a dataset and emit it as CSV.
    Graph(GraphArgs),
    /// Train a model and write report, checkpoint and predictions.
    Train(TrainArgs),
    /// Score a saved checkpoint on a dataset.
    Eval(EvalArgs),
    /// Run an ablation sweep and emit a CSV table.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    nodes: usize,
    #[arg(long, default_value_t = 2048)]
    steps: usize,
    /// Number of shared temporal factors.
    #[arg(long, default_value_t = 2)]
    rank: usize,
    /// Coupling strength in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    rho: f64,
    /// Regime-switch timestep; defaults to steps / 2.
    #[arg(long)]
    drift_at: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    noise_std: f64,
    /// Factor periods, comma separated; the second factor is a sawtooth.
    #[arg(long, value_delimiter = ',')]
    periods: Option<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GraphMode {
    /// Learned directed adjacency from seeded embeddings.
    Adaptive,
    /// Distance-kernel adjacency (needs coordinates or edges).
    Gaussian,
    /// Nearest-neighbor hyperedges in seeded feature space.
    KnnHyper,
    /// Neighborhood hyperedges from the distance kernel's support.
    HopHyper,
}

#[derive(Args)]
struct GraphArgs {
    /// Dataset CSV; provides node count and ids.
    #[arg(long)]
    data: PathBuf,
    /// Node coordinates CSV (`node_id,x,y`).
    #[arg(long, conflicts_with = "edges")]
    coords: Option<PathBuf>,
    /// Edge list CSV (`src,dst,dist`).
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: GraphMode,
    /// Hyperedge order for the hypergraph modes.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Distance kernel bandwidth; defaults to the distance std.
    #[arg(long)]
    sigma: Option<f64>,
    /// Distance kernel sparsity cutoff.
    #[arg(long, default_value_t = 0.1)]
    threshold: f64,
    /// Embedding width for the seeded draws.
    #[arg(long, default_value_t = 8)]
    embed_dim: usize,
    /// Saturation scalar of the builders.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "edges")]
    coords: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Output directory for report, checkpoint and predictions.
    #[arg(long)]
    out: PathBuf,
    /// Overrides train.seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "edges")]
    coords: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepArg {
    Gamma,
    K,
    Temporal,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, conflicts_with = "edges")]
    coords: Option<PathBuf>,
    #[arg(long)]
    edges: Option<PathBuf>,
    /// Output directory for the sweep table.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    sweep: SweepArg,
    /// Overrides train.seed from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Graph(args) => cmd_graph(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Ablate(args) => cmd_ablate(args),
    }
}

fn geo_source(coords: Option<PathBuf>, edges: Option<PathBuf>) -> GeoSource {
    match (coords, edges) {
        (Some(c), None) => GeoSource::Coords(c),
        (None, Some(e)) => GeoSource::Edges(e),
        _ => GeoSource::None,
    }
}

fn load_config_or_default(path: Option<&Path>, seed: Option<u64>) -> CliResult<ModelConfig> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ModelConfig::default(),
    };
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.validate().map_err(CliError::parse)?;
    Ok(cfg)
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        nodes: args.nodes,
        steps: args.steps,
        seed: args.seed,
        rank: args.rank,
        periods: args.periods.unwrap_or_else(default_periods),
        rho: args.rho,
        drift_at: args.drift_at.unwrap_or(args.steps / 2),
        noise_std: args.noise_std,
    };
    let ds = generate(&cfg)?;
    write_csv(&ds, &args.out)?;
    println!(
        "wrote {} steps x {} nodes to {}",
        cfg.steps,
        cfg.nodes,
        args.out.display()
    );
    Ok(())
}

fn cmd_graph(args: GraphArgs) -> CliResult<()> {
    let geo = geo_source(args.coords, args.edges);
    let ds = load_dataset(&args.data, &geo).map_err(CliError::parse)?;
    let n = ds.num_nodes();
    let d = args.embed_dim;
    if d == 0 || args.alpha <= 0.0 {
        return Err(CliError::parse(anyhow!(
            "embed-dim must be positive and alpha > 0"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let bound = 1.0 / (d as f64).sqrt();
    let mut draw = |shape: &[usize]| TensorF::uniform(shape, -bound, bound, &mut rng);

    match args.mode {
        GraphMode::Adaptive => {
            let e1 = draw(&[n, d]);
            let e2 = draw(&[n, d]);
            let w = draw(&[d, n]);
            let b = draw(&[n]);
            let a = adaptive_adjacency_eval(&e1, &e2, &w, &b, args.alpha)
                .map_err(CliError::runtime)?;
            write_matrix_csv(&a, &ds.node_ids, &args.out)
        }
        GraphMode::Gaussian => {
            let a = gaussian_kernel(&ds.distances, args.sigma, args.threshold)?;
            write_matrix_csv(&a, &ds.node_ids, &args.out)
        }
        GraphMode::KnnHyper => {
            let e3 = draw(&[n, d]);
            let w = draw(&[d, d]);
            let b = draw(&[d]);
            let f3 =
                hyperedge_features_eval(&e3, &w, &b, args.alpha).map_err(CliError::runtime)?;
            let hg = knn_hyperedges(&f3, args.k).map_err(CliError::parse)?;
            write_hyperedges_csv(&hg, &ds.node_ids, &args.out)
        }
        GraphMode::HopHyper => {
            let kernel = gaussian_kernel(&ds.distances, args.sigma, args.threshold)?;
            let mut adj = TensorF::zeros(&[n, n]);
            for i in 0..n {
                for j in 0..n {
                    if i != j && kernel.get2(i, j) > 0.0 {
                        adj.set2(i, j, 1.0);
                    }
                }
            }
            let hg = hop_hyperedges(&adj, args.k).map_err(CliError::parse)?;
            write_hyperedges_csv(&hg, &ds.node_ids, &args.out)
        }
    }
}

fn gaussian_kernel(
    distances: &Option<TensorF>,
    sigma: Option<f64>,
    threshold: f64,
) -> CliResult<TensorF> {
    let d = distances.as_ref().ok_or_else(|| {
        CliError::parse(anyhow!(
            "this mode needs pairwise distances; pass --coords or --edges"
        ))
    })?;
    let sigma = sigma.unwrap_or_else(|| default_sigma(d));
    gaussian_incident(Some(d), sigma, threshold).map_err(CliError::parse)
}

fn write_matrix_csv(a: &TensorF, node_ids: &[String], out: &Path) -> CliResult<()> {
    let n = node_ids.len();
    let mut wtr = csv::Writer::from_path(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(CliError::runtime)?;
    let mut header = vec!["node".to_string()];
    header.extend(node_ids.iter().cloned());
    wtr.write_record(&header)
        .context("write header")
        .map_err(CliError::runtime)?;
    for i in 0..n {
        let mut row = vec![node_ids[i].clone()];
        for j in 0..n {
            row.push(format!("{}", a.get2(i, j)));
        }
        wtr.write_record(&row)
            .context("write row")
            .map_err(CliError::runtime)?;
    }
    wtr.flush().context("flush").map_err(CliError::runtime)?;
    println!("wrote {n} x {n} matrix to {}", out.display());
    Ok(())
}

fn write_hyperedges_csv(hg: &Hypergraph, node_ids: &[String], out: &Path) -> CliResult<()> {
    let mut wtr = csv::Writer::from_path(out)
        .with_context(|| format!("cannot create {}", out.display()))
        .map_err(CliError::runtime)?;
    wtr.write_record(["edge", "node"])
        .context("write header")
        .map_err(CliError::runtime)?;
    for (idx, edge) in hg.hyperedges.iter().enumerate() {
        for &member in edge {
            wtr.write_record([format!("e{idx}"), node_ids[member].clone()])
                .context("write row")
                .map_err(CliError::runtime)?;
        }
    }
    wtr.flush().context("flush").map_err(CliError::runtime)?;
    println!(
        "wrote {} hyperedges to {}",
        hg.hyperedges.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let cfg = load_config_or_default(args.config.as_deref(), args.seed)?;
    let geo = geo_source(args.coords, args.edges);
    let report = run_experiment(&cfg, &args.data, &geo, &args.out)?;
    println!(
        "val mae {:.6} rmse {:.6} | test mae {:.6} rmse {:.6} | {:.1}s",
        report.splits.val.mae,
        report.splits.val.rmse,
        report.splits.test.mae,
        report.splits.test.rmse,
        report.runtime_s
    );
    println!("artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let geo = geo_source(args.coords, args.edges);
    let report = evaluate_checkpoint(&args.checkpoint, &args.data, &geo)?;
    report.write(&args.out)?;
    println!(
        "val mae {:.6} rmse {:.6} | test mae {:.6} rmse {:.6}",
        report.splits.val.mae,
        report.splits.val.rmse,
        report.splits.test.mae,
        report.splits.test.rmse
    );
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let cfg = load_config_or_default(args.config.as_deref(), args.seed)?;
    let geo = geo_source(args.coords, args.edges);
    let sweep = match args.sweep {
        SweepArg::Gamma => Sweep::Gamma,
        SweepArg::K => Sweep::K,
        SweepArg::Temporal => Sweep::Temporal,
    };
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("cannot create {}", args.out.display()))
        .map_err(CliError::runtime)?;
    let out_csv = args.out.join(format!("ablation_{}.csv", sweep.name()));
    run_ablation(&cfg, &args.data, &geo, &out_csv, sweep)?;
    println!("wrote {}", out_csv.display());
    Ok(())
}
