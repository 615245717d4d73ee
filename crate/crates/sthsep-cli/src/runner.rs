//! Experiment pipeline: load, split 70/10/20 chronologically, normalize on
//! train statistics, window, train, and score on the de-normalized scale.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, Context};
use sha2::{Digest, Sha256};
use sthsep_core::TensorF;
use sthsep_data::{
    load_dataset, make_windows, split_dataset, zscore_normalize, GeoSource, NormStats,
    SpatioTemporalDataset, Window, WindowSpec,
};
use sthsep_model::config::WindowConfig;
use sthsep_model::{evaluate, load_checkpoint, save_checkpoint, train};
use sthsep_model::{GateSetting, Model, ModelConfig, TrainOutcome};

use crate::report::{ForecastReport, SplitMetrics, SplitSet, SCHEMA_VERSION};
use crate::{CliError, CliResult};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.7, 0.1, 0.2);

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub n_nodes: usize,
    pub node_ids: Vec<String>,
    pub distances: Option<TensorF>,
    pub stats: NormStats,
    pub train_windows: Vec<Window>,
    pub val_windows: Vec<Window>,
    pub test_windows: Vec<Window>,
    /// Test windows on the raw scale, for the reference baselines.
    pub raw_test_windows: Vec<Window>,
}

/// Splits, normalizes and windows an in-memory dataset.
pub fn prepare_dataset(
    ds: &SpatioTemporalDataset,
    window: &WindowConfig,
) -> CliResult<PreparedData> {
    let spec = WindowSpec::new(window.lookback, window.horizon, window.stride)
        .map_err(CliError::parse)?;
    let (train_raw, val_raw, test_raw) =
        split_dataset(ds, SPLIT_RATIOS, Some(&spec)).map_err(CliError::parse)?;
    let raw_test_windows = make_windows(&test_raw, &spec);
    let ((train_n, val_n, test_n), stats, warnings) =
        zscore_normalize(&train_raw, &val_raw, &test_raw).map_err(CliError::parse)?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    Ok(PreparedData {
        n_nodes: ds.num_nodes(),
        node_ids: ds.node_ids.clone(),
        distances: ds.distances.clone(),
        stats,
        train_windows: make_windows(&train_n, &spec),
        val_windows: make_windows(&val_n, &spec),
        test_windows: make_windows(&test_n, &spec),
        raw_test_windows,
    })
}

/// Loads a dataset from disk and prepares it.
pub fn prepare(path: &Path, geo: &GeoSource, window: &WindowConfig) -> CliResult<PreparedData> {
    let ds = load_dataset(path, geo).map_err(CliError::parse)?;
    prepare_dataset(&ds, window)
}

#[derive(Debug)]
pub struct TrainedRun {
    pub model: Model,
    pub outcome: TrainOutcome,
    pub val: SplitMetrics,
    pub test: SplitMetrics,
}

/// Trains a fresh model on prepared data and scores the kept parameters.
pub fn train_and_score(cfg: &ModelConfig, prepared: &PreparedData) -> CliResult<TrainedRun> {
    let mut model = Model::new(cfg.clone(), prepared.n_nodes).map_err(CliError::parse)?;
    let outcome = train(
        &mut model,
        &prepared.train_windows,
        &prepared.val_windows,
        &prepared.stats,
        prepared.distances.as_ref(),
        None,
    )
    .map_err(CliError::runtime)?;
    let bundle = model
        .rebuild_supports(prepared.distances.as_ref())
        .map_err(CliError::runtime)?;
    let (val_mae, val_rmse) = evaluate(&model, &prepared.val_windows, &prepared.stats, &bundle)
        .map_err(CliError::runtime)?;
    let (test_mae, test_rmse) = evaluate(&model, &prepared.test_windows, &prepared.stats, &bundle)
        .map_err(CliError::runtime)?;
    Ok(TrainedRun {
        model,
        outcome,
        val: SplitMetrics { mae: val_mae, rmse: val_rmse },
        test: SplitMetrics { mae: test_mae, rmse: test_rmse },
    })
}

/// Full `train` subcommand: trains, then writes `report.json`,
/// `checkpoint.json` and `predictions.csv` into `out_dir`.
pub fn run_experiment(
    cfg: &ModelConfig,
    data_path: &Path,
    geo: &GeoSource,
    out_dir: &Path,
) -> CliResult<ForecastReport> {
    let started = Instant::now();
    let prepared = prepare(data_path, geo, &cfg.window)?;
    let run = train_and_score(cfg, &prepared)?;

    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))
        .map_err(CliError::runtime)?;
    save_checkpoint(&run.model, &out_dir.join("checkpoint.json")).map_err(CliError::runtime)?;
    write_predictions(&run.model, &prepared, &out_dir.join("predictions.csv"))?;

    let report = ForecastReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.train.seed,
        config: cfg.clone(),
        splits: SplitSet { val: run.val, test: run.test },
        runtime_s: started.elapsed().as_secs_f64(),
        predictions_path: Some("predictions.csv".into()),
    };
    report.write(&out_dir.join("report.json"))?;
    Ok(report)
}

/// De-normalized per-step test predictions, one row per (window, step, node).
fn write_predictions(model: &Model, prepared: &PreparedData, path: &Path) -> CliResult<()> {
    let bundle = model
        .rebuild_supports(prepared.distances.as_ref())
        .map_err(CliError::runtime)?;
    let mut wtr = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))
        .map_err(CliError::runtime)?;
    wtr.write_record(["window_start", "step", "node", "prediction", "target"])
        .context("write header")
        .map_err(CliError::runtime)?;
    for (w, raw) in prepared.test_windows.iter().zip(&prepared.raw_test_windows) {
        let pred_n = model.predict(&w.x, &bundle).map_err(CliError::runtime)?;
        let pred = prepared
            .stats
            .denormalize(&pred_n)
            .map_err(CliError::runtime)?;
        let horizon = pred.shape()[0];
        for h in 0..horizon {
            for (i, node) in prepared.node_ids.iter().enumerate() {
                wtr.write_record([
                    w.start.to_string(),
                    h.to_string(),
                    node.clone(),
                    format!("{}", pred.get2(h, i)),
                    format!("{}", raw.y.get2(h, i)),
                ])
                .context("write row")
                .map_err(CliError::runtime)?;
            }
        }
    }
    wtr.flush().context("flush").map_err(CliError::runtime)?;
    Ok(())
}

/// `eval` subcommand: re-scores a saved checkpoint on a dataset.
pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data_path: &Path,
    geo: &GeoSource,
) -> CliResult<ForecastReport> {
    let started = Instant::now();
    let model = load_checkpoint(checkpoint).map_err(CliError::parse)?;
    let cfg = model.config().clone();
    let prepared = prepare(data_path, geo, &cfg.window)?;
    let bundle = model
        .rebuild_supports(prepared.distances.as_ref())
        .map_err(CliError::runtime)?;
    let (val_mae, val_rmse) = evaluate(&model, &prepared.val_windows, &prepared.stats, &bundle)
        .map_err(CliError::runtime)?;
    let (test_mae, test_rmse) = evaluate(&model, &prepared.test_windows, &prepared.stats, &bundle)
        .map_err(CliError::runtime)?;
    Ok(ForecastReport {
        schema_version: SCHEMA_VERSION,
        seed: cfg.train.seed,
        config: cfg,
        splits: SplitSet {
            val: SplitMetrics { mae: val_mae, rmse: val_rmse },
            test: SplitMetrics { mae: test_mae, rmse: test_rmse },
        },
        runtime_s: started.elapsed().as_secs_f64(),
        predictions_path: None,
    })
}

/// SHA-256 of the dataset bytes; ablation rows carry it so a table can be
/// audited for accidental data changes mid-sweep.
pub fn data_hash(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(CliError::parse)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Gamma,
    K,
    Temporal,
}

impl Sweep {
    pub fn name(&self) -> &'static str {
        match self {
            Sweep::Gamma => "gamma",
            Sweep::K => "k",
            Sweep::Temporal => "temporal",
        }
    }
}

/// The experimental grids: gamma over {0, 0.5, 1}, hyperedge order over
/// {2, 3, 4, 5}, and the temporal branch on/off.
pub fn sweep_settings(base: &ModelConfig, sweep: Sweep) -> Vec<(String, ModelConfig)> {
    match sweep {
        Sweep::Gamma => [0.0, 0.5, 1.0]
            .iter()
            .map(|&g| {
                let mut cfg = base.clone();
                cfg.fusion.gamma = g;
                (format!("gamma={g}"), cfg)
            })
            .collect(),
        Sweep::K => (2..=5)
            .map(|k| {
                let mut cfg = base.clone();
                cfg.graph.hyper_order = k;
                (format!("k={k}"), cfg)
            })
            .collect(),
        Sweep::Temporal => vec![
            ("temporal=on".to_string(), {
                let mut cfg = base.clone();
                cfg.gate = GateSetting::Learned;
                cfg
            }),
            ("temporal=off".to_string(), {
                let mut cfg = base.clone();
                cfg.gate = GateSetting::SpatialOnly;
                cfg
            }),
        ],
    }
}

/// Runs every setting of a sweep on the same data and seed, appending one
/// CSV row per setting.
pub fn run_ablation(
    base: &ModelConfig,
    data_path: &Path,
    geo: &GeoSource,
    out_csv: &Path,
    sweep: Sweep,
) -> CliResult<()> {
    let hash = data_hash(data_path)?;
    let prepared = prepare(data_path, geo, &base.window)?;
    let settings = sweep_settings(base, sweep);
    if settings.is_empty() {
        return Err(CliError::parse(anyhow!("empty sweep")));
    }

    let mut wtr = csv::Writer::from_path(out_csv)
        .with_context(|| format!("cannot create {}", out_csv.display()))
        .map_err(CliError::runtime)?;
    wtr.write_record([
        "sweep", "setting", "data_hash", "seed", "val_mae", "val_rmse", "test_mae", "test_rmse",
        "runtime_s",
    ])
    .context("write header")
    .map_err(CliError::runtime)?;
    for (label, cfg) in settings {
        let started = Instant::now();
        let run = train_and_score(&cfg, &prepared)?;
        wtr.write_record([
            sweep.name().to_string(),
            label,
            hash.clone(),
            cfg.train.seed.to_string(),
            format!("{}", run.val.mae),
            format!("{}", run.val.rmse),
            format!("{}", run.test.mae),
            format!("{}", run.test.rmse),
            format!("{:.3}", started.elapsed().as_secs_f64()),
        ])
        .context("write row")
        .map_err(CliError::runtime)?;
    }
    wtr.flush().context("flush").map_err(CliError::runtime)?;
    Ok(())
}
