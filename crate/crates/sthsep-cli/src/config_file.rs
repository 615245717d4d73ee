//! Flat `key = value` experiment configs.
//!
//! Lines are `dotted.path = value`; `#` starts a comment; blank lines are
//! skipped. Every key has a default, so an empty file is a valid config.
//! Unknown keys are hard errors to catch sweep typos early.
//!
//! | key                     | default  | meaning                                    |
//! |-------------------------|----------|--------------------------------------------|
//! | window.lookback         | 48       | input steps per window                     |
//! | window.horizon          | 48       | forecast steps per window                  |
//! | window.stride           | 1        | offset between consecutive windows         |
//! | graph.embed_dim         | 8        | node embedding width                       |
//! | graph.alpha             | 1.0      | tanh saturation scalar                     |
//! | graph.sigma             | none     | distance kernel bandwidth (none = auto)    |
//! | graph.threshold         | 0.1      | distance kernel sparsity cutoff            |
//! | graph.use_incident      | false    | add the physical-distance support          |
//! | graph.hyper_order       | 3        | hyperedge cardinality                      |
//! | graph.rebuild           | epoch    | hypergraph refresh cadence (epoch | batch) |
//! | graph.hgcn_normalize    | false    | mean- instead of sum-aggregation           |
//! | mixprop.k               | 2        | propagation depth                          |
//! | mixprop.alpha           | 0.5      | residual keep weight                       |
//! | mixprop.gated           | false    | learned per-entry residual gate            |
//! | fusion.gamma            | 0.5      | pairwise/higher-order blend                |
//! | fusion.st_blocks        | 1        | stacked spatial-temporal blocks            |
//! | fusion.epsilon_init     | 0.0      | initial self-loop weight offset            |
//! | fusion.tblock_channels  | 4        | channels inside the blocks                 |
//! | fusion.tblock_kernel    | 2        | causal conv kernel width                   |
//! | fusion.tblock_dilations | 1,2,4    | one dilation per conv layer                |
//! | patch.p                 | 16       | patch length                               |
//! | patch.s                 | 8        | patch stride                               |
//! | patch.d_m               | 32       | token width                                |
//! | transformer.layers      | 2        | encoder depth                              |
//! | transformer.heads       | 4        | attention heads                            |
//! | transformer.ffn_width   | 64       | feed-forward hidden width                  |
//! | transformer.adapter_rank| 0        | low-rank adapter rank (0 = off)            |
//! | gate                    | learned  | learned | temporal_only | spatial_only    |
//! | train.loss              | mae      | mae | mse                                  |
//! | train.lr                | 0.003    | Adam learning rate                         |
//! | train.epochs            | 30       | training epochs                            |
//! | train.batch_size        | 8        | windows per optimizer step                 |
//! | train.grad_clip         | 5.0      | global gradient-norm ceiling               |
//! | train.seed              | 1        | parameter init and shuffle seed            |

use std::path::Path;

use anyhow::{anyhow, Context};
use sthsep_model::config::RebuildSchedule;
use sthsep_model::{GateSetting, Loss, ModelConfig};

use crate::{CliError, CliResult};

pub fn load_config(path: &Path) -> CliResult<ModelConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read config {}", path.display()))
        .map_err(CliError::parse)?;
    parse_config(&text).map_err(|e| CliError::parse(anyhow!("{}: {e}", path.display())))
}

/// Parses config text over the defaults. Errors carry the line number.
pub fn parse_config(text: &str) -> Result<ModelConfig, String> {
    let mut cfg = ModelConfig::default();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("line {line_no}: expected `key = value`, got `{line}`"))?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value).map_err(|e| format!("line {line_no}: {e}"))?;
    }
    Ok(cfg)
}

fn apply_key(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<(), String> {
    fn parse<T: std::str::FromStr>(key: &str, value: &str, kind: &str) -> Result<T, String> {
        value
            .parse()
            .map_err(|_| format!("`{key}` expects {kind}, got `{value}`"))
    }
    match key {
        "window.lookback" => cfg.window.lookback = parse(key, value, "a positive integer")?,
        "window.horizon" => cfg.window.horizon = parse(key, value, "a positive integer")?,
        "window.stride" => cfg.window.stride = parse(key, value, "a positive integer")?,
        "graph.embed_dim" => cfg.graph.embed_dim = parse(key, value, "a positive integer")?,
        "graph.alpha" => cfg.graph.alpha = parse(key, value, "a number")?,
        "graph.sigma" => {
            cfg.graph.sigma = if value.eq_ignore_ascii_case("none") {
                None
            } else {
                Some(parse(key, value, "a number or `none`")?)
            }
        }
        "graph.threshold" => cfg.graph.threshold = parse(key, value, "a number")?,
        "graph.use_incident" => cfg.graph.use_incident = parse(key, value, "true or false")?,
        "graph.hyper_order" => cfg.graph.hyper_order = parse(key, value, "an integer >= 2")?,
        "graph.rebuild" => {
            cfg.graph.rebuild = match value {
                "epoch" => RebuildSchedule::Epoch,
                "batch" => RebuildSchedule::Batch,
                _ => return Err(format!("`{key}` expects `epoch` or `batch`, got `{value}`")),
            }
        }
        "graph.hgcn_normalize" => {
            cfg.graph.hgcn_normalize = parse(key, value, "true or false")?
        }
        "mixprop.k" => cfg.mixprop.k = parse(key, value, "a positive integer")?,
        "mixprop.alpha" => cfg.mixprop.alpha = parse(key, value, "a number in [0, 1]")?,
        "mixprop.gated" => cfg.mixprop.gated = parse(key, value, "true or false")?,
        "fusion.gamma" => cfg.fusion.gamma = parse(key, value, "a number in [0, 1]")?,
        "fusion.st_blocks" => cfg.fusion.st_blocks = parse(key, value, "a positive integer")?,
        "fusion.epsilon_init" => cfg.fusion.epsilon_init = parse(key, value, "a number")?,
        "fusion.tblock_channels" => {
            cfg.fusion.tblock_channels = parse(key, value, "a positive integer")?
        }
        "fusion.tblock_kernel" => {
            cfg.fusion.tblock_kernel = parse(key, value, "a positive integer")?
        }
        "fusion.tblock_dilations" => {
            let mut dilations = Vec::new();
            for part in value.split(',') {
                dilations.push(parse(key, part.trim(), "comma-separated integers")?);
            }
            cfg.fusion.tblock_dilations = dilations;
        }
        "patch.p" => cfg.patch.p = parse(key, value, "a positive integer")?,
        "patch.s" => cfg.patch.s = parse(key, value, "a positive integer")?,
        "patch.d_m" => cfg.patch.d_m = parse(key, value, "a positive integer")?,
        "transformer.layers" => cfg.transformer.layers = parse(key, value, "a positive integer")?,
        "transformer.heads" => cfg.transformer.heads = parse(key, value, "a positive integer")?,
        "transformer.ffn_width" => {
            cfg.transformer.ffn_width = parse(key, value, "a positive integer")?
        }
        "transformer.adapter_rank" => {
            cfg.transformer.adapter_rank = parse(key, value, "a nonnegative integer")?
        }
        "gate" => {
            cfg.gate = match value {
                "learned" => GateSetting::Learned,
                "temporal_only" => GateSetting::TemporalOnly,
                "spatial_only" => GateSetting::SpatialOnly,
                _ => {
                    return Err(format!(
                        "`gate` expects `learned`, `temporal_only` or `spatial_only`, got `{value}`"
                    ))
                }
            }
        }
        "train.loss" => {
            cfg.train.loss = match value {
                "mae" => Loss::Mae,
                "mse" => Loss::Mse,
                _ => return Err(format!("`train.loss` expects `mae` or `mse`, got `{value}`")),
            }
        }
        "train.lr" => cfg.train.lr = parse(key, value, "a number")?,
        "train.epochs" => cfg.train.epochs = parse(key, value, "a positive integer")?,
        "train.batch_size" => cfg.train.batch_size = parse(key, value, "a positive integer")?,
        "train.grad_clip" => cfg.train.grad_clip = parse(key, value, "a number")?,
        "train.seed" => cfg.train.seed = parse(key, value, "an integer")?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}
