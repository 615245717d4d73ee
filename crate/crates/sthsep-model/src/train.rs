//! Adam training loop with gradient accumulation over fixed-order batches,
//! global-norm clipping, and best-on-validation parameter selection. Every
//! step is deterministic for a given seed: parameter sweeps run in name
//! order and the batch order never changes.

use std::collections::BTreeMap;

use sthsep_core::{Graph, NodeId, ParamStore, TensorF};
use sthsep_data::{NormStats, Window};

use crate::config::{Loss, RebuildSchedule};
use crate::error::{ModelError, ModelResult};
use crate::model::{GraphBundle, Model};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean batch loss on the normalized scale.
    pub train_loss: f64,
    /// De-normalized mean absolute error on the training windows; only
    /// computed when an early-stop threshold was requested.
    pub train_mae: Option<f64>,
    /// De-normalized mean absolute error on the validation windows.
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    /// Epoch whose validation error the kept parameters come from.
    pub best_epoch: usize,
    pub best_val_mae: f64,
    /// True when the train-error threshold ended the run early. In that
    /// case the current parameters are kept rather than the best-val ones.
    pub stopped_early: bool,
}

struct Adam {
    lr: f64,
    t: i32,
    m: BTreeMap<String, TensorF>,
    v: BTreeMap<String, TensorF>,
}

impl Adam {
    fn new(lr: f64) -> Adam {
        Adam {
            lr,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    fn step(&mut self, store: &mut ParamStore) -> ModelResult<()> {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for name in store.names() {
            if store.is_frozen(&name)? {
                continue;
            }
            let grad = store.grad(&name)?.clone();
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| TensorF::zeros(grad.shape()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| TensorF::zeros(grad.shape()));
            let mut value = store.value(&name)?.clone();
            for ((mv, vv), (g, x)) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(grad.data().iter().zip(value.data_mut().iter_mut()))
            {
                *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * g;
                *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *x -= self.lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            store.set_value(&name, value)?;
        }
        Ok(())
    }
}

fn loss_node(g: &mut Graph<'_>, pred: NodeId, target: NodeId, loss: Loss) -> ModelResult<NodeId> {
    let diff = g.sub(pred, target)?;
    let per_entry = match loss {
        Loss::Mae => g.abs_val(diff),
        Loss::Mse => g.pow_const(diff, 2.0),
    };
    Ok(g.mean_all(per_entry))
}

/// One backward pass for one window; the graph lives only inside this call
/// so the parameter store is free again for the optimizer afterwards.
fn window_grads(
    model: &Model,
    window: &Window,
    bundle: &GraphBundle,
) -> ModelResult<(f64, Vec<(String, TensorF)>)> {
    let mut g = Graph::new(&model.store);
    let pred = model.forward(&mut g, &window.x, bundle)?;
    let target = g.input(window.y.clone());
    let loss = loss_node(&mut g, pred, target, model.config().train.loss)?;
    let loss_value = g.value(loss).data()[0];
    let grads = g.backward(loss)?;
    Ok((loss_value, g.param_grads(&grads)))
}

/// De-normalized mean absolute error and root mean squared error over a
/// window set.
pub fn evaluate(
    model: &Model,
    windows: &[Window],
    stats: &NormStats,
    bundle: &GraphBundle,
) -> ModelResult<(f64, f64)> {
    if windows.is_empty() {
        return Err(ModelError::Config("no windows to evaluate".into()));
    }
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut count = 0usize;
    for w in windows {
        let pred = model.predict(&w.x, bundle)?;
        let pred = stats.denormalize(&pred)?;
        let truth = stats.denormalize(&w.y)?;
        for (p, t) in pred.data().iter().zip(truth.data()) {
            let e = p - t;
            abs_sum += e.abs();
            sq_sum += e * e;
            count += 1;
        }
    }
    Ok((abs_sum / count as f64, (sq_sum / count as f64).sqrt()))
}

/// Runs the full optimization loop. `stop_below_train_mae`, when set, ends
/// training as soon as the de-normalized training error drops under the
/// threshold and keeps the parameters of that moment; otherwise the model
/// finishes with the parameters of the best validation epoch.
pub fn train(
    model: &mut Model,
    train_windows: &[Window],
    val_windows: &[Window],
    stats: &NormStats,
    distances: Option<&TensorF>,
    stop_below_train_mae: Option<f64>,
) -> ModelResult<TrainOutcome> {
    if train_windows.is_empty() {
        return Err(ModelError::Config("no training windows".into()));
    }
    if val_windows.is_empty() {
        return Err(ModelError::Config("no validation windows".into()));
    }
    let cfg = model.config().clone();
    let mut adam = Adam::new(cfg.train.lr);
    let mut history = Vec::with_capacity(cfg.train.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<ParamStore> = None;
    let mut stopped_early = false;

    'epochs: for epoch in 1..=cfg.train.epochs {
        let mut bundle = model.rebuild_supports(distances)?;
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, batch) in train_windows.chunks(cfg.train.batch_size).enumerate() {
            if cfg.graph.rebuild == RebuildSchedule::Batch && batch_idx > 0 {
                bundle = model.rebuild_supports(distances)?;
            }
            model.store.zero_grads();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for w in batch {
                let (loss_value, grads) = window_grads(model, w, &bundle)?;
                if !loss_value.is_finite() {
                    return Err(ModelError::NonFiniteLoss {
                        epoch,
                        batch: batch_idx,
                    });
                }
                batch_loss += loss_value * scale;
                model.store.accumulate(&grads, scale)?;
            }
            let norm = model.store.global_grad_norm();
            if norm > cfg.train.grad_clip {
                model.store.scale_grads(cfg.train.grad_clip / norm);
            }
            adam.step(&mut model.store)?;
            loss_sum += batch_loss;
            batches += 1;
        }

        // Supports moved with the parameters during the epoch; evaluate
        // against the post-update state.
        let eval_bundle = model.rebuild_supports(distances)?;
        let (val_mae, _) = evaluate(model, val_windows, stats, &eval_bundle)?;
        let train_mae = match stop_below_train_mae {
            Some(_) => Some(evaluate(model, train_windows, stats, &eval_bundle)?.0),
            None => None,
        };
        history.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            train_mae,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best_params = Some(model.store.clone());
        }
        if let (Some(threshold), Some(mae)) = (stop_below_train_mae, train_mae) {
            if mae < threshold {
                stopped_early = true;
                break 'epochs;
            }
        }
    }

    if !stopped_early {
        if let Some(best) = best_params {
            model.store = best;
        }
    }

    Ok(TrainOutcome {
        history,
        best_epoch,
        best_val_mae: best_val,
        stopped_early,
    })
}
