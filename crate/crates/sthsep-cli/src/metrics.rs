//! Forecast error metrics on de-normalized values.

use anyhow::anyhow;
use sthsep_core::TensorF;

use crate::{CliError, CliResult};

/// Streaming MAE/RMSE over any number of prediction/target pairs.
#[derive(Debug, Clone, Default)]
pub struct ErrorAccumulator {
    abs_sum: f64,
    sq_sum: f64,
    count: usize,
}

impl ErrorAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, pred: &TensorF, target: &TensorF) -> CliResult<()> {
        if pred.shape() != target.shape() {
            return Err(CliError::runtime(anyhow!(
                "prediction shape {:?} does not match target {:?}",
                pred.shape(),
                target.shape()
            )));
        }
        for (p, t) in pred.data().iter().zip(target.data()) {
            let d = p - t;
            self.abs_sum += d.abs();
            self.sq_sum += d * d;
            self.count += 1;
        }
        Ok(())
    }

    pub fn mae(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        self.abs_sum / self.count as f64
    }

    pub fn rmse(&self) -> f64 {
        if self.count == 0 {
            return f64::NAN;
        }
        (self.sq_sum / self.count as f64).sqrt()
    }
}

/// One-shot MAE and RMSE for a single pair.
pub fn mae_rmse(pred: &TensorF, target: &TensorF) -> CliResult<(f64, f64)> {
    let mut acc = ErrorAccumulator::new();
    acc.add(pred, target)?;
    Ok((acc.mae(), acc.rmse()))
}
