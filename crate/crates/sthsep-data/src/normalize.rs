//! Per-node z-score normalization.
//!
//! Statistics come from the training split only so later splits never leak
//! into them. Std is the population form (divide by T, not T - 1). Nodes
//! whose training std falls below 1e-12 get std 1 so constant series pass
//! through shifted but unscaled; each clamp is reported as a warning string.

use sthsep_core::TensorF;

use crate::dataset::SpatioTemporalDataset;
use crate::error::{DataError, DataResult};

const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn num_nodes(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / std`, column-wise over a `[T, N]` matrix.
    pub fn normalize(&self, values: &TensorF) -> DataResult<TensorF> {
        self.check_width(values)?;
        self.apply(values, |v, m, s| (v - m) / s)
    }

    /// Inverse of [`normalize`]: `x * std + mean`.
    pub fn denormalize(&self, values: &TensorF) -> DataResult<TensorF> {
        self.check_width(values)?;
        self.apply(values, |v, m, s| v * s + m)
    }

    fn check_width(&self, values: &TensorF) -> DataResult<()> {
        if values.rank() != 2 || values.shape()[1] != self.num_nodes() {
            return Err(DataError::Invalid(format!(
                "expected [T, {}] matrix, got shape {:?}",
                self.num_nodes(),
                values.shape()
            )));
        }
        Ok(())
    }

    fn apply(&self, values: &TensorF, f: impl Fn(f64, f64, f64) -> f64) -> DataResult<TensorF> {
        let n = self.num_nodes();
        let data = values
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| f(v, self.mean[i % n], self.std[i % n]))
            .collect();
        Ok(TensorF::new(values.shape().to_vec(), data)?)
    }
}

fn train_stats(train: &TensorF) -> (NormStats, Vec<String>) {
    let (t, n) = (train.shape()[0], train.shape()[1]);
    let mut mean = vec![0.0; n];
    let mut std = vec![0.0; n];
    let mut warnings = Vec::new();
    for node in 0..n {
        let mut sum = 0.0;
        for step in 0..t {
            sum += train.get2(step, node);
        }
        let m = sum / t as f64;
        let mut var = 0.0;
        for step in 0..t {
            let d = train.get2(step, node) - m;
            var += d * d;
        }
        let s = (var / t as f64).sqrt();
        mean[node] = m;
        std[node] = if s < STD_FLOOR {
            warnings.push(format!(
                "node {node}: training std {s:.3e} below {STD_FLOOR:.0e}, clamped to 1"
            ));
            1.0
        } else {
            s
        };
    }
    (NormStats { mean, std }, warnings)
}

fn replace_values(ds: &SpatioTemporalDataset, values: TensorF) -> DataResult<SpatioTemporalDataset> {
    SpatioTemporalDataset::new(
        values,
        ds.timestamps.clone(),
        ds.node_ids.clone(),
        ds.distances.clone(),
    )
}

/// Normalizes all three splits with statistics fitted on `train` alone.
#[allow(clippy::type_complexity)]
pub fn zscore_normalize(
    train: &SpatioTemporalDataset,
    val: &SpatioTemporalDataset,
    test: &SpatioTemporalDataset,
) -> DataResult<(
    (
        SpatioTemporalDataset,
        SpatioTemporalDataset,
        SpatioTemporalDataset,
    ),
    NormStats,
    Vec<String>,
)> {
    let n = train.num_nodes();
    if val.num_nodes() != n || test.num_nodes() != n {
        return Err(DataError::Invalid(format!(
            "splits disagree on node count: {n}, {}, {}",
            val.num_nodes(),
            test.num_nodes()
        )));
    }
    let (stats, warnings) = train_stats(&train.values);
    let out = (
        replace_values(train, stats.normalize(&train.values)?)?,
        replace_values(val, stats.normalize(&val.values)?)?,
        replace_values(test, stats.normalize(&test.values)?)?,
    );
    Ok((out, stats, warnings))
}
