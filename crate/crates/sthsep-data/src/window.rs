//! Chronological splitting and sliding-window extraction.

use sthsep_core::TensorF;

use crate::dataset::SpatioTemporalDataset;
use crate::error::{DataError, DataResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize, stride: usize) -> DataResult<Self> {
        if lookback == 0 || horizon == 0 || stride == 0 {
            return Err(DataError::Window(format!(
                "lookback, horizon and stride must be positive, got ({lookback}, {horizon}, {stride})"
            )));
        }
        Ok(Self {
            lookback,
            horizon,
            stride,
        })
    }

    pub fn span(&self) -> usize {
        self.lookback + self.horizon
    }
}

/// One training example: `x` is the `[L, N]` lookback block, `y` the `[H, N]`
/// block immediately after it, `start` the row index of the first lookback step.
#[derive(Debug, Clone)]
pub struct Window {
    pub x: TensorF,
    pub y: TensorF,
    pub start: usize,
}

/// Splits rows chronologically: train gets `floor(r0 * T)`, validation
/// `floor(r1 * T)`, test the remainder. When a `WindowSpec` is supplied, every
/// split must be long enough to hold at least one window.
pub fn split_dataset(
    ds: &SpatioTemporalDataset,
    ratios: (f64, f64, f64),
    window: Option<&WindowSpec>,
) -> DataResult<(
    SpatioTemporalDataset,
    SpatioTemporalDataset,
    SpatioTemporalDataset,
)> {
    let (r0, r1, r2) = ratios;
    if !(r0 > 0.0 && r1 > 0.0 && r2 > 0.0) || (r0 + r1 + r2 - 1.0).abs() > 1e-9 {
        return Err(DataError::Window(format!(
            "split ratios must be positive and sum to 1, got ({r0}, {r1}, {r2})"
        )));
    }
    let t = ds.num_steps();
    let train_len = (r0 * t as f64).floor() as usize;
    let val_len = (r1 * t as f64).floor() as usize;
    let test_len = t - train_len - val_len;

    if let Some(spec) = window {
        let need = spec.span();
        for (name, len) in [
            ("train", train_len),
            ("validation", val_len),
            ("test", test_len),
        ] {
            if len < need {
                return Err(DataError::SplitTooShort {
                    split: name,
                    len,
                    need,
                });
            }
        }
    }

    let train = ds.slice_steps(0, train_len)?;
    let val = ds.slice_steps(train_len, val_len)?;
    let test = ds.slice_steps(train_len + val_len, test_len)?;
    Ok((train, val, test))
}

/// Extracts all full windows. With `T` rows the count is
/// `floor((T - L - H) / stride) + 1`, or zero when `T < L + H`.
pub fn make_windows(ds: &SpatioTemporalDataset, spec: &WindowSpec) -> Vec<Window> {
    let t = ds.num_steps();
    let n = ds.num_nodes();
    let span = spec.span();
    if t < span {
        return Vec::new();
    }
    let count = (t - span) / spec.stride + 1;
    let data = ds.values.data();
    let mut out = Vec::with_capacity(count);
    for w in 0..count {
        let start = w * spec.stride;
        let x = data[start * n..(start + spec.lookback) * n].to_vec();
        let y_from = start + spec.lookback;
        let y = data[y_from * n..(y_from + spec.horizon) * n].to_vec();
        out.push(Window {
            x: TensorF::new(vec![spec.lookback, n], x).expect("window x shape"),
            y: TensorF::new(vec![spec.horizon, n], y).expect("window y shape"),
            start,
        });
    }
    out
}
