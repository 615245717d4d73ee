//! Reference forecasters the trained model has to beat. All three read the
//! raw (de-normalized) lookback window directly.

use anyhow::anyhow;
use sthsep_core::TensorF;
use sthsep_data::Window;

use crate::metrics::ErrorAccumulator;
use crate::{CliError, CliResult};

/// Period used by the seasonal copy, matching the daily cycle of hourly data.
pub const SEASONAL_LAG: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// Repeat the final observation for every horizon step.
    LastValue,
    /// Repeat the lookback mean.
    HistoricalAverage,
    /// Copy the value one season back; repeats the final observed day when
    /// the horizon runs past it.
    SeasonalNaive,
}

impl Baseline {
    pub const ALL: [Baseline; 3] = [
        Baseline::LastValue,
        Baseline::HistoricalAverage,
        Baseline::SeasonalNaive,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Baseline::LastValue => "last-value",
            Baseline::HistoricalAverage => "historical-average",
            Baseline::SeasonalNaive => "seasonal-naive",
        }
    }
}

/// Forecasts `horizon` steps from an `[L, N]` window. The boolean is true
/// when seasonal-naive had to fall back to last-value because the lookback
/// is shorter than one season.
pub fn predict(x: &TensorF, horizon: usize, baseline: Baseline) -> CliResult<(TensorF, bool)> {
    if x.rank() != 2 || horizon == 0 {
        return Err(CliError::runtime(anyhow!(
            "expected an [L, N] window and a positive horizon, got shape {:?} and horizon {horizon}",
            x.shape()
        )));
    }
    let (l, n) = (x.shape()[0], x.shape()[1]);
    let mut out = TensorF::zeros(&[horizon, n]);
    let fell_back = false;
    match baseline {
        Baseline::LastValue => {
            for h in 0..horizon {
                for i in 0..n {
                    out.set2(h, i, x.get2(l - 1, i));
                }
            }
        }
        Baseline::HistoricalAverage => {
            for i in 0..n {
                let mut mean = 0.0;
                for t in 0..l {
                    mean += x.get2(t, i);
                }
                mean /= l as f64;
                for h in 0..horizon {
                    out.set2(h, i, mean);
                }
            }
        }
        Baseline::SeasonalNaive => {
            if l < SEASONAL_LAG {
                return predict(x, horizon, Baseline::LastValue).map(|(p, _)| (p, true));
            }
            for h in 0..horizon {
                // Absolute step l + h sits h mod season into a day; copy the
                // final observed day at that phase.
                let src = l - SEASONAL_LAG + (h % SEASONAL_LAG);
                for i in 0..n {
                    out.set2(h, i, x.get2(src, i));
                }
            }
        }
    }
    Ok((out, fell_back))
}

#[derive(Debug, Clone)]
pub struct BaselineScore {
    pub baseline: Baseline,
    pub mae: f64,
    pub rmse: f64,
    pub fell_back: bool,
}

/// Scores every baseline over a set of raw windows.
pub fn evaluate(windows: &[Window]) -> CliResult<Vec<BaselineScore>> {
    if windows.is_empty() {
        return Err(CliError::runtime(anyhow!("no windows to score baselines on")));
    }
    let horizon = windows[0].y.shape()[0];
    let mut scores = Vec::new();
    for baseline in Baseline::ALL {
        let mut acc = ErrorAccumulator::new();
        let mut fell_back = false;
        for w in windows {
            let (pred, fb) = predict(&w.x, horizon, baseline)?;
            fell_back |= fb;
            acc.add(&pred, &w.y)?;
        }
        scores.push(BaselineScore {
            baseline,
            mae: acc.mae(),
            rmse: acc.rmse(),
            fell_back,
        });
    }
    Ok(scores)
}
