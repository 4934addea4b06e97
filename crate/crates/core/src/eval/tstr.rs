//! Forecasting utility: train a small LSTM forecaster on one set and score
//! it on another (TSTR when training on synthetic data, TRTR on real).

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{denormalize_value, normalize_value, TraceSet};
use crate::error::{ForgeError, Result};
use crate::eval::clarke::{clarke_summary, ClarkeSummary};
use crate::nn::{Activation, LstmNet, Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TstrConfig {
    pub hidden: usize,
    pub window: usize,
    pub horizon: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub repeats: usize,
    /// Step between consecutive training windows.
    pub train_stride: usize,
    /// Step between consecutive evaluation windows.
    pub test_stride: usize,
    pub seed: u64,
}

impl Default for TstrConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            window: 12,
            horizon: 6,
            learning_rate: 0.01,
            epochs: 20,
            batch_size: 32,
            repeats: 3,
            train_stride: 3,
            test_stride: 1,
            seed: 0,
        }
    }
}

impl TstrConfig {
    pub fn validate(&self, trace_len: usize) -> Result<()> {
        if self.hidden == 0 || self.window == 0 || self.horizon == 0 {
            return Err(ForgeError::invalid("TSTR hidden, window and horizon must be positive"));
        }
        if self.window + self.horizon >= trace_len {
            return Err(ForgeError::invalid(format!(
                "window {} + horizon {} must be below trace length {trace_len}",
                self.window, self.horizon
            )));
        }
        if self.repeats == 0 || self.batch_size == 0 || self.train_stride == 0 || self.test_stride == 0 {
            return Err(ForgeError::invalid("TSTR repeats, batch size and strides must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ForgeError::invalid("TSTR learning rate must be positive and finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TstrReport {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub rmse: Vec<f64>,
    pub clarke: ClarkeSummary,
}

/// A forecasting example in normalized units.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Sliding `(window, horizon)` examples of every trace, normalized.
pub fn windows(s: &TraceSet, window: usize, horizon: usize, stride: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for t in s.traces() {
        let v: Vec<f64> = t.values().iter().map(|&x| normalize_value(x)).collect();
        let mut start = 0;
        while start + window + horizon <= v.len() {
            out.push(Window {
                input: v[start..start + window].to_vec(),
                target: v[start + window..start + window + horizon].to_vec(),
            });
            start += stride;
        }
    }
    out
}

/// RMSE (normalized) and the Clarke summary of `preds` against the window
/// targets, both rescaled to mg/dL for the grid.
pub fn score(windows: &[Window], preds: &[Vec<f64>]) -> Result<(f64, ClarkeSummary)> {
    if windows.len() != preds.len() || windows.is_empty() {
        return Err(ForgeError::DimensionMismatch(format!("{} windows vs {} predictions", windows.len(), preds.len())));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    let mut pairs = Vec::new();
    for (w, p) in windows.iter().zip(preds) {
        if p.len() != w.target.len() {
            return Err(ForgeError::DimensionMismatch("prediction horizon".into()));
        }
        for (&y, &yh) in w.target.iter().zip(p) {
            se += (y - yh) * (y - yh);
            n += 1;
            pairs.push((denormalize_value(y), denormalize_value(yh)));
        }
    }
    Ok(((se / n as f64).sqrt(), clarke_summary(pairs)?))
}

/// Last observed value repeated over the horizon.
pub fn persistence_predictions(windows: &[Window]) -> Vec<Vec<f64>> {
    windows.iter().map(|w| vec![*w.input.last().expect("nonempty window"); w.target.len()]).collect()
}

pub fn persistence_rmse(s: &TraceSet, window: usize, horizon: usize) -> Result<f64> {
    let ws = windows(s, window, horizon, 1);
    Ok(score(&ws, &persistence_predictions(&ws))?.0)
}

fn column(input: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((input.len(), 1), input.to_vec()).expect("column shape")
}

/// Forecast of a trained network: the readout at the last window step.
pub fn predict(net: &LstmNet, w: &Window) -> Result<Vec<f64>> {
    let cache = net.forward(column(&w.input).view())?;
    Ok(cache.outputs.row(w.input.len() - 1).to_vec())
}

pub fn train_forecaster(train: &[Window], cfg: &TstrConfig, seed: u64) -> Result<LstmNet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = LstmNet::random(1, cfg.hidden, cfg.horizon, Activation::Identity, &mut rng);
    let mut opt = Optimizer::new(OptimizerKind::Adam, net.num_params());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad = net.zeros_like();
            for &i in batch {
                let w = &train[i];
                let cache = net.forward(column(&w.input).view())?;
                let last = w.input.len() - 1;
                let mut d_out = Array2::zeros(cache.outputs.dim());
                for (k, (&yh, &y)) in cache.outputs.row(last).iter().zip(&w.target).enumerate() {
                    let r = yh - y;
                    epoch_loss += r * r / cfg.horizon as f64;
                    d_out[[last, k]] = 2.0 * r / (cfg.horizon * batch.len()) as f64;
                }
                let (g, _) = net.backward(&cache, d_out.view(), None);
                grad.add_assign(&g);
            }
            opt.step(&mut net, &grad, cfg.learning_rate);
        }
        epoch_loss /= train.len() as f64;
        if !epoch_loss.is_finite() || !net.is_finite() {
            return Err(ForgeError::Divergence { phase: format!("forecaster epoch {epoch}"), loss: epoch_loss });
        }
    }
    Ok(net)
}

/// Trains on `train` once per repeat (seeds `cfg.seed + r`) and scores on
/// sliding windows of `test`. The Clarke summary pools every repeat.
pub fn tstr(train: &TraceSet, test: &TraceSet, cfg: &TstrConfig) -> Result<TstrReport> {
    if train.is_empty() || test.is_empty() {
        return Err(ForgeError::invalid("TSTR needs nonempty train and test sets"));
    }
    cfg.validate(train.trace_len().unwrap_or(0))?;
    cfg.validate(test.trace_len().unwrap_or(0))?;
    let train_w = windows(train, cfg.window, cfg.horizon, cfg.train_stride);
    let test_w = windows(test, cfg.window, cfg.horizon, cfg.test_stride);
    let runs: Vec<Vec<Vec<f64>>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let net = train_forecaster(&train_w, cfg, cfg.seed.wrapping_add(r as u64))?;
            test_w.iter().map(|w| predict(&net, w)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut rmse = Vec::with_capacity(runs.len());
    for preds in &runs {
        rmse.push(score(&test_w, preds)?.0);
    }
    let all_w: Vec<Window> = (0..runs.len()).flat_map(|_| test_w.iter().cloned()).collect();
    let all_p: Vec<Vec<f64>> = runs.into_iter().flatten().collect();
    let (_, clarke) = score(&all_w, &all_p)?;
    let n = rmse.len() as f64;
    let mean = rmse.iter().sum::<f64>() / n;
    let std =
        if rmse.len() > 1 { (rmse.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    Ok(TstrReport { rmse_mean: mean, rmse_std: std, rmse, clarke })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::GlucoseTrace;

    #[test]
    fn window_count_and_perfect_score() {
        let s =
            TraceSet::new(vec![GlucoseTrace::new("a", (0..20).map(|i| 100.0 + i as f64).collect()).unwrap()]).unwrap();
        let ws = windows(&s, 12, 6, 1);
        assert_eq!(ws.len(), 3);
        let perfect: Vec<Vec<f64>> = ws.iter().map(|w| w.target.clone()).collect();
        let (rmse, clarke) = score(&ws, &perfect).unwrap();
        assert_eq!(rmse, 0.0);
        assert_eq!(clarke.a, 1.0);
    }

    #[test]
    fn rejects_long_horizon() {
        assert!(TstrConfig::default().validate(18).is_err());
        assert!(TstrConfig::default().validate(19).is_ok());
    }
}
