//! Motif causality: one sparse recurrent model per target motif.
//!
//! Network `i` reads the one-hot motif history and predicts whether motif `i`
//! occurs at the next motif step. A group-lasso penalty over the columns of
//! the input-to-gate weights (one column per input motif) is applied by a
//! proximal step after every gradient step. A column driven to exactly zero
//! means the network's predictions do not depend on that input motif at all,
//! so the column norms become the causal strengths of row `i`.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TraceSet;
use crate::error::{ForgeError, Result};
use crate::motif::{indicator_series, MotifSet};
use crate::nn::{Activation, LstmCache, LstmNet};

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CausalityTrainConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    /// Group-lasso weight.
    pub lambda: f64,
    pub epochs: usize,
    /// Proximal-gradient iterations per network when re-estimating on a
    /// synthetic batch.
    pub inner_steps: usize,
    pub seed: u64,
}

impl Default for CausalityTrainConfig {
    fn default() -> Self {
        Self { hidden: 16, learning_rate: 0.05, lambda: 0.05, epochs: 300, inner_steps: 20, seed: 0 }
    }
}

impl CausalityTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || !(self.learning_rate > 0.0) || !(self.lambda >= 0.0) || self.epochs == 0 {
            return Err(ForgeError::Config(format!("invalid causality config {self:?}")));
        }
        Ok(())
    }
}

/// The causal model `g_i` for one target motif.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifNetwork {
    pub target: usize,
    pub net: LstmNet,
}

impl MotifNetwork {
    pub fn zeros(target: usize, m: usize, hidden: usize) -> Self {
        Self { target, net: LstmNet::zeros(m, hidden, 1, Activation::Identity) }
    }

    pub fn random(target: usize, m: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(network_seed(seed, target));
        Self { target, net: LstmNet::random(m, hidden, 1, Activation::Identity, &mut rng) }
    }

    pub fn num_inputs(&self) -> usize {
        self.net.input_dim()
    }

    /// L2 norm of each input-motif column of the penalised weights.
    pub fn column_norms(&self) -> Vec<f64> {
        column_norms(&self.net.w_in)
    }
}

fn network_seed(seed: u64, target: usize) -> u64 {
    seed ^ (target as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// `m x m` causal strengths in `[0, 1]`; row `i` holds the influence of every
/// motif on motif `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityMatrix {
    entries: Array2<f64>,
}

impl CausalityMatrix {
    pub fn new(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(ForgeError::DimensionMismatch(format!(
                "causality matrix must be square, got {:?}",
                entries.dim()
            )));
        }
        if let Some(v) = entries.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(ForgeError::invalid(format!("causality entry {v} outside [0, 1]")));
        }
        Ok(Self { entries })
    }

    pub fn zeros(m: usize) -> Self {
        Self { entries: Array2::zeros((m, m)) }
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn m(&self) -> usize {
        self.entries.nrows()
    }

    pub fn row_argmax(&self, row: usize) -> usize {
        argmax(self.entries.row(row).iter().copied())
    }

    pub fn save(&self, dir: impl AsRef<Path>, stem: &str, sidecar: &serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(format!("{stem}.csv")))?;
        for row in self.entries.rows() {
            w.write_record(row.iter().map(|v| format!("{v}")))?;
        }
        w.flush()?;
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(sidecar)?)?;
        Ok(())
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (r, rec) in rdr.records().enumerate() {
            let rec = rec?;
            rows.push(
                rec.iter()
                    .map(|f| f.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| ForgeError::MalformedRow { row: r + 1, reason: e.to_string() })?,
            );
        }
        let m = rows.len();
        if rows.iter().any(|r| r.len() != m) {
            return Err(ForgeError::DimensionMismatch("causality csv is not square".into()));
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(Array2::from_shape_vec((m, m), flat).expect("square shape"))
    }
}

pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Trained networks together with the matrix they define; passed back in as
/// a warm start when re-estimating on a new batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalityState {
    pub networks: Vec<MotifNetwork>,
    pub matrix: CausalityMatrix,
}

pub fn column_norms(w: &Array2<f64>) -> Vec<f64> {
    w.axis_iter(Axis(1)).map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).collect()
}

/// Runs network `net` over one indicator matrix.
pub fn lstm_forward(net: &MotifNetwork, inputs: ArrayView2<f64>) -> Result<LstmCache> {
    net.net.forward(inputs)
}

/// Squared next-step prediction error for the target motif, summed over
/// steps `2..=L` and averaged over sequences.
pub fn smooth_loss(net: &MotifNetwork, data: &[Array2<f64>]) -> Result<f64> {
    Ok(smooth_loss_and_grad_impl(net, data, false)?.0)
}

/// Smooth loss together with its gradient with respect to every parameter.
pub fn smooth_loss_and_grad(net: &MotifNetwork, data: &[Array2<f64>]) -> Result<(f64, LstmNet)> {
    let (loss, grad) = smooth_loss_and_grad_impl(net, data, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

fn smooth_loss_and_grad_impl(
    net: &MotifNetwork,
    data: &[Array2<f64>],
    want_grad: bool,
) -> Result<(f64, Option<LstmNet>)> {
    if data.is_empty() {
        return Err(ForgeError::invalid("causality data is empty"));
    }
    let n = data.len() as f64;
    let target = net.target;
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| net.net.zeros_like());
    for seq in data {
        let cache = net.net.forward(seq.view())?;
        let len = seq.nrows();
        let mut d_out = Array2::zeros((len, 1));
        for t in 0..len.saturating_sub(1) {
            let err = cache.outputs[[t, 0]] - seq[[t + 1, target]];
            loss += err * err / n;
            d_out[[t, 0]] = 2.0 * err / n;
        }
        if let Some(g) = grad.as_mut() {
            let (gs, _) = net.net.backward(&cache, d_out.view(), None);
            g.add_assign(&gs);
        }
    }
    Ok((loss, grad))
}

/// Smooth loss plus `lambda * sum_j ||W_in[:, j]||_2`.
pub fn local_motif_loss(net: &MotifNetwork, data: &[Array2<f64>], lambda: f64) -> Result<f64> {
    let penalty: f64 = net.column_norms().iter().sum();
    Ok(smooth_loss(net, data)? + lambda * penalty)
}

/// Block soft-threshold of every column: columns with norm at most
/// `step * lambda` vanish, the rest shrink towards zero by that amount.
pub fn prox_group_lasso(w: &Array2<f64>, lambda: f64, step: f64) -> Array2<f64> {
    let mut out = w.clone();
    prox_group_lasso_in_place(&mut out, lambda, step);
    out
}

pub fn prox_group_lasso_in_place(w: &mut Array2<f64>, lambda: f64, step: f64) {
    let threshold = step * lambda;
    if threshold <= 0.0 {
        return;
    }
    for mut col in w.axis_iter_mut(Axis(1)) {
        let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= threshold {
            col.fill(0.0);
        } else {
            let shrink = 1.0 - threshold / norm;
            col.mapv_inplace(|x| x * shrink);
        }
    }
}

/// `steps` rounds of full-batch gradient descent on the smooth term, each
/// followed by the proximal step on the input weights.
pub fn proximal_steps(
    net: &mut MotifNetwork,
    data: &[Array2<f64>],
    cfg: &CausalityTrainConfig,
    steps: usize,
) -> Result<f64> {
    let mut last = f64::NAN;
    for _ in 0..steps {
        let (loss, grad) = smooth_loss_and_grad(net, data)?;
        if !loss.is_finite() || loss > DIVERGENCE_LIMIT {
            return Err(ForgeError::Divergence { phase: format!("motif network {}", net.target), loss });
        }
        for (p, g) in net.net.slices_mut().into_iter().zip(grad.slices()) {
            for (x, d) in p.iter_mut().zip(g) {
                *x -= cfg.learning_rate * d;
            }
        }
        prox_group_lasso_in_place(&mut net.net.w_in, cfg.lambda, cfg.learning_rate);
        last = loss;
    }
    Ok(last)
}

/// Trains the causal model for `target` from a seeded initialisation.
pub fn train_motif_network(target: usize, data: &[Array2<f64>], cfg: &CausalityTrainConfig) -> Result<MotifNetwork> {
    let m = check_data(data)?;
    if target >= m {
        return Err(ForgeError::invalid(format!("target motif {target} out of range for m = {m}")));
    }
    let mut net = MotifNetwork::random(target, m, cfg.hidden, cfg.seed);
    proximal_steps(&mut net, data, cfg, cfg.epochs)?;
    Ok(net)
}

fn check_data(data: &[Array2<f64>]) -> Result<usize> {
    let first = data.first().ok_or_else(|| ForgeError::invalid("causality data is empty"))?;
    if first.nrows() < 2 {
        return Err(ForgeError::invalid("causality data needs at least two motif steps"));
    }
    Ok(first.ncols())
}

/// Row-max scaling onto `[0, 1]`; all-zero rows stay zero.
pub fn normalize_causality(raw: &Array2<f64>) -> Result<CausalityMatrix> {
    if let Some(v) = raw.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(ForgeError::invalid(format!("raw causality entry {v} is negative or non-finite")));
    }
    let mut out = raw.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(0.0, f64::max);
        if max > 0.0 {
            row.mapv_inplace(|v| (v / max).min(1.0));
        }
    }
    CausalityMatrix::new(out)
}

fn assemble(networks: Vec<MotifNetwork>) -> Result<CausalityState> {
    let m = networks.len();
    let mut raw = Array2::zeros((m, m));
    for net in &networks {
        for (j, n) in net.column_norms().into_iter().enumerate() {
            raw[[net.target, j]] = n;
        }
    }
    Ok(CausalityState { networks, matrix: normalize_causality(&raw)? })
}

/// Encodes a trace set into indicator matrices over `ms`.
pub fn encode_indicators(s: &TraceSet, ms: &MotifSet) -> Result<Vec<Array2<f64>>> {
    let seqs = ms.encode_set(s)?;
    indicator_series(&seqs, ms.len())
}

/// Trains all `m` networks on one partition (in parallel) and stacks their
/// column norms into a normalised matrix.
pub fn partition_causality_state(
    partition: &TraceSet,
    ms: &MotifSet,
    cfg: &CausalityTrainConfig,
) -> Result<CausalityState> {
    cfg.validate()?;
    if partition.is_empty() {
        return Err(ForgeError::invalid("partition is empty"));
    }
    let data = encode_indicators(partition, ms)?;
    check_data(&data)?;
    let networks = (0..ms.len())
        .into_par_iter()
        .map(|i| {
            train_motif_network(i, &data, cfg).map_err(|e| ForgeError::MotifTraining { motif: i, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(networks)
}

pub fn partition_causality(partition: &TraceSet, ms: &MotifSet, cfg: &CausalityTrainConfig) -> Result<CausalityMatrix> {
    Ok(partition_causality_state(partition, ms, cfg)?.matrix)
}

/// Re-estimates the matrix on a (synthetic) batch with at most
/// `cfg.inner_steps` proximal iterations per network, continuing from `warm`
/// when given.
pub fn estimate_batch_causality(
    batch: &TraceSet,
    ms: &MotifSet,
    cfg: &CausalityTrainConfig,
    warm: Option<&CausalityState>,
) -> Result<CausalityState> {
    if batch.is_empty() {
        return Err(ForgeError::invalid("batch is empty"));
    }
    let data = encode_indicators(batch, ms)?;
    estimate_on_indicators(&data, ms.len(), cfg, warm)
}

pub(crate) fn estimate_on_indicators(
    data: &[Array2<f64>],
    m: usize,
    cfg: &CausalityTrainConfig,
    warm: Option<&CausalityState>,
) -> Result<CausalityState> {
    check_data(data)?;
    if let Some(w) = warm {
        if w.networks.len() != m {
            return Err(ForgeError::DimensionMismatch(format!(
                "warm start has {} networks, motif set has {m}",
                w.networks.len()
            )));
        }
        if cfg.inner_steps == 0 {
            return Ok(w.clone());
        }
    }
    let networks = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut net = match warm {
                Some(w) => w.networks[i].clone(),
                None => MotifNetwork::random(i, m, cfg.hidden, cfg.seed),
            };
            proximal_steps(&mut net, data, cfg, cfg.inner_steps)
                .map_err(|e| ForgeError::MotifTraining { motif: i, source: Box::new(e) })?;
            Ok(net)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(networks)
}
