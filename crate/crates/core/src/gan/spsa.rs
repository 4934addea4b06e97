//! Simultaneous-perturbation gradient estimates for the motif-causality loss,
//! whose value depends on the synthetic batch only through motif encoding
//! and a few rounds of causality training.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::causality::{estimate_on_indicators, CausalityMatrix, CausalityState, CausalityTrainConfig};
use crate::data::{denormalize_value, GlucoseTrace};
use crate::error::Result;
use crate::gan::losses::loss_motif;
use crate::motif::{indicator_matrix, MotifSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpsaConfig {
    /// Perturbation size in normalised units.
    pub perturbation: f64,
    pub probes: usize,
}

impl Default for SpsaConfig {
    fn default() -> Self {
        Self { perturbation: 0.02, probes: 4 }
    }
}

/// `mean_p [f(x + c D_p) - f(x - c D_p)] / (2c) * D_p` with Rademacher `D_p`
/// (for which `1 / D_p = D_p`).
pub fn spsa_gradient<F>(x: &[f64], mut f: F, cfg: &SpsaConfig, seed: u64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.perturbation;
    let mut grad = vec![0.0; x.len()];
    let mut plus = vec![0.0; x.len()];
    let mut minus = vec![0.0; x.len()];
    let mut delta = vec![0.0; x.len()];
    for _ in 0..cfg.probes {
        for ((d, (p, m)), &xi) in delta.iter_mut().zip(plus.iter_mut().zip(minus.iter_mut())).zip(x) {
            *d = if rng.random::<bool>() { 1.0 } else { -1.0 };
            *p = xi + c * *d;
            *m = xi - c * *d;
        }
        let diff = (f(&plus)? - f(&minus)?) / (2.0 * c);
        for (g, d) in grad.iter_mut().zip(&delta) {
            *g += diff * d;
        }
    }
    let k = cfg.probes.max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    Ok(grad)
}

/// `L_M` of a normalised synthetic batch: encode it over `ms`, continue the
/// warm causality networks for `cfg.inner_steps`, compare against `m`.
pub fn motif_loss_of_batch(
    batch: &[Vec<f64>],
    m: &CausalityMatrix,
    ms: &MotifSet,
    cfg: &CausalityTrainConfig,
    warm: Option<&CausalityState>,
) -> Result<(f64, CausalityState)> {
    let data = batch
        .iter()
        .map(|x| {
            let values: Vec<f64> = x.iter().map(|&u| denormalize_value(u)).collect();
            let seq = ms.encode_values("synthetic", &values)?;
            indicator_matrix(&seq, ms.len())
        })
        .collect::<Result<Vec<Array2<f64>>>>()?;
    let state = estimate_on_indicators(&data, ms.len(), cfg, warm)?;
    Ok((loss_motif(m, &state.matrix)?, state))
}

/// SPSA estimate of `d L_M / d x_hat` for a normalised batch
/// (`batch[b][t]`), returned in the same layout.
pub fn spsa_gradient_lm(
    batch: &[Vec<f64>],
    m: &CausalityMatrix,
    ms: &MotifSet,
    cfg: &CausalityTrainConfig,
    warm: Option<&CausalityState>,
    spsa: &SpsaConfig,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let t = batch.first().map_or(0, Vec::len);
    let flat: Vec<f64> = batch.concat();
    let g = spsa_gradient(
        &flat,
        |x| {
            let rows: Vec<Vec<f64>> = x.chunks(t).map(<[f64]>::to_vec).collect();
            Ok(motif_loss_of_batch(&rows, m, ms, cfg, warm)?.0)
        },
        spsa,
        seed,
    )?;
    Ok(g.chunks(t.max(1)).map(<[f64]>::to_vec).collect())
}

/// Helper used when the batch is already a trace set.
pub fn normalized_rows(traces: &[GlucoseTrace]) -> Vec<Vec<f64>> {
    traces.iter().map(|t| t.values().iter().map(|&v| crate::data::normalize_value(v)).collect()).collect()
}
