//! GAN loss terms. Batches are slices of per-sequence matrices
//! (`[steps x features]`); every loss is a mean, so the `*_grad` variants
//! return gradients of that mean.

use ndarray::Array2;

use crate::causality::CausalityMatrix;
use crate::error::{ForgeError, Result};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before the log.
pub const BCE_EPS: f64 = 1e-7;

fn check_pair(a: &[Array2<f64>], b: &[Array2<f64>]) -> Result<usize> {
    if a.len() != b.len() || a.is_empty() {
        return Err(ForgeError::DimensionMismatch(format!("batches of {} and {} sequences", a.len(), b.len())));
    }
    let mut count = 0;
    for (x, y) in a.iter().zip(b) {
        if x.dim() != y.dim() {
            return Err(ForgeError::DimensionMismatch(format!(
                "paired sequences of shape {:?} and {:?}",
                x.dim(),
                y.dim()
            )));
        }
        count += x.len();
    }
    Ok(count)
}

fn mse_grad(a: &[Array2<f64>], b: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
    let n = check_pair(a, b)? as f64;
    let mut loss = 0.0;
    let grads = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let diff = y - x;
            loss += diff.iter().map(|d| d * d).sum::<f64>();
            diff * (2.0 / n)
        })
        .collect();
    Ok((loss / n, grads))
}

/// Mean squared error between real traces and their reconstruction.
pub fn loss_reconstruction(x: &[Array2<f64>], x_tilde: &[Array2<f64>]) -> Result<f64> {
    Ok(mse_grad(x, x_tilde)?.0)
}

/// Loss and gradient with respect to the reconstruction.
pub fn loss_reconstruction_grad(x: &[Array2<f64>], x_tilde: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
    mse_grad(x, x_tilde)
}

/// Step-aligned MSE between embedded real and embedded synthetic batches,
/// paired by batch index.
pub fn loss_stepwise(x_e: &[Array2<f64>], x_hat_e: &[Array2<f64>]) -> Result<f64> {
    Ok(mse_grad(x_e, x_hat_e)?.0)
}

/// Gradient with respect to the synthetic side; the real side's gradient
/// is its negation.
pub fn loss_stepwise_grad(x_e: &[Array2<f64>], x_hat_e: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
    mse_grad(x_e, x_hat_e)
}

/// Per-coordinate mean and (population) variance over batch and time.
fn moments(batch: &[Array2<f64>]) -> (Vec<f64>, Vec<f64>, f64) {
    let e = batch[0].ncols();
    let n: usize = batch.iter().map(|s| s.nrows()).sum();
    let n = n as f64;
    let mut mean = vec![0.0; e];
    for s in batch {
        for row in s.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; e];
    for s in batch {
        for row in s.rows() {
            for ((vv, m), v) in var.iter_mut().zip(&mean).zip(row) {
                *vv += (v - m) * (v - m);
            }
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var, n)
}

/// Moments loss: `sum_k (mean_k - mean_hat_k)^2 + sum_k (var_k - var_hat_k)^2`
/// with moments pooled over batch and time per embedding coordinate.
pub fn loss_distributional(x_e: &[Array2<f64>], x_hat_e: &[Array2<f64>]) -> Result<f64> {
    Ok(loss_distributional_grad(x_e, x_hat_e)?.0)
}

/// Loss with gradients with respect to both batches `(real, synthetic)`.
#[allow(clippy::type_complexity)]
pub fn loss_distributional_grad(
    x_e: &[Array2<f64>],
    x_hat_e: &[Array2<f64>],
) -> Result<(f64, Vec<Array2<f64>>, Vec<Array2<f64>>)> {
    if x_e.is_empty() || x_hat_e.is_empty() {
        return Err(ForgeError::invalid("empty batch in moments loss"));
    }
    let e = x_e[0].ncols();
    if x_e.iter().chain(x_hat_e).any(|s| s.ncols() != e) {
        return Err(ForgeError::DimensionMismatch("moments loss over differing widths".into()));
    }
    let (m1, v1, n1) = moments(x_e);
    let (m2, v2, n2) = moments(x_hat_e);
    let dm: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| a - b).collect();
    let dv: Vec<f64> = v1.iter().zip(&v2).map(|(a, b)| a - b).collect();
    let loss = dm.iter().map(|d| d * d).sum::<f64>() + dv.iter().map(|d| d * d).sum::<f64>();
    // d var / d x = 2 (x - mean) / n; d mean / d x = 1 / n
    let grad_for = |batch: &[Array2<f64>], mean: &[f64], n: f64, sign: f64| -> Vec<Array2<f64>> {
        batch
            .iter()
            .map(|s| {
                let mut g = Array2::zeros(s.dim());
                for (t, row) in s.rows().into_iter().enumerate() {
                    for k in 0..e {
                        g[[t, k]] = sign * (2.0 * dm[k] / n + 2.0 * dv[k] * 2.0 * (row[k] - mean[k]) / n);
                    }
                }
                g
            })
            .collect()
    };
    let g_real = grad_for(x_e, &m1, n1, 1.0);
    let g_fake = grad_for(x_hat_e, &m2, n2, -1.0);
    Ok((loss, g_real, g_fake))
}

/// Entrywise MSE between two causality matrices.
pub fn loss_motif(m: &CausalityMatrix, m_hat: &CausalityMatrix) -> Result<f64> {
    if m.m() != m_hat.m() {
        return Err(ForgeError::DimensionMismatch(format!("causality matrices of size {} and {}", m.m(), m_hat.m())));
    }
    let diff = m.entries() - m_hat.entries();
    Ok(diff.iter().map(|d| d * d).sum::<f64>() / diff.len() as f64)
}

/// Mean binary cross-entropy of predicted probabilities against a constant
/// label.
pub fn bce(probs: &[Array2<f64>], label: f64) -> f64 {
    bce_grad(probs, label).0
}

pub fn bce_grad(probs: &[Array2<f64>], label: f64) -> (f64, Vec<Array2<f64>>) {
    let n: usize = probs.iter().map(Array2::len).sum();
    let n = n as f64;
    let mut loss = 0.0;
    let grads = probs
        .iter()
        .map(|s| {
            s.mapv(|p| {
                let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                loss -= label * pc.ln() + (1.0 - label) * (1.0 - pc).ln();
                if p != pc {
                    0.0
                } else {
                    (-label / pc + (1.0 - label) / (1.0 - pc)) / n
                }
            })
        })
        .collect();
    (loss / n, grads)
}
