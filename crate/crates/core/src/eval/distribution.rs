//! Distribution views of a trace set: per-trace variance histogram and a
//! two-component PCA projection.

use serde::{Deserialize, Serialize};

use crate::data::TraceSet;
use crate::error::{ForgeError, Result};
use crate::eval::glycemic::trace_metrics;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Bin edges; bin `k` covers `[edges[k], edges[k+1])`, the last bin is
    /// closed. Values outside the range land in the nearest end bin.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lower,upper,count\n");
        for (k, c) in self.counts.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", self.edges[k], self.edges[k + 1], c));
        }
        out
    }
}

/// `count + 1` evenly spaced edges over `[lo, hi]`.
pub fn linear_edges(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..=count).map(|k| lo + (hi - lo) * k as f64 / count as f64).collect()
}

pub fn variance_distribution(s: &TraceSet, edges: &[f64]) -> Result<Histogram> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(ForgeError::invalid("histogram edges must be strictly increasing, at least two"));
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0usize; bins];
    for t in s.traces() {
        let v = trace_metrics(t).var;
        let k = edges.partition_point(|&e| e <= v).saturating_sub(1).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges: edges.to_vec(), counts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    pub components: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
    /// Projection of each centred trace onto the two components.
    pub projections: Vec<[f64; 2]>,
}

impl Pca2 {
    pub fn to_csv(&self, ids: &[String]) -> String {
        let mut out = String::from("id,pc1,pc2\n");
        for (id, p) in ids.iter().zip(&self.projections) {
            out.push_str(&format!("{id},{},{}\n", p[0], p[1]));
        }
        out
    }
}

const POWER_TOL: f64 = 1e-9;
const POWER_MAX_ITERS: usize = 100_000;

fn matvec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    (0..n).map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| p * q).sum()).collect()
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Sign convention: the largest-magnitude coordinate is positive.
fn orient(v: &mut [f64]) {
    let k = v.iter().enumerate().fold((0, 0.0f64), |best, (i, x)| if x.abs() > best.1 { (i, x.abs()) } else { best }).0;
    if v[k] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration.
fn power_iteration(a: &[f64], n: usize, start: usize) -> (Vec<f64>, f64) {
    // deterministic, non-degenerate start vector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i + start) % 7) as f64 * 0.1).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let mut w = matvec(a, n, &v);
        let norm = normalize(&mut w);
        if norm == 0.0 {
            let mut e = vec![0.0; n];
            e[start.min(n - 1)] = 1.0;
            return (e, 0.0);
        }
        let diff = w.iter().zip(&v).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        v = w;
        lambda = norm;
        if diff < POWER_TOL {
            break;
        }
    }
    orient(&mut v);
    (v, lambda)
}

/// Top two eigenvectors of the trace covariance (power iteration with
/// deflation) and the projections of every centred trace.
pub fn pca2(s: &TraceSet) -> Result<Pca2> {
    let n = s.len();
    let t = s.trace_len().ok_or_else(|| ForgeError::invalid("PCA of an empty set"))?;
    let mut mean = vec![0.0; t];
    for tr in s.traces() {
        for (m, v) in mean.iter_mut().zip(tr.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred: Vec<Vec<f64>> =
        s.traces().iter().map(|tr| tr.values().iter().zip(&mean).map(|(v, m)| v - m).collect()).collect();
    let denom = (n.max(2) - 1) as f64;
    let mut cov = vec![0.0; t * t];
    for row in &centred {
        for i in 0..t {
            let ri = row[i];
            for j in i..t {
                cov[i * t + j] += ri * row[j];
            }
        }
    }
    for i in 0..t {
        for j in i..t {
            let v = cov[i * t + j] / denom;
            cov[i * t + j] = v;
            cov[j * t + i] = v;
        }
    }
    let (v1, l1) = power_iteration(&cov, t, 0);
    for i in 0..t {
        for j in 0..t {
            cov[i * t + j] -= l1 * v1[i] * v1[j];
        }
    }
    let (v2, l2) = if t > 1 { power_iteration(&cov, t, 1) } else { (vec![0.0; t], 0.0) };
    let projections = centred
        .iter()
        .map(|r| {
            let p = |v: &[f64]| r.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
            [p(&v1), p(&v2)]
        })
        .collect();
    Ok(Pca2 { components: [v1, v2], eigenvalues: [l1, l2], projections })
}
