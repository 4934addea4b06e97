//! Population glycemic statistics and Welch significance tests.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::data::{GlucoseTrace, TraceSet};
use crate::error::{ForgeError, Result};

pub const HYPO_LIMIT: f64 = 70.0;
pub const HYPER_LIMIT: f64 = 180.0;

/// Metrics of a single trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceMetrics {
    pub var: f64,
    pub tir: f64,
    pub hypo: f64,
    pub hyper: f64,
    pub gvi: f64,
    pub pgs: f64,
}

impl TraceMetrics {
    pub fn values(&self) -> [f64; 6] {
        [self.var, self.tir, self.hypo, self.hyper, self.gvi, self.pgs]
    }
}

pub const METRIC_NAMES: [&str; 6] = ["VAR", "TIR", "Hypo", "Hyper", "GVI", "PGS"];

/// Two-sided Welch p-values, one per metric, against a reference set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricPValues {
    pub var: f64,
    pub tir: f64,
    pub hypo: f64,
    pub hyper: f64,
    pub gvi: f64,
    pub pgs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlycemicReport {
    pub var: f64,
    pub tir: f64,
    pub hypo: f64,
    pub hyper: f64,
    pub gvi: f64,
    pub pgs: f64,
    pub p_values: Option<MetricPValues>,
}

pub fn trace_metrics(trace: &GlucoseTrace) -> TraceMetrics {
    let v = trace.values();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    let hypo = v.iter().filter(|&&x| x < HYPO_LIMIT).count() as f64 / n * 100.0;
    let hyper = v.iter().filter(|&&x| x > HYPER_LIMIT).count() as f64 / n * 100.0;
    let tir = 100.0 - hypo - hyper;
    let gvi = if v.len() > 1 {
        let path: f64 = v.windows(2).map(|w| (1.0 + (w[1] - w[0]).powi(2)).sqrt()).sum();
        let span = (n - 1.0).hypot(v[v.len() - 1] - v[0]);
        path / span
    } else {
        1.0
    };
    let pgs = gvi * mean * (1.0 - tir / 100.0);
    TraceMetrics { var, tir, hypo, hyper, gvi, pgs }
}

/// Population means of the per-trace metrics, with Welch p-values against
/// `reference` when given.
pub fn glycemic_metrics(s: &TraceSet, reference: Option<&TraceSet>) -> Result<GlycemicReport> {
    if s.is_empty() {
        return Err(ForgeError::invalid("glycemic metrics need at least one trace"));
    }
    let per: Vec<TraceMetrics> = s.traces().iter().map(trace_metrics).collect();
    let n = per.len() as f64;
    let mut mean = [0.0; 6];
    for m in &per {
        for (acc, v) in mean.iter_mut().zip(m.values()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let p_values = match reference {
        Some(r) if !r.is_empty() => {
            let other: Vec<TraceMetrics> = r.traces().iter().map(trace_metrics).collect();
            let mut p = [0.0; 6];
            for (k, pk) in p.iter_mut().enumerate() {
                let a: Vec<f64> = per.iter().map(|m| m.values()[k]).collect();
                let b: Vec<f64> = other.iter().map(|m| m.values()[k]).collect();
                *pk = metric_p_value(&a, &b);
            }
            Some(MetricPValues { var: p[0], tir: p[1], hypo: p[2], hyper: p[3], gvi: p[4], pgs: p[5] })
        }
        _ => None,
    };
    Ok(GlycemicReport {
        var: mean[0],
        tir: mean[1],
        hypo: mean[2],
        hyper: mean[3],
        gvi: mean[4],
        pgs: mean[5],
        p_values,
    })
}

/// Welch p-value, extended to the degenerate cases: two identical constant
/// samples give 1, two different constants give 0, too few samples give NaN.
fn metric_p_value(a: &[f64], b: &[f64]) -> f64 {
    match welch_test(a, b) {
        Ok(p) => p,
        Err(_) if a.len() >= 2 && b.len() >= 2 => {
            if mean(a) == mean(b) {
                1.0
            } else {
                0.0
            }
        }
        Err(_) => f64::NAN,
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Welch t statistic and Welch-Satterthwaite degrees of freedom.
pub fn welch_statistic(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() < 2 || b.len() < 2 {
        return Err(ForgeError::invalid("Welch test needs at least two samples per side"));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_var(a) / na, sample_var(b) / nb);
    if va + vb == 0.0 {
        return Err(ForgeError::invalid("Welch test undefined: both samples have zero variance"));
    }
    let t = (mean(a) - mean(b)) / (va + vb).sqrt();
    let dof = (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
    Ok((t, dof))
}

/// Two-sided p-value: `I_{dof / (dof + t^2)}(dof / 2, 1 / 2)`.
pub fn welch_test(a: &[f64], b: &[f64]) -> Result<f64> {
    let (t, dof) = welch_statistic(a, b)?;
    if t == 0.0 {
        return Ok(1.0);
    }
    Ok(beta_reg(dof / 2.0, 0.5, dof / (dof + t * t)).clamp(0.0, 1.0))
}
