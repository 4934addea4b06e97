//! Motif breadth: how much of the real motif vocabulary the synthetic data
//! reproduces, and how many fake motifs it invents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::TraceSet;
use crate::error::{ForgeError, Result};
use crate::motif::{build_motif_set, chunk, matches, MotifSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreadthReport {
    #[serde(rename = "pct_TM")]
    pub pct_tm: f64,
    #[serde(rename = "pct_FM")]
    pub pct_fm: f64,
    pub coverage: f64,
    pub mse: f64,
}

fn matched_any(window: &[f64], set: &MotifSet) -> Result<bool> {
    for m in set.motifs() {
        if matches(window, &m.values, set.sigma)? {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Bins of the union vocabulary: real motifs first, then fake bins keyed by
/// the synthetic motif they encode to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Bin {
    Real(usize),
    Fake(usize),
}

fn histogram(counts: &BTreeMap<Bin, usize>) -> BTreeMap<Bin, f64> {
    let total: usize = counts.values().sum();
    counts.iter().map(|(&b, &c)| (b, c as f64 / total as f64)).collect()
}

pub fn motif_coverage(real: &TraceSet, synth: &TraceSet, tau: usize, sigma: f64) -> Result<BreadthReport> {
    if real.is_empty() || synth.is_empty() {
        return Err(ForgeError::invalid("motif coverage needs nonempty real and synthetic sets"));
    }
    let s_x = build_motif_set(real, tau, sigma)?;
    let s_xh = build_motif_set(synth, tau, sigma)?;

    let mut tm = 0usize;
    for m in s_xh.motifs() {
        if matched_any(&m.values, &s_x)? {
            tm += 1;
        }
    }
    let mut covered = 0usize;
    for m in s_x.motifs() {
        if matched_any(&m.values, &s_xh)? {
            covered += 1;
        }
    }
    let pct_tm = tm as f64 / s_xh.len() as f64;

    let mut real_counts = BTreeMap::new();
    for t in real.traces() {
        for w in chunk(t.values(), tau)? {
            *real_counts.entry(Bin::Real(s_x.nearest(w).0)).or_insert(0) += 1;
        }
    }
    let mut synth_counts = BTreeMap::new();
    for t in synth.traces() {
        for w in chunk(t.values(), tau)? {
            let (idx, _, matched) = s_x.nearest(w);
            let bin = if matched { Bin::Real(idx) } else { Bin::Fake(s_xh.nearest(w).0) };
            *synth_counts.entry(bin).or_insert(0) += 1;
        }
    }
    let p = histogram(&real_counts);
    let q = histogram(&synth_counts);
    let mut vocab: Vec<Bin> = (0..s_x.len()).map(Bin::Real).collect();
    vocab.extend(q.keys().filter(|b| matches!(b, Bin::Fake(_))).copied());
    let mse = vocab
        .iter()
        .map(|b| {
            let d = p.get(b).copied().unwrap_or(0.0) - q.get(b).copied().unwrap_or(0.0);
            d * d
        })
        .sum::<f64>()
        / vocab.len() as f64;

    Ok(BreadthReport { pct_tm, pct_fm: 1.0 - pct_tm, coverage: covered as f64 / s_x.len() as f64, mse })
}
