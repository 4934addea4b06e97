//! Motif vocabulary: tolerance-deduplicated chunks of traces, and the
//! encoding of traces as sequences of motif ids.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{GlucoseTrace, TraceSet};
use crate::error::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motif {
    pub index: usize,
    pub values: Vec<f64>,
}

/// Ordered motif vocabulary. No two members match under `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSet {
    motifs: Vec<Motif>,
    pub tau: usize,
    pub sigma: f64,
}

/// A trace rewritten as motif ids, one per chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotifSequence {
    pub trace_id: String,
    pub indices: Vec<usize>,
    /// Chunk positions that matched no motif and fell back to the nearest one.
    pub unmatched: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MotifSidecar {
    tau: usize,
    sigma: f64,
    m: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Splits a series into `floor(len / tau)` consecutive windows; a trailing
/// remainder shorter than `tau` is dropped.
pub fn chunk(values: &[f64], tau: usize) -> Result<Vec<&[f64]>> {
    if tau == 0 {
        return Err(ForgeError::invalid("motif length tau must be positive"));
    }
    if tau > values.len() {
        return Err(ForgeError::invalid(format!("motif length {tau} exceeds trace length {}", values.len())));
    }
    Ok(values.chunks_exact(tau).collect())
}

/// Every coordinate within `sigma`.
pub fn matches(a: &[f64], b: &[f64], sigma: f64) -> Result<bool> {
    if a.len() != b.len() {
        return Err(ForgeError::DimensionMismatch(format!("window length {} vs motif length {}", a.len(), b.len())));
    }
    Ok(within(a, b, sigma))
}

#[inline]
fn within(a: &[f64], b: &[f64], sigma: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= sigma)
}

#[inline]
fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Greedy first-fit pass over every chunk in trace order, then chunk order.
pub fn build_motif_set(s: &TraceSet, tau: usize, sigma: f64) -> Result<MotifSet> {
    if s.is_empty() {
        return Err(ForgeError::invalid("cannot build a motif set from an empty trace set"));
    }
    if !(sigma >= 0.0) {
        return Err(ForgeError::invalid(format!("motif tolerance {sigma} must be nonnegative")));
    }
    let mut motifs: Vec<Motif> = Vec::new();
    for trace in s.traces() {
        for window in chunk(trace.values(), tau)? {
            if !motifs.iter().any(|m| within(window, &m.values, sigma)) {
                motifs.push(Motif { index: motifs.len(), values: window.to_vec() });
            }
        }
    }
    let set = MotifSet { motifs, tau, sigma };
    debug_assert!(set.check_separation().is_ok());
    Ok(set)
}

impl MotifSet {
    /// Builds a set from explicit motif values, validating separation.
    pub fn from_values(values: Vec<Vec<f64>>, tau: usize, sigma: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(ForgeError::invalid("motif set must contain at least one motif"));
        }
        let motifs = values
            .into_iter()
            .enumerate()
            .map(|(index, values)| {
                if values.len() != tau {
                    Err(ForgeError::DimensionMismatch(format!(
                        "motif {index} has length {} but tau = {tau}",
                        values.len()
                    )))
                } else {
                    Ok(Motif { index, values })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let set = Self { motifs, tau, sigma };
        set.check_separation()?;
        Ok(set)
    }

    pub fn motifs(&self) -> &[Motif] {
        &self.motifs
    }

    pub fn len(&self) -> usize {
        self.motifs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.motifs.is_empty()
    }

    /// Pairwise non-matching check.
    pub fn check_separation(&self) -> Result<()> {
        for (i, a) in self.motifs.iter().enumerate() {
            for b in &self.motifs[i + 1..] {
                if within(&a.values, &b.values, self.sigma) {
                    return Err(ForgeError::invalid(format!(
                        "motifs {} and {} match within sigma = {}",
                        a.index, b.index, self.sigma
                    )));
                }
            }
        }
        Ok(())
    }

    /// Lowest-L1 matching motif, ties to the lower index. Falls back to the
    /// globally nearest motif; the flag is `false` in that case.
    pub fn nearest(&self, window: &[f64]) -> (usize, f64, bool) {
        let mut best_match: Option<(usize, f64)> = None;
        let mut best_any = (0usize, f64::INFINITY);
        for m in &self.motifs {
            let d = l1(window, &m.values);
            if d < best_any.1 {
                best_any = (m.index, d);
            }
            if within(window, &m.values, self.sigma) && best_match.map_or(true, |(_, bd)| d < bd) {
                best_match = Some((m.index, d));
            }
        }
        match best_match {
            Some((i, d)) => (i, d, true),
            None => (best_any.0, best_any.1, false),
        }
    }

    /// Index of the first motif within tolerance of `window`, if any.
    pub fn find_match(&self, window: &[f64]) -> Option<usize> {
        self.motifs.iter().find(|m| within(window, &m.values, self.sigma)).map(|m| m.index)
    }

    pub fn encode(&self, trace: &GlucoseTrace) -> Result<MotifSequence> {
        self.encode_values(&trace.id, trace.values())
    }

    pub fn encode_values(&self, id: &str, values: &[f64]) -> Result<MotifSequence> {
        let windows = chunk(values, self.tau)?;
        let mut indices = Vec::with_capacity(windows.len());
        let mut unmatched = Vec::new();
        for (pos, w) in windows.into_iter().enumerate() {
            let (idx, _, matched) = self.nearest(w);
            if !matched {
                unmatched.push(pos);
            }
            indices.push(idx);
        }
        Ok(MotifSequence { trace_id: id.to_string(), indices, unmatched })
    }

    pub fn encode_set(&self, s: &TraceSet) -> Result<Vec<MotifSequence>> {
        s.traces().iter().map(|t| self.encode(t)).collect()
    }

    /// Occurrence count of each motif when `s` is encoded.
    pub fn frequencies(&self, s: &TraceSet) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; self.len()];
        for seq in self.encode_set(s)? {
            for i in seq.indices {
                counts[i] += 1;
            }
        }
        Ok(counts)
    }

    /// Keeps the `max_motifs` most frequent motifs of `s` (ties to the lower
    /// index), preserving their relative order and renumbering them densely.
    pub fn cap(self, s: &TraceSet, max_motifs: usize) -> Result<Self> {
        if max_motifs == 0 {
            return Err(ForgeError::invalid("max_motifs must be positive"));
        }
        if self.len() <= max_motifs {
            return Ok(self);
        }
        let counts = self.frequencies(s)?;
        let mut rank: Vec<usize> = (0..self.len()).collect();
        rank.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        let mut keep = rank[..max_motifs].to_vec();
        keep.sort_unstable();
        let motifs = keep
            .into_iter()
            .enumerate()
            .map(|(index, old)| Motif { index, values: self.motifs[old].values.clone() })
            .collect();
        Ok(Self { motifs, tau: self.tau, sigma: self.sigma })
    }

    /// Writes `<stem>.csv` (`index,v0..`) and `<stem>.json`.
    pub fn save(&self, dir: impl AsRef<Path>, stem: &str, config_hash: Option<&str>) -> Result<()> {
        let dir = dir.as_ref();
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(format!("{stem}.csv")))?;
        let mut header = vec!["index".to_string()];
        header.extend((0..self.tau).map(|k| format!("v{k}")));
        w.write_record(&header)?;
        for m in &self.motifs {
            let mut rec = vec![m.index.to_string()];
            rec.extend(m.values.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        let side = MotifSidecar {
            tau: self.tau,
            sigma: self.sigma,
            m: self.len(),
            config_hash: config_hash.map(str::to_string),
        };
        std::fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>, stem: &str) -> Result<Self> {
        let dir = dir.as_ref();
        let side: MotifSidecar = serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(dir.join(format!("{stem}.csv")))?;
        let mut values = Vec::with_capacity(side.m);
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parsed = rec
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| ForgeError::MalformedRow { row: row + 1, reason: e.to_string() })?;
            values.push(parsed);
        }
        if values.len() != side.m {
            return Err(ForgeError::DimensionMismatch(format!(
                "sidecar declares m = {} but csv holds {} motifs",
                side.m,
                values.len()
            )));
        }
        Self::from_values(values, side.tau, side.sigma)
    }
}

/// One-hot `[steps x m]` matrix for a single sequence.
pub fn indicator_matrix(seq: &MotifSequence, m: usize) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((seq.indices.len(), m));
    for (t, &j) in seq.indices.iter().enumerate() {
        if j >= m {
            return Err(ForgeError::invalid(format!("motif index {j} out of range for m = {m}")));
        }
        out[[t, j]] = 1.0;
    }
    Ok(out)
}

/// Indicator matrices for a collection of equal-length sequences.
pub fn indicator_series(seqs: &[MotifSequence], m: usize) -> Result<Vec<Array2<f64>>> {
    if let Some(first) = seqs.first() {
        if let Some(bad) = seqs.iter().find(|s| s.indices.len() != first.indices.len()) {
            return Err(ForgeError::DimensionMismatch(format!(
                "sequence {:?} has {} steps, expected {}",
                bad.trace_id,
                bad.indices.len(),
                first.indices.len()
            )));
        }
    }
    seqs.iter().map(|s| indicator_matrix(s, m)).collect()
}
