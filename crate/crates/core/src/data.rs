//! Trace ingestion, validation, normalization and disjoint splitting.
//!
//! Raw traces live in mg/dL and are bounded to `[40, 400]`. Networks consume
//! the affine image of that interval on `[0, 1]`; the bounds are fixed rather
//! than estimated from data so that anything a network emits maps back into
//! the physiological range.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};

/// Lower display/validity bound, mg/dL.
pub const GLUCOSE_MIN: f64 = 40.0;
/// Upper display/validity bound, mg/dL.
pub const GLUCOSE_MAX: f64 = 400.0;
const GLUCOSE_SPAN: f64 = GLUCOSE_MAX - GLUCOSE_MIN;

/// A complete single-day trace in mg/dL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlucoseTrace {
    pub id: String,
    values: Vec<f64>,
}

impl GlucoseTrace {
    /// Validates every sample against the glucose bounds.
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        for (k, &v) in values.iter().enumerate() {
            check_value(v).map_err(|reason| ForgeError::invalid(format!("{reason} (sample {k})")))?;
        }
        if values.is_empty() {
            return Err(ForgeError::invalid("trace has no samples"));
        }
        Ok(Self { id: id.into(), values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A trace mapped onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedTrace {
    pub id: String,
    pub values: Vec<f64>,
}

/// Which role a set plays in the pipeline. The causality block and the GAN
/// are trained on disjoint data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    CausalityTrain,
    GanTrain,
    Holdout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSet {
    traces: Vec<GlucoseTrace>,
    pub provenance: Option<Provenance>,
}

impl TraceSet {
    /// Builds a set, checking shared length and id uniqueness.
    pub fn new(traces: Vec<GlucoseTrace>) -> Result<Self> {
        if let Some(first) = traces.first() {
            let t = first.len();
            let mut seen = HashSet::with_capacity(traces.len());
            for (idx, tr) in traces.iter().enumerate() {
                if tr.len() != t {
                    return Err(ForgeError::DimensionMismatch(format!(
                        "trace {idx} has length {} but the set uses T={t}",
                        tr.len()
                    )));
                }
                if !seen.insert(tr.id.as_str()) {
                    return Err(ForgeError::invalid(format!("duplicate trace id {:?}", tr.id)));
                }
            }
        }
        Ok(Self { traces, provenance: None })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn traces(&self) -> &[GlucoseTrace] {
        &self.traces
    }

    pub fn into_traces(self) -> Vec<GlucoseTrace> {
        self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    /// Shared trace length, `None` for an empty set.
    pub fn trace_len(&self) -> Option<usize> {
        self.traces.first().map(GlucoseTrace::len)
    }

    pub fn normalized(&self) -> Vec<NormalizedTrace> {
        self.traces.iter().map(normalize).collect()
    }

    /// Writes the set in the ingestion format (`id,v0,…`), one row per trace.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        if let Some(t) = self.trace_len() {
            let mut header = Vec::with_capacity(t + 1);
            header.push("id".to_string());
            header.extend((0..t).map(|k| format!("v{k}")));
            w.write_record(&header)?;
        }
        for tr in &self.traces {
            let mut rec = Vec::with_capacity(tr.len() + 1);
            rec.push(tr.id.clone());
            rec.extend(tr.values.iter().map(|v| format!("{v}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn check_value(v: f64) -> std::result::Result<(), String> {
    if !v.is_finite() {
        Err("missing or non-finite value".to_string())
    } else if v < GLUCOSE_MIN {
        Err(format!("value below {GLUCOSE_MIN}"))
    } else if v > GLUCOSE_MAX {
        Err(format!("value above {GLUCOSE_MAX}"))
    } else {
        Ok(())
    }
}

pub fn normalize(t: &GlucoseTrace) -> NormalizedTrace {
    NormalizedTrace { id: t.id.clone(), values: t.values.iter().map(|&v| normalize_value(v)).collect() }
}

/// Inverse of [`normalize`]. Values are clamped onto `[0, 1]` first so the
/// result is always a valid trace.
pub fn denormalize(n: &NormalizedTrace) -> GlucoseTrace {
    GlucoseTrace { id: n.id.clone(), values: n.values.iter().map(|&v| denormalize_value(v)).collect() }
}

#[inline]
pub fn normalize_value(v: f64) -> f64 {
    (v - GLUCOSE_MIN) / GLUCOSE_SPAN
}

#[inline]
pub fn denormalize_value(u: f64) -> f64 {
    (u.clamp(0.0, 1.0) * GLUCOSE_SPAN + GLUCOSE_MIN).clamp(GLUCOSE_MIN, GLUCOSE_MAX)
}

/// Reads traces from a CSV file. See [`read_traces`].
pub fn load_traces(path: impl AsRef<Path>, t: usize) -> Result<TraceSet> {
    let file = std::fs::File::open(path)?;
    read_traces(file, t)
}

/// Parses one trace per row: either `T` numeric columns or an id followed by
/// `T` numeric columns. A leading header row (`id,v0,…`) is skipped.
pub fn read_traces<R: Read>(reader: R, t: usize) -> Result<TraceSet> {
    if t == 0 {
        return Err(ForgeError::invalid("trace length T must be positive"));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).trim(csv::Trim::All).from_reader(reader);

    let mut traces = Vec::new();
    let mut row = 0usize;
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        if line == 0 && is_header(&record) {
            continue;
        }
        row += 1;
        let (id, fields): (String, Vec<&str>) = if record.len() == t + 1 {
            (record[0].to_string(), record.iter().skip(1).collect())
        } else if record.len() == t {
            (format!("trace{row}"), record.iter().collect())
        } else {
            return Err(ForgeError::MalformedRow {
                row,
                reason: format!("arity mismatch: expected {t} or {} fields, found {}", t + 1, record.len()),
            });
        };
        let mut values = Vec::with_capacity(t);
        for field in fields {
            if field.is_empty() {
                return Err(ForgeError::MalformedRow { row, reason: "missing value".into() });
            }
            let v: f64 = field
                .parse()
                .map_err(|_| ForgeError::MalformedRow { row, reason: format!("non-numeric value {field:?}") })?;
            check_value(v).map_err(|reason| ForgeError::MalformedRow { row, reason })?;
            values.push(v);
        }
        traces.push(GlucoseTrace { id, values });
    }
    TraceSet::new(traces)
}

fn is_header(record: &csv::StringRecord) -> bool {
    let first = record.get(0).unwrap_or("");
    if first.eq_ignore_ascii_case("id") {
        return true;
    }
    record.iter().skip(1).all(|f| f.parse::<f64>().is_err())
}

/// Seeded split into two disjoint sets; the first receives
/// `floor(fraction * |s|)` traces. Both sides keep corpus order.
pub fn split_disjoint(s: &TraceSet, fraction: f64, seed: u64) -> Result<(TraceSet, TraceSet)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(ForgeError::invalid(format!("split fraction {fraction} not in (0, 1)")));
    }
    let n = s.len();
    if n < 2 {
        return Err(ForgeError::invalid("need at least two traces to split"));
    }
    let first_len = (fraction * n as f64).floor() as usize;
    if first_len == 0 || first_len == n {
        return Err(ForgeError::invalid(format!("split fraction {fraction} of {n} traces leaves one side empty")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut in_first = vec![false; n];
    for &i in &order[..first_len] {
        in_first[i] = true;
    }
    let (a, b): (Vec<_>, Vec<_>) = s.traces.iter().cloned().zip(in_first).partition(|(_, first)| *first);
    let strip = |v: Vec<(GlucoseTrace, bool)>| v.into_iter().map(|(t, _)| t).collect::<Vec<_>>();
    Ok((
        TraceSet { traces: strip(a), provenance: Some(Provenance::CausalityTrain) },
        TraceSet { traces: strip(b), provenance: Some(Provenance::GanTrain) },
    ))
}
