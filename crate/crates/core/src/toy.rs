//! Seeded "glucose-like" toy corpus with planted motif structure.
//!
//! Every trace is a concatenation of jittered copies of a handful of
//! templates. Template order is random except for one planted transition:
//! whenever the `cause` template appears, the `effect` template follows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GlucoseTrace, TraceSet, GLUCOSE_MAX, GLUCOSE_MIN};
use crate::error::Result;
use crate::motif::MotifSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyCorpusConfig {
    pub n_traces: usize,
    pub trace_len: usize,
    pub tau: usize,
    /// Half-width of the uniform per-sample jitter, mg/dL.
    pub jitter: f64,
    pub cause: usize,
    pub effect: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self { n_traces: 400, trace_len: 48, tau: 8, jitter: 0.9, cause: 2, effect: 0, seed: 2024 }
    }
}

/// Template shapes for `tau` samples, mg/dL.
pub fn templates(tau: usize) -> Vec<Vec<f64>> {
    let ramp = |from: f64, to: f64| -> Vec<f64> {
        (0..tau).map(|k| from + (to - from) * k as f64 / (tau.max(2) - 1) as f64).collect()
    };
    let bump = |base: f64, height: f64| -> Vec<f64> {
        (0..tau)
            .map(|k| {
                let x = k as f64 / (tau.max(2) - 1) as f64;
                base + height * (std::f64::consts::PI * x).sin()
            })
            .collect()
    };
    vec![
        vec![85.0; tau],
        ramp(100.0, 170.0),
        bump(130.0, 70.0),
        ramp(180.0, 110.0),
        vec![230.0; tau],
        bump(110.0, -45.0),
    ]
}

/// Template id sequence for one trace.
fn template_sequence<R: Rng>(rng: &mut R, steps: usize, n: usize, cause: usize, effect: usize) -> Vec<usize> {
    let mut seq = Vec::with_capacity(steps);
    for t in 0..steps {
        let next = if t > 0 && seq[t - 1] == cause { effect } else { rng.random_range(0..n) };
        seq.push(next);
    }
    seq
}

pub fn toy_corpus(cfg: &ToyCorpusConfig) -> Result<TraceSet> {
    let temps = templates(cfg.tau);
    let steps = cfg.trace_len / cfg.tau;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut traces = Vec::with_capacity(cfg.n_traces);
    for i in 0..cfg.n_traces {
        let seq = template_sequence(&mut rng, steps, temps.len(), cfg.cause, cfg.effect);
        let mut values = Vec::with_capacity(cfg.trace_len);
        for &k in &seq {
            for &v in &temps[k] {
                let j = if cfg.jitter > 0.0 { rng.random_range(-cfg.jitter..=cfg.jitter) } else { 0.0 };
                values.push((v + j).clamp(GLUCOSE_MIN, GLUCOSE_MAX));
            }
        }
        // pad any remainder with the last value
        while values.len() < cfg.trace_len {
            values.push(*values.last().unwrap_or(&100.0));
        }
        traces.push(GlucoseTrace::new(format!("toy{i:04}"), values)?);
    }
    TraceSet::new(traces)
}

/// Motif-set index of a template, if the set contains a matching motif.
pub fn template_motif(ms: &MotifSet, template: usize) -> Option<usize> {
    let temps = templates(ms.tau);
    temps.get(template).and_then(|t| {
        let (idx, _, matched) = ms.nearest(t);
        matched.then_some(idx)
    })
}
