//! Pipeline stages. Each reads the config plus earlier artifacts from the
//! output directory and writes its own artifacts there.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use forge_core::causality::{partition_causality, CausalityMatrix};
use forge_core::data::{load_traces, split_disjoint, TraceSet};
use forge_core::eval::{
    glycemic_metrics, linear_edges, motif_coverage, pca2, tstr, variance_distribution, EvaluationReport,
};
use forge_core::gan::{self, write_loss_log, Checkpoint, MotifGuidance};
use forge_core::motif::{build_motif_set, MotifSet};
use forge_core::privacy::{partition, pate_aggregate, BudgetReport};
use forge_core::{ForgeError, Result};

use crate::config::PipelineConfig;

pub const MOTIF_STEM: &str = "motifs";
pub const CAUSALITY_STEM: &str = "causality";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";

pub struct Run {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Run {
    pub fn new(cfg: PipelineConfig, out: PathBuf) -> Result<Self> {
        fs::create_dir_all(&out)?;
        let hash = cfg.hash();
        Ok(Self { cfg, hash, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_json(&self, name: &str, value: &impl serde::Serialize) -> Result<()> {
        fs::write(self.path(name), serde_json::to_string_pretty(value)?)?;
        Ok(())
    }

    /// (causality side, GAN side) of the configured corpus.
    fn split(&self) -> Result<(TraceSet, TraceSet)> {
        let all = load_traces(&self.cfg.data.path, self.cfg.data.trace_len)?;
        split_disjoint(&all, self.cfg.data.causality_fraction, self.cfg.seed)
    }

    fn motifs(&self) -> Result<MotifSet> {
        MotifSet::load(&self.out, MOTIF_STEM)
    }

    fn causality(&self) -> Result<CausalityMatrix> {
        CausalityMatrix::load_csv(self.path(&format!("{CAUSALITY_STEM}.csv")))
    }
}

/// Motif set of the causality side, optionally capped to the most frequent.
pub fn motifs(run: &Run) -> Result<MotifSet> {
    let (causal, _) = run.split()?;
    let mc = &run.cfg.motifs;
    let mut ms = build_motif_set(&causal, mc.tau, mc.sigma)?;
    if let Some(k) = mc.max_motifs {
        ms = ms.cap(&causal, k)?;
    }
    ms.save(&run.out, MOTIF_STEM, Some(&run.hash))?;
    Ok(ms)
}

/// Per-partition matrices (trained in parallel) aggregated with PATE.
pub fn train_causality(run: &Run) -> Result<CausalityMatrix> {
    let (causal, _) = run.split()?;
    let ms = run.motifs()?;
    let p = &run.cfg.privacy;
    let parts = partition(&causal, p.pate.n_partitions)?;
    let teachers =
        parts.par_iter().map(|part| partition_causality(part, &ms, &run.cfg.causality)).collect::<Result<Vec<_>>>()?;
    let matrix = if teachers.len() == 1 && p.budget.is_disabled() {
        // nothing to aggregate and nothing to protect
        teachers[0].clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(run.cfg.seed);
        pate_aggregate(&teachers, &p.budget, &p.pate, &mut rng)?
    };
    let sidecar = json!({
        "config_hash": run.hash,
        "m": matrix.m(),
        "partitions": parts.len(),
        "partition_sizes": parts.iter().map(TraceSet::len).collect::<Vec<_>>(),
    });
    matrix.save(&run.out, CAUSALITY_STEM, &sidecar)?;
    let report = BudgetReport {
        epsilon: p.budget.epsilon,
        delta: p.budget.delta,
        mechanism: "pate-laplace".into(),
        parameters: json!({
            "n_partitions": p.pate.n_partitions,
            "bins": p.pate.bins,
            "entries": matrix.m() * matrix.m(),
            "config_hash": run.hash,
        }),
    };
    run.write_json("causality_budget.json", &report)?;
    Ok(matrix)
}

pub fn train_gan(run: &Run) -> Result<Checkpoint> {
    let (_, real) = run.split()?;
    let g = &run.cfg.gan;
    let guidance = if g.motif_loss {
        Some(MotifGuidance::new(run.causality()?, run.motifs()?, run.cfg.causality.clone())?)
    } else {
        None
    };
    let (state, log) = gan::train(&real, guidance.as_ref(), g)?;
    let mut buf = Vec::new();
    write_loss_log(&mut buf, &log)?;
    fs::write(run.path("losses.csv"), buf)?;
    let ck = Checkpoint::new(g.clone(), state, run.hash.clone());
    ck.save(run.path(CHECKPOINT_FILE))?;
    let dp = g.resolve_privacy(real.len())?;
    let report = BudgetReport {
        epsilon: gan::spent_epsilon(g, real.len())?,
        delta: g.privacy.as_ref().map_or(0.0, |p| p.delta),
        mechanism: if dp.is_some() { "dp-sgd-rdp".into() } else { "none".into() },
        parameters: json!({ "dp_sgd": dp, "config_hash": run.hash }),
    };
    run.write_json("gan_budget.json", &report)?;
    Ok(ck)
}

pub fn generate(run: &Run) -> Result<TraceSet> {
    let ck = Checkpoint::load(run.path(CHECKPOINT_FILE))?;
    let synth = gan::generate(&ck.state, run.cfg.generate.count, run.cfg.seed)?;
    synth.save_csv(run.path(SYNTHETIC_FILE))?;
    run.write_json(
        "synthetic.json",
        &json!({
            "config_hash": run.hash,
            "checkpoint_config_hash": ck.config_hash,
            "count": synth.len(),
            "seed": run.cfg.seed,
        }),
    )?;
    Ok(synth)
}

fn load_synthetic(run: &Run) -> Result<TraceSet> {
    let path = run.cfg.eval.synthetic.clone().unwrap_or_else(|| run.path(SYNTHETIC_FILE));
    load_traces(path, run.cfg.data.trace_len)
}

/// Evaluates synthetic traces against the GAN-side real traces.
pub fn evaluate(run: &Run) -> Result<EvaluationReport> {
    let (_, real) = run.split()?;
    let synth = load_synthetic(run)?;
    evaluate_sets(run, &real, &synth)
}

pub fn evaluate_sets(run: &Run, real: &TraceSet, synth: &TraceSet) -> Result<EvaluationReport> {
    let e = &run.cfg.eval;
    let edges = linear_edges(e.variance_range.0, e.variance_range.1, e.variance_bins);
    for (name, s) in [("real", real), ("synthetic", synth)] {
        fs::write(run.path(&format!("variance_{name}.csv")), variance_distribution(s, &edges)?.to_csv())?;
        let ids: Vec<String> = s.traces().iter().map(|t| t.id.clone()).collect();
        fs::write(run.path(&format!("pca_{name}.csv")), pca2(s)?.to_csv(&ids))?;
    }
    let tstr_report = match &e.tstr {
        Some(tc) => Some(tstr(synth, real, tc)?),
        None => None,
    };
    if let Some(t) = &tstr_report {
        fs::write(run.path("clarke.csv"), t.clarke.to_csv())?;
    }
    let report = EvaluationReport {
        config_hash: Some(run.hash.clone()),
        real: glycemic_metrics(real, None)?,
        synthetic: glycemic_metrics(synth, Some(real))?,
        breadth: motif_coverage(real, synth, run.cfg.motifs.tau, run.cfg.motifs.sigma)?,
        tstr: tstr_report,
    };
    run.write_json("evaluation.json", &report)?;
    Ok(report)
}

pub fn out_dir(explicit: Option<&Path>, config: &Path) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => config.parent().unwrap_or(Path::new(".")).join("forge-out"),
    }
}

/// Process exit code for an error.
pub fn exit_code(e: &ForgeError) -> u8 {
    if e.is_numeric() {
        3
    } else if e.is_io() {
        4
    } else {
        2
    }
}
