//! End-to-end runs of the `forge` binary on a small toy corpus.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use forge_core::causality::{partition_causality, CausalityMatrix, CausalityTrainConfig};
use forge_core::data::{load_traces, split_disjoint};
use forge_core::motif::MotifSet;
use forge_core::toy::{toy_corpus, ToyCorpusConfig};
use serde_json::{json, Value};
use tempfile::TempDir;

const STAGES: [&str; 5] = ["motifs", "train-causality", "train-gan", "generate", "evaluate"];

/// A temporary directory holding a toy corpus and a config that points at it.
struct Project {
    dir: TempDir,
}

impl Project {
    fn new(config: Value) -> Self {
        let dir = tempfile::tempdir().unwrap();
        toy_corpus(&ToyCorpusConfig { n_traces: 40, ..Default::default() })
            .unwrap()
            .save_csv(dir.path().join("traces.csv"))
            .unwrap();
        fs::write(dir.path().join("config.json"), serde_json::to_string_pretty(&config).unwrap()).unwrap();
        Self { dir }
    }

    fn config(&self) -> PathBuf {
        self.dir.path().join("config.json")
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("forge-out")
    }

    fn forge(&self, stage: &str, extra: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_forge"))
            .arg(stage)
            .arg("--config")
            .arg(self.config())
            .args(extra)
            .output()
            .unwrap()
    }

    fn run_ok(&self, stage: &str) {
        let out = self.forge(stage, &[]);
        assert!(out.status.success(), "{stage} failed: {}", String::from_utf8_lossy(&out.stderr));
    }

    fn artifact(&self, name: &str) -> Vec<u8> {
        fs::read(self.out().join(name)).unwrap()
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_slice(&self.artifact(name)).unwrap()
    }
}

fn small_config() -> Value {
    json!({
        "seed": 3,
        "data": { "path": "traces.csv", "trace_len": 48 },
        "motifs": { "tau": 8, "sigma": 2.0 },
        "causality": { "hidden": 4, "epochs": 30, "inner_steps": 2, "lambda": 0.1 },
        "privacy": { "budget": { "epsilon": 1.0, "delta": 1e-5 }, "pate": { "n_partitions": 2, "bins": 10 } },
        "gan": {
            "embed_dim": 3,
            "hidden": { "embedder": 4, "recovery": 4, "generator": 4, "discriminator": 4 },
            "batch_size": 8,
            "epochs": 2,
            "spsa": { "probes": 1 },
            "privacy": { "epsilon": 5.0, "delta": 1e-5 }
        },
        "generate": { "count": 20 },
        "eval": { "tstr": { "hidden": 4, "epochs": 2, "repeats": 1 } }
    })
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn pipeline_runs_end_to_end_and_reruns_byte_identically() {
    let a = Project::new(small_config());
    for stage in STAGES {
        a.run_ok(stage);
    }
    let files = sorted_files(&a.out());
    fs::remove_dir_all(a.out()).unwrap();
    for stage in STAGES {
        a.run_ok(stage);
    }
    let names: Vec<&str> = files.iter().map(|(n, _)| n.as_str()).collect();
    for expected in [
        "causality.csv",
        "causality_budget.json",
        "checkpoint.json",
        "clarke.csv",
        "evaluation.json",
        "gan_budget.json",
        "losses.csv",
        "motifs.json",
        "pca_real.csv",
        "pca_synthetic.csv",
        "synthetic.csv",
        "variance_real.csv",
        "variance_synthetic.csv",
    ] {
        assert!(names.contains(&expected), "missing {expected} in {names:?}");
    }
    assert_eq!(files, sorted_files(&a.out()));

    let hash = a.json("evaluation.json")["config_hash"].as_str().unwrap().to_string();
    assert_eq!(hash.len(), 64);
    assert_eq!(a.json("checkpoint.json")["config_hash"], hash.as_str());
    assert_eq!(a.json("causality.json")["config_hash"], hash.as_str());

    let synth = load_traces(a.out().join("synthetic.csv"), 48).unwrap();
    assert_eq!(synth.len(), 20);
    let losses = String::from_utf8(a.artifact("losses.csv")).unwrap();
    assert_eq!(losses.lines().next().unwrap(), "epoch,L_R,L_S,L_M,L_D,L_Ar,L_Af");
    assert_eq!(losses.lines().count(), 3);
    let budget = a.json("gan_budget.json");
    assert!(budget["epsilon"].as_f64().unwrap() <= 5.0 + 1e-9);
    let report = a.json("evaluation.json");
    for key in ["pct_TM", "pct_FM", "coverage", "mse"] {
        assert!(report["breadth"][key].is_number(), "{key}");
    }
}

#[test]
fn seed_flag_changes_artifacts() {
    let p = Project::new(small_config());
    p.run_ok("motifs");
    p.run_ok("train-causality");
    let first = p.artifact("causality.csv");
    let out = p.forge("train-causality", &["--seed", "99"]);
    assert!(out.status.success());
    assert_ne!(first, p.artifact("causality.csv"));
}

#[test]
fn max_motifs_keeps_exactly_that_many() {
    let mut cfg = small_config();
    cfg["motifs"]["max_motifs"] = json!(4);
    let p = Project::new(cfg);
    p.run_ok("motifs");
    assert_eq!(MotifSet::load(p.out(), "motifs").unwrap().len(), 4);
}

#[test]
fn single_partition_without_privacy_is_the_partition_matrix() {
    let mut cfg = small_config();
    cfg["privacy"] = json!({ "budget": { "epsilon": "inf" }, "pate": { "n_partitions": 1 } });
    let p = Project::new(cfg);
    p.run_ok("motifs");
    p.run_ok("train-causality");
    let got = CausalityMatrix::load_csv(p.out().join("causality.csv")).unwrap();

    let all = load_traces(p.dir.path().join("traces.csv"), 48).unwrap();
    let (causal, _) = split_disjoint(&all, 0.5, 3).unwrap();
    let ms = MotifSet::load(p.out(), "motifs").unwrap();
    let ccfg =
        CausalityTrainConfig { hidden: 4, epochs: 30, inner_steps: 2, lambda: 0.1, seed: 3, ..Default::default() };
    assert_eq!(got, partition_causality(&causal, &ms, &ccfg).unwrap());
}

#[test]
fn evaluating_real_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let all = toy_corpus(&ToyCorpusConfig { n_traces: 40, ..Default::default() }).unwrap();
    let (_, real) = split_disjoint(&all, 0.5, 3).unwrap();
    real.save_csv(dir.path().join("real.csv")).unwrap();
    let mut cfg = small_config();
    cfg["eval"]["synthetic"] = json!(dir.path().join("real.csv"));
    let p = Project::new(cfg);
    p.run_ok("evaluate");
    let r = p.json("evaluation.json");
    assert_eq!(r["breadth"]["pct_TM"], 1.0);
    assert_eq!(r["breadth"]["coverage"], 1.0);
    for (k, v) in r["synthetic"]["p_values"].as_object().unwrap() {
        assert!((v.as_f64().unwrap() - 1.0).abs() < 1e-12, "{k}: {v}");
    }
}

#[test]
fn exit_codes_follow_error_kind() {
    let p = Project::new(small_config());
    let code = |out: Output| out.status.code().unwrap();

    // missing earlier artifact is an I/O error
    assert_eq!(code(p.forge("train-causality", &[])), 4);

    let missing = Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(["motifs", "--config", "/nonexistent/forge.json"])
        .output()
        .unwrap();
    assert_eq!(code(missing), 4);

    let mut unknown = small_config();
    unknown["gan"]["bogus"] = json!(1);
    assert_eq!(code(Project::new(unknown).forge("motifs", &[])), 2);

    let mut invalid = small_config();
    invalid["motifs"]["tau"] = json!(0);
    assert_eq!(code(Project::new(invalid).forge("motifs", &[])), 2);

    let mut divergent = small_config();
    divergent["eval"]["synthetic"] = json!("traces.csv");
    divergent["eval"]["tstr"]["learning_rate"] = json!(1e300);
    assert_eq!(code(Project::new(divergent).forge("evaluate", &[])), 3);

    let bad_data = Project::new(small_config());
    fs::write(bad_data.dir.path().join("traces.csv"), "id,v0\na,not-a-number\n").unwrap();
    assert_eq!(code(bad_data.forge("motifs", &[])), 4);
}

#[test]
fn output_directory_flag_is_respected() {
    let p = Project::new(small_config());
    let elsewhere = tempfile::tempdir().unwrap();
    let out = p.forge("motifs", &["--out", elsewhere.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert!(elsewhere.path().join("motifs.json").exists());
    assert!(!p.out().exists());
}

#[test]
fn shipped_toy_config_is_valid() {
    let p = Project::new(json!({}));
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/toy.json")).unwrap();
    fs::write(p.config(), text).unwrap();
    fs::rename(p.dir.path().join("traces.csv"), p.dir.path().join("toy_corpus.csv")).unwrap();
    p.run_ok("motifs");
    assert_eq!(MotifSet::load(p.out(), "motifs").unwrap().len(), 6);
}
