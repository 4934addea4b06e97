//! Pilot runs of GAN smoke training on the toy corpus. Prints per-epoch
//! losses and timing, then breadth of the generated traces at a few
//! tolerances.
//!
//! Usage: `cargo run --release -p forge-core --example pilot_gan -- [key=value ...]`
//! with keys `epochs`, `hidden`, `embed`, `lr`, `adam`, `motif`, `n`, `seed`,
//! `probes`, `inner`.

use std::collections::HashMap;
use std::time::Instant;

use forge_core::causality::{partition_causality, CausalityTrainConfig};
use forge_core::data::TraceSet;
use forge_core::eval::motif_coverage;
use forge_core::gan::{generate, train_epoch, GanConfig, GanState, HiddenSizes, LearningRates, MotifGuidance};
use forge_core::motif::build_motif_set;
use forge_core::nn::OptimizerKind;
use forge_core::toy::{toy_corpus, ToyCorpusConfig};

fn main() -> forge_core::Result<()> {
    let args: HashMap<String, String> = std::env::args()
        .skip(1)
        .filter_map(|a| a.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect();
    let get = |k: &str, d: &str| args.get(k).cloned().unwrap_or_else(|| d.to_string());
    let epochs: usize = get("epochs", "200").parse().unwrap();
    let hidden: usize = get("hidden", "16").parse().unwrap();
    let embed: usize = get("embed", "8").parse().unwrap();
    let lr: f64 = get("lr", "0.01").parse().unwrap();
    let adam = get("adam", "1") == "1";
    let motif = get("motif", "1") == "1";
    let n: usize = get("n", "400").parse().unwrap();
    let seed: u64 = get("seed", "0").parse().unwrap();
    let probes: usize = get("probes", "2").parse().unwrap();
    let inner: usize = get("inner", "5").parse().unwrap();
    let every: usize = get("every", "10").parse().unwrap();

    let toy = ToyCorpusConfig { n_traces: n, ..Default::default() };
    let corpus = toy_corpus(&toy)?;
    let ms = build_motif_set(&corpus, toy.tau, 2.0)?;
    let ccfg = CausalityTrainConfig { inner_steps: inner, ..Default::default() };
    let guidance = if motif {
        let part = TraceSet::new(corpus.traces()[..40.min(n)].to_vec())?;
        let m = partition_causality(&part, &ms, &ccfg)?;
        Some(MotifGuidance::new(m, ms.clone(), ccfg.clone())?)
    } else {
        None
    };
    let cfg = GanConfig {
        embed_dim: embed,
        hidden: HiddenSizes { embedder: hidden, recovery: hidden, generator: hidden, discriminator: hidden },
        epochs,
        learning_rates: LearningRates { autoencoder: lr, generator: lr, discriminator: lr },
        optimizer: if adam { OptimizerKind::Adam } else { OptimizerKind::Sgd },
        motif_loss: motif,
        spsa: forge_core::gan::spsa::SpsaConfig { probes, ..Default::default() },
        refresh_every: every,
        seed,
        ..Default::default()
    };
    let mut state = GanState::new(&cfg, toy.trace_len)?;
    let start = Instant::now();
    let mut first = None;
    for e in 0..epochs {
        let t0 = Instant::now();
        let r = train_epoch(&mut state, &corpus, guidance.as_ref(), &cfg)?;
        first.get_or_insert(r.l_r);
        if e < 3 || e % 10 == 9 {
            println!("{} ({:.2?})", r.csv_row(), t0.elapsed());
        }
        if e == epochs - 1 {
            println!("L_R drop {:.1}%", 100.0 * (1.0 - r.l_r / first.unwrap()));
        }
    }
    println!("training {:.2?}", start.elapsed());
    let synth = generate(&state, n, seed + 1)?;
    let (lo, hi) = synth
        .traces()
        .iter()
        .flat_map(|t| t.values().iter().copied())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    println!("synthetic range [{lo:.1}, {hi:.1}]");
    for sigma in [2.0, 5.0, 10.0, 15.0, 20.0, 30.0] {
        let b = motif_coverage(&corpus, &synth, toy.tau, sigma)?;
        println!("sigma {sigma:5.1}: pct_TM {:.3} coverage {:.3} mse {:.2e}", b.pct_tm, b.coverage, b.mse);
    }
    println!("sample: {:?}", synth.traces()[0].values().iter().map(|v| v.round()).collect::<Vec<_>>());
    Ok(())
}
