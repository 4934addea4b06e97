//! Pilot sweep for the causality estimator on the toy corpus: prints the
//! planted row and timing for a few partition sizes and seeds.

use std::time::Instant;

use forge_core::causality::{partition_causality, CausalityTrainConfig};
use forge_core::data::TraceSet;
use forge_core::motif::build_motif_set;
use forge_core::toy::{template_motif, toy_corpus, ToyCorpusConfig};

fn main() -> forge_core::Result<()> {
    let toy = ToyCorpusConfig::default();
    let corpus = toy_corpus(&toy)?;
    let ms = build_motif_set(&corpus, toy.tau, 2.0)?;
    let a = template_motif(&ms, toy.cause).expect("cause motif");
    let b = template_motif(&ms, toy.effect).expect("effect motif");
    println!("m = {}, planted {a} => {b}", ms.len());
    for size in [40usize, 80, 200] {
        for seed in 0..3u64 {
            let part = TraceSet::new(corpus.traces()[..size].to_vec())?;
            let cfg = CausalityTrainConfig { seed, ..Default::default() };
            let start = Instant::now();
            let m = partition_causality(&part, &ms, &cfg)?;
            let row: Vec<String> = m.entries().row(b).iter().map(|v| format!("{v:.3}")).collect();
            println!(
                "size {size:3} seed {seed}: argmax {} row [{}] ({:.2?})",
                m.row_argmax(b),
                row.join(", "),
                start.elapsed()
            );
        }
    }
    Ok(())
}
