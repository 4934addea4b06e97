//! Writes the seeded toy corpus as an ingestion-format CSV.
//!
//! Usage: `cargo run -p forge-core --example gen_toy_corpus -- <out.csv> [seed]`

use forge_core::toy::{toy_corpus, ToyCorpusConfig};

fn main() -> forge_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().unwrap_or_else(|| "toy_corpus.csv".into());
    let mut cfg = ToyCorpusConfig::default();
    if let Some(seed) = args.next() {
        cfg.seed = seed.parse().map_err(|_| forge_core::ForgeError::InvalidArgument("seed must be an integer".into()))?;
    }
    toy_corpus(&cfg)?.save_csv(&out)?;
    eprintln!("{} traces of length {} written to {out}", cfg.n_traces, cfg.trace_len);
    Ok(())
}
