//! Pilot sweep for planted-rule recovery on indicator data: column-norm
//! ratio of the planted input and cross-seed stability of the matrix.

use forge_core::causality::{partition_causality_state, CausalityTrainConfig};
use forge_core::data::{GlucoseTrace, TraceSet};
use forge_core::motif::MotifSet;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> forge_core::Result<()> {
    let m = 4;
    let ms = MotifSet::from_values((0..m).map(|k| vec![60.0 + 40.0 * k as f64; 2]).collect(), 2, 2.0)?;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let traces = (0..200)
        .map(|i| {
            let mut ids: Vec<usize> = Vec::new();
            for t in 0..6 {
                let id = if t > 0 && ids[t - 1] == 2 { 0 } else { rng.random_range(0..m) };
                ids.push(id);
            }
            let values = ids.iter().flat_map(|&k| ms.motifs()[k].values.clone()).collect();
            GlucoseTrace::new(format!("p{i}"), values).unwrap()
        })
        .collect();
    let s = TraceSet::new(traces)?;
    for lambda in [0.05, 0.1, 0.2, 0.3] {
        for epochs in [300, 600] {
            let mut mats = Vec::new();
            for seed in 0..2 {
                let cfg = CausalityTrainConfig { lambda, epochs, seed, ..Default::default() };
                let st = partition_causality_state(&s, &ms, &cfg)?;
                let norms = st.networks[0].column_norms();
                let mut sorted = norms.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let median = 0.5 * (sorted[1] + sorted[2]);
                println!(
                    "lambda {lambda} epochs {epochs} seed {seed}: ratio {:.2} norms {norms:.3?}",
                    norms[2] / median
                );
                mats.push(st.matrix);
            }
            let gap = (mats[0].entries() - mats[1].entries()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
            println!("   cross-seed gap {gap:.3}");
        }
    }
    Ok(())
}
