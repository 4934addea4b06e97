//! Oracles shared by the integration test targets.
#![allow(dead_code)]

pub mod gradients;

use forge_core::causality::CausalityMatrix;
use forge_core::eval::Zone;
use ndarray::Array2;

/// Single-shot Gaussian mechanism bound sqrt(2 ln(1.25/delta)) / z at z = 4,
/// delta = 5e-4, evaluated separately in Python.
pub const GAUSSIAN_BOUND_Z4: f64 = 0.9889417330444885;

/// Majority bin by explicit counting, ties to the lower bin.
pub fn brute_force_majority(teachers: &[CausalityMatrix], bins: usize) -> Array2<f64> {
    let m = teachers[0].m();
    Array2::from_shape_fn((m, m), |(i, j)| {
        let mut counts = vec![0usize; bins];
        for t in teachers {
            let v = t.entries()[[i, j]];
            let mut k = 0;
            while k + 1 < bins && v >= (k + 1) as f64 / bins as f64 {
                k += 1;
            }
            counts[k] += 1;
        }
        let mut best = 0;
        for k in 1..bins {
            if counts[k] > counts[best] {
                best = k;
            }
        }
        (best as f64 + 0.5) / bins as f64
    })
}

/// `(reference, prediction, zone)` rows of the canonical Clarke golden file.
pub fn clarke_golden() -> Vec<(f64, f64, Zone)> {
    include_str!("../data/clarke_golden.csv")
        .lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let zone = match f[2] {
                "A" => Zone::A,
                "B" => Zone::B,
                "C" => Zone::C,
                "D" => Zone::D,
                "E" => Zone::E,
                z => panic!("unknown zone {z}"),
            };
            (f[0].parse().unwrap(), f[1].parse().unwrap(), zone)
        })
        .collect()
}
