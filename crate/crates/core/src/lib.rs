//! Differentially-private synthetic glucose traces.
//!
//! The pipeline: build a motif vocabulary from real traces ([`motif`]),
//! estimate which motifs drive which ([`causality`]) on private partitions
//! aggregated with noisy voting ([`privacy`]), train a four-network recurrent
//! GAN that is additionally steered to reproduce the causality structure
//! ([`gan`]), then score the synthetic output for fidelity, breadth and
//! downstream utility ([`eval`]).

pub mod causality;
pub mod data;
pub mod error;
pub mod eval;
pub mod gan;
pub mod motif;
pub mod nn;
pub mod privacy;
pub mod toy;

pub use error::{ForgeError, Result};
