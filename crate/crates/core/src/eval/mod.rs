//! Fidelity, breadth and utility evaluation of synthetic trace sets.

pub mod breadth;
pub mod clarke;
pub mod distribution;
pub mod glycemic;
pub mod tstr;

use serde::{Deserialize, Serialize};

pub use breadth::{motif_coverage, BreadthReport};
pub use clarke::{clarke_summary, clarke_zone, ClarkeSummary, Zone};
pub use distribution::{linear_edges, pca2, variance_distribution, Histogram, Pca2};
pub use glycemic::{glycemic_metrics, trace_metrics, welch_test, GlycemicReport, TraceMetrics};
pub use tstr::{tstr, TstrConfig, TstrReport};

/// Machine-readable bundle written by the evaluate command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub real: GlycemicReport,
    pub synthetic: GlycemicReport,
    pub breadth: BreadthReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tstr: Option<TstrReport>,
}
