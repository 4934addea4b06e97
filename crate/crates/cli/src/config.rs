//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use forge_core::causality::CausalityTrainConfig;
use forge_core::eval::TstrConfig;
use forge_core::gan::GanConfig;
use forge_core::privacy::{PateConfig, PrivacyBudget};
use forge_core::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Trace CSV, relative to the config file.
    pub path: PathBuf,
    pub trace_len: usize,
    /// Share of traces reserved for causality estimation; the rest trains
    /// the GAN.
    pub causality_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { path: PathBuf::from("traces.csv"), trace_len: 288, causality_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotifConfig {
    pub tau: usize,
    pub sigma: f64,
    pub max_motifs: Option<usize>,
}

impl Default for MotifConfig {
    fn default() -> Self {
        Self { tau: 48, sigma: 2.0, max_motifs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    /// Budget spent by PATE aggregation of the causality matrices.
    pub budget: PrivacyBudget,
    pub pate: PateConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub count: usize,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { count: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Synthetic CSV to evaluate; defaults to the generate output.
    pub synthetic: Option<PathBuf>,
    /// Variance histogram range and bin count, (mg/dL)^2.
    pub variance_range: (f64, f64),
    pub variance_bins: usize,
    pub tstr: Option<TstrConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { synthetic: None, variance_range: (0.0, 5000.0), variance_bins: 25, tstr: Some(TstrConfig::default()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub motifs: MotifConfig,
    pub causality: CausalityTrainConfig,
    pub privacy: PrivacyConfig,
    pub gan: GanConfig,
    pub generate: GenerateConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            data: DataConfig::default(),
            motifs: MotifConfig::default(),
            causality: CausalityTrainConfig::default(),
            privacy: PrivacyConfig::default(),
            gan: GanConfig::default(),
            generate: GenerateConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads, applies the seed override, resolves paths against the
    /// config's directory and validates.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| ForgeError::Config(format!("{}: {e}", path.display())))?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.path = base.join(&cfg.data.path);
        if let Some(p) = &cfg.eval.synthetic {
            cfg.eval.synthetic = Some(base.join(p));
        }
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    /// The global seed drives every stage.
    pub fn propagate_seed(&mut self) {
        self.causality.seed = self.seed;
        self.gan.seed = self.seed;
        if let Some(t) = &mut self.eval.tstr {
            t.seed = self.seed;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ForgeError::Config(m));
        let t = self.data.trace_len;
        if t == 0 {
            return bad("data.trace_len must be positive".into());
        }
        if !(self.data.causality_fraction > 0.0 && self.data.causality_fraction < 1.0) {
            return bad(format!("data.causality_fraction {} must be in (0, 1)", self.data.causality_fraction));
        }
        if self.motifs.tau == 0 || self.motifs.tau > t {
            return bad(format!("motifs.tau {} must be in 1..={t}", self.motifs.tau));
        }
        if !(self.motifs.sigma >= 0.0 && self.motifs.sigma.is_finite()) {
            return bad(format!("motifs.sigma {} must be finite and nonnegative", self.motifs.sigma));
        }
        if self.motifs.max_motifs == Some(0) {
            return bad("motifs.max_motifs must be positive".into());
        }
        self.causality.validate().map_err(as_config)?;
        self.privacy.budget.validate()?;
        self.privacy.pate.validate()?;
        self.gan.validate(t)?;
        if self.generate.count == 0 {
            return bad("generate.count must be positive".into());
        }
        let (lo, hi) = self.eval.variance_range;
        if !(hi > lo) || self.eval.variance_bins == 0 {
            return bad("eval.variance_range must be increasing with at least one bin".into());
        }
        if let Some(tc) = &self.eval.tstr {
            tc.validate(t).map_err(as_config)?;
        }
        Ok(())
    }

    /// Hex SHA-256 of the effective configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&bytes))
    }
}

fn as_config(e: ForgeError) -> ForgeError {
    match e {
        ForgeError::InvalidArgument(m) => ForgeError::Config(m),
        other => other,
    }
}
