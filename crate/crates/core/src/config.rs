//! Engine configuration, loaded from TOML.
//!
//! Every section is optional; missing values take the defaults below.
//!
//! ```toml
//! seed = 2024
//! k = 5
//! patch_size = 32
//! model_size_bytes = 2100000
//!
//! [scheduler]
//! lambda = 10.0
//! beta = 0.8
//! alpha = 0.65
//!
//! [embedding]
//! mode = "builtin"          # or "import" with path = "features.bin"
//!
//! [oracle]
//! q_generic = 27.0
//! gain = 2.5
//! decay = 12.5
//!
//! [delivery]
//! b_hr_kbps = 8000.0
//! b_lr_kbps = 500.0
//! cache_capacity = 3
//! top_k = 3
//! prefetch_period_seconds = 30.0
//! no_prefetch_period_seconds = 10.0
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::clustering::{DEFAULT_MAX_ITERS, DEFAULT_RESTARTS};
use crate::delivery::BandwidthBudget;
use crate::encoder::{BuiltinEncoder, ImportedEncoder, PatchEncoder};
use crate::error::{Error, Result};
use crate::scheduler::SchedulerParams;
use crate::sim::QualityOracle;

pub const TOOL_NAME: &str = "srzoo";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingMode {
    #[default]
    Builtin,
    Import { path: PathBuf },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeliveryConfig {
    pub b_hr_kbps: f64,
    pub b_lr_kbps: f64,
    pub cache_capacity: usize,
    pub top_k: usize,
    pub prefetch_period_seconds: f64,
    pub no_prefetch_period_seconds: f64,
}

impl Default for DeliveryConfig {
    fn default() -> Self {
        DeliveryConfig {
            b_hr_kbps: 8000.0,
            b_lr_kbps: 500.0,
            cache_capacity: 3,
            top_k: 3,
            prefetch_period_seconds: 30.0,
            no_prefetch_period_seconds: 10.0,
        }
    }
}

impl DeliveryConfig {
    pub fn budget(&self, interval_seconds: f64) -> BandwidthBudget {
        BandwidthBudget {
            b_hr_kbps: self.b_hr_kbps,
            b_lr_kbps: self.b_lr_kbps,
            interval_seconds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub seed: u64,
    pub k: usize,
    pub patch_size: usize,
    pub model_size_bytes: u64,
    pub max_iters: usize,
    pub kmeans_restarts: usize,
    pub scheduler: SchedulerParams,
    pub embedding: EmbeddingMode,
    pub oracle: QualityOracle,
    pub delivery: DeliveryConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 2024,
            k: 5,
            patch_size: 32,
            model_size_bytes: 2_100_000,
            max_iters: DEFAULT_MAX_ITERS,
            kmeans_restarts: DEFAULT_RESTARTS,
            scheduler: SchedulerParams::default(),
            embedding: EmbeddingMode::Builtin,
            oracle: QualityOracle::default(),
            delivery: DeliveryConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Config::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.scheduler.validate()?;
        if self.k == 0 {
            return Err(Error::config("k must be at least 1"));
        }
        if self.patch_size < 8 {
            return Err(Error::config("patch_size must be at least 8"));
        }
        if self.max_iters == 0 || self.kmeans_restarts == 0 {
            return Err(Error::config("max_iters and kmeans_restarts must be positive"));
        }
        self.oracle.validate()?;
        let d = &self.delivery;
        d.budget(d.prefetch_period_seconds).validate()?;
        d.budget(d.no_prefetch_period_seconds).validate()?;
        if d.cache_capacity == 0 {
            return Err(Error::config("cache_capacity must be positive"));
        }
        Ok(())
    }

    pub fn encoder(&self) -> Result<Box<dyn PatchEncoder>> {
        match &self.embedding {
            EmbeddingMode::Builtin => Ok(Box::new(BuiltinEncoder)),
            EmbeddingMode::Import { path } => Ok(Box::new(ImportedEncoder::from_file(path)?)),
        }
    }

    /// Short stable digest of the configuration.
    pub fn hash(&self) -> String {
        digest(&[serde_json::to_string(self).expect("config serializes")])
    }
}

/// First 16 hex digits of the SHA-256 of the concatenated parts.
pub fn digest(parts: &[String]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    h.finalize()
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Provenance stamped on every text output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputHeader {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
}

impl OutputHeader {
    pub fn new(seed: u64, config_hash: String) -> Self {
        OutputHeader {
            tool: TOOL_NAME.to_string(),
            version: TOOL_VERSION.to_string(),
            seed,
            config_hash,
        }
    }

    /// `# srzoo <version> seed=<seed> config=<hash>` for CSV and text outputs.
    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} seed={} config={}",
            self.tool, self.version, self.seed, self.config_hash
        )
    }

    /// Header record for JSON Lines outputs.
    pub fn json_line(&self) -> String {
        serde_json::json!({ "header": self }).to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let c = Config::default();
        assert_eq!(c.scheduler, SchedulerParams { lambda: 10.0, beta: 0.8, alpha: 0.65 });
        assert_eq!(c.k, 5);
        assert_eq!(c.delivery.cache_capacity, 3);
        assert_eq!(c.delivery.top_k, 3);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_toml_fills_defaults() {
        let c = Config::from_toml_str("k = 3\n[scheduler]\nbeta = 0.7\n").unwrap();
        assert_eq!(c.k, 3);
        assert_eq!(c.scheduler.beta, 0.7);
        assert_eq!(c.scheduler.alpha, 0.65);
    }

    #[test]
    fn import_mode_parses() {
        let c = Config::from_toml_str("[embedding]\nmode = \"import\"\npath = \"x.bin\"\n").unwrap();
        assert_eq!(c.embedding, EmbeddingMode::Import { path: "x.bin".into() });
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(Config::from_toml_str("k = 0").is_err());
        assert!(Config::from_toml_str("[scheduler]\nalpha = 1.5").is_err());
        assert!(Config::from_toml_str("[delivery]\nb_hr_kbps = 100.0").is_err());
        assert!(Config::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = Config::default();
        let mut b = Config::default();
        assert_eq!(a.hash(), b.hash());
        b.k = 4;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
