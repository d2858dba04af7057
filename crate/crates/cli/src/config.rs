//! Run configuration: one JSON document aggregating every stage's
//! parameters, hashed into `run.lock` to guard against mixing artifacts
//! from different configs.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use patchdisc::discovery::{DiscoveryConfig, RankConfig};
use patchdisc::doublets::DoubletConfig;
use patchdisc::features::HogConfig;
use patchdisc::run::EvalConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    /// Master seed; every random draw in the pipeline derives from it.
    pub seed: u64,
    /// Worker threads; 0 uses all available cores. The outputs are
    /// identical for any thread count.
    pub threads: usize,
    pub features: HogConfig,
    pub discovery: DiscoveryConfig,
    pub rank: RankConfig,
    pub doublets: DoubletConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            manifest: PathBuf::from("manifest.json"),
            output_dir: PathBuf::from("run"),
            seed: 0,
            threads: 0,
            features: HogConfig::default(),
            discovery: DiscoveryConfig::default(),
            rank: RankConfig::default(),
            doublets: DoubletConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let bytes = std::fs::read(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        let cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| anyhow::anyhow!("config schema violation in {}: {e}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.features
            .validate()
            .and_then(|_| self.discovery.validate())
            .and_then(|_| self.rank.validate(self.discovery.members_per_cluster))
            .map_err(|e| anyhow::anyhow!("config schema violation: {e}"))
    }

    /// Stable hash of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(&json);
        format!("{:x}", hasher.finalize())
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunLock {
    pub config_hash: String,
}

/// Write the lock on first use; later stages must present the same config.
pub fn check_or_write_lock(lock_path: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let hash = cfg.hash();
    if lock_path.exists() {
        let existing: RunLock = serde_json::from_slice(
            &std::fs::read(lock_path)
                .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", lock_path.display()))?,
        )?;
        if existing.config_hash != hash {
            anyhow::bail!(
                "run.lock mismatch: {} holds artifacts from a different config (expected {}, got {hash})",
                lock_path.parent().unwrap_or(Path::new(".")).display(),
                existing.config_hash
            );
        }
        return Ok(());
    }
    if let Some(parent) = lock_path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(lock_path, serde_json::to_string_pretty(&RunLock { config_hash: hash })?)?;
    Ok(())
}
