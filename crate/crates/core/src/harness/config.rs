use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::coalition::QualityParams;
use crate::consensus::{ReputationParams, SortitionParams};
use crate::flsim::DpParams;
use crate::ledger::Digest;
use crate::provenance::{Attack, VerifyThresholds, WatermarkConfig};
use crate::social_graph::TrustParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackGrid {
    pub kinds: Vec<Attack>,
    pub ratios: Vec<f64>,
    pub trials: usize,
    /// Watermark owners per trial.
    pub n_clients: usize,
}

impl Default for AttackGrid {
    fn default() -> Self {
        AttackGrid {
            kinds: vec![Attack::Stealing, Attack::Counterfeiting],
            ratios: (1..=9).map(|k| k as f64 / 10.0).collect(),
            trials: 200,
            n_clients: 100,
        }
    }
}

/// Everything an experiment needs. Only `master_seed` is mandatory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    #[serde(default = "defaults::n_avatars")]
    pub n_avatars: usize,
    #[serde(default = "defaults::density")]
    pub density: f64,
    #[serde(default)]
    pub trust: TrustParams,
    #[serde(default)]
    pub quality: QualityParams,
    #[serde(default)]
    pub dp: DpParams,
    #[serde(default)]
    pub sortition: SortitionParams,
    #[serde(default)]
    pub reputation: ReputationParams,
    #[serde(default)]
    pub thresholds: VerifyThresholds,
    #[serde(default)]
    pub watermark: WatermarkConfig,
    /// FL rounds in the pipeline, heights in the consensus experiment.
    #[serde(default = "defaults::rounds")]
    pub rounds: u64,
    #[serde(default = "defaults::max_iter")]
    pub max_iter: usize,
    #[serde(default = "defaults::n_full")]
    pub n_full: usize,
    #[serde(default)]
    pub byz_fraction: f64,
    #[serde(default = "defaults::n_edges")]
    pub n_edges: usize,
    #[serde(default)]
    pub attack: AttackGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

mod defaults {
    pub fn n_avatars() -> usize {
        100
    }
    pub fn density() -> f64 {
        1.0
    }
    pub fn rounds() -> u64 {
        5
    }
    pub fn max_iter() -> usize {
        100
    }
    pub fn n_full() -> usize {
        20
    }
    pub fn n_edges() -> usize {
        4
    }
}

impl ExperimentConfig {
    pub fn with_seed(master_seed: u64) -> Self {
        serde_json::from_value(serde_json::json!({ "master_seed": master_seed })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |what: &str| Err(HarnessError::Config(what.to_string()));
        if self.n_avatars == 0 {
            return bad("n_avatars must be positive");
        }
        if !(0.0..=1.0).contains(&self.density) {
            return bad("density must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.byz_fraction) {
            return bad("byz_fraction must lie in [0, 1]");
        }
        if self.n_full == 0 || self.n_edges == 0 || self.max_iter == 0 {
            return bad("n_full, n_edges and max_iter must be positive");
        }
        if self.attack.trials == 0 || self.attack.n_clients == 0 {
            return bad("attack trials and n_clients must be positive");
        }
        if self.attack.ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("attack ratios must lie in [0, 1]");
        }
        self.trust.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.quality.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.sortition.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.reputation.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.thresholds.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.watermark.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(self.dp.sigma >= 0.0 && self.dp.sigma.is_finite()) {
            return bad("dp.sigma must be finite and non-negative");
        }
        Ok(())
    }

    /// Hash of the compact JSON form, without the output directory.
    pub fn digest(&self) -> Digest {
        let mut c = self.clone();
        c.output_dir = None;
        Digest::of_parts(&[b"socialfl/config", &serde_json::to_vec(&c).expect("config serializes")])
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, HarnessError> {
    let text = std::fs::read_to_string(path)?;
    ExperimentConfig::from_json(&text)
}
