//! Experiment configuration file and the run manifest written next to every output.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::Scenario;
use crate::error::{Error, Result};
use crate::hrl::HrlConfig;
use crate::metrics::{EnergyProfile, TrafficProfile};
use crate::netmodel::TopologyFile;
use crate::schedule::Slotframe;
use crate::slotsim::SimConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub size: usize,
    pub channels: usize,
    pub slot_ms: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            size: 17,
            channels: 2,
            slot_ms: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Topology JSON; the bundled ten-node layout when absent.
    pub topology: Option<PathBuf>,
    pub slotframe: FrameConfig,
    pub energy: EnergyProfile,
    pub traffic: TrafficProfile,
    pub hrl: HrlConfig,
    pub sim: SimConfig,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let (Some(t), Some(dir)) = (&cfg.topology, path.parent()) {
            if t.is_relative() {
                cfg.topology = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        Slotframe::new(self.slotframe.size, self.slotframe.channels, self.slotframe.slot_ms)?;
        self.energy.validate()?;
        self.traffic.validate()?;
        self.hrl.low.validate()?;
        self.hrl.high.validate()?;
        self.sim.validate()?;
        if self.hrl.env.max_steps == 0 {
            return Err(Error::Config("episode step budget must be > 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..16])
    }

    pub fn topology_file(&self) -> Result<TopologyFile> {
        match &self.topology {
            Some(p) => TopologyFile::load(p),
            None => Ok(TopologyFile::ten_node()),
        }
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let graph = self.topology_file()?.build()?;
        let f = self.slotframe;
        Scenario::new(graph, Slotframe::new(f.size, f.channels, f.slot_ms)?, self.energy, self.traffic)
    }

    /// Overrides every seed in the configuration.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.hrl.env.seed = seed;
        self.hrl.low.seed = seed;
        self.hrl.high.seed = seed;
        self.traffic.seed = seed;
        self.sim.seed = seed;
        self
    }
}

/// Provenance written alongside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub args: Vec<String>,
    pub config_hash: String,
    pub topology_fingerprint: String,
    pub seed: u64,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, args: Vec<String>, cfg: &ExperimentConfig, scenario: &Scenario, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args,
            config_hash: cfg.hash(),
            topology_fingerprint: scenario.graph.fingerprint(),
            seed,
            outputs: Vec::new(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
