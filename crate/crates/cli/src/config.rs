use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use pathgat::dataset::DeltaTMode;
use pathgat::discovery::DiscoveryConfig;
use pathgat::graph::{Intervention, PathwayConfig};
use pathgat::models::{GatConfig, MlpConfig, ModelSpec};
use pathgat::simulator::{Condition, SimConfig};
use pathgat::train::TrainConfig;
use pathgat::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Pathway TOML; the canonical p53 loop when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pathway: Option<PathBuf>,
    /// Trajectory CSV file or directory; simulated when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    /// Simulator TOML, replacing `simulation.config`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulator: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Simulation {
    pub conditions: Vec<Condition>,
    pub replicates: u32,
    pub config: SimConfig,
}

impl Default for Simulation {
    fn default() -> Self {
        Simulation {
            conditions: Condition::ALL.to_vec(),
            replicates: 2,
            config: SimConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    /// Condition labels in one-hot order.
    pub conditions: Vec<String>,
    pub delta_t: DeltaTMode,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            conditions: Condition::ALL.iter().map(|c| c.label().to_string()).collect(),
            delta_t: DeltaTMode::default(),
        }
    }
}

/// One file, one section per module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: Paths,
    pub simulation: Simulation,
    pub dataset: DatasetSection,
    pub models: Vec<ModelSpec>,
    pub train: TrainConfig,
    pub discovery: DiscoveryConfig,
    /// Condition label to `relation:source:target:remove|add` edits, merged
    /// over the pathway file's own interventions.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub interventions: BTreeMap<String, Vec<String>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            paths: Paths::default(),
            simulation: Simulation::default(),
            dataset: DatasetSection::default(),
            models: vec![ModelSpec::Gat(GatConfig::default()), ModelSpec::Mlp(MlpConfig::default())],
            train: TrainConfig::default(),
            discovery: DiscoveryConfig::default(),
            interventions: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a config and resolves its relative paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.pathway,
            &mut cfg.paths.data,
            &mut cfg.paths.simulator,
            &mut cfg.paths.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serialises")
    }

    pub fn pathway(&self) -> Result<PathwayConfig> {
        match &self.paths.pathway {
            Some(p) => PathwayConfig::load(p),
            None => Ok(PathwayConfig::canonical_p53()),
        }
    }

    /// Inlines the simulator file, if any, so the resolved config is self-contained.
    pub fn inline_simulator(&mut self) -> Result<()> {
        if let Some(p) = self.paths.simulator.take() {
            self.simulation.config = SimConfig::load(&p)?;
        }
        Ok(())
    }

    pub fn intervention_map(&self, pathway: &PathwayConfig) -> Result<HashMap<String, Vec<Intervention>>> {
        let mut map = pathway.intervention_map();
        for (cond, list) in &self.interventions {
            let parsed = list.iter().map(|s| s.parse()).collect::<Result<Vec<Intervention>>>()?;
            map.entry(cond.clone()).or_default().extend(parsed);
        }
        for list in map.values_mut() {
            list.dedup();
        }
        Ok(map)
    }
}
