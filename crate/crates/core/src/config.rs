//! Experiment configuration: a TOML document with one table per subsystem.
//! Every key has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::{DqlConfig, HeuristicParams, PolicyKind, PpoConfig};
use crate::app::{AppConfig, SegmentationMode};
use crate::channel::{RadioConfig, ScenarioConfig};
use crate::error::{Error, Result};
use crate::metrics::{KpiThresholds, StateConfig};
use crate::ran::{McsEntry, RanConfig};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    #[default]
    Full,
    Smoke,
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(Profile::Full),
            "smoke" => Ok(Profile::Smoke),
            other => Err(format!("unknown profile `{other}` (full, smoke)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub num_vehicles: u32,
    pub policy: PolicyKind,
    pub state_config: StateConfig,
    pub master_seed: u64,
    pub episode_duration_s: f64,
    pub update_period_ms: u64,
    pub initial_mode: SegmentationMode,
    pub profile: Profile,
    /// Overrides the profile's training length when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_episodes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_episodes: Option<u64>,
    pub smoke_train_episodes: u64,
    /// Pathloss trace replacing the parametric channel.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channel_trace: Option<PathBuf>,
    /// Parallel workers for test episodes; 0 uses every core.
    pub workers: usize,
    pub write_per_tick: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            num_vehicles: 5,
            policy: PolicyKind::Ppo,
            state_config: StateConfig::Full,
            master_seed: 1,
            episode_duration_s: 80.0,
            update_period_ms: 100,
            initial_mode: SegmentationMode::SC,
            profile: Profile::Full,
            train_episodes: None,
            test_episodes: None,
            smoke_train_episodes: 200,
            channel_trace: None,
            workers: 0,
            write_per_tick: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub radio: RadioConfig,
    pub scenario: ScenarioConfig,
    pub ran: RanConfig,
    pub app: AppConfig,
    pub thresholds: KpiThresholds,
    pub heuristic: HeuristicParams,
    pub dql: DqlConfig,
    pub ppo: PpoConfig,
    /// Replaces the built-in MCS table when non-empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub mcs_table: Vec<McsEntry>,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub policy: Option<PolicyKind>,
    pub num_vehicles: Option<u32>,
    pub tx_power_dbm: Option<f64>,
    pub state_config: Option<StateConfig>,
    pub master_seed: Option<u64>,
    pub profile: Option<Profile>,
    pub train_episodes: Option<u64>,
    pub test_episodes: Option<u64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises to TOML")
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        let e = &mut self.experiment;
        if let Some(p) = o.policy {
            e.policy = p;
        }
        if let Some(n) = o.num_vehicles {
            e.num_vehicles = n;
        }
        if let Some(s) = o.state_config {
            e.state_config = s;
        }
        if let Some(s) = o.master_seed {
            e.master_seed = s;
        }
        if let Some(p) = o.profile {
            e.profile = p;
        }
        if o.train_episodes.is_some() {
            e.train_episodes = o.train_episodes;
        }
        if o.test_episodes.is_some() {
            e.test_episodes = o.test_episodes;
        }
        if let Some(p) = o.tx_power_dbm {
            self.radio.tx_power_dbm = p;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.num_vehicles == 0 {
            return Err(Error::invalid("experiment", "num_vehicles must be at least 1"));
        }
        if !(e.episode_duration_s > 0.0 && e.episode_duration_s.is_finite()) {
            return Err(Error::invalid("experiment", "episode_duration_s must be positive"));
        }
        if e.update_period_ms == 0 {
            return Err(Error::invalid("experiment", "update_period_ms must be positive"));
        }
        if !self.episode_duration().is_multiple_of(self.update_period()) {
            return Err(Error::invalid(
                "experiment",
                "episode duration must be a whole number of update periods",
            ));
        }
        if e.train_episodes == Some(0) || e.test_episodes == Some(0) || e.smoke_train_episodes == 0 {
            return Err(Error::invalid("experiment", "episode counts must be at least 1"));
        }
        if !self
            .update_period()
            .is_multiple_of(SimTime::from_millis(self.ran.tti_ms))
        {
            return Err(Error::invalid(
                "experiment",
                "update period must be a whole number of TTIs",
            ));
        }
        self.radio.validate()?;
        self.scenario.validate()?;
        self.ran.validate()?;
        self.thresholds.validate()?;
        self.app.validate(self.thresholds.cd_max)?;
        self.heuristic.validate()?;
        self.dql.validate()?;
        self.ppo.validate()?;
        self.ran.mcs_table(self.custom_mcs())?;
        Ok(())
    }

    pub fn custom_mcs(&self) -> Option<&[McsEntry]> {
        (!self.mcs_table.is_empty()).then_some(self.mcs_table.as_slice())
    }

    pub fn episode_duration(&self) -> SimTime {
        SimTime::from_secs_f64(self.experiment.episode_duration_s)
    }

    pub fn update_period(&self) -> SimTime {
        SimTime::from_millis(self.experiment.update_period_ms)
    }

    /// Decision windows per vehicle and episode.
    pub fn steps_per_episode(&self) -> u64 {
        self.episode_duration().as_micros() / self.update_period().as_micros()
    }

    /// Zero for policies that do not learn.
    pub fn train_episodes(&self) -> u64 {
        let e = &self.experiment;
        if !e.policy.learns() {
            return 0;
        }
        match (e.train_episodes, e.profile) {
            (Some(n), _) => n,
            (None, Profile::Smoke) => e.smoke_train_episodes,
            (None, Profile::Full) => (10_000 / u64::from(e.num_vehicles)).max(1),
        }
    }

    pub fn test_episodes(&self) -> u64 {
        let e = &self.experiment;
        e.test_episodes
            .unwrap_or_else(|| (500 / u64::from(e.num_vehicles)).max(1))
    }

    /// Short identifier of the configuration, used in file and row labels.
    pub fn label(&self) -> String {
        let e = &self.experiment;
        format!(
            "{}_nu{}_p{}_{}",
            e.policy,
            e.num_vehicles,
            self.radio.tx_power_dbm,
            e.state_config.as_str()
        )
    }
}
