//! Segmentation-mode policies behind one interface: static modes, the
//! smoothed-delay heuristic, double Q-learning and PPO.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::app::SegmentationMode;
use crate::error::{Error, Result};
use crate::metrics::{StateVector, StepObservation};

mod constant;
mod dql;
mod heuristic;
mod ppo;

pub use constant::{constant_act, ConstantPolicy};
pub use dql::{double_q_target, epsilon_at, DqlAgent, DqlConfig, ReplayBuffer};
pub use heuristic::{heuristic_act, HeuristicParams, HeuristicPolicy};
pub use ppo::{clipped_surrogate, softmax, PpoAgent, PpoConfig, PpoStats, RolloutEntry};

/// One (s, a, r, s') step of one vehicle.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    pub vehicle_id: u32,
    pub step_index: u32,
}

/// Everything a policy may look at when choosing one vehicle's next mode.
#[derive(Clone, Copy, Debug)]
pub struct Decision<'a> {
    pub vehicle_id: u32,
    pub state: &'a StateVector,
    /// The window that just closed; `None` on the first tick of an episode.
    pub observation: Option<&'a StepObservation>,
    pub current_mode: SegmentationMode,
    pub explore: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "C-R")]
    ConstantRaw,
    #[serde(rename = "C-SC")]
    ConstantConservative,
    #[serde(rename = "C-SA")]
    ConstantAggressive,
    #[serde(rename = "D-S")]
    DelayHeuristic,
    #[serde(rename = "DQL")]
    Dql,
    #[serde(rename = "PPO")]
    Ppo,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::ConstantRaw,
        PolicyKind::ConstantConservative,
        PolicyKind::ConstantAggressive,
        PolicyKind::DelayHeuristic,
        PolicyKind::Dql,
        PolicyKind::Ppo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::ConstantRaw => "C-R",
            PolicyKind::ConstantConservative => "C-SC",
            PolicyKind::ConstantAggressive => "C-SA",
            PolicyKind::DelayHeuristic => "D-S",
            PolicyKind::Dql => "DQL",
            PolicyKind::Ppo => "PPO",
        }
    }

    pub fn learns(self) -> bool {
        matches!(self, PolicyKind::Dql | PolicyKind::Ppo)
    }

    pub fn constant_mode(self) -> Option<SegmentationMode> {
        match self {
            PolicyKind::ConstantRaw => Some(SegmentationMode::R),
            PolicyKind::ConstantConservative => Some(SegmentationMode::SC),
            PolicyKind::ConstantAggressive => Some(SegmentationMode::SA),
            _ => None,
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let s = s.trim();
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s) || k.as_str().replace('-', "").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy `{s}` (C-R, C-SC, C-SA, D-S, DQL, PPO)"))
    }
}

/// A decision rule shared by every vehicle of the cell.
///
/// Within one tick the orchestrator calls `act` once per vehicle, then
/// `observe` for each completed transition, then `end_tick`. Learning
/// policies only change parameters in `end_tick` or `end_episode`, so every
/// vehicle of a tick is scored by the same parameters.
pub trait Policy: Send {
    fn kind(&self) -> PolicyKind;

    fn act(&mut self, decision: &Decision<'_>) -> SegmentationMode;

    fn observe(&mut self, _transition: Transition) {}

    fn end_tick(&mut self) -> Result<()> {
        Ok(())
    }

    /// Clears per-episode state. Called before the first tick.
    fn begin_episode(&mut self) {}

    fn end_episode(&mut self) -> Result<()> {
        Ok(())
    }

    /// Hash of the learnable parameters; constant for non-learning policies.
    fn checksum(&self) -> u64 {
        0
    }

    /// Copy for evaluation episodes.
    fn frozen_copy(&self) -> Box<dyn Policy>;

    /// Informs the exploration schedule of the training length.
    fn set_training_horizon(&mut self, _total_steps: u64) {}

    /// Writes checkpoint(s) and a manifest into `dir`.
    fn save(&self, _dir: &Path) -> Result<()> {
        Ok(())
    }
}

/// Hyperparameter and progress record written next to checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentManifest {
    pub format_version: u32,
    pub policy: PolicyKind,
    pub state_dim: usize,
    pub num_actions: usize,
    pub hidden: Vec<usize>,
    pub training_steps: u64,
    pub gradient_steps: u64,
    pub episodes: u64,
    pub hyperparameters: serde_json::Value,
    pub checkpoints: Vec<String>,
}

impl AgentManifest {
    pub const FILE: &'static str = "agent.json";

    pub fn parse(text: &str) -> Result<Self> {
        let m: AgentManifest = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if m.format_version != 1 {
            return Err(Error::Checkpoint(format!(
                "manifest version {} unsupported",
                m.format_version
            )));
        }
        if m.state_dim == 0 || m.num_actions == 0 || m.hidden.contains(&0) {
            return Err(Error::Checkpoint("manifest has zero-sized layers".into()));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(Self::FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::parse(&text)
    }

    pub fn layer_sizes(&self, outputs: usize) -> Vec<usize> {
        std::iter::once(self.state_dim)
            .chain(self.hidden.iter().copied())
            .chain(std::iter::once(outputs))
            .collect()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.9, 0.1]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn policy_names_parse() {
        for k in PolicyKind::ALL {
            assert_eq!(k.as_str().parse::<PolicyKind>().unwrap(), k);
        }
        assert_eq!("csa".parse::<PolicyKind>().unwrap(), PolicyKind::ConstantAggressive);
        assert!("QQ".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn manifest_validation() {
        let m = AgentManifest {
            format_version: 1,
            policy: PolicyKind::Dql,
            state_dim: 18,
            num_actions: 3,
            hidden: vec![64, 16],
            training_steps: 10,
            gradient_steps: 2,
            episodes: 1,
            hyperparameters: serde_json::json!({"lr": 1e-4}),
            checkpoints: vec!["online.rann".into()],
        };
        let text = serde_json::to_string(&m).unwrap();
        assert_eq!(AgentManifest::parse(&text).unwrap(), m);
        assert_eq!(m.layer_sizes(3), vec![18, 64, 16, 3]);
        assert!(AgentManifest::parse("{}").is_err());
        assert!(AgentManifest::parse(&text.replace("\"format_version\":1", "\"format_version\":2")).is_err());
    }
}
