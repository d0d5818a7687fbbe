use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Decision, Policy, PolicyKind};
use crate::app::SegmentationMode;
use crate::error::{Error, Result};

/// Thresholds of the smoothed-delay control chart.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicParams {
    /// Above this smoothed delay the next mode is one step more aggressive.
    pub upper_s: f64,
    /// Below this smoothed delay the next mode is one step more conservative.
    pub lower_s: f64,
    /// Weight of the newest sample in the exponential smoothing.
    pub smoothing: f64,
}

impl Default for HeuristicParams {
    fn default() -> Self {
        HeuristicParams {
            upper_s: 0.0625,
            lower_s: 0.0375,
            smoothing: 0.2,
        }
    }
}

impl HeuristicParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower_s < self.upper_s) {
            return Err(Error::invalid(
                "heuristic",
                "lower threshold must be below the upper one",
            ));
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return Err(Error::invalid("heuristic", "smoothing must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Folds `delay_sample` into `smoothed` (seeded by the first sample) and
/// returns the next mode.
pub fn heuristic_act(
    delay_sample: f64,
    params: &HeuristicParams,
    smoothed: &mut Option<f64>,
    current: SegmentationMode,
) -> SegmentationMode {
    debug_assert!(delay_sample >= 0.0);
    let s = match *smoothed {
        None => delay_sample,
        Some(prev) => (1.0 - params.smoothing) * prev + params.smoothing * delay_sample,
    };
    *smoothed = Some(s);
    if s > params.upper_s {
        current.more_aggressive()
    } else if s < params.lower_s {
        current.more_conservative()
    } else {
        current
    }
}

/// D-S benchmark: per-vehicle smoothed window delay with two thresholds.
#[derive(Clone, Debug, Default)]
pub struct HeuristicPolicy {
    params: HeuristicParams,
    smoothed: HashMap<u32, Option<f64>>,
}

impl HeuristicPolicy {
    pub fn new(params: HeuristicParams) -> Self {
        HeuristicPolicy {
            params,
            smoothed: HashMap::new(),
        }
    }

    pub fn smoothed_delay(&self, vehicle_id: u32) -> Option<f64> {
        self.smoothed.get(&vehicle_id).copied().flatten()
    }
}

impl Policy for HeuristicPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::DelayHeuristic
    }

    fn act(&mut self, d: &Decision<'_>) -> SegmentationMode {
        let Some(obs) = d.observation else {
            return d.current_mode;
        };
        let acc = self.smoothed.entry(d.vehicle_id).or_default();
        heuristic_act(obs.app.delay_mean, &self.params, acc, d.current_mode)
    }

    fn begin_episode(&mut self) {
        self.smoothed.clear();
    }

    fn frozen_copy(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use SegmentationMode::*;

    fn step(smoothed: f64, current: SegmentationMode) -> SegmentationMode {
        // smoothing 1 makes the sample the smoothed value
        let p = HeuristicParams {
            smoothing: 1.0,
            ..HeuristicParams::default()
        };
        heuristic_act(smoothed, &p, &mut Some(0.0), current)
    }

    #[test]
    fn threshold_rules() {
        assert_eq!(step(0.070, R), SC);
        assert_eq!(step(0.030, SA), SC);
        assert_eq!(step(0.070, SA), SA);
        assert_eq!(step(0.030, R), R);
        assert_eq!(step(0.050, SC), SC);
    }

    #[test]
    fn smoothing_update() {
        let p = HeuristicParams::default();
        let mut acc = Some(0.050);
        heuristic_act(0.100, &p, &mut acc, SC);
        assert_close!(acc.unwrap(), 0.8 * 0.050 + 0.2 * 0.100, 1e-15);
        let mut fresh = None;
        assert_eq!(heuristic_act(0.070, &p, &mut fresh, R), SC);
        assert_eq!(fresh, Some(0.070));
    }

    #[test]
    fn rejects_inverted_thresholds() {
        let p = HeuristicParams {
            upper_s: 0.03,
            lower_s: 0.05,
            ..HeuristicParams::default()
        };
        assert!(p.validate().is_err());
        assert!(HeuristicParams::default().validate().is_ok());
    }
}
