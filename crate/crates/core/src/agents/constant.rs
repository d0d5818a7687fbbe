use super::{Decision, Policy, PolicyKind};
use crate::app::SegmentationMode;

pub fn constant_act(mode: SegmentationMode) -> SegmentationMode {
    mode
}

/// Keeps one segmentation mode for the whole run.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    mode: SegmentationMode,
}

impl ConstantPolicy {
    pub fn new(mode: SegmentationMode) -> Self {
        ConstantPolicy { mode }
    }
}

impl Policy for ConstantPolicy {
    fn kind(&self) -> PolicyKind {
        match self.mode {
            SegmentationMode::R => PolicyKind::ConstantRaw,
            SegmentationMode::SC => PolicyKind::ConstantConservative,
            SegmentationMode::SA => PolicyKind::ConstantAggressive,
        }
    }

    fn act(&mut self, _decision: &Decision<'_>) -> SegmentationMode {
        constant_act(self.mode)
    }

    fn frozen_copy(&self) -> Box<dyn Policy> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::StateVector;

    #[test]
    fn always_the_configured_mode() {
        let s = StateVector(vec![0.5; 5]);
        for mode in SegmentationMode::ALL {
            let mut p = ConstantPolicy::new(mode);
            let counts = (0..800)
                .map(|i| {
                    p.act(&Decision {
                        vehicle_id: i % 5,
                        state: &s,
                        observation: None,
                        current_mode: SegmentationMode::SC,
                        explore: true,
                    })
                })
                .filter(|&m| m == mode)
                .count();
            assert_eq!(counts, 800);
        }
        assert_eq!(ConstantPolicy::new(SegmentationMode::R).kind(), PolicyKind::ConstantRaw);
    }
}
