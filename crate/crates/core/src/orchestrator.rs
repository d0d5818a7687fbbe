//! The gNB-side decision routine. Every update period it turns the windows
//! that just closed into rewards and states, hands transitions to the shared
//! policy and returns the new mode of every vehicle.

use crate::agents::{Decision, Policy, Transition};
use crate::app::SegmentationMode;
use crate::error::Result;
use crate::metrics::{assemble_state, Normalization, StateConfig, StateVector, StepObservation};
use crate::sim::SimTime;

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleContext {
    pub vehicle_id: u32,
    pub mode: SegmentationMode,
    pub last_state: Option<StateVector>,
    pub last_action: Option<SegmentationMode>,
    pub cumulative_reward: f64,
    pub steps: u32,
}

/// What happened at one tick.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TickOutcome {
    /// `(vehicle_id, mode)` for every vehicle; empty on the terminal tick.
    pub commands: Vec<(u32, SegmentationMode)>,
    pub transitions: usize,
}

pub struct RanAi {
    update_period: SimTime,
    state_config: StateConfig,
    norm: Normalization,
    contexts: Vec<VehicleContext>,
    ticks: u64,
}

impl RanAi {
    pub fn new(update_period: SimTime, state_config: StateConfig, norm: Normalization) -> Self {
        assert!(update_period > SimTime::ZERO);
        RanAi {
            update_period,
            state_config,
            norm,
            contexts: Vec::new(),
            ticks: 0,
        }
    }

    pub fn update_period(&self) -> SimTime {
        self.update_period
    }

    pub fn state_config(&self) -> StateConfig {
        self.state_config
    }

    pub fn contexts(&self) -> &[VehicleContext] {
        &self.contexts
    }

    pub fn ticks(&self) -> u64 {
        self.ticks
    }

    /// Adds a vehicle. Ids must be unique.
    pub fn register_vehicle(&mut self, vehicle_id: u32, initial_mode: SegmentationMode) {
        assert!(
            self.contexts.iter().all(|c| c.vehicle_id != vehicle_id),
            "vehicle {vehicle_id} registered twice"
        );
        self.contexts.push(VehicleContext {
            vehicle_id,
            mode: initial_mode,
            last_state: None,
            last_action: None,
            cumulative_reward: 0.0,
            steps: 0,
        });
    }

    /// Runs one decision round at `now`.
    ///
    /// `observations` holds the window `[now - T, now)` of every registered
    /// vehicle in registration order, or `None` at the first tick. On a
    /// terminal tick transitions are flagged terminal and no action is taken.
    pub fn on_update_tick(
        &mut self,
        now: SimTime,
        observations: Option<&[StepObservation]>,
        policy: &mut dyn Policy,
        explore: bool,
        terminal: bool,
    ) -> Result<TickOutcome> {
        assert!(
            now.is_multiple_of(self.update_period),
            "tick at {now} off the update grid"
        );
        let n = self.contexts.len();
        let states: Vec<StateVector> = match observations {
            Some(obs) => {
                assert_eq!(obs.len(), n, "one observation per registered vehicle");
                (0..n)
                    .map(|i| {
                        assert_eq!(obs[i].vehicle_id, self.contexts[i].vehicle_id);
                        let peers: Vec<&StepObservation> = obs
                            .iter()
                            .enumerate()
                            .filter(|&(j, _)| j != i)
                            .map(|(_, o)| o)
                            .collect();
                        assemble_state(&obs[i], &peers, self.state_config, &self.norm)
                    })
                    .collect()
            }
            None => vec![StateVector(vec![0.0; self.state_config.dim()]); n],
        };

        let mut outcome = TickOutcome::default();
        if let Some(obs) = observations {
            for (ctx, (o, s)) in self.contexts.iter_mut().zip(obs.iter().zip(&states)) {
                let (Some(prev), Some(action)) = (ctx.last_state.take(), ctx.last_action) else {
                    continue;
                };
                debug_assert_eq!(o.mode, action, "window scored under a different mode");
                ctx.cumulative_reward += o.reward;
                policy.observe(Transition {
                    state: prev.0,
                    action: action.index(),
                    reward: o.reward,
                    next_state: s.0.clone(),
                    terminal,
                    vehicle_id: ctx.vehicle_id,
                    step_index: ctx.steps,
                });
                ctx.steps += 1;
                outcome.transitions += 1;
            }
        }

        if !terminal {
            for (i, (ctx, s)) in self.contexts.iter_mut().zip(states).enumerate() {
                let mode = policy.act(&Decision {
                    vehicle_id: ctx.vehicle_id,
                    state: &s,
                    observation: observations.map(|o| &o[i]),
                    current_mode: ctx.mode,
                    explore,
                });
                ctx.mode = mode;
                ctx.last_action = Some(mode);
                ctx.last_state = Some(s);
                outcome.commands.push((ctx.vehicle_id, mode));
            }
        }
        policy.end_tick()?;
        self.ticks += 1;
        Ok(outcome)
    }
}
