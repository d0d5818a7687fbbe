use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, AgentManifest, Decision, Policy, PolicyKind, Transition};
use crate::app::SegmentationMode;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, Gradients, Optimizer, OptimizerKind, Trace};
use crate::sim::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub actor_learning_rate: f64,
    pub critic_learning_rate: f64,
    pub discount: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            actor_learning_rate: 1e-4,
            critic_learning_rate: 5e-4,
            discount: 0.95,
            gae_lambda: 0.95,
            clip: 0.2,
            entropy_coef: 0.01,
            epochs: 32,
            minibatch_size: 256,
            normalize_advantages: true,
            hidden: vec![64, 16],
            optimizer: OptimizerKind::default(),
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("ppo", m));
        if !(self.actor_learning_rate > 0.0 && self.critic_learning_rate > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("discount and gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if !(self.entropy_coef >= 0.0) {
            return bad("entropy_coef must be non-negative");
        }
        if self.epochs == 0 || self.minibatch_size == 0 {
            return bad("epochs and minibatch_size must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// `min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutEntry {
    pub vehicle_id: u32,
    pub state: Vec<f64>,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    pub terminal: bool,
    pub next_state: Vec<f64>,
}

/// Mean losses over the final epoch of an update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub samples: usize,
}

/// Clipped-surrogate actor-critic, updated once per episode.
#[derive(Clone, Debug)]
pub struct PpoAgent {
    cfg: PpoConfig,
    actor: DenseNet,
    critic: DenseNet,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
    rollout: Vec<RolloutEntry>,
    pending: HashMap<u32, (usize, f64, f64)>,
    sample_rng: RngStream,
    shuffle_rng: RngStream,
    steps: u64,
    updates: u64,
    last_stats: Option<PpoStats>,
    frozen: bool,
}

impl PpoAgent {
    pub fn new(state_dim: usize, num_actions: usize, cfg: PpoConfig, seed: u64) -> Self {
        let mut init = RngStream::new("ppo-init", seed);
        let sizes = |out: usize| -> Vec<usize> {
            std::iter::once(state_dim)
                .chain(cfg.hidden.iter().copied())
                .chain(std::iter::once(out))
                .collect()
        };
        let actor = DenseNet::new(&sizes(num_actions), &mut init);
        let critic = DenseNet::new(&sizes(1), &mut init);
        Self::from_nets(actor, critic, cfg, seed)
    }

    fn from_nets(actor: DenseNet, critic: DenseNet, cfg: PpoConfig, seed: u64) -> Self {
        PpoAgent {
            actor_opt: Optimizer::new(cfg.optimizer, cfg.actor_learning_rate),
            critic_opt: Optimizer::new(cfg.optimizer, cfg.critic_learning_rate),
            actor,
            critic,
            cfg,
            rollout: Vec::new(),
            pending: HashMap::new(),
            sample_rng: RngStream::new("agent-exploration", seed),
            shuffle_rng: RngStream::new("ppo-minibatch", seed),
            steps: 0,
            updates: 0,
            last_stats: None,
            frozen: false,
        }
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn actor(&self) -> &DenseNet {
        &self.actor
    }

    pub fn critic(&self) -> &DenseNet {
        &self.critic
    }

    pub fn rollout_len(&self) -> usize {
        self.rollout.len()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn last_stats(&self) -> Option<PpoStats> {
        self.last_stats
    }

    pub fn probabilities(&self, state: &[f64]) -> Vec<f64> {
        softmax(&self.actor.forward(state))
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        self.critic.forward(state)[0]
    }

    /// Samples from the policy when `explore`, otherwise takes its mode.
    pub fn act_index(&mut self, vehicle_id: u32, state: &[f64], explore: bool) -> usize {
        let probs = self.probabilities(state);
        let a = if explore && !self.frozen {
            let u: f64 = self.sample_rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            argmax(&probs)
        };
        if !self.frozen {
            self.steps += 1;
            let v = self.value(state);
            self.pending
                .insert(vehicle_id, (a, probs[a].max(f64::MIN_POSITIVE).ln(), v));
        }
        a
    }

    /// Attaches the reward of a previously chosen action to the rollout.
    pub fn record(&mut self, t: Transition) {
        if self.frozen {
            return;
        }
        let Some((a, log_prob, value)) = self.pending.remove(&t.vehicle_id) else {
            log::warn!("ppo: transition for vehicle {} without a pending action", t.vehicle_id);
            return;
        };
        debug_assert_eq!(a, t.action, "transition action differs from the sampled one");
        self.rollout.push(RolloutEntry {
            vehicle_id: t.vehicle_id,
            state: t.state,
            action: t.action,
            log_prob,
            value,
            reward: t.reward,
            terminal: t.terminal,
            next_state: t.next_state,
        });
    }

    /// Generalised advantage estimates and returns, per vehicle trajectory.
    pub fn advantages(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.rollout.len();
        let mut adv = vec![0.0; n];
        let mut ret = vec![0.0; n];
        let mut by_vehicle: HashMap<u32, Vec<usize>> = HashMap::new();
        for (i, e) in self.rollout.iter().enumerate() {
            by_vehicle.entry(e.vehicle_id).or_default().push(i);
        }
        let (g, lam) = (self.cfg.discount, self.cfg.gae_lambda);
        for idx in by_vehicle.values() {
            let mut gae = 0.0;
            for (k, &i) in idx.iter().enumerate().rev() {
                let e = &self.rollout[i];
                let next_value = if e.terminal {
                    0.0
                } else if let Some(&j) = idx.get(k + 1) {
                    self.rollout[j].value
                } else {
                    self.value(&e.next_state)
                };
                let cont = if e.terminal { 0.0 } else { 1.0 };
                if e.terminal {
                    gae = 0.0;
                }
                let delta = e.reward + g * next_value * cont - e.value;
                gae = delta + g * lam * cont * gae;
                adv[i] = gae;
                ret[i] = gae + e.value;
            }
        }
        (adv, ret)
    }

    /// Runs the clipped-surrogate update on the collected rollout and clears it.
    pub fn update(&mut self) -> Result<Option<PpoStats>> {
        self.pending.clear();
        if self.frozen || self.rollout.is_empty() {
            self.rollout.clear();
            return Ok(None);
        }
        let (mut adv, ret) = self.advantages();
        if self.cfg.normalize_advantages && adv.len() > 1 {
            let n = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / n;
            let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));
        }
        let mut order: Vec<usize> = (0..self.rollout.len()).collect();
        let mut stats = PpoStats::default();
        let mut actor_grads = Gradients::zeros_like(&self.actor);
        let mut critic_grads = Gradients::zeros_like(&self.critic);
        let mut trace = Trace::default();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.shuffle_rng);
            stats = PpoStats::default();
            for chunk in order.chunks(self.cfg.minibatch_size) {
                let m = chunk.len() as f64;
                actor_grads.clear();
                critic_grads.clear();
                for &i in chunk {
                    let e = &self.rollout[i];
                    // actor
                    self.actor.forward_trace(&e.state, &mut trace);
                    let p = softmax(trace.output());
                    let logp = p[e.action].max(f64::MIN_POSITIVE).ln();
                    let ratio = (logp - e.log_prob).exp();
                    let surr = clipped_surrogate(ratio, adv[i], self.cfg.clip);
                    let entropy: f64 = -p.iter().map(|&q| if q > 0.0 { q * q.ln() } else { 0.0 }).sum::<f64>();
                    let unclipped = ratio * adv[i];
                    let d_surr_d_logp = if unclipped <= surr { unclipped } else { 0.0 };
                    let up: Vec<f64> = p
                        .iter()
                        .enumerate()
                        .map(|(j, &pj)| {
                            let d_logp = if j == e.action { 1.0 - pj } else { -pj };
                            let d_ent = if pj > 0.0 { -pj * (pj.ln() + entropy) } else { 0.0 };
                            -(d_surr_d_logp * d_logp + self.cfg.entropy_coef * d_ent) / m
                        })
                        .collect();
                    self.actor.backward(&trace, &up, &mut actor_grads);
                    // critic
                    self.critic.forward_trace(&e.state, &mut trace);
                    let err = trace.output()[0] - ret[i];
                    self.critic.backward(&trace, &[2.0 * err / m], &mut critic_grads);

                    stats.actor_loss += -(surr + self.cfg.entropy_coef * entropy);
                    stats.critic_loss += err * err;
                    stats.entropy += entropy;
                    stats.samples += 1;
                }
                self.actor_opt.apply_update(&mut self.actor, &actor_grads)?;
                self.critic_opt.apply_update(&mut self.critic, &critic_grads)?;
            }
        }
        let n = stats.samples as f64;
        stats.actor_loss /= n;
        stats.critic_loss /= n;
        stats.entropy /= n;
        if !(stats.actor_loss.is_finite() && stats.critic_loss.is_finite()) {
            return Err(Error::NonFinite(format!("ppo losses {stats:?}")));
        }
        self.rollout.clear();
        self.updates += 1;
        self.last_stats = Some(stats);
        Ok(Some(stats))
    }

    pub fn save_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.actor.save(&dir.join("actor.rann"))?;
        self.critic.save(&dir.join("critic.rann"))?;
        AgentManifest {
            format_version: 1,
            policy: PolicyKind::Ppo,
            state_dim: self.actor.input_dim(),
            num_actions: self.actor.output_dim(),
            hidden: self.cfg.hidden.clone(),
            training_steps: self.steps,
            gradient_steps: self.actor_opt.step_count(),
            episodes: self.updates,
            hyperparameters: serde_json::to_value(&self.cfg).expect("config serialises"),
            checkpoints: vec!["actor.rann".into(), "critic.rann".into()],
        }
        .write(dir)
    }

    pub fn load(dir: &Path, seed: u64) -> Result<Self> {
        let manifest = AgentManifest::read(dir)?;
        if manifest.policy != PolicyKind::Ppo {
            return Err(Error::Checkpoint(format!("manifest is for {}", manifest.policy)));
        }
        let cfg: PpoConfig = serde_json::from_value(manifest.hyperparameters.clone())
            .map_err(|e| Error::Checkpoint(format!("ppo hyperparameters: {e}")))?;
        let actor = DenseNet::load(&dir.join("actor.rann"))?;
        let critic = DenseNet::load(&dir.join("critic.rann"))?;
        if actor.sizes() != manifest.layer_sizes(manifest.num_actions) || critic.sizes() != manifest.layer_sizes(1) {
            return Err(Error::Checkpoint("network shape disagrees with manifest".into()));
        }
        let mut agent = Self::from_nets(actor, critic, cfg, seed);
        agent.steps = manifest.training_steps;
        agent.updates = manifest.episodes;
        Ok(agent)
    }
}

impl Policy for PpoAgent {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Ppo
    }

    fn act(&mut self, d: &Decision<'_>) -> SegmentationMode {
        let a = self.act_index(d.vehicle_id, d.state.as_slice(), d.explore);
        SegmentationMode::from_index(a).expect("three-action network")
    }

    fn observe(&mut self, t: Transition) {
        self.record(t);
    }

    fn begin_episode(&mut self) {
        self.pending.clear();
    }

    fn end_episode(&mut self) -> Result<()> {
        self.update().map(|_| ())
    }

    fn checksum(&self) -> u64 {
        self.actor.checksum() ^ self.critic.checksum().rotate_left(1)
    }

    fn frozen_copy(&self) -> Box<dyn Policy> {
        let mut copy = self.clone();
        copy.frozen = true;
        copy.rollout.clear();
        copy.pending.clear();
        Box::new(copy)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        self.save_to(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_cases() {
        assert_close!(clipped_surrogate(1.5, 1.0, 0.2), 1.2, 1e-12);
        assert_close!(clipped_surrogate(0.5, 1.0, 0.2), 0.5, 1e-12);
        assert_close!(clipped_surrogate(0.5, -1.0, 0.2), -0.8, 1e-12);
        assert_close!(clipped_surrogate(1.5, -1.0, 0.2), -1.5, 1e-12);
        assert_close!(clipped_surrogate(1.0, 0.7, 0.2), 0.7, 1e-12);
    }

    #[test]
    fn softmax_is_a_distribution() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert_close!(p.iter().sum::<f64>(), 1.0, 1e-12);
        assert!(p.iter().all(|x| x.is_finite() && *x >= 0.0));
        assert_close!(p[0] / p[1], 1f64.exp(), 1e-9);
    }

    fn transition(v: u32, a: usize, r: f64, terminal: bool) -> Transition {
        Transition {
            state: vec![0.0, 0.0],
            action: a,
            reward: r,
            next_state: vec![0.0, 0.0],
            terminal,
            vehicle_id: v,
            step_index: 0,
        }
    }

    #[test]
    fn gae_matches_hand_computation_with_zero_critic() {
        let cfg = PpoConfig {
            discount: 0.5,
            gae_lambda: 0.5,
            ..PpoConfig::default()
        };
        let mut agent = PpoAgent::new(2, 3, cfg, 0);
        agent.critic = DenseNet::zeros(&[2, 64, 16, 1]);
        for (r, term) in [(1.0, false), (1.0, false), (1.0, true)] {
            agent.act_index(4, &[0.0, 0.0], true);
            let a = agent.pending[&4].0;
            agent.record(transition(4, a, r, term));
        }
        let (adv, ret) = agent.advantages();
        // V = 0, so delta_t = r_t and A_t = r_t + 0.25 A_{t+1}
        assert_close!(adv[2], 1.0, 1e-12);
        assert_close!(adv[1], 1.25, 1e-12);
        assert_close!(adv[0], 1.3125, 1e-12);
        assert_eq!(adv, ret);
    }

    #[test]
    fn interleaved_vehicles_get_separate_trajectories() {
        let mut agent = PpoAgent::new(2, 3, PpoConfig::default(), 0);
        agent.critic = DenseNet::zeros(&[2, 64, 16, 1]);
        for _ in 0..2 {
            for v in [0u32, 1] {
                agent.act_index(v, &[0.0, 0.0], true);
                let a = agent.pending[&v].0;
                agent.record(transition(v, a, if v == 0 { 1.0 } else { 0.0 }, false));
            }
        }
        let (adv, _) = agent.advantages();
        assert_eq!(adv[1], 0.0);
        assert_eq!(adv[3], 0.0);
        assert!(adv[0] > adv[2] && adv[2] > 0.0);
    }

    #[test]
    fn update_clears_rollout_and_changes_actor() {
        let mut agent = PpoAgent::new(
            2,
            3,
            PpoConfig {
                epochs: 2,
                ..PpoConfig::default()
            },
            5,
        );
        let before = agent.actor().clone();
        for k in 0..20 {
            agent.act_index(0, &[k as f64 / 20.0, 1.0], true);
            let a = agent.pending[&0].0;
            agent.record(transition(0, a, if a == 2 { 1.0 } else { 0.0 }, k == 19));
        }
        let stats = agent.update().unwrap().unwrap();
        assert_eq!(stats.samples, 20);
        assert_eq!(agent.rollout_len(), 0);
        assert_ne!(agent.actor(), &before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let agent = PpoAgent::new(8, 3, PpoConfig::default(), 2);
        agent.save_to(dir.path()).unwrap();
        let back = PpoAgent::load(dir.path(), 2).unwrap();
        assert_eq!(back.actor(), agent.actor());
        assert_eq!(back.critic(), agent.critic());
    }
}
