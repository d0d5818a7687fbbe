use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, AgentManifest, Decision, Policy, PolicyKind, Transition};
use crate::app::SegmentationMode;
use crate::error::{Error, Result};
use crate::nn::{DenseNet, Gradients, Optimizer, OptimizerKind, Trace};
use crate::sim::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqlConfig {
    pub learning_rate: f64,
    pub discount: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Share of the training horizon over which epsilon decays linearly.
    pub anneal_fraction: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    /// Minimum replay size before gradient steps start.
    pub warmup: usize,
    /// Gradient steps between hard target-network copies.
    pub target_sync_steps: u64,
    pub hidden: Vec<usize>,
    pub optimizer: OptimizerKind,
}

impl Default for DqlConfig {
    fn default() -> Self {
        DqlConfig {
            learning_rate: 1e-4,
            discount: 0.95,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            anneal_fraction: 0.5,
            replay_capacity: 100_000,
            batch_size: 32,
            warmup: 1000,
            target_sync_steps: 100,
            hidden: vec![64, 16],
            optimizer: OptimizerKind::default(),
        }
    }
}

impl DqlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("dql", m));
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return bad("discount must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]");
        }
        if !(self.anneal_fraction > 0.0 && self.anneal_fraction <= 1.0) {
            return bad("anneal_fraction must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("replay_capacity must hold at least one batch");
        }
        if self.target_sync_steps == 0 {
            return bad("target_sync_steps must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        Ok(())
    }
}

/// Linear decay from `start` to `end` over `anneal_steps`, flat afterwards.
pub fn epsilon_at(step: u64, anneal_steps: u64, start: f64, end: f64) -> f64 {
    if anneal_steps == 0 || step >= anneal_steps {
        return end;
    }
    start + (end - start) * step as f64 / anneal_steps as f64
}

/// `r + gamma * Q_target(s', argmax_a Q_online(s', a))`, or `r` when terminal.
pub fn double_q_target(
    reward: f64,
    discount: f64,
    q_online_next: &[f64],
    q_target_next: &[f64],
    terminal: bool,
) -> f64 {
    if terminal {
        return reward;
    }
    reward + discount * q_target_next[argmax(q_online_next)]
}

/// Fixed-capacity ring of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            items: Vec::new(),
            capacity,
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices(&self, n: usize, rng: &mut RngStream) -> Vec<usize> {
        assert!(!self.items.is_empty(), "sampling from an empty replay buffer");
        (0..n).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.items[i]
    }
}

/// Double deep Q-learning with replay and a hard-synced target network.
#[derive(Clone, Debug)]
pub struct DqlAgent {
    cfg: DqlConfig,
    num_actions: usize,
    online: DenseNet,
    target: DenseNet,
    optimizer: Optimizer,
    replay: ReplayBuffer,
    explore_rng: RngStream,
    replay_rng: RngStream,
    explore_steps: u64,
    horizon: u64,
    gradient_steps: u64,
    episodes: u64,
    last_loss: Option<f64>,
    frozen: bool,
}

impl DqlAgent {
    pub fn new(state_dim: usize, num_actions: usize, cfg: DqlConfig, seed: u64) -> Self {
        let mut init = RngStream::new("dql-init", seed);
        let sizes: Vec<usize> = std::iter::once(state_dim)
            .chain(cfg.hidden.iter().copied())
            .chain(std::iter::once(num_actions))
            .collect();
        let online = DenseNet::new(&sizes, &mut init);
        Self::from_net(online, cfg, seed)
    }

    fn from_net(online: DenseNet, cfg: DqlConfig, seed: u64) -> Self {
        DqlAgent {
            num_actions: online.output_dim(),
            target: online.clone(),
            optimizer: Optimizer::new(cfg.optimizer, cfg.learning_rate),
            replay: ReplayBuffer::new(cfg.replay_capacity),
            explore_rng: RngStream::new("agent-exploration", seed),
            replay_rng: RngStream::new("replay-sampling", seed),
            online,
            cfg,
            explore_steps: 0,
            horizon: 0,
            gradient_steps: 0,
            episodes: 0,
            last_loss: None,
            frozen: false,
        }
    }

    pub fn config(&self) -> &DqlConfig {
        &self.cfg
    }

    pub fn online(&self) -> &DenseNet {
        &self.online
    }

    pub fn target(&self) -> &DenseNet {
        &self.target
    }

    pub fn replay(&self) -> &ReplayBuffer {
        &self.replay
    }

    pub fn gradient_steps(&self) -> u64 {
        self.gradient_steps
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.last_loss
    }

    pub fn set_horizon(&mut self, total_steps: u64) {
        self.horizon = total_steps;
    }

    pub fn epsilon(&self) -> f64 {
        let anneal = (self.horizon as f64 * self.cfg.anneal_fraction).round() as u64;
        epsilon_at(self.explore_steps, anneal, self.cfg.epsilon_start, self.cfg.epsilon_end)
    }

    pub fn q_values(&self, state: &[f64]) -> Vec<f64> {
        self.online.forward(state)
    }

    /// Epsilon-greedy when `explore`, greedy otherwise.
    pub fn act_index(&mut self, state: &[f64], explore: bool) -> usize {
        if explore && !self.frozen {
            let eps = self.epsilon();
            self.explore_steps += 1;
            if self.explore_rng.random::<f64>() < eps {
                return self.explore_rng.random_range(0..self.num_actions);
            }
        }
        argmax(&self.q_values(state))
    }

    pub fn remember(&mut self, t: Transition) {
        debug_assert!(t.action < self.num_actions);
        if !self.frozen {
            self.replay.push(t);
        }
    }

    /// One gradient step on a sampled batch once the replay buffer is warm.
    pub fn learn_step(&mut self) -> Result<Option<f64>> {
        if self.frozen || self.replay.len() < self.cfg.warmup.max(self.cfg.batch_size) {
            return Ok(None);
        }
        let idx = self.replay.sample_indices(self.cfg.batch_size, &mut self.replay_rng);
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.replay.get(i)).collect();
        let loss = train_on_batch(
            &mut self.online,
            &self.target,
            &mut self.optimizer,
            &batch,
            self.cfg.discount,
        )?;
        self.gradient_steps += 1;
        if self.gradient_steps.is_multiple_of(self.cfg.target_sync_steps) {
            self.target.copy_from(&self.online);
        }
        self.last_loss = Some(loss);
        Ok(Some(loss))
    }

    pub fn save_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.online.save(&dir.join("online.rann"))?;
        self.target.save(&dir.join("target.rann"))?;
        AgentManifest {
            format_version: 1,
            policy: PolicyKind::Dql,
            state_dim: self.online.input_dim(),
            num_actions: self.num_actions,
            hidden: self.cfg.hidden.clone(),
            training_steps: self.explore_steps,
            gradient_steps: self.gradient_steps,
            episodes: self.episodes,
            hyperparameters: serde_json::to_value(&self.cfg).expect("config serialises"),
            checkpoints: vec!["online.rann".into(), "target.rann".into()],
        }
        .write(dir)
    }

    pub fn load(dir: &Path, seed: u64) -> Result<Self> {
        let manifest = AgentManifest::read(dir)?;
        if manifest.policy != PolicyKind::Dql {
            return Err(Error::Checkpoint(format!("manifest is for {}", manifest.policy)));
        }
        let cfg: DqlConfig = serde_json::from_value(manifest.hyperparameters.clone())
            .map_err(|e| Error::Checkpoint(format!("dql hyperparameters: {e}")))?;
        let online = DenseNet::load(&dir.join("online.rann"))?;
        let target = DenseNet::load(&dir.join("target.rann"))?;
        let sizes = manifest.layer_sizes(manifest.num_actions);
        if online.sizes() != sizes || target.sizes() != sizes {
            return Err(Error::Checkpoint("network shape disagrees with manifest".into()));
        }
        let mut agent = Self::from_net(online, cfg, seed);
        agent.target = target;
        agent.explore_steps = manifest.training_steps;
        agent.gradient_steps = manifest.gradient_steps;
        agent.episodes = manifest.episodes;
        Ok(agent)
    }
}

fn train_on_batch(
    online: &mut DenseNet,
    target: &DenseNet,
    optimizer: &mut Optimizer,
    batch: &[&Transition],
    discount: f64,
) -> Result<f64> {
    let mut grads = Gradients::zeros_like(online);
    let mut trace = Trace::default();
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut upstream = vec![0.0; online.output_dim()];
    for t in batch {
        let y = if t.terminal {
            t.reward
        } else {
            double_q_target(
                t.reward,
                discount,
                &online.forward(&t.next_state),
                &target.forward(&t.next_state),
                false,
            )
        };
        online.forward_trace(&t.state, &mut trace);
        let err = trace.output()[t.action] - y;
        loss += err * err / n;
        upstream.iter_mut().for_each(|u| *u = 0.0);
        upstream[t.action] = 2.0 * err / n;
        online.backward(&trace, &upstream, &mut grads);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("dql loss {loss}")));
    }
    optimizer.apply_update(online, &grads)?;
    Ok(loss)
}

impl Policy for DqlAgent {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Dql
    }

    fn act(&mut self, d: &Decision<'_>) -> SegmentationMode {
        let a = self.act_index(d.state.as_slice(), d.explore);
        SegmentationMode::from_index(a).expect("three-action network")
    }

    fn observe(&mut self, t: Transition) {
        self.remember(t);
    }

    fn end_tick(&mut self) -> Result<()> {
        self.learn_step().map(|_| ())
    }

    fn end_episode(&mut self) -> Result<()> {
        if !self.frozen {
            self.episodes += 1;
        }
        Ok(())
    }

    fn checksum(&self) -> u64 {
        self.online.checksum()
    }

    fn frozen_copy(&self) -> Box<dyn Policy> {
        let mut copy = self.clone();
        copy.frozen = true;
        copy.replay = ReplayBuffer::new(1);
        Box::new(copy)
    }

    fn set_training_horizon(&mut self, total_steps: u64) {
        self.set_horizon(total_steps);
    }

    fn save(&self, dir: &Path) -> Result<()> {
        self.save_to(dir)
    }
}
