//! Oracles shared by the integration and acceptance test targets.
#![allow(dead_code)]

use rand::Rng;

use ranai_core::agents::{
    Decision, DqlAgent, DqlConfig, HeuristicParams, HeuristicPolicy, Policy, PolicyKind, PpoAgent, PpoConfig,
    Transition,
};
use ranai_core::app::{AppKpiWindow, SegmentationMode, SegmentationProfile};
use ranai_core::config::ExperimentConfig;
use ranai_core::episode::{run_episode, EpisodeInputs, Phase};
use ranai_core::harness::build_policy;
use ranai_core::metrics::{KpiThresholds, StateVector, StepObservation};
use ranai_core::nn::{DenseNet, Gradients, Trace};
use ranai_core::ran::LinkStatsWindow;
use ranai_core::sim::RngStream;

/// Default configuration with the given policy, fleet size and seed.
pub fn config(policy: PolicyKind, num_vehicles: u32, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.experiment.policy = policy;
    cfg.experiment.num_vehicles = num_vehicles;
    cfg.experiment.master_seed = seed;
    cfg
}

/// Runs `episodes` test episodes with random fleet size, transmit power and
/// benchmark policy, and describes every one whose byte ledger does not
/// balance exactly.
pub fn conservation_violations(episodes: u64, seed: u64) -> Vec<String> {
    let mut rng = RngStream::new("conservation", seed);
    let kinds = [
        PolicyKind::ConstantRaw,
        PolicyKind::ConstantConservative,
        PolicyKind::ConstantAggressive,
        PolicyKind::DelayHeuristic,
    ];
    let mut bad = Vec::new();
    for i in 0..episodes {
        let kind = kinds[rng.random_range(0..kinds.len())];
        let n = rng.random_range(1..=10);
        let mut cfg = config(kind, n, rng.random());
        cfg.radio.tx_power_dbm = if rng.random_bool(0.5) { 23.0 } else { 30.0 };
        let inputs = EpisodeInputs::load(&cfg).expect("default inputs");
        let mut policy = build_policy(&cfg);
        let res = run_episode(&cfg, &inputs, policy.as_mut(), Phase::Test, i, rng.random()).expect("episode runs");
        let b = res.bytes;
        if b.generated == 0 || b.generated != b.encoding + b.queued + b.dropped + b.in_transit + b.delivered {
            bad.push(format!("episode {i} ({kind}, N={n}): {b:?}"));
        }
    }
    bad
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

/// Worst relative error between backprop and central differences over
/// `nets` random networks, for the loss `sum_i w_i * y_i(x)`.
pub fn worst_gradient_error(nets: usize, seed: u64) -> f64 {
    let mut rng = RngStream::new("gradient-check", seed);
    let mut worst: f64 = 0.0;
    for _ in 0..nets {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=12)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=16));
        }
        sizes.push(rng.random_range(1..=4));
        let mut net = DenseNet::new(&sizes, &mut rng);
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..*sizes.last().unwrap())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let loss = |net: &DenseNet| net.forward(&x).iter().zip(&w).map(|(y, w)| y * w).sum::<f64>();

        let mut trace = Trace::default();
        net.forward_trace(&x, &mut trace);
        let mut grads = Gradients::zeros_like(&net);
        net.backward(&trace, &w, &mut grads);

        let h = 1e-6;
        for l in 0..net.layers().len() {
            for is_bias in [false, true] {
                let n = if is_bias {
                    net.layers()[l].biases.len()
                } else {
                    net.layers()[l].weights.len()
                };
                for i in 0..n {
                    let orig = *param_mut(&mut net, l, is_bias, i);
                    *param_mut(&mut net, l, is_bias, i) = orig + h;
                    let up = loss(&net);
                    *param_mut(&mut net, l, is_bias, i) = orig - h;
                    let down = loss(&net);
                    *param_mut(&mut net, l, is_bias, i) = orig;
                    let fd = (up - down) / (2.0 * h);
                    let (gw, gb) = &grads.layers[l];
                    let g = if is_bias { gb[i] } else { gw[i] };
                    let err = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                    worst = worst.max(err);
                }
            }
        }
    }
    worst
}

fn param_mut(net: &mut DenseNet, layer: usize, is_bias: bool, i: usize) -> &mut f64 {
    let layer = &mut net.layers_mut()[layer];
    if is_bias {
        &mut layer.biases[i]
    } else {
        &mut layer.weights[i]
    }
}

// ---------------------------------------------------------------------------
// Two-state, two-action MDP
//
// s0: a0 pays 0.3 and stays, a1 pays 0 and moves to s1.
// s1: a0 pays 1.0 and stays, a1 pays 0 and moves to s0.

pub const TOY_DISCOUNT: f64 = 0.95;

pub fn toy_step(s: usize, a: usize) -> (f64, usize) {
    match (s, a) {
        (0, 0) => (0.3, 0),
        (0, 1) => (0.0, 1),
        (1, 0) => (1.0, 1),
        (1, 1) => (0.0, 0),
        _ => unreachable!(),
    }
}

pub fn one_hot(s: usize) -> Vec<f64> {
    let mut v = vec![0.0; 2];
    v[s] = 1.0;
    v
}

/// Optimal action values by value iteration.
pub fn toy_q_star(discount: f64) -> [[f64; 2]; 2] {
    let mut q = [[0.0f64; 2]; 2];
    for _ in 0..5000 {
        let v = [q[0][0].max(q[0][1]), q[1][0].max(q[1][1])];
        let mut next = [[0.0; 2]; 2];
        for (s, row) in next.iter_mut().enumerate() {
            for (a, slot) in row.iter_mut().enumerate() {
                let (r, s2) = toy_step(s, a);
                *slot = r + discount * v[s2];
            }
        }
        q = next;
    }
    q
}

pub fn toy_greedy(q: &[[f64; 2]; 2]) -> [usize; 2] {
    [usize::from(q[0][1] > q[0][0]), usize::from(q[1][1] > q[1][0])]
}

/// Expected discounted return of `horizon` steps from s0 under the
/// stochastic policy `pi[s][a]`.
pub fn toy_policy_return(pi: &[[f64; 2]; 2], horizon: usize, discount: f64) -> f64 {
    let mut v = [0.0f64; 2];
    for _ in 0..horizon {
        let mut next = [0.0f64; 2];
        for (s, slot) in next.iter_mut().enumerate() {
            for (a, p) in pi[s].iter().enumerate() {
                let (r, s2) = toy_step(s, a);
                *slot += p * (r + discount * v[s2]);
            }
        }
        v = next;
    }
    v[0]
}

pub fn toy_optimal_return(horizon: usize, discount: f64) -> f64 {
    let mut v = [0.0f64; 2];
    for _ in 0..horizon {
        let mut next = [f64::NEG_INFINITY; 2];
        for (s, slot) in next.iter_mut().enumerate() {
            for a in 0..2 {
                let (r, s2) = toy_step(s, a);
                *slot = slot.max(r + discount * v[s2]);
            }
        }
        v = next;
    }
    v[0]
}

/// Trains double-Q on the toy MDP and returns the greedy action per state.
pub fn train_dql_on_toy(steps: u64, seed: u64) -> [usize; 2] {
    let cfg = DqlConfig {
        learning_rate: 1e-3,
        discount: TOY_DISCOUNT,
        warmup: 200,
        replay_capacity: 10_000,
        ..DqlConfig::default()
    };
    let mut agent = DqlAgent::new(2, 2, cfg, seed);
    agent.set_horizon(steps);
    let mut s = 0;
    for k in 0..steps {
        let a = agent.act_index(&one_hot(s), true);
        let (r, s2) = toy_step(s, a);
        agent.remember(Transition {
            state: one_hot(s),
            action: a,
            reward: r,
            next_state: one_hot(s2),
            terminal: false,
            vehicle_id: 0,
            step_index: k as u32,
        });
        agent.learn_step().expect("finite loss");
        s = s2;
    }
    let q0 = agent.q_values(&one_hot(0));
    let q1 = agent.q_values(&one_hot(1));
    toy_greedy(&[[q0[0], q0[1]], [q1[0], q1[1]]])
}

pub const TOY_HORIZON: usize = 50;

/// Trains PPO on `episodes` rollouts of [`TOY_HORIZON`] steps from s0 and
/// returns the final policy table.
pub fn train_ppo_on_toy(episodes: usize, seed: u64) -> [[f64; 2]; 2] {
    let cfg = PpoConfig {
        actor_learning_rate: 1e-3,
        critic_learning_rate: 3e-3,
        discount: TOY_DISCOUNT,
        ..PpoConfig::default()
    };
    let mut agent = PpoAgent::new(2, 2, cfg, seed);
    for _ in 0..episodes {
        let mut s = 0;
        for k in 0..TOY_HORIZON {
            let a = agent.act_index(0, &one_hot(s), true);
            let (r, s2) = toy_step(s, a);
            agent.record(Transition {
                state: one_hot(s),
                action: a,
                reward: r,
                next_state: one_hot(s2),
                terminal: k + 1 == TOY_HORIZON,
                vehicle_id: 0,
                step_index: k as u32,
            });
            s = s2;
        }
        agent.update().expect("finite losses");
    }
    let p0 = agent.probabilities(&one_hot(0));
    let p1 = agent.probabilities(&one_hot(1));
    [[p0[0], p0[1]], [p1[0], p1[1]]]
}

// ---------------------------------------------------------------------------
// Scripted delays for the threshold heuristic

/// Window delays in seconds: calm, a burst above the upper threshold, then
/// a long calm stretch.
pub const SCRIPTED_DELAYS: [f64; 18] = [
    0.030, 0.030, 0.030, 0.030, 0.030, 0.100, 0.100, 0.100, 0.010, 0.010, 0.010, 0.010, 0.010, 0.010, 0.010, 0.010,
    0.010, 0.010,
];

/// Feeds `delays` to a default D-S policy starting in R and returns the
/// mode chosen after each window.
pub fn heuristic_mode_trace(delays: &[f64]) -> Vec<SegmentationMode> {
    let mut policy = HeuristicPolicy::new(HeuristicParams::default());
    policy.begin_episode();
    let state = StateVector(vec![0.0; 5]);
    let mut mode = SegmentationMode::R;
    let mut out = Vec::with_capacity(delays.len());
    for &d in delays {
        let app = AppKpiWindow {
            n_tx: 10,
            n_rx: 10,
            delay_mean: d,
            delay_min: d,
            delay_max: d,
            ..AppKpiWindow::default()
        };
        let obs = StepObservation::new(
            0,
            app,
            LinkStatsWindow::default(),
            mode,
            &SegmentationProfile::default(),
            &KpiThresholds::default(),
        );
        mode = policy.act(&Decision {
            vehicle_id: 0,
            state: &state,
            observation: Some(&obs),
            current_mode: mode,
            explore: false,
        });
        out.push(mode);
    }
    out
}

/// Mode switches as `(from, to)` pairs.
pub fn transitions(start: SegmentationMode, modes: &[SegmentationMode]) -> Vec<(SegmentationMode, SegmentationMode)> {
    let mut prev = start;
    let mut out = Vec::new();
    for &m in modes {
        if m != prev {
            out.push((prev, m));
        }
        prev = m;
    }
    out
}
