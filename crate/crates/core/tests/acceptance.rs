//! Acceptance gates. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.
//!
//! Campaigns use the same code path as `ranai run` and write their CSV
//! outputs into a scratch directory; figures come from the summary rows.

mod common;

use std::collections::HashMap;
use std::time::{Duration, Instant};

use ranai_core::agents::{clipped_surrogate, double_q_target, PolicyKind};
use ranai_core::config::{ExperimentConfig, Profile};
use ranai_core::harness::{self, SummaryRow};
use ranai_core::metrics::{chamfer_distance, prp, qoe, qos, reward, KpiThresholds, StateConfig};

use common::*;

struct Gate {
    id: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
    limit: Duration,
}

fn gate(id: &'static str, limit_s: u64, f: impl FnOnce() -> (bool, String)) -> Gate {
    let t = Instant::now();
    let (pass, detail) = f();
    let elapsed = t.elapsed();
    let limit = Duration::from_secs(limit_s);
    let gate = Gate {
        id,
        pass: pass && elapsed <= limit,
        detail,
        elapsed,
        limit,
    };
    println!(
        "{} {}: {} [{:.1} s, limit {} s]",
        gate.id,
        if gate.pass { "PASS" } else { "FAIL" },
        gate.detail,
        gate.elapsed.as_secs_f64(),
        gate.limit.as_secs()
    );
    gate
}

/// Runs and memoises campaigns by label.
struct Campaigns {
    dir: tempfile::TempDir,
    rows: HashMap<String, SummaryRow>,
}

impl Campaigns {
    fn new() -> Self {
        Campaigns {
            dir: tempfile::tempdir().expect("scratch dir"),
            rows: HashMap::new(),
        }
    }

    fn run(&mut self, cfg: &ExperimentConfig) -> SummaryRow {
        let label = format!("{}_{:?}", cfg.label(), cfg.experiment.profile);
        if let Some(r) = self.rows.get(&label) {
            return r.clone();
        }
        let out = harness::run_campaign(cfg, &self.dir.path().join(&label)).expect("campaign runs");
        self.rows.insert(label, out.summary_row.clone());
        out.summary_row
    }

    fn benchmark(&mut self, kind: PolicyKind, n: u32) -> SummaryRow {
        let mut cfg = config(kind, n, 1);
        cfg.radio.tx_power_dbm = 30.0;
        self.run(&cfg)
    }

    fn smoke(&mut self, kind: PolicyKind, state: StateConfig) -> SummaryRow {
        let mut cfg = config(kind, 5, 1);
        cfg.radio.tx_power_dbm = 30.0;
        cfg.experiment.profile = Profile::Smoke;
        cfg.experiment.state_config = state;
        self.run(&cfg)
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn p1() -> (bool, String) {
    let t = KpiThresholds::default();
    let half = KpiThresholds {
        alpha: 0.5,
        ..KpiThresholds::default()
    };
    let tol = 1e-12;
    let checks = [
        ("prp(90,100)", close(prp(90, 100), 0.9, tol)),
        ("prp(0,100)", prp(0, 100) == 0.0),
        ("prp(0,0)", prp(0, 0) == 1.0),
        ("qos(40ms,1)", qos(0.040, 1.0, &t)),
        ("qos(60ms,1)", !qos(0.060, 1.0, &t)),
        ("qos(40ms,.99)", !qos(0.040, 0.99, &t)),
        ("qoe(0)", qoe(0.0, &t) == 1.0),
        ("qoe(45)", qoe(45.0, &t) == 0.0),
        ("qoe(22.5)", close(qoe(22.5, &t), 0.5, tol)),
        ("reward(no qos)", reward(0.010, false, 0.9, &t) == 0.0),
        ("reward(a=1,qoe .7)", close(reward(0.010, true, 0.7, &t), 0.7, tol)),
        ("reward(a=.5)", close(reward(0.025, true, 0.8, &half), 0.65, tol)),
        (
            "chamfer(identical)",
            chamfer_distance(&[[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]], &[[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]]).unwrap() == 0.0,
        ),
        (
            "chamfer(1 pt)",
            chamfer_distance(&[[0.0; 3]], &[[1.0, 0.0, 0.0]]).unwrap() == 2.0,
        ),
        (
            "chamfer(2 vs 1)",
            chamfer_distance(&[[0.0; 3], [2.0, 0.0, 0.0]], &[[1.0, 0.0, 0.0]]).unwrap() == 3.0,
        ),
        ("chamfer(empty)", chamfer_distance(&[], &[[1.0, 0.0, 0.0]]).is_err()),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    (
        failed.is_empty(),
        format!(
            "{}/{} formula examples, tol {tol:e}; failed {failed:?}",
            checks.len() - failed.len(),
            checks.len()
        ),
    )
}

fn p2() -> (bool, String) {
    let worst = worst_gradient_error(100, 11);
    (
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 100 nets (< 1e-4)"),
    )
}

fn p3() -> (bool, String) {
    let y = double_q_target(0.5, 0.9, &[0.2, 0.7, 0.1], &[1.5, 0.98, 3.0], false);
    let s = clipped_surrogate(1.5, 1.0, 0.2);
    let hand = close(y, 1.382, 1e-9) && close(s, 1.2, 1e-9);
    let oracle = toy_greedy(&toy_q_star(TOY_DISCOUNT));
    let dql = train_dql_on_toy(20_000, 1);
    let best = toy_optimal_return(TOY_HORIZON, TOY_DISCOUNT);
    let got = toy_policy_return(&train_ppo_on_toy(1000, 1), TOY_HORIZON, TOY_DISCOUNT);
    (
        hand && dql == oracle && got >= 0.95 * best,
        format!(
            "double-Q y={y:.9} (1.382), surrogate={s:.9} (1.2); DQL greedy {dql:?} vs value iteration {oracle:?}; \
             PPO return {got:.3} = {:.1}% of optimum {best:.3} (>= 95%)",
            100.0 * got / best
        ),
    )
}

fn p4() -> (bool, String) {
    let bad = conservation_violations(20, 5);
    let dir = tempfile::tempdir().expect("scratch dir");
    let mut cfg = config(PolicyKind::DelayHeuristic, 3, 2);
    cfg.experiment.test_episodes = Some(2);
    harness::run_campaign(&cfg, dir.path()).expect("campaign runs");
    let scratch = tempfile::tempdir().expect("scratch dir");
    let report = harness::replay_check(dir.path(), scratch.path()).expect("replay runs");
    (
        bad.is_empty() && report.identical(),
        format!(
            "{} of 20 episodes unbalanced; replay-check compared {} files, {} differ",
            bad.len(),
            report.files_compared.len(),
            report.differences.len()
        ),
    )
}

fn p5(c: &mut Campaigns) -> (bool, String) {
    // offered load in MB/s for R, SC, SA
    let profile = ranai_core::app::SegmentationProfile::default();
    let fps = ranai_core::app::AppConfig::default().frame_rate_fps as f64;
    let load: Vec<f64> = ranai_core::app::SegmentationMode::ALL
        .iter()
        .map(|&m| profile.frame_bytes(m) as f64 * fps / 1e6)
        .collect();
    let load_ok = close(load[0], 2.0, 1e-9) && close(load[1], 1.0, 1e-9) && close(load[2], 0.18, 1e-9);
    let r10 = c.benchmark(PolicyKind::ConstantRaw, 10).mean_qos;
    let r1 = c.benchmark(PolicyKind::ConstantRaw, 1).mean_qos;
    (
        load_ok && r10 < 0.1 && r1 > 0.6,
        format!("offered MB/s per vehicle {load:?}; QoS C-R N=10 {r10:.3} (< 0.1), N=1 {r1:.3} (> 0.6)"),
    )
}

fn p6(c: &mut Campaigns) -> (bool, String) {
    let [r, sc, sa] = [
        PolicyKind::ConstantRaw,
        PolicyKind::ConstantConservative,
        PolicyKind::ConstantAggressive,
    ]
    .map(|k| c.benchmark(k, 10).mean_qos);
    let [er, esc, esa] = [
        PolicyKind::ConstantRaw,
        PolicyKind::ConstantConservative,
        PolicyKind::ConstantAggressive,
    ]
    .map(|k| c.benchmark(k, 1).mean_qoe);
    let qos_ok = sa - sc >= 0.05 && sc - r >= 0.05;
    let qoe_ok = er >= esc && esc >= esa;
    (
        qos_ok && qoe_ok,
        format!(
            "N=10 QoS SA {sa:.3} >= SC {sc:.3} >= R {r:.3} (gaps >= 0.05); N=1 QoE R {er:.3} >= SC {esc:.3} >= SA {esa:.3}"
        ),
    )
}

fn p7(c: &mut Campaigns) -> (bool, String) {
    let constants = [
        PolicyKind::ConstantRaw,
        PolicyKind::ConstantConservative,
        PolicyKind::ConstantAggressive,
    ]
    .map(|k| c.benchmark(k, 5).mean_reward);
    let best_constant = constants.iter().copied().fold(f64::MIN, f64::max);
    let ds = c.benchmark(PolicyKind::DelayHeuristic, 5).mean_reward;
    let best_benchmark = best_constant.max(ds);
    let ppo = c.smoke(PolicyKind::Ppo, StateConfig::Full).mean_reward;
    let dql = c.smoke(PolicyKind::Dql, StateConfig::Full).mean_reward;
    (
        ppo >= 1.05 * best_benchmark && dql >= 0.95 * best_constant,
        format!(
            "N=5 reward C-R/C-SC/C-SA {:.3}/{:.3}/{:.3}, D-S {ds:.3}; PPO {ppo:.3} (>= {:.3}), DQL {dql:.3} (>= {:.3})",
            constants[0],
            constants[1],
            constants[2],
            1.05 * best_benchmark,
            0.95 * best_constant
        ),
    )
}

fn p8(c: &mut Campaigns) -> (bool, String) {
    let [full, phy_net, app] =
        [StateConfig::Full, StateConfig::PhyNet, StateConfig::App].map(|s| c.smoke(PolicyKind::Dql, s).mean_reward);
    (
        full >= phy_net && phy_net >= app && full - app >= 0.05,
        format!(
            "DQL smoke reward FULL {full:.4} >= PHY_NET {phy_net:.4} >= APP {app:.4}, FULL-APP {:.4} (>= 0.05)",
            full - app
        ),
    )
}

fn p9() -> (bool, String) {
    use ranai_core::app::SegmentationMode::*;
    let modes = heuristic_mode_trace(&SCRIPTED_DELAYS);
    let switches = transitions(R, &modes);
    (
        switches == [(R, SC), (SC, R)],
        format!("switches {switches:?} on {} scripted windows", SCRIPTED_DELAYS.len()),
    )
}

fn main() {
    let mut c = Campaigns::new();
    let gates = [
        gate("P1", 1, p1),
        gate("P2", 10, p2),
        gate("P3", 120, p3),
        gate("P4", 120, p4),
        gate("P5", 600, || p5(&mut c)),
        gate("P6", 900, || p6(&mut c)),
        gate("P7", 3600, || p7(&mut c)),
        gate("P8", 7200, || p8(&mut c)),
        gate("P9", 1, p9),
    ];
    let failed: Vec<&str> = gates.iter().filter(|g| !g.pass).map(|g| g.id).collect();
    println!("acceptance: {}/{} passed", gates.len() - failed.len(), gates.len());
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
