mod common;

use std::fs;
use std::path::Path;

use common::config;
use ranai_core::agents::PolicyKind;
use ranai_core::app::SegmentationMode;
use ranai_core::episode::TickRecord;
use ranai_core::harness::{self, SummaryRow, PER_EPISODE_HEADER, PER_TICK_HEADER};
use ranai_core::Error;

fn header(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    text.lines().next().unwrap().split(',').map(str::to_owned).collect()
}

fn tick(step: u32, delay: f64) -> TickRecord {
    TickRecord {
        episode: 0,
        step,
        vehicle_id: 0,
        mode: SegmentationMode::SC,
        delay_mean_s: delay,
        delay_min_s: delay,
        delay_max_s: delay,
        prp: 1.0,
        qos: true,
        qoe: 0.7,
        reward: 0.7,
        sinr_db: 10.0,
        mcs: 12.0,
        prb_util: 0.5,
    }
}

#[test]
fn campaign_outputs_follow_the_schemas_and_replay_identically() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(PolicyKind::DelayHeuristic, 2, 8);
    cfg.experiment.test_episodes = Some(2);
    let out = harness::run_campaign(&cfg, dir.path()).unwrap();

    assert_eq!(header(out.per_tick.as_ref().unwrap()), PER_TICK_HEADER);
    assert_eq!(header(&out.per_episode), PER_EPISODE_HEADER);
    assert_eq!(header(&out.summary), harness::summary_header());
    let ticks =
        harness::read_per_tick(fs::File::open(out.per_tick.as_ref().unwrap()).unwrap(), Path::new("t")).unwrap();
    assert_eq!(ticks.len() as u64, 2 * 2 * cfg.steps_per_episode());
    let rows = harness::read_summary(fs::File::open(&out.summary).unwrap(), Path::new("s")).unwrap();
    assert_eq!(rows.len(), 1);

    let summary_before = fs::read(&out.summary).unwrap();
    let recomputed = harness::summarize(dir.path()).unwrap();
    assert_eq!(recomputed, vec![out.summary_row.clone()]);
    assert_eq!(fs::read(&out.summary).unwrap(), summary_before);

    let scratch = tempfile::tempdir().unwrap();
    let report = harness::replay_check(dir.path(), scratch.path()).unwrap();
    assert!(report.identical(), "{:?}", report.differences);
    assert!(report.files_compared.iter().any(|f| f == "per_tick.csv"));
}

#[test]
fn replay_check_reports_a_tampered_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(PolicyKind::ConstantRaw, 1, 3);
    cfg.experiment.test_episodes = Some(1);
    let out = harness::run_campaign(&cfg, dir.path()).unwrap();
    let mut text = fs::read_to_string(&out.per_episode).unwrap();
    text.push_str("tampered\n");
    fs::write(&out.per_episode, text).unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let report = harness::replay_check(dir.path(), scratch.path()).unwrap();
    assert_eq!(report.differences.len(), 1);
    assert!(report.differences[0].starts_with("per_episode.csv"));
}

#[test]
fn learning_campaign_writes_training_curve_and_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(PolicyKind::Dql, 1, 5);
    cfg.experiment.train_episodes = Some(2);
    cfg.experiment.test_episodes = Some(1);
    let out = harness::run_campaign(&cfg, dir.path()).unwrap();
    assert_eq!(out.training_rewards.len(), 2);
    let training = fs::read_to_string(out.training.unwrap()).unwrap();
    assert_eq!(training.lines().count(), 3);
    let agent = out.checkpoint.unwrap();
    for f in ["agent.json", "online.rann", "target.rann"] {
        assert!(agent.join(f).is_file(), "{f}");
    }
    assert_eq!(out.summary_row.train_episodes, 2);
}

#[test]
fn summary_median_of_window_delays() {
    let cfg = config(PolicyKind::ConstantConservative, 1, 1);
    let ticks: Vec<TickRecord> = [0.010, 0.020, 0.030, 0.040, 0.050]
        .iter()
        .enumerate()
        .map(|(i, &d)| tick(i as u32, d))
        .collect();
    let row = SummaryRow::from_ticks(&cfg, 0, &ticks);
    assert!((row.delay_quantiles[2] - 0.030).abs() < 1e-12);
    assert!((row.mean_reward - 0.7).abs() < 1e-12);
    assert_eq!(row.shares, [0.0, 1.0, 0.0]);
}

#[test]
fn per_tick_reader_names_missing_columns_and_bad_lines() {
    let missing = "episode,step,vehicle_id,mode\n0,0,0,R\n";
    match harness::read_per_tick(missing.as_bytes(), Path::new("x.csv")) {
        Err(Error::Schema { column, .. }) => assert_eq!(column, "delay_mean_s"),
        other => panic!("{other:?}"),
    }
    let head = PER_TICK_HEADER.join(",");
    let bad = format!("{head}\n0,0,0,R,0.01,0.01,0.01,1,1,1,1,5,3,0.2\n0,1,0,R,abc,0.01,0.01,1,1,1,1,5,3,0.2\n");
    match harness::read_per_tick(bad.as_bytes(), Path::new("x.csv")) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    let out_of_range = format!("{head}\n0,0,0,R,0.01,0.01,0.01,1.5,1,1,1,5,3,0.2\n");
    assert!(harness::read_per_tick(out_of_range.as_bytes(), Path::new("x.csv")).is_err());
}

#[test]
fn summary_reader_requires_every_column() {
    assert!(matches!(
        harness::read_summary("label,policy\nx,C-R\n".as_bytes(), Path::new("s.csv")),
        Err(Error::Schema { .. })
    ));
}
