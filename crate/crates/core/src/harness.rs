//! Campaigns: train, freeze, evaluate, and write the CSV outputs. Also reads
//! those outputs back for summaries and determinism checks.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::agents::{ConstantPolicy, DqlAgent, HeuristicPolicy, Policy, PolicyKind, PpoAgent};
use crate::app::SegmentationMode;
use crate::config::ExperimentConfig;
use crate::episode::{run_episode, EpisodeInputs, EpisodeResult, Phase, TickRecord, DIGEST_LEVELS};
use crate::error::{Error, Result};
use crate::metrics::quantiles;
use crate::sim::derive_seed;

pub const PER_TICK_FILE: &str = "per_tick.csv";
pub const PER_EPISODE_FILE: &str = "per_episode.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAINING_FILE: &str = "training.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const AGENT_DIR: &str = "agent";

pub const PER_TICK_HEADER: [&str; 14] = [
    "episode",
    "step",
    "vehicle_id",
    "mode",
    "delay_mean_s",
    "delay_min_s",
    "delay_max_s",
    "prp",
    "qos",
    "qoe",
    "reward",
    "sinr_db",
    "mcs",
    "prb_util",
];

pub const PER_EPISODE_HEADER: [&str; 11] = [
    "episode",
    "vehicle_id",
    "mean_reward",
    "mean_qos",
    "mean_qoe",
    "p50_delay_s",
    "p95_delay_s",
    "p50_prp",
    "share_R",
    "share_SC",
    "share_SA",
];

const SUMMARY_ID_COLUMNS: [&str; 8] = [
    "label",
    "policy",
    "num_vehicles",
    "tx_power_dbm",
    "state_config",
    "train_episodes",
    "test_episodes",
    "master_seed",
];

const SUMMARY_EXTRA_COLUMNS: [&str; 10] = [
    "delay_p5_s",
    "delay_p25_s",
    "delay_p50_s",
    "delay_p75_s",
    "delay_p95_s",
    "prp_p5",
    "prp_p25",
    "prp_p50",
    "prp_p75",
    "prp_p95",
];

/// Every column of `summary.csv`, in order.
pub fn summary_header() -> Vec<&'static str> {
    SUMMARY_ID_COLUMNS
        .iter()
        .chain(&PER_EPISODE_HEADER[2..])
        .chain(&SUMMARY_EXTRA_COLUMNS)
        .copied()
        .collect()
}

/// One configuration's aggregate over its test phase, computed from the
/// per-tick rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub policy: PolicyKind,
    pub num_vehicles: u32,
    pub tx_power_dbm: f64,
    pub state_config: String,
    pub train_episodes: u64,
    pub test_episodes: u64,
    pub master_seed: u64,
    pub mean_reward: f64,
    pub mean_qos: f64,
    pub mean_qoe: f64,
    /// Window-mean delay quantiles at [`DIGEST_LEVELS`].
    pub delay_quantiles: [f64; 5],
    /// Window PRP quantiles at [`DIGEST_LEVELS`].
    pub prp_quantiles: [f64; 5],
    pub shares: [f64; 3],
}

impl SummaryRow {
    pub fn from_ticks(cfg: &ExperimentConfig, train_episodes: u64, ticks: &[TickRecord]) -> Self {
        let n = ticks.len().max(1) as f64;
        let mut counts = [0u64; 3];
        for t in ticks {
            counts[t.mode.index()] += 1;
        }
        let delays: Vec<f64> = ticks.iter().map(|t| t.delay_mean_s).collect();
        let prps: Vec<f64> = ticks.iter().map(|t| t.prp).collect();
        let total: u64 = counts.iter().sum::<u64>().max(1);
        SummaryRow {
            label: cfg.label(),
            policy: cfg.experiment.policy,
            num_vehicles: cfg.experiment.num_vehicles,
            tx_power_dbm: cfg.radio.tx_power_dbm,
            state_config: cfg.experiment.state_config.as_str().to_owned(),
            train_episodes,
            test_episodes: cfg.test_episodes(),
            master_seed: cfg.experiment.master_seed,
            mean_reward: ticks.iter().map(|t| t.reward).sum::<f64>() / n,
            mean_qos: ticks.iter().filter(|t| t.qos).count() as f64 / n,
            mean_qoe: ticks.iter().map(|t| t.qoe).sum::<f64>() / n,
            delay_quantiles: five(quantiles(&delays, &DIGEST_LEVELS)),
            prp_quantiles: five(quantiles(&prps, &DIGEST_LEVELS)),
            shares: counts.map(|c| c as f64 / total as f64),
        }
    }

    fn record(&self) -> Vec<String> {
        let mut r = vec![
            self.label.clone(),
            self.policy.to_string(),
            self.num_vehicles.to_string(),
            self.tx_power_dbm.to_string(),
            self.state_config.clone(),
            self.train_episodes.to_string(),
            self.test_episodes.to_string(),
            self.master_seed.to_string(),
            self.mean_reward.to_string(),
            self.mean_qos.to_string(),
            self.mean_qoe.to_string(),
            self.delay_quantiles[2].to_string(),
            self.delay_quantiles[4].to_string(),
            self.prp_quantiles[2].to_string(),
        ];
        r.extend(self.shares.iter().map(f64::to_string));
        r.extend(self.delay_quantiles.iter().map(f64::to_string));
        r.extend(self.prp_quantiles.iter().map(f64::to_string));
        r
    }
}

fn five(v: Vec<f64>) -> [f64; 5] {
    v.try_into().expect("five quantile levels")
}

/// Output locations and headline numbers of a finished campaign.
#[derive(Clone, Debug)]
pub struct CampaignOutput {
    pub dir: PathBuf,
    pub per_tick: Option<PathBuf>,
    pub per_episode: PathBuf,
    pub summary: PathBuf,
    pub config: PathBuf,
    pub training: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub summary_row: SummaryRow,
    /// Mean reward of every training episode, in order.
    pub training_rewards: Vec<f64>,
    pub test_dispatch_digests: Vec<u64>,
}

/// A fresh policy of the configured kind.
pub fn build_policy(cfg: &ExperimentConfig) -> Box<dyn Policy> {
    let e = &cfg.experiment;
    let seed = derive_seed(e.master_seed, "agent", 0);
    let dim = e.state_config.dim();
    match e.policy {
        k @ (PolicyKind::ConstantRaw | PolicyKind::ConstantConservative | PolicyKind::ConstantAggressive) => {
            Box::new(ConstantPolicy::new(k.constant_mode().expect("constant kind")))
        }
        PolicyKind::DelayHeuristic => Box::new(HeuristicPolicy::new(cfg.heuristic.clone())),
        PolicyKind::Dql => Box::new(DqlAgent::new(dim, SegmentationMode::ALL.len(), cfg.dql.clone(), seed)),
        PolicyKind::Ppo => Box::new(PpoAgent::new(dim, SegmentationMode::ALL.len(), cfg.ppo.clone(), seed)),
    }
}

/// Trains `policy` in place for the configured number of episodes and
/// returns each episode's mean reward.
pub fn train(cfg: &ExperimentConfig, inputs: &EpisodeInputs, policy: &mut dyn Policy) -> Result<Vec<f64>> {
    let episodes = cfg.train_episodes();
    let horizon = episodes * cfg.steps_per_episode() * u64::from(cfg.experiment.num_vehicles);
    policy.set_training_horizon(horizon);
    let mut rewards = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        let seed = derive_seed(cfg.experiment.master_seed, "train", i);
        let r = run_episode(cfg, inputs, policy, Phase::Train, i, seed)?;
        log::debug!("train episode {i}: mean reward {:.4}", r.mean_reward());
        rewards.push(r.mean_reward());
    }
    Ok(rewards)
}

/// Runs the test phase with frozen copies of `policy`, in parallel.
pub fn evaluate(cfg: &ExperimentConfig, inputs: &EpisodeInputs, policy: &dyn Policy) -> Result<Vec<EpisodeResult>> {
    let checksum = policy.checksum();
    let copies: Vec<Box<dyn Policy>> = (0..cfg.test_episodes()).map(|_| policy.frozen_copy()).collect();
    let run = || {
        copies
            .into_par_iter()
            .enumerate()
            .map(|(i, mut p)| {
                let seed = derive_seed(cfg.experiment.master_seed, "test", i as u64);
                let r = run_episode(cfg, inputs, p.as_mut(), Phase::Test, i as u64, seed)?;
                if p.checksum() != checksum {
                    return Err(Error::invalid(
                        "test phase",
                        format!("parameters changed in episode {i}"),
                    ));
                }
                Ok(r)
            })
            .collect::<Result<Vec<_>>>()
    };
    match cfg.experiment.workers {
        0 => run(),
        w => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run),
    }
}

/// Trains (for learning policies), evaluates and writes every output file
/// into `out`.
pub fn run_campaign(cfg: &ExperimentConfig, out: &Path) -> Result<CampaignOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let config_path = out.join(CONFIG_FILE);
    write_file(&config_path, cfg.to_toml().as_bytes())?;

    let inputs = EpisodeInputs::load(cfg)?;
    let mut policy = build_policy(cfg);
    let training_rewards = train(cfg, &inputs, policy.as_mut())?;
    let (training, checkpoint) = if cfg.experiment.policy.learns() {
        let t = out.join(TRAINING_FILE);
        write_training(&t, &training_rewards)?;
        let c = out.join(AGENT_DIR);
        policy.save(&c)?;
        (Some(t), Some(c))
    } else {
        (None, None)
    };

    let results = evaluate(cfg, &inputs, policy.as_ref())?;
    let ticks: Vec<TickRecord> = results.iter().flat_map(|r| r.ticks.iter().cloned()).collect();
    let per_tick = if cfg.experiment.write_per_tick {
        let p = out.join(PER_TICK_FILE);
        write_per_tick(&p, &ticks)?;
        Some(p)
    } else {
        None
    };
    let per_episode = out.join(PER_EPISODE_FILE);
    write_per_episode(&per_episode, &results)?;
    let summary_row = SummaryRow::from_ticks(cfg, training_rewards.len() as u64, &ticks);
    let summary = out.join(SUMMARY_FILE);
    write_summary(&summary, std::slice::from_ref(&summary_row))?;
    Ok(CampaignOutput {
        dir: out.to_owned(),
        per_tick,
        per_episode,
        summary,
        config: config_path,
        training,
        checkpoint,
        summary_row,
        training_rewards,
        test_dispatch_digests: results.iter().map(|r| r.dispatch_digest).collect(),
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| Error::Csv {
        path: path.to_owned(),
        source: e,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Csv {
        path: path.to_owned(),
        source: e,
    }
}

fn flush(mut w: csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_per_tick(path: &Path, ticks: &[TickRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(PER_TICK_HEADER).map_err(csv_err(path))?;
    for t in ticks {
        w.write_record([
            t.episode.to_string(),
            t.step.to_string(),
            t.vehicle_id.to_string(),
            t.mode.to_string(),
            t.delay_mean_s.to_string(),
            t.delay_min_s.to_string(),
            t.delay_max_s.to_string(),
            t.prp.to_string(),
            u8::from(t.qos).to_string(),
            t.qoe.to_string(),
            t.reward.to_string(),
            t.sinr_db.to_string(),
            t.mcs.to_string(),
            t.prb_util.to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    flush(w, path)
}

pub fn write_per_episode(path: &Path, results: &[EpisodeResult]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(PER_EPISODE_HEADER).map_err(csv_err(path))?;
    for r in results {
        for v in &r.vehicles {
            let mut rec = vec![
                r.episode.to_string(),
                v.vehicle_id.to_string(),
                v.mean_reward.to_string(),
                v.mean_qos.to_string(),
                v.mean_qoe.to_string(),
                v.delay_digest[2].to_string(),
                v.delay_digest[4].to_string(),
                v.prp_digest[2].to_string(),
            ];
            rec.extend(SegmentationMode::ALL.iter().map(|&m| v.share(m).to_string()));
            w.write_record(&rec).map_err(csv_err(path))?;
        }
    }
    flush(w, path)
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(summary_header()).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r.record()).map_err(csv_err(path))?;
    }
    flush(w, path)
}

fn write_training(path: &Path, rewards: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["train_episode", "mean_reward"])
        .map_err(csv_err(path))?;
    for (i, r) in rewards.iter().enumerate() {
        w.write_record([i.to_string(), r.to_string()]).map_err(csv_err(path))?;
    }
    flush(w, path)
}

/// Column positions of `wanted` in a CSV header, or the first missing name.
fn locate<const N: usize>(headers: &csv::StringRecord, wanted: &[&str; N], file: &Path) -> Result<[usize; N]> {
    let mut idx = [0usize; N];
    for (slot, name) in idx.iter_mut().zip(wanted) {
        *slot = headers.iter().position(|h| h == *name).ok_or_else(|| Error::Schema {
            file: file.to_owned(),
            column: (*name).to_owned(),
        })?;
    }
    Ok(idx)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| Error::Parse {
        what: "per-tick csv",
        line,
        msg: format!("missing `{name}`"),
    })?;
    raw.trim().parse().map_err(|e: T::Err| Error::Parse {
        what: "per-tick csv",
        line,
        msg: format!("`{name}` = {raw:?}: {e}"),
    })
}

/// Parses a per-tick CSV. `file` only labels errors.
pub fn read_per_tick<R: Read>(input: R, file: &Path) -> Result<Vec<TickRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rd.headers().map_err(csv_err(file))?.clone();
    let c = locate(&headers, &PER_TICK_HEADER, file)?;
    let mut out = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err(file))?;
        let line = k as u64 + 2;
        let mode: SegmentationMode = field(&rec, c[3], "mode", line)?;
        let qos = match rec.get(c[8]).map(str::trim) {
            Some("1") | Some("true") => true,
            Some("0") | Some("false") => false,
            other => {
                return Err(Error::Parse {
                    what: "per-tick csv",
                    line,
                    msg: format!("`qos` = {other:?}"),
                })
            }
        };
        let t = TickRecord {
            episode: field(&rec, c[0], "episode", line)?,
            step: field(&rec, c[1], "step", line)?,
            vehicle_id: field(&rec, c[2], "vehicle_id", line)?,
            mode,
            delay_mean_s: field(&rec, c[4], "delay_mean_s", line)?,
            delay_min_s: field(&rec, c[5], "delay_min_s", line)?,
            delay_max_s: field(&rec, c[6], "delay_max_s", line)?,
            prp: field(&rec, c[7], "prp", line)?,
            qos,
            qoe: field(&rec, c[9], "qoe", line)?,
            reward: field(&rec, c[10], "reward", line)?,
            sinr_db: field(&rec, c[11], "sinr_db", line)?,
            mcs: field(&rec, c[12], "mcs", line)?,
            prb_util: field(&rec, c[13], "prb_util", line)?,
        };
        if !(0.0..=1.0).contains(&t.prp) || !(0.0..=1.0).contains(&t.reward) || !(0.0..=1.0).contains(&t.qoe) {
            return Err(Error::Parse {
                what: "per-tick csv",
                line,
                msg: "prp, qoe and reward must lie in [0, 1]".into(),
            });
        }
        out.push(t);
    }
    Ok(out)
}

/// Checks that a summary CSV carries every expected column and returns its rows.
pub fn read_summary<R: Read>(input: R, file: &Path) -> Result<Vec<csv::StringRecord>> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let headers = rd.headers().map_err(csv_err(file))?.clone();
    for name in summary_header() {
        if !headers.iter().any(|h| h == name) {
            return Err(Error::Schema {
                file: file.to_owned(),
                column: name.to_owned(),
            });
        }
    }
    rd.records().map(|r| r.map_err(csv_err(file))).collect()
}

fn campaign_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(PER_TICK_FILE).is_file() {
        return Ok(vec![dir.to_owned()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(PER_TICK_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Recomputes one summary row per campaign found under `dir` (either `dir`
/// itself or its immediate subdirectories) and writes `dir/summary.csv`.
pub fn summarize(dir: &Path) -> Result<Vec<SummaryRow>> {
    let dirs = campaign_dirs(dir)?;
    if dirs.is_empty() {
        return Err(Error::Schema {
            file: dir.join(PER_TICK_FILE),
            column: "episode".into(),
        });
    }
    let mut rows = Vec::with_capacity(dirs.len());
    for d in &dirs {
        let cfg = ExperimentConfig::load(&d.join(CONFIG_FILE))?;
        let path = d.join(PER_TICK_FILE);
        let f = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let ticks = read_per_tick(std::io::BufReader::new(f), &path)?;
        let trained = count_training_rows(&d.join(TRAINING_FILE))?;
        rows.push(SummaryRow::from_ticks(&cfg, trained, &ticks));
    }
    write_summary(&dir.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}

fn count_training_rows(path: &Path) -> Result<u64> {
    if !path.is_file() {
        return Ok(0);
    }
    let mut rd = csv::Reader::from_path(path).map_err(csv_err(path))?;
    Ok(rd.records().count() as u64)
}

/// Outcome of re-running a campaign from its echoed configuration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReplayReport {
    pub files_compared: Vec<String>,
    /// `file: first differing line` for each mismatch.
    pub differences: Vec<String>,
}

impl ReplayReport {
    pub fn identical(&self) -> bool {
        self.differences.is_empty()
    }
}

/// Re-runs the campaign in `dir` into `scratch` and diffs every output.
pub fn replay_check(dir: &Path, scratch: &Path) -> Result<ReplayReport> {
    let cfg = ExperimentConfig::load(&dir.join(CONFIG_FILE))?;
    run_campaign(&cfg, scratch)?;
    let mut report = ReplayReport::default();
    for name in [
        CONFIG_FILE,
        PER_TICK_FILE,
        PER_EPISODE_FILE,
        SUMMARY_FILE,
        TRAINING_FILE,
    ] {
        let a = dir.join(name);
        if !a.is_file() {
            continue;
        }
        report.files_compared.push(name.to_owned());
        let left = std::fs::read(&a).map_err(|e| Error::io(&a, e))?;
        let b = scratch.join(name);
        let right = std::fs::read(&b).unwrap_or_default();
        if left != right {
            let line = left
                .split(|&c| c == b'\n')
                .zip(right.split(|&c| c == b'\n'))
                .position(|(x, y)| x != y)
                .unwrap_or_else(|| {
                    left.iter()
                        .filter(|&&c| c == b'\n')
                        .count()
                        .min(right.iter().filter(|&&c| c == b'\n').count())
                });
            report.differences.push(format!("{name}: line {}", line + 1));
        }
    }
    Ok(report)
}

/// Appends a human-readable line per summary row to `w`.
pub fn print_summary<W: Write>(w: &mut W, rows: &[SummaryRow]) -> std::io::Result<()> {
    writeln!(
        w,
        "{:<28} {:>8} {:>8} {:>8} {:>10} {:>6} {:>6} {:>6}",
        "label", "reward", "qos", "qoe", "p50_delay", "R", "SC", "SA"
    )?;
    for r in rows {
        writeln!(
            w,
            "{:<28} {:>8.4} {:>8.4} {:>8.4} {:>10.4} {:>6.3} {:>6.3} {:>6.3}",
            r.label, r.mean_reward, r.mean_qos, r.mean_qoe, r.delay_quantiles[2], r.shares[0], r.shares[1], r.shares[2]
        )?;
    }
    Ok(())
}
