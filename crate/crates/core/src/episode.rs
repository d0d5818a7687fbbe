//! One simulated drive: builds a fresh cell, runs the event loop for the
//! episode duration and digests what happened.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::agents::Policy;
use crate::app::{AppModel, FrameSizeTrace, PendingPdu, SegmentationMode};
use crate::channel::{self, ChannelState, ChannelTrace, SnrReference};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::metrics::{quantiles, Normalization, StepObservation};
use crate::orchestrator::RanAi;
use crate::ran::{DeliveryRecord, McsTable, RanCell};
use crate::sim::{EventQueue, RngStream, SimTime};

/// Quantile levels of the per-vehicle digests.
pub const DIGEST_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    Train,
    Test,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Test => "test",
        }
    }
}

#[derive(Debug)]
enum EventKind {
    FrameGeneration,
    TtiTick,
    ChannelUpdate,
    RanAiTick,
    PacketDelivery(Vec<DeliveryRecord>),
    EpisodeEnd,
}

impl EventKind {
    fn tag(&self) -> u64 {
        match self {
            EventKind::FrameGeneration => 1,
            EventKind::TtiTick => 2,
            EventKind::ChannelUpdate => 3,
            EventKind::RanAiTick => 4,
            EventKind::PacketDelivery(_) => 5,
            EventKind::EpisodeEnd => 6,
        }
    }
}

/// Loaded once per campaign and shared by every episode.
#[derive(Clone, Debug)]
pub struct EpisodeInputs {
    pub mcs: McsTable,
    pub channel_trace: Option<Arc<ChannelTrace>>,
    pub frame_sizes: Option<Arc<FrameSizeTrace>>,
}

impl EpisodeInputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let channel_trace = match &cfg.experiment.channel_trace {
            Some(p) => Some(Arc::new(channel::load_trace(p, cfg.experiment.episode_duration_s)?)),
            None => None,
        };
        let frame_sizes = match &cfg.app.frame_size_trace {
            Some(p) => Some(Arc::new(FrameSizeTrace::load(p)?)),
            None => None,
        };
        Ok(EpisodeInputs {
            mcs: cfg.ran.mcs_table(cfg.custom_mcs())?,
            channel_trace,
            frame_sizes,
        })
    }
}

/// One row of the per-tick log: one vehicle, one closed window.
#[derive(Clone, Debug, PartialEq)]
pub struct TickRecord {
    pub episode: u64,
    pub step: u32,
    pub vehicle_id: u32,
    pub mode: SegmentationMode,
    pub delay_mean_s: f64,
    pub delay_min_s: f64,
    pub delay_max_s: f64,
    pub prp: f64,
    pub qos: bool,
    pub qoe: f64,
    pub reward: f64,
    pub sinr_db: f64,
    pub mcs: f64,
    pub prb_util: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VehicleEpisode {
    pub vehicle_id: u32,
    pub mean_reward: f64,
    pub mean_qos: f64,
    pub mean_qoe: f64,
    /// Packet delay quantiles at [`DIGEST_LEVELS`].
    pub delay_digest: [f64; 5],
    /// Per-window PRP quantiles at [`DIGEST_LEVELS`].
    pub prp_digest: [f64; 5],
    /// Windows spent in R, SC, SA.
    pub action_counts: [u64; 3],
    pub packets_delivered: u64,
}

impl VehicleEpisode {
    pub fn share(&self, mode: SegmentationMode) -> f64 {
        let total: u64 = self.action_counts.iter().sum();
        if total == 0 {
            0.0
        } else {
            self.action_counts[mode.index()] as f64 / total as f64
        }
    }
}

/// Where every generated byte is at the end of the episode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ByteLedger {
    pub generated: u64,
    pub encoding: u64,
    pub queued: u64,
    pub dropped: u64,
    pub in_transit: u64,
    pub delivered: u64,
}

impl ByteLedger {
    pub fn balanced(&self) -> bool {
        self.generated == self.encoding + self.queued + self.dropped + self.in_transit + self.delivered
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeResult {
    pub episode: u64,
    pub phase: Phase,
    pub seed: u64,
    pub ticks: Vec<TickRecord>,
    pub vehicles: Vec<VehicleEpisode>,
    pub bytes: ByteLedger,
    pub events_dispatched: u64,
    /// Hash of the `(time, kind)` dispatch sequence.
    pub dispatch_digest: u64,
}

impl EpisodeResult {
    pub fn mean_reward(&self) -> f64 {
        mean(self.vehicles.iter().map(|v| v.mean_reward))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn mix(h: u64, x: u64) -> u64 {
    (h ^ x).wrapping_mul(0x0000_0100_0000_01b3)
}

struct Sim<'a> {
    cfg: &'a ExperimentConfig,
    app: AppModel,
    cell: RanCell,
    channel: ChannelState,
    ranai: RanAi,
    channel_rng: RngStream,
    fading_rng: RngStream,
    snr: Vec<f64>,
    released: Vec<PendingPdu>,
    in_transit: u64,
    ticks: Vec<TickRecord>,
    episode: u64,
}

impl Sim<'_> {
    fn n(&self) -> usize {
        self.snr.len()
    }

    fn on_tti(&mut self, now: SimTime) -> Option<Vec<DeliveryRecord>> {
        for v in 0..self.n() {
            self.released.clear();
            self.app.release_ready(v, now, &mut self.released);
            for p in &self.released {
                self.cell.enqueue_pdu(v, p.bytes, now, p.frame_id, p.packet_index);
            }
        }
        let radio = self.channel.radio();
        let bw = match radio.snr_reference {
            SnrReference::FullBand => radio.bandwidth_hz,
            SnrReference::Allocated => radio.bandwidth_hz / self.cell.backlogged_count().max(1) as f64,
        };
        let jitter = radio.fading_jitter_db;
        for v in 0..self.snr.len() {
            let mut s = channel::snr(self.channel.pathloss_db(v), bw, radio);
            if jitter > 0.0 {
                let z: f64 = StandardNormal.sample(&mut self.fading_rng);
                s += jitter * z;
            }
            self.snr[v] = s;
        }
        let out = self.cell.schedule_tti(&self.snr, now);
        if out.is_empty() {
            return None;
        }
        self.in_transit += out.iter().map(|r| u64::from(r.pdu_bytes)).sum::<u64>();
        Some(out)
    }

    fn close_windows(&mut self, now: SimTime) -> Vec<StepObservation> {
        let period = self.ranai.update_period();
        let step = (now.as_micros() / period.as_micros() - 1) as u32;
        let thr = &self.cfg.thresholds;
        (0..self.n())
            .map(|v| {
                let app = self.app.window_kpis(v, period, thr.empty_window_delay());
                let link = self.cell.collect_window_stats(v, period);
                let o = StepObservation::new(v as u32, app, link, self.app.mode(v), self.app.profile(), thr);
                self.ticks.push(TickRecord {
                    episode: self.episode,
                    step,
                    vehicle_id: v as u32,
                    mode: o.mode,
                    delay_mean_s: o.app.delay_mean,
                    delay_min_s: o.app.delay_min,
                    delay_max_s: o.app.delay_max,
                    prp: o.prp,
                    qos: o.qos,
                    qoe: o.qoe,
                    reward: o.reward,
                    sinr_db: o.link.mean_sinr,
                    mcs: o.link.mean_mcs_index,
                    prb_util: o.link.prb_utilization,
                });
                o
            })
            .collect()
    }
}

/// Runs one episode of `cfg` with `policy`. In the test phase the caller
/// passes a frozen policy and exploration is off.
pub fn run_episode(
    cfg: &ExperimentConfig,
    inputs: &EpisodeInputs,
    policy: &mut dyn Policy,
    phase: Phase,
    episode: u64,
    seed: u64,
) -> Result<EpisodeResult> {
    let n = cfg.experiment.num_vehicles as usize;
    let mut channel_rng = RngStream::new("channel", seed);
    let channel = match &inputs.channel_trace {
        Some(t) => ChannelState::from_trace(n, Arc::clone(t), &cfg.radio)?,
        None => ChannelState::parametric(n, &cfg.radio, &cfg.scenario, &mut channel_rng),
    };
    let norm = Normalization::new(
        &cfg.thresholds,
        &cfg.app.profile,
        cfg.app.frame_rate_fps,
        cfg.app.pdu_payload_bytes,
        inputs.mcs.max_index(),
        cfg.ran.buffer_capacity_bytes,
    );
    let mut ranai = RanAi::new(cfg.update_period(), cfg.experiment.state_config, norm);
    let initial = cfg.experiment.initial_mode;
    for v in 0..n as u32 {
        ranai.register_vehicle(v, initial);
    }
    let mut sim = Sim {
        cfg,
        app: AppModel::new(n, initial, &cfg.app, inputs.frame_sizes.clone()),
        cell: RanCell::new(n, &cfg.ran, inputs.mcs.clone(), cfg.radio.bandwidth_hz),
        channel,
        ranai,
        channel_rng,
        fading_rng: RngStream::new("fading", seed),
        snr: vec![0.0; n],
        released: Vec::new(),
        in_transit: 0,
        ticks: Vec::with_capacity(n * cfg.steps_per_episode() as usize),
        episode,
    };

    let t_end = cfg.episode_duration();
    let tti = sim.cell.tti();
    let frame_period = cfg.app.frame_period();
    let mobility_period = SimTime::from_millis(cfg.scenario.update_period_ms);
    let update_period = cfg.update_period();
    let delivery_lag = tti + SimTime::from_millis(cfg.ran.core_network_delay_ms);
    let explore = phase == Phase::Train;

    // Same-time order follows scheduling order: decision, frame, channel, TTI.
    let mut q: EventQueue<EventKind> = EventQueue::new();
    q.schedule(t_end, EventKind::EpisodeEnd);
    q.schedule(SimTime::ZERO, EventKind::RanAiTick);
    q.schedule(SimTime::ZERO, EventKind::FrameGeneration);
    if mobility_period < t_end {
        q.schedule(mobility_period, EventKind::ChannelUpdate);
    }
    q.schedule(SimTime::ZERO, EventKind::TtiTick);

    policy.begin_episode();
    let mut digest: u64 = 0xcbf2_9ce4_8422_2325;
    let mut dispatched = 0u64;
    while let Some(ev) = q.pop_due(t_end) {
        let now = ev.fire_time;
        dispatched += 1;
        digest = mix(mix(digest, now.as_micros()), ev.payload.tag());
        match ev.payload {
            EventKind::RanAiTick => {
                let obs = (now > SimTime::ZERO).then(|| sim.close_windows(now));
                let out = sim.ranai.on_update_tick(now, obs.as_deref(), policy, explore, false)?;
                for (v, mode) in out.commands {
                    sim.app.set_mode(v as usize, mode);
                }
                if now + update_period < t_end {
                    q.schedule(now + update_period, EventKind::RanAiTick);
                }
            }
            EventKind::FrameGeneration => {
                for v in 0..n {
                    sim.app.generate_frame(v, now);
                }
                if now + frame_period < t_end {
                    q.schedule(now + frame_period, EventKind::FrameGeneration);
                }
            }
            EventKind::ChannelUpdate => {
                let dt = mobility_period.as_secs_f64();
                sim.channel.advance(now.as_secs_f64(), dt, &mut sim.channel_rng);
                if now + mobility_period < t_end {
                    q.schedule(now + mobility_period, EventKind::ChannelUpdate);
                }
            }
            EventKind::TtiTick => {
                if let Some(batch) = sim.on_tti(now) {
                    q.schedule(now + delivery_lag, EventKind::PacketDelivery(batch));
                }
                if now + tti < t_end {
                    q.schedule(now + tti, EventKind::TtiTick);
                }
            }
            EventKind::PacketDelivery(batch) => {
                for r in &batch {
                    sim.app.on_packet_delivered(r, now);
                    sim.in_transit -= u64::from(r.pdu_bytes);
                }
            }
            EventKind::EpisodeEnd => {
                let obs = sim.close_windows(now);
                sim.ranai.on_update_tick(now, Some(&obs), policy, explore, true)?;
                break;
            }
        }
    }
    policy.end_episode().map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("episode {episode}: {m}")),
        other => other,
    })?;

    let vehicles = (0..n).map(|v| vehicle_digest(&sim, v)).collect();
    let mut bytes = ByteLedger {
        in_transit: sim.in_transit,
        ..ByteLedger::default()
    };
    for v in 0..n {
        bytes.generated += sim.app.bytes_generated(v);
        bytes.encoding += sim.app.encoding_bytes(v);
        bytes.delivered += sim.app.bytes_received(v);
        let queue = &sim.cell.queues()[v];
        bytes.queued += queue.queued_bytes();
        bytes.dropped += queue.bytes_dropped;
    }
    Ok(EpisodeResult {
        episode,
        phase,
        seed,
        ticks: sim.ticks,
        vehicles,
        bytes,
        events_dispatched: dispatched,
        dispatch_digest: digest,
    })
}

fn vehicle_digest(sim: &Sim<'_>, v: usize) -> VehicleEpisode {
    let rows: Vec<&TickRecord> = sim.ticks.iter().filter(|t| t.vehicle_id as usize == v).collect();
    let mut action_counts = [0u64; 3];
    for r in &rows {
        action_counts[r.mode.index()] += 1;
    }
    let delays = sim.app.packet_delays(v);
    let delay_digest = if delays.is_empty() {
        [sim.cfg.thresholds.empty_window_delay(); 5]
    } else {
        to5(quantiles(delays, &DIGEST_LEVELS))
    };
    let prps: Vec<f64> = rows.iter().map(|r| r.prp).collect();
    VehicleEpisode {
        vehicle_id: v as u32,
        mean_reward: mean(rows.iter().map(|r| r.reward)),
        mean_qos: mean(rows.iter().map(|r| f64::from(u8::from(r.qos)))),
        mean_qoe: mean(rows.iter().map(|r| r.qoe)),
        delay_digest,
        prp_digest: to5(quantiles(&prps, &DIGEST_LEVELS)),
        action_counts,
        packets_delivered: delays.len() as u64,
    }
}

fn to5(v: Vec<f64>) -> [f64; 5] {
    v.try_into().expect("five quantile levels")
}
