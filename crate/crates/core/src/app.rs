//! LiDAR frame source and sink: per-mode frame sizes, fragmentation into PDUs,
//! reassembly at the remote driver, and per-window application KPIs.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ran::DeliveryRecord;
use crate::sim::SimTime;

/// Point-cloud reduction level, ordered by aggressiveness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SegmentationMode {
    /// Raw frames.
    R,
    /// Road points removed.
    SC,
    /// Only critical objects kept.
    SA,
}

impl SegmentationMode {
    pub const ALL: [SegmentationMode; 3] = [SegmentationMode::R, SegmentationMode::SC, SegmentationMode::SA];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn more_aggressive(self) -> Self {
        Self::from_index(self.index() + 1).unwrap_or(SegmentationMode::SA)
    }

    pub fn more_conservative(self) -> Self {
        self.index()
            .checked_sub(1)
            .and_then(Self::from_index)
            .unwrap_or(SegmentationMode::R)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SegmentationMode::R => "R",
            SegmentationMode::SC => "SC",
            SegmentationMode::SA => "SA",
        }
    }
}

impl fmt::Display for SegmentationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SegmentationMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "R" => Ok(SegmentationMode::R),
            "SC" => Ok(SegmentationMode::SC),
            "SA" => Ok(SegmentationMode::SA),
            other => Err(format!("unknown segmentation mode `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeProfile {
    pub frame_bytes: u32,
    pub chamfer_distance: f64,
    pub encode_delay_ms: f64,
    pub decode_delay_ms: f64,
}

/// What each segmentation mode costs and delivers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationProfile {
    #[serde(rename = "R")]
    pub raw: ModeProfile,
    #[serde(rename = "SC")]
    pub conservative: ModeProfile,
    #[serde(rename = "SA")]
    pub aggressive: ModeProfile,
}

impl Default for SegmentationProfile {
    fn default() -> Self {
        let mode = |frame_bytes, chamfer_distance, encode_delay_ms| ModeProfile {
            frame_bytes,
            chamfer_distance,
            encode_delay_ms,
            decode_delay_ms: 0.0,
        };
        SegmentationProfile {
            raw: mode(200_000, 0.0, 0.0),
            conservative: mode(100_000, 13.5, 3.0),
            aggressive: mode(18_000, 31.5, 5.0),
        }
    }
}

impl SegmentationProfile {
    pub fn mode(&self, m: SegmentationMode) -> &ModeProfile {
        match m {
            SegmentationMode::R => &self.raw,
            SegmentationMode::SC => &self.conservative,
            SegmentationMode::SA => &self.aggressive,
        }
    }

    pub fn frame_bytes(&self, m: SegmentationMode) -> u32 {
        self.mode(m).frame_bytes
    }

    pub fn chamfer_distance(&self, m: SegmentationMode) -> f64 {
        self.mode(m).chamfer_distance
    }

    pub fn encode_delay(&self, m: SegmentationMode) -> SimTime {
        SimTime::from_secs_f64(self.mode(m).encode_delay_ms * 1e-3)
    }

    pub fn decode_delay(&self, m: SegmentationMode) -> SimTime {
        SimTime::from_secs_f64(self.mode(m).decode_delay_ms * 1e-3)
    }

    pub fn validate(&self, cd_max: f64) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("segmentation profile", m));
        let [r, sc, sa] = SegmentationMode::ALL.map(|m| self.mode(m));
        if !(r.frame_bytes > sc.frame_bytes && sc.frame_bytes > sa.frame_bytes && sa.frame_bytes > 0) {
            return bad("frame sizes must strictly decrease R > SC > SA > 0".into());
        }
        if !(r.chamfer_distance < sc.chamfer_distance && sc.chamfer_distance < sa.chamfer_distance) {
            return bad("Chamfer distances must strictly increase R < SC < SA".into());
        }
        for m in SegmentationMode::ALL {
            let p = self.mode(m);
            if !(0.0..=cd_max).contains(&p.chamfer_distance) {
                return bad(format!(
                    "{m}: Chamfer distance {} outside [0, {cd_max}]",
                    p.chamfer_distance
                ));
            }
            if !(p.encode_delay_ms >= 0.0 && p.decode_delay_ms >= 0.0) {
                return bad(format!("{m}: processing delays must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Replayed frame sizes, from a `frame_index,mode,bytes` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameSizeTrace {
    sizes: [Vec<u32>; 3],
}

impl FrameSizeTrace {
    pub fn parse(input: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(input).map_err(|e| Error::Parse {
            what: "frame-size trace",
            line: 0,
            msg: e.to_string(),
        })?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "frame_index,mode,bytes" => {}
            _ => {
                return Err(Error::Parse {
                    what: "frame-size trace",
                    line: 1,
                    msg: "expected header `frame_index,mode,bytes`".into(),
                })
            }
        }
        let mut rows: [Vec<(u64, u32)>; 3] = Default::default();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse {
                what: "frame-size trace",
                line: i as u64 + 1,
                msg,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let [idx, mode, bytes] = fields[..] else {
                return Err(err(format!("expected 3 fields, found {}", fields.len())));
            };
            let idx: u64 = idx.parse().map_err(|_| err(format!("bad frame index `{idx}`")))?;
            let mode: SegmentationMode = mode.parse().map_err(err)?;
            let bytes: u32 = bytes.parse().map_err(|_| err(format!("bad byte count `{bytes}`")))?;
            if bytes == 0 {
                return Err(err("frame size must be positive".into()));
            }
            rows[mode.index()].push((idx, bytes));
        }
        let mut sizes: [Vec<u32>; 3] = Default::default();
        for (m, mut r) in rows.into_iter().enumerate() {
            r.sort_unstable_by_key(|&(i, _)| i);
            if let Some(k) = r.iter().enumerate().position(|(k, &(i, _))| i != k as u64) {
                return Err(Error::invalid(
                    "frame-size trace",
                    format!(
                        "mode {}: frame indices must be 0..n without gaps or repeats (position {k})",
                        SegmentationMode::ALL[m]
                    ),
                ));
            }
            sizes[m] = r.into_iter().map(|(_, b)| b).collect();
        }
        if sizes.iter().all(Vec::is_empty) {
            return Err(Error::invalid("frame-size trace", "no rows"));
        }
        Ok(FrameSizeTrace { sizes })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes)
    }

    /// Size of the `frame_index`-th frame in `mode`, cycling through the
    /// replayed sequence. `None` when the mode has no rows.
    pub fn bytes(&self, frame_index: u64, mode: SegmentationMode) -> Option<u32> {
        let s = &self.sizes[mode.index()];
        (!s.is_empty()).then(|| s[(frame_index % s.len() as u64) as usize])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub frame_id: u64,
    pub vehicle_id: u32,
    pub mode: SegmentationMode,
    pub generation_time: SimTime,
    pub bytes: u32,
    pub packet_count: u32,
}

impl Frame {
    /// Payload sizes of the PDUs the frame is fragmented into.
    pub fn pdu_sizes(&self, pdu_payload: u32) -> impl Iterator<Item = u32> + '_ {
        let full = self.bytes / pdu_payload;
        let rem = self.bytes % pdu_payload;
        (0..self.packet_count).map(move |i| if i < full { pdu_payload } else { rem })
    }
}

pub fn packet_count(bytes: u32, pdu_payload: u32) -> u32 {
    bytes.div_ceil(pdu_payload)
}

pub fn generate_frame(
    frame_id: u64,
    vehicle_id: u32,
    mode: SegmentationMode,
    now: SimTime,
    bytes: u32,
    pdu_payload: u32,
) -> Frame {
    Frame {
        frame_id,
        vehicle_id,
        mode,
        generation_time: now,
        bytes,
        packet_count: packet_count(bytes, pdu_payload),
    }
}

/// Application KPIs of one vehicle over one decision window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AppKpiWindow {
    /// Packets generated in the window.
    pub n_tx: u64,
    /// Packets delivered in the window, whenever they were generated.
    pub n_rx: u64,
    pub delay_mean: f64,
    pub delay_std: f64,
    pub delay_min: f64,
    pub delay_max: f64,
    /// bit/s
    pub throughput_mean: f64,
}

impl AppKpiWindow {
    pub fn has_deliveries(&self) -> bool {
        self.n_rx > 0
    }
}

/// Running mean/variance (Welford) with min and max.
#[derive(Clone, Debug, Default)]
pub struct DelayStats {
    count: u64,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl DelayStats {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        if self.count == 1 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.m2 / self.count as f64).max(0.0).sqrt()
        }
    }

    pub fn min(&self) -> f64 {
        self.min
    }

    pub fn max(&self) -> f64 {
        self.max
    }
}

#[derive(Debug)]
struct FrameState {
    vehicle: usize,
    mode: SegmentationMode,
    generation_time: SimTime,
    packet_count: u32,
    received: Vec<bool>,
    received_count: u32,
}

#[derive(Debug, Default)]
struct Window {
    n_tx: u64,
    bits_rx: u64,
    delays: DelayStats,
}

#[derive(Debug)]
struct VehicleApp {
    mode: SegmentationMode,
    frames_generated: u64,
    bytes_generated: u64,
    bytes_received: u64,
    encoding: VecDeque<(SimTime, Frame)>,
    window: Window,
    packet_delays: Vec<f64>,
    frame_delays: Vec<f64>,
}

/// A PDU ready to enter the uplink buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PendingPdu {
    pub frame_id: u64,
    pub packet_index: u32,
    pub bytes: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub frame_rate_fps: u32,
    pub pdu_payload_bytes: u32,
    pub profile: SegmentationProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frame_size_trace: Option<std::path::PathBuf>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            frame_rate_fps: 10,
            pdu_payload_bytes: 1500,
            profile: SegmentationProfile::default(),
            frame_size_trace: None,
        }
    }
}

impl AppConfig {
    pub fn frame_period(&self) -> SimTime {
        SimTime::from_micros(1_000_000 / u64::from(self.frame_rate_fps))
    }

    pub fn validate(&self, cd_max: f64) -> Result<()> {
        if self.frame_rate_fps == 0 || 1_000_000 % self.frame_rate_fps != 0 {
            return Err(Error::invalid("app config", "frame rate must divide 1e6 µs"));
        }
        if self.pdu_payload_bytes == 0 {
            return Err(Error::invalid("app config", "PDU payload must be positive"));
        }
        self.profile.validate(cd_max)
    }
}

/// Traffic source and sink for every vehicle of one episode.
#[derive(Debug)]
pub struct AppModel {
    profile: SegmentationProfile,
    pdu_payload: u32,
    size_trace: Option<Arc<FrameSizeTrace>>,
    vehicles: Vec<VehicleApp>,
    frames: HashMap<u64, FrameState>,
    next_frame_id: u64,
    completed_frames: u64,
}

impl AppModel {
    pub fn new(
        n_vehicles: usize,
        initial_mode: SegmentationMode,
        cfg: &AppConfig,
        size_trace: Option<Arc<FrameSizeTrace>>,
    ) -> Self {
        AppModel {
            profile: cfg.profile.clone(),
            pdu_payload: cfg.pdu_payload_bytes,
            size_trace,
            vehicles: (0..n_vehicles)
                .map(|_| VehicleApp {
                    mode: initial_mode,
                    frames_generated: 0,
                    bytes_generated: 0,
                    bytes_received: 0,
                    encoding: VecDeque::new(),
                    window: Window::default(),
                    packet_delays: Vec::new(),
                    frame_delays: Vec::new(),
                })
                .collect(),
            frames: HashMap::new(),
            next_frame_id: 0,
            completed_frames: 0,
        }
    }

    pub fn profile(&self) -> &SegmentationProfile {
        &self.profile
    }

    pub fn mode(&self, vehicle: usize) -> SegmentationMode {
        self.vehicles[vehicle].mode
    }

    /// Takes effect from the next generated frame.
    pub fn set_mode(&mut self, vehicle: usize, mode: SegmentationMode) {
        self.vehicles[vehicle].mode = mode;
    }

    /// Captures a frame in the vehicle's current mode. Its PDUs become
    /// available from `now + encode_delay`.
    pub fn generate_frame(&mut self, vehicle: usize, now: SimTime) -> Frame {
        let v = &mut self.vehicles[vehicle];
        let mode = v.mode;
        let bytes = self
            .size_trace
            .as_ref()
            .and_then(|t| t.bytes(v.frames_generated, mode))
            .unwrap_or_else(|| self.profile.frame_bytes(mode));
        let frame = generate_frame(self.next_frame_id, vehicle as u32, mode, now, bytes, self.pdu_payload);
        self.next_frame_id += 1;
        v.frames_generated += 1;
        v.bytes_generated += u64::from(bytes);
        v.window.n_tx += u64::from(frame.packet_count);
        self.frames.insert(
            frame.frame_id,
            FrameState {
                vehicle,
                mode,
                generation_time: now,
                packet_count: frame.packet_count,
                received: vec![false; frame.packet_count as usize],
                received_count: 0,
            },
        );
        v.encoding
            .push_back((now + self.profile.encode_delay(mode), frame.clone()));
        frame
    }

    /// Returns the PDUs of every frame whose encoding finished by `now`.
    pub fn release_ready(&mut self, vehicle: usize, now: SimTime, out: &mut Vec<PendingPdu>) {
        let payload = self.pdu_payload;
        let v = &mut self.vehicles[vehicle];
        while v.encoding.front().is_some_and(|(ready, _)| *ready <= now) {
            let (_, frame) = v.encoding.pop_front().expect("checked");
            out.extend(frame.pdu_sizes(payload).enumerate().map(|(i, bytes)| PendingPdu {
                frame_id: frame.frame_id,
                packet_index: i as u32,
                bytes,
            }));
        }
    }

    /// Records the arrival of one PDU at the remote driver.
    ///
    /// Panics on an unknown frame or a duplicate `(frame_id, packet_index)`.
    pub fn on_packet_delivered(&mut self, record: &DeliveryRecord, now: SimTime) {
        let f = self
            .frames
            .get_mut(&record.frame_id)
            .unwrap_or_else(|| panic!("delivery for unknown or completed frame {}", record.frame_id));
        let slot = &mut f.received[record.packet_index as usize];
        assert!(
            !*slot,
            "duplicate delivery of frame {} packet {}",
            record.frame_id, record.packet_index
        );
        *slot = true;
        f.received_count += 1;
        let delivered_at = now + self.profile.decode_delay(f.mode);
        let delay = (delivered_at - f.generation_time).as_secs_f64();
        let v = &mut self.vehicles[f.vehicle];
        v.window.delays.push(delay);
        v.window.bits_rx += u64::from(record.pdu_bytes) * 8;
        v.bytes_received += u64::from(record.pdu_bytes);
        v.packet_delays.push(delay);
        if f.received_count == f.packet_count {
            v.frame_delays.push(delay);
            self.completed_frames += 1;
            self.frames.remove(&record.frame_id);
        }
    }

    /// Closes the vehicle's current window and resets its accumulators.
    /// Windows without deliveries report `empty_delay` for every delay statistic.
    pub fn window_kpis(&mut self, vehicle: usize, window: SimTime, empty_delay: f64) -> AppKpiWindow {
        let w = std::mem::take(&mut self.vehicles[vehicle].window);
        let n_rx = w.delays.count();
        let secs = window.as_secs_f64();
        if n_rx == 0 {
            AppKpiWindow {
                n_tx: w.n_tx,
                n_rx: 0,
                delay_mean: empty_delay,
                delay_std: empty_delay,
                delay_min: empty_delay,
                delay_max: empty_delay,
                throughput_mean: 0.0,
            }
        } else {
            AppKpiWindow {
                n_tx: w.n_tx,
                n_rx,
                delay_mean: w.delays.mean(),
                delay_std: w.delays.std(),
                delay_min: w.delays.min(),
                delay_max: w.delays.max(),
                throughput_mean: w.bits_rx as f64 / secs,
            }
        }
    }

    pub fn completed_frames(&self) -> u64 {
        self.completed_frames
    }

    pub fn bytes_generated(&self, vehicle: usize) -> u64 {
        self.vehicles[vehicle].bytes_generated
    }

    pub fn bytes_received(&self, vehicle: usize) -> u64 {
        self.vehicles[vehicle].bytes_received
    }

    /// Bytes of frames generated but not yet released by the encoder.
    pub fn encoding_bytes(&self, vehicle: usize) -> u64 {
        self.vehicles[vehicle]
            .encoding
            .iter()
            .map(|(_, f)| u64::from(f.bytes))
            .sum()
    }

    pub fn packet_delays(&self, vehicle: usize) -> &[f64] {
        &self.vehicles[vehicle].packet_delays
    }

    pub fn frame_delays(&self, vehicle: usize) -> &[f64] {
        &self.vehicles[vehicle].frame_delays
    }
}
