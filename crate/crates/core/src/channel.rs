//! Per-vehicle pathloss and SNR: bounded-box mobility, log-distance pathloss
//! with Gauss-Markov shadowing, and an alternative trace-driven source.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::RngStream;

/// Thermal noise power spectral density at 290 K.
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub carrier_frequency_hz: f64,
    pub bandwidth_hz: f64,
    pub tx_power_dbm: f64,
    /// Transmit powers accepted by `validate`.
    pub tx_power_set_dbm: Vec<f64>,
    pub noise_figure_db: f64,
    pub pathloss_exponent: f64,
    pub reference_loss_db: f64,
    pub shadowing_std_db: f64,
    pub shadowing_correlation_m: f64,
    /// Std of an independent per-TTI dB term; 0 disables it.
    pub fading_jitter_db: f64,
    /// Link adaptation SNR reference: the whole carrier (fixed PSD) or the
    /// bandwidth actually granted.
    pub snr_reference: SnrReference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnrReference {
    FullBand,
    Allocated,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            carrier_frequency_hz: 3.5e9,
            bandwidth_hz: 50e6,
            tx_power_dbm: 30.0,
            tx_power_set_dbm: vec![23.0, 30.0],
            noise_figure_db: 5.0,
            pathloss_exponent: 3.0,
            // free-space loss at 1 m for 3.5 GHz
            reference_loss_db: 43.3,
            shadowing_std_db: 3.0,
            shadowing_correlation_m: 50.0,
            fading_jitter_db: 0.0,
            snr_reference: SnrReference::FullBand,
        }
    }
}

impl RadioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid("radio config", m));
        if !(self.bandwidth_hz > 0.0 && self.bandwidth_hz.is_finite()) {
            return bad(format!("bandwidth must be positive, got {}", self.bandwidth_hz));
        }
        if !(self.carrier_frequency_hz > 0.0) {
            return bad("carrier frequency must be positive".into());
        }
        if !self.tx_power_set_dbm.is_empty()
            && !self
                .tx_power_set_dbm
                .iter()
                .any(|p| (p - self.tx_power_dbm).abs() < 1e-9)
        {
            return bad(format!(
                "tx power {} dBm not in configured set {:?}",
                self.tx_power_dbm, self.tx_power_set_dbm
            ));
        }
        if !(self.pathloss_exponent >= 2.0) {
            return bad(format!(
                "pathloss exponent must be >= 2, got {}",
                self.pathloss_exponent
            ));
        }
        if !(self.shadowing_std_db >= 0.0) || !(self.fading_jitter_db >= 0.0) {
            return bad("standard deviations must be non-negative".into());
        }
        if !(self.shadowing_correlation_m > 0.0) {
            return bad("shadowing correlation distance must be positive".into());
        }
        Ok(())
    }

    /// Noise power in dBm over `bandwidth_hz`.
    pub fn noise_dbm(&self, bandwidth_hz: f64) -> f64 {
        THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + self.noise_figure_db
    }
}

/// SNR over `allocated_bandwidth_hz` when the UE radiates `tx_power_dbm` there.
pub fn snr(pathloss_db: f64, allocated_bandwidth_hz: f64, cfg: &RadioConfig) -> f64 {
    debug_assert!(allocated_bandwidth_hz > 0.0 && allocated_bandwidth_hz <= cfg.bandwidth_hz * (1.0 + 1e-12));
    cfg.tx_power_dbm - pathloss_db - cfg.noise_dbm(allocated_bandwidth_hz)
}

/// Scenario geometry and mobility parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Vehicles move inside `[-half_width, half_width]^2`.
    pub half_width_m: f64,
    pub gnb_position_m: [f64; 2],
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    /// Std of the per-step heading perturbation.
    pub heading_jitter_rad: f64,
    /// Mobility and shadowing are refreshed with this period.
    pub update_period_ms: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            half_width_m: 550.0,
            gnb_position_m: [0.0, 0.0],
            speed_min_mps: 8.0,
            speed_max_mps: 14.0,
            heading_jitter_rad: 0.02,
            update_period_ms: 10,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("scenario config", m));
        if !(self.half_width_m > 0.0) {
            return bad("half width must be positive");
        }
        if !(self.speed_min_mps >= 0.0 && self.speed_max_mps >= self.speed_min_mps) {
            return bad("speed range must satisfy 0 <= min <= max");
        }
        if self.update_period_ms == 0 {
            return bad("update period must be positive");
        }
        if self.gnb_position_m.iter().any(|c| c.abs() > self.half_width_m) {
            return bad("gNB must lie inside the scenario box");
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            min: [-self.half_width_m; 2],
            max: [self.half_width_m; 2],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Bounds {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehiclePose {
    pub vehicle_id: u32,
    pub position: [f64; 2],
    pub speed: f64,
    pub heading: f64,
}

impl VehiclePose {
    pub fn random(vehicle_id: u32, scenario: &ScenarioConfig, rng: &mut RngStream) -> Self {
        let b = scenario.bounds();
        let position = [
            rng.random_range(b.min[0]..=b.max[0]),
            rng.random_range(b.min[1]..=b.max[1]),
        ];
        let speed = if scenario.speed_max_mps > scenario.speed_min_mps {
            rng.random_range(scenario.speed_min_mps..scenario.speed_max_mps)
        } else {
            scenario.speed_min_mps
        };
        VehiclePose {
            vehicle_id,
            position,
            speed,
            heading: rng.random_range(0.0..2.0 * PI),
        }
    }

    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        ((self.position[0] - p[0]).powi(2) + (self.position[1] - p[1]).powi(2)).sqrt()
    }
}

/// Advances every pose by `speed * dt` along its heading, reflecting off the
/// box walls. A non-zero `heading_jitter` perturbs headings with Gaussian noise.
pub fn step_mobility(
    poses: &[VehiclePose],
    dt: f64,
    bounds: &Bounds,
    heading_jitter: f64,
    rng: &mut RngStream,
) -> Vec<VehiclePose> {
    assert!(dt > 0.0, "mobility step must be positive, got {dt}");
    poses
        .iter()
        .map(|p| {
            let mut next = *p;
            if heading_jitter > 0.0 {
                let n: f64 = StandardNormal.sample(rng);
                next.heading += heading_jitter * n;
            }
            let mut dir = [next.heading.cos(), next.heading.sin()];
            for (i, d) in dir.iter_mut().enumerate() {
                let mut x = p.position[i] + next.speed * dt * *d;
                if x > bounds.max[i] {
                    x = 2.0 * bounds.max[i] - x;
                    *d = -*d;
                } else if x < bounds.min[i] {
                    x = 2.0 * bounds.min[i] - x;
                    *d = -*d;
                }
                next.position[i] = x.clamp(bounds.min[i], bounds.max[i]);
            }
            next.heading = dir[1].atan2(dir[0]);
            next
        })
        .collect()
}

/// First-order autoregressive log-normal shadowing.
#[derive(Clone, Debug, PartialEq)]
pub struct ShadowingProcess {
    pub state_db: f64,
    pub std_db: f64,
    pub correlation_m: f64,
}

impl ShadowingProcess {
    /// Starts from the stationary distribution.
    pub fn new(std_db: f64, correlation_m: f64, rng: &mut RngStream) -> Self {
        let n: f64 = StandardNormal.sample(rng);
        ShadowingProcess {
            state_db: std_db * n,
            std_db,
            correlation_m,
        }
    }

    pub fn coefficient_for(&self, distance_moved_m: f64) -> f64 {
        (-distance_moved_m.abs() / self.correlation_m).exp()
    }

    pub fn step(&mut self, distance_moved_m: f64, rng: &mut RngStream) -> f64 {
        let rho = self.coefficient_for(distance_moved_m);
        self.step_with_coefficient(rho, rng)
    }

    /// `s <- rho*s + sqrt(1 - rho^2)*std*n`, which keeps the marginal at N(0, std^2).
    pub fn step_with_coefficient(&mut self, rho: f64, rng: &mut RngStream) -> f64 {
        let innovation = (1.0 - rho * rho).max(0.0).sqrt() * self.std_db;
        if innovation > 0.0 {
            let n: f64 = StandardNormal.sample(rng);
            self.state_db = rho * self.state_db + innovation * n;
        } else {
            self.state_db *= rho;
        }
        self.state_db
    }
}

/// Log-distance pathloss plus the current shadowing term. Distances below 1 m
/// are clamped.
pub fn pathloss_at(pose: &VehiclePose, gnb_position: [f64; 2], shadow_db: f64, cfg: &RadioConfig) -> f64 {
    let d = pose.distance_to(gnb_position).max(1.0);
    cfg.reference_loss_db + 10.0 * cfg.pathloss_exponent * d.log10() + shadow_db
}

/// Pathloss samples read from a `time_s,vehicle_id,pathloss_db` file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelTrace {
    series: BTreeMap<u32, Vec<(f64, f64)>>,
}

pub const TRACE_HEADER: [&str; 3] = ["time_s", "vehicle_id", "pathloss_db"];
const MAX_TRACE_TIME_S: f64 = 1e6;
const MAX_PATHLOSS_DB: f64 = 400.0;

impl ChannelTrace {
    /// Parses trace text. Row order across vehicles is free; per-vehicle time
    /// order is checked by `validate`.
    pub fn parse(input: &[u8]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
        let mut records = rdr.records();
        let header = match records.next() {
            None => return Err(Error::invalid("channel trace", "empty file")),
            Some(r) => r.map_err(|e| csv_parse_error("channel trace", e))?,
        };
        if header.iter().map(str::trim).ne(TRACE_HEADER.iter().copied()) {
            return Err(Error::Parse {
                what: "channel trace",
                line: 1,
                msg: format!("expected header `{}`", TRACE_HEADER.join(",")),
            });
        }
        let mut series: BTreeMap<u32, Vec<(f64, f64)>> = BTreeMap::new();
        for rec in records {
            let rec = rec.map_err(|e| csv_parse_error("channel trace", e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let err = |msg: String| Error::Parse {
                what: "channel trace",
                line,
                msg,
            };
            if rec.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", rec.len())));
            }
            let t: f64 = rec[0]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad time `{}`", &rec[0])))?;
            let v: u32 = rec[1]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad vehicle id `{}`", &rec[1])))?;
            let pl: f64 = rec[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad pathloss `{}`", &rec[2])))?;
            if !(0.0..=MAX_TRACE_TIME_S).contains(&t) {
                return Err(err(format!("time {t} outside [0, {MAX_TRACE_TIME_S}] s")));
            }
            if !(0.0..=MAX_PATHLOSS_DB).contains(&pl) {
                return Err(err(format!("pathloss {pl} outside [0, {MAX_PATHLOSS_DB}] dB")));
            }
            series.entry(v).or_default().push((t, pl));
        }
        Ok(ChannelTrace { series })
    }

    /// Checks strict per-vehicle time order and coverage of `[0, t_episode_s]`.
    pub fn validate(&self, t_episode_s: f64) -> Result<()> {
        if self.series.is_empty() {
            return Err(Error::invalid("channel trace", "no samples"));
        }
        for (v, s) in &self.series {
            if let Some(w) = s.windows(2).find(|w| w[1].0 <= w[0].0) {
                return Err(Error::invalid(
                    "channel trace",
                    format!("vehicle {v}: time {} does not follow {}", w[1].0, w[0].0),
                ));
            }
            let (first, last) = (s[0].0, s[s.len() - 1].0);
            if first > 0.0 || last < t_episode_s {
                return Err(Error::invalid(
                    "channel trace",
                    format!("vehicle {v}: samples span [{first}, {last}], need [0, {t_episode_s}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn vehicles(&self) -> impl Iterator<Item = u32> + '_ {
        self.series.keys().copied()
    }

    pub fn sample_count(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    /// Linear interpolation in time; clamps outside the sampled span.
    pub fn pathloss(&self, vehicle_id: u32, t_s: f64) -> Option<f64> {
        let s = self.series.get(&vehicle_id)?;
        let i = s.partition_point(|&(t, _)| t <= t_s);
        Some(if i == 0 {
            s[0].1
        } else if i == s.len() {
            s[s.len() - 1].1
        } else {
            let (t0, p0) = s[i - 1];
            let (t1, p1) = s[i];
            p0 + (p1 - p0) * (t_s - t0) / (t1 - t0)
        })
    }
}

fn csv_parse_error(what: &'static str, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        what,
        line,
        msg: e.to_string(),
    }
}

/// Reads and validates a trace file.
pub fn load_trace(path: &Path, t_episode_s: f64) -> Result<ChannelTrace> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let trace = ChannelTrace::parse(&bytes)?;
    trace.validate(t_episode_s)?;
    Ok(trace)
}

enum Source {
    Parametric {
        poses: Vec<VehiclePose>,
        shadowing: Vec<ShadowingProcess>,
        gnb: [f64; 2],
        bounds: Bounds,
        heading_jitter: f64,
    },
    Trace(std::sync::Arc<ChannelTrace>),
}

/// Per-episode channel state. Both sources answer `pathloss_db` identically
/// from the caller's point of view.
pub struct ChannelState {
    source: Source,
    radio: RadioConfig,
    pathloss: Vec<f64>,
}

impl ChannelState {
    pub fn parametric(n: usize, radio: &RadioConfig, scenario: &ScenarioConfig, rng: &mut RngStream) -> Self {
        let poses: Vec<VehiclePose> = (0..n as u32).map(|v| VehiclePose::random(v, scenario, rng)).collect();
        let shadowing: Vec<ShadowingProcess> = (0..n)
            .map(|_| ShadowingProcess::new(radio.shadowing_std_db, radio.shadowing_correlation_m, rng))
            .collect();
        let gnb = scenario.gnb_position_m;
        let pathloss = poses
            .iter()
            .zip(&shadowing)
            .map(|(p, s)| pathloss_at(p, gnb, s.state_db, radio))
            .collect();
        ChannelState {
            source: Source::Parametric {
                poses,
                shadowing,
                gnb,
                bounds: scenario.bounds(),
                heading_jitter: scenario.heading_jitter_rad,
            },
            radio: radio.clone(),
            pathloss,
        }
    }

    /// Uses vehicles `0..n` of `trace`; each must be present.
    pub fn from_trace(n: usize, trace: std::sync::Arc<ChannelTrace>, radio: &RadioConfig) -> Result<Self> {
        let mut pathloss = Vec::with_capacity(n);
        for v in 0..n as u32 {
            pathloss.push(
                trace
                    .pathloss(v, 0.0)
                    .ok_or_else(|| Error::invalid("channel trace", format!("no samples for vehicle {v}")))?,
            );
        }
        Ok(ChannelState {
            source: Source::Trace(trace),
            radio: radio.clone(),
            pathloss,
        })
    }

    /// Moves the state to `now_s`, `dt_s` after the previous update.
    pub fn advance(&mut self, now_s: f64, dt_s: f64, rng: &mut RngStream) {
        match &mut self.source {
            Source::Parametric {
                poses,
                shadowing,
                gnb,
                bounds,
                heading_jitter,
            } => {
                let next = step_mobility(poses, dt_s, bounds, *heading_jitter, rng);
                for ((pose, shadow), pl) in next.iter().zip(shadowing.iter_mut()).zip(self.pathloss.iter_mut()) {
                    shadow.step(pose.speed * dt_s, rng);
                    *pl = pathloss_at(pose, *gnb, shadow.state_db, &self.radio);
                }
                *poses = next;
            }
            Source::Trace(trace) => {
                for (v, pl) in self.pathloss.iter_mut().enumerate() {
                    *pl = trace
                        .pathloss(v as u32, now_s)
                        .expect("vehicle checked at construction");
                }
            }
        }
    }

    pub fn pathloss_db(&self, vehicle: usize) -> f64 {
        self.pathloss[vehicle]
    }

    pub fn radio(&self) -> &RadioConfig {
        &self.radio
    }

    pub fn poses(&self) -> Option<&[VehiclePose]> {
        match &self.source {
            Source::Parametric { poses, .. } => Some(poses),
            Source::Trace(_) => None,
        }
    }
}
