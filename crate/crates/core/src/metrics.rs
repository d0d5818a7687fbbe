//! Per-window performance metrics (PRP, QoS, QoE, reward), the Chamfer
//! distance used to calibrate per-mode quality, and state-vector assembly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::app::{AppKpiWindow, SegmentationMode, SegmentationProfile};
use crate::error::{Error, Result};
use crate::ran::LinkStatsWindow;

/// Which per-window delay statistic enters the QoS test and the reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayStatistic {
    #[default]
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KpiThresholds {
    /// Maximum tolerated end-to-end delay, seconds.
    pub delta_max_s: f64,
    /// Minimum tolerated packet reception probability.
    pub prp_min: f64,
    /// Maximum tolerated Chamfer distance.
    pub cd_max: f64,
    /// Weight of QoE against the delay margin in the reward.
    pub alpha: f64,
    pub qos_delay_statistic: DelayStatistic,
}

impl Default for KpiThresholds {
    fn default() -> Self {
        KpiThresholds {
            delta_max_s: 0.050,
            prp_min: 1.0,
            cd_max: 45.0,
            alpha: 1.0,
            qos_delay_statistic: DelayStatistic::Mean,
        }
    }
}

impl KpiThresholds {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("thresholds", m));
        if !(self.delta_max_s > 0.0) {
            return bad("delta_max_s must be positive");
        }
        if !(0.0..=1.0).contains(&self.prp_min) {
            return bad("prp_min must lie in [0, 1]");
        }
        if !(self.cd_max > 0.0) {
            return bad("cd_max must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        Ok(())
    }

    /// Delay reported for windows in which nothing was delivered.
    pub fn empty_window_delay(&self) -> f64 {
        2.0 * self.delta_max_s
    }
}

/// Received over transmitted packets, clamped to [0, 1]; 1 when nothing was sent.
pub fn prp(n_rx: u64, n_tx: u64) -> f64 {
    if n_tx == 0 {
        1.0
    } else {
        (n_rx as f64 / n_tx as f64).clamp(0.0, 1.0)
    }
}

pub fn qos(delay_s: f64, prp: f64, thr: &KpiThresholds) -> bool {
    delay_s <= thr.delta_max_s && prp >= thr.prp_min
}

pub fn qoe(cd: f64, thr: &KpiThresholds) -> f64 {
    if cd > thr.cd_max {
        log::warn!("Chamfer distance {cd} above maximum {}; QoE clamped to 0", thr.cd_max);
        return 0.0;
    }
    ((thr.cd_max - cd) / thr.cd_max).clamp(0.0, 1.0)
}

/// Zero without QoS, otherwise `(1-alpha)*(delta_max - delay)/delta_max + alpha*qoe`.
pub fn reward(delay_s: f64, qos: bool, qoe: f64, thr: &KpiThresholds) -> f64 {
    if !qos {
        return 0.0;
    }
    let margin = (thr.delta_max_s - delay_s) / thr.delta_max_s;
    ((1.0 - thr.alpha) * margin + thr.alpha * qoe).clamp(0.0, 1.0)
}

pub type Point3 = [f64; 3];

fn sq_dist(a: &Point3, b: &Point3) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn one_sided(from: &[Point3], to: &[Point3]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| sq_dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum()
}

/// Symmetric point-to-point Chamfer distance (sum of squared nearest-neighbour
/// distances in both directions).
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("point cloud", "Chamfer distance needs non-empty clouds"));
    }
    Ok(one_sided(a, b) + one_sided(b, a))
}

/// Linear-interpolation quantile of ascending `sorted` (NaN when empty).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q));
    debug_assert!(sorted.windows(2).all(|w| w[0] <= w[1]));
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
        }
    }
}

/// Sorts a copy of `values` and reads quantiles `qs` from it.
pub fn quantiles(values: &[f64], qs: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    qs.iter().map(|&q| quantile(&v, q)).collect()
}

/// KPIs of one vehicle over one closed window, with the derived metrics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepObservation {
    pub vehicle_id: u32,
    pub app: AppKpiWindow,
    pub link: LinkStatsWindow,
    /// Mode in force during the window.
    pub mode: SegmentationMode,
    /// Delay statistic used for QoS and reward.
    pub delay: f64,
    pub prp: f64,
    pub qos: bool,
    pub qoe: f64,
    pub reward: f64,
}

impl StepObservation {
    pub fn new(
        vehicle_id: u32,
        app: AppKpiWindow,
        link: LinkStatsWindow,
        mode: SegmentationMode,
        profile: &SegmentationProfile,
        thr: &KpiThresholds,
    ) -> Self {
        let delay = match thr.qos_delay_statistic {
            DelayStatistic::Mean => app.delay_mean,
            DelayStatistic::Max => app.delay_max,
        };
        let prp = prp(app.n_rx, app.n_tx);
        let qos = qos(delay, prp, thr);
        let qoe = qoe(profile.chamfer_distance(mode), thr);
        let reward = reward(delay, qos, qoe, thr);
        StepObservation {
            vehicle_id,
            app,
            link,
            mode,
            delay,
            prp,
            qos,
            qoe,
            reward,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StateConfig {
    #[serde(rename = "APP")]
    App,
    #[serde(rename = "PHY")]
    Phy,
    #[serde(rename = "FULL")]
    Full,
    #[serde(rename = "APP_NET")]
    AppNet,
    #[serde(rename = "PHY_NET")]
    PhyNet,
}

impl StateConfig {
    pub const ALL: [StateConfig; 5] = [
        StateConfig::App,
        StateConfig::Phy,
        StateConfig::Full,
        StateConfig::AppNet,
        StateConfig::PhyNet,
    ];

    pub fn dim(self) -> usize {
        match self {
            StateConfig::App => 5,
            StateConfig::Phy => 8,
            StateConfig::Full => 18,
            StateConfig::AppNet => 10,
            StateConfig::PhyNet => 16,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StateConfig::App => "APP",
            StateConfig::Phy => "PHY",
            StateConfig::Full => "FULL",
            StateConfig::AppNet => "APP_NET",
            StateConfig::PhyNet => "PHY_NET",
        }
    }

    pub fn uses_peers(self) -> bool {
        matches!(self, StateConfig::AppNet | StateConfig::PhyNet)
    }
}

impl fmt::Display for StateConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StateConfig {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        StateConfig::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown state config `{s}` (APP, PHY, FULL, APP_NET, PHY_NET)"))
    }
}

/// Fixed divisors applied before clipping each feature to [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub delay_s: f64,
    pub throughput_bps: f64,
    pub sinr_offset_db: f64,
    pub sinr_span_db: f64,
    pub mcs_index: f64,
    pub queue_bytes: f64,
    pub pdus_per_window: f64,
}

impl Normalization {
    /// Delays over twice the delay budget, rates over the raw-mode source rate,
    /// SINR mapped from [-10, 30] dB, counters over one raw frame's PDUs.
    pub fn new(
        thr: &KpiThresholds,
        profile: &SegmentationProfile,
        frame_rate_fps: u32,
        pdu_payload: u32,
        max_mcs_index: u8,
        buffer_bytes: u64,
    ) -> Self {
        let raw = profile.frame_bytes(SegmentationMode::R);
        Normalization {
            delay_s: 2.0 * thr.delta_max_s,
            throughput_bps: f64::from(raw) * 8.0 * f64::from(frame_rate_fps),
            sinr_offset_db: 10.0,
            sinr_span_db: 40.0,
            mcs_index: f64::from(max_mcs_index.max(1)),
            queue_bytes: buffer_bytes as f64,
            pdus_per_window: f64::from(raw.div_ceil(pdu_payload)),
        }
    }
}

/// Normalised policy input.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector(pub Vec<f64>);

impl StateVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn unit(x: f64, scale: f64) -> f64 {
    if x.is_finite() {
        (x / scale).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn app_features(o: &StepObservation, n: &Normalization) -> [f64; 5] {
    [
        unit(o.app.delay_mean, n.delay_s),
        unit(o.app.delay_std, n.delay_s),
        unit(o.app.delay_min, n.delay_s),
        unit(o.app.delay_max, n.delay_s),
        unit(o.app.throughput_mean, n.throughput_bps),
    ]
}

fn phy_features(o: &StepObservation, n: &Normalization) -> [f64; 3] {
    [
        unit(o.link.mean_sinr + n.sinr_offset_db, n.sinr_span_db),
        unit(o.link.mean_mcs_index, n.mcs_index),
        o.link.prb_utilization.clamp(0.0, 1.0),
    ]
}

fn stack_features(o: &StepObservation, n: &Normalization) -> [f64; 10] {
    let l = &o.link;
    [
        unit(l.rlc_queue_bytes as f64, n.queue_bytes),
        unit(l.rlc_mean_queue_delay, n.delay_s),
        unit(l.rlc_tx_pdus as f64, n.pdus_per_window),
        unit(l.rlc_dropped_pdus as f64, n.pdus_per_window),
        unit(l.rlc_retx as f64, n.pdus_per_window),
        unit(l.pdcp_tx_pdus as f64, n.pdus_per_window),
        unit(l.pdcp_rx_pdus as f64, n.pdus_per_window),
        unit(l.pdcp_mean_delay, n.delay_s),
        unit(l.pdcp_throughput, n.throughput_bps),
        l.pdcp_loss_ratio.clamp(0.0, 1.0),
    ]
}

fn own_features(o: &StepObservation, n: &Normalization, with_phy: bool, out: &mut Vec<f64>) {
    out.extend(app_features(o, n));
    if with_phy {
        out.extend(phy_features(o, n));
    }
}

/// Builds the policy input of `obs` under layout `cfg`. `peers` are the other
/// vehicles' observations of the same window; their order does not matter.
pub fn assemble_state(
    obs: &StepObservation,
    peers: &[&StepObservation],
    cfg: StateConfig,
    norm: &Normalization,
) -> StateVector {
    assert!(
        peers.iter().all(|p| p.vehicle_id != obs.vehicle_id),
        "peer list contains the observed vehicle {}",
        obs.vehicle_id
    );
    let mut v = Vec::with_capacity(cfg.dim());
    match cfg {
        StateConfig::App => own_features(obs, norm, false, &mut v),
        StateConfig::Phy => own_features(obs, norm, true, &mut v),
        StateConfig::Full => {
            own_features(obs, norm, true, &mut v);
            v.extend(stack_features(obs, norm));
        }
        StateConfig::AppNet | StateConfig::PhyNet => {
            let with_phy = cfg == StateConfig::PhyNet;
            own_features(obs, norm, with_phy, &mut v);
            let own = v.len();
            let mut acc = vec![0.0; own];
            let mut tmp = Vec::with_capacity(own);
            for p in peers {
                tmp.clear();
                own_features(p, norm, with_phy, &mut tmp);
                for (a, x) in acc.iter_mut().zip(&tmp) {
                    *a += x;
                }
            }
            if !peers.is_empty() {
                let k = peers.len() as f64;
                acc.iter_mut().for_each(|a| *a /= k);
            }
            v.extend(acc);
        }
    }
    assert_eq!(v.len(), cfg.dim(), "state layout {cfg} produced {} features", v.len());
    StateVector(v)
}
