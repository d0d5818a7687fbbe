//! Abstracted uplink RAN: per-vehicle RLC buffers, an equal-share scheduler
//! running every TTI, SNR to spectral-efficiency mapping, and the per-window
//! PHY/RLC/PDCP counters exposed to the orchestrator.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::SimTime;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McsEntry {
    pub min_snr_db: f64,
    /// bit/s/Hz before the overhead factor
    pub efficiency: f64,
    pub index: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkAdaptation {
    pub mcs_index: u8,
    pub spectral_efficiency: f64,
    pub outage: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct McsTable {
    entries: Vec<McsEntry>,
    efficiency_overhead: f64,
    outage_threshold_db: f64,
}

impl McsTable {
    /// 29 entries at 1 dB spacing from -5 dB, each with the Shannon efficiency
    /// of its threshold capped at `cap`.
    pub fn shannon_capped(cap: f64, efficiency_overhead: f64, outage_threshold_db: f64) -> Self {
        let entries = (0..29u8)
            .map(|i| {
                let min_snr_db = -5.0 + f64::from(i);
                let efficiency = (1.0 + 10f64.powf(min_snr_db / 10.0)).log2().min(cap);
                McsEntry {
                    min_snr_db,
                    efficiency,
                    index: i,
                }
            })
            .collect();
        McsTable {
            entries,
            efficiency_overhead,
            outage_threshold_db,
        }
    }

    pub fn new(entries: Vec<McsEntry>, efficiency_overhead: f64, outage_threshold_db: f64) -> Result<Self> {
        let bad = |m: String| Err(Error::invalid("MCS table", m));
        if entries.is_empty() {
            return bad("no entries".into());
        }
        for w in entries.windows(2) {
            if !(w[1].min_snr_db > w[0].min_snr_db) {
                return bad(format!("min_snr_db not strictly increasing at index {}", w[1].index));
            }
            if w[1].efficiency < w[0].efficiency {
                return bad(format!("efficiency decreases at index {}", w[1].index));
            }
        }
        if entries
            .iter()
            .any(|e| !(e.efficiency > 0.0 && e.efficiency.is_finite()) || !e.min_snr_db.is_finite())
        {
            return bad("entries must be finite with positive efficiency".into());
        }
        if !(efficiency_overhead > 0.0 && efficiency_overhead <= 1.0) {
            return bad(format!("overhead {efficiency_overhead} outside (0, 1]"));
        }
        Ok(McsTable {
            entries,
            efficiency_overhead,
            outage_threshold_db,
        })
    }

    pub fn entries(&self) -> &[McsEntry] {
        &self.entries
    }

    pub fn efficiency_overhead(&self) -> f64 {
        self.efficiency_overhead
    }

    pub fn max_index(&self) -> u8 {
        self.entries.last().map_or(0, |e| e.index)
    }

    /// Highest entry whose threshold is at or below `snr_db`.
    pub fn lookup(&self, snr_db: f64) -> LinkAdaptation {
        let n = self.entries.partition_point(|e| e.min_snr_db <= snr_db);
        if n == 0 {
            let lowest = &self.entries[0];
            LinkAdaptation {
                mcs_index: 0,
                spectral_efficiency: lowest.efficiency,
                outage: snr_db < self.outage_threshold_db,
            }
        } else {
            let e = &self.entries[n - 1];
            LinkAdaptation {
                mcs_index: e.index,
                spectral_efficiency: e.efficiency,
                outage: false,
            }
        }
    }

    /// Achievable bit/s over `bandwidth_hz`; zero in outage.
    pub fn rate(&self, la: &LinkAdaptation, bandwidth_hz: f64) -> f64 {
        if la.outage {
            0.0
        } else {
            bandwidth_hz * la.spectral_efficiency * self.efficiency_overhead
        }
    }
}

pub fn mcs_from_snr(snr_db: f64, table: &McsTable) -> LinkAdaptation {
    table.lookup(snr_db)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RanConfig {
    pub tti_ms: u64,
    pub core_network_delay_ms: u64,
    pub buffer_capacity_bytes: u64,
    pub efficiency_cap: f64,
    pub efficiency_overhead: f64,
    pub outage_threshold_db: f64,
}

impl Default for RanConfig {
    fn default() -> Self {
        RanConfig {
            tti_ms: 1,
            core_network_delay_ms: 5,
            buffer_capacity_bytes: 2_000_000,
            efficiency_cap: 7.4,
            efficiency_overhead: 0.75,
            outage_threshold_db: -5.0,
        }
    }
}

impl RanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tti_ms == 0 {
            return Err(Error::invalid("ran config", "TTI must be positive"));
        }
        if self.buffer_capacity_bytes == 0 {
            return Err(Error::invalid("ran config", "buffer capacity must be positive"));
        }
        if !(self.efficiency_cap > 0.0) {
            return Err(Error::invalid("ran config", "efficiency cap must be positive"));
        }
        Ok(())
    }

    /// The table described by this config, or `custom` entries when given.
    pub fn mcs_table(&self, custom: Option<&[McsEntry]>) -> Result<McsTable> {
        match custom {
            Some(entries) => McsTable::new(entries.to_vec(), self.efficiency_overhead, self.outage_threshold_db),
            None => {
                let t =
                    McsTable::shannon_capped(self.efficiency_cap, self.efficiency_overhead, self.outage_threshold_db);
                McsTable::new(t.entries, self.efficiency_overhead, self.outage_threshold_db)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueuedPdu {
    pub bytes: u32,
    pub enqueue_time: SimTime,
    pub frame_id: u64,
    pub packet_index: u32,
}

/// A PDU that left the UE buffer, with its arrival time at the application.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub vehicle_id: u32,
    pub frame_id: u64,
    pub packet_index: u32,
    pub pdu_bytes: u32,
    pub enqueue_time: SimTime,
    pub arrival_time: SimTime,
}

/// FIFO RLC buffer with tail drop. No HARQ, so retransmissions stay at zero.
#[derive(Clone, Debug)]
pub struct UeQueue {
    pub vehicle_id: u32,
    pdus: VecDeque<QueuedPdu>,
    capacity: u64,
    queued_bytes: u64,
    /// Bytes of the head PDU already sent in earlier TTIs.
    head_sent: u64,
    pub dropped_count: u64,
    pub retransmission_count: u64,
    pub bytes_offered: u64,
    pub bytes_dropped: u64,
    pub bytes_transmitted: u64,
}

impl UeQueue {
    pub fn new(vehicle_id: u32, capacity: u64) -> Self {
        UeQueue {
            vehicle_id,
            pdus: VecDeque::new(),
            capacity,
            queued_bytes: 0,
            head_sent: 0,
            dropped_count: 0,
            retransmission_count: 0,
            bytes_offered: 0,
            bytes_dropped: 0,
            bytes_transmitted: 0,
        }
    }

    pub fn queued_bytes(&self) -> u64 {
        self.queued_bytes
    }

    pub fn len(&self) -> usize {
        self.pdus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pdus.is_empty()
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    /// Appends the PDU if it fits, otherwise drops it.
    pub fn enqueue_pdu(&mut self, pdu_bytes: u32, now: SimTime, frame_id: u64, packet_index: u32) -> bool {
        assert!(pdu_bytes > 0, "empty PDU");
        let b = u64::from(pdu_bytes);
        self.bytes_offered += b;
        if self.queued_bytes + b > self.capacity {
            self.dropped_count += 1;
            self.bytes_dropped += b;
            return false;
        }
        self.queued_bytes += b;
        self.pdus.push_back(QueuedPdu {
            bytes: pdu_bytes,
            enqueue_time: now,
            frame_id,
            packet_index,
        });
        true
    }

    /// Sends up to `budget` bytes from the head of the queue. Returns the bytes
    /// used; PDUs whose last byte went out are appended to `done`.
    fn serve(&mut self, budget: u64, done: &mut Vec<QueuedPdu>) -> u64 {
        let mut left = budget;
        while left > 0 {
            let Some(head) = self.pdus.front() else { break };
            let remaining = u64::from(head.bytes) - self.head_sent;
            if remaining <= left {
                left -= remaining;
                self.head_sent = 0;
                self.queued_bytes -= u64::from(head.bytes);
                self.bytes_transmitted += u64::from(head.bytes);
                done.push(self.pdus.pop_front().expect("non-empty"));
            } else {
                self.head_sent += left;
                left = 0;
            }
        }
        budget - left
    }
}

/// Splits the carrier among eligible UEs for one TTI.
pub trait Scheduler: Send {
    /// Writes each UE's bandwidth fraction into `shares` (zero if not eligible).
    fn shares(&mut self, eligible: &[bool], shares: &mut [f64]);
}

/// Equal split among all eligible UEs every TTI.
#[derive(Clone, Copy, Debug, Default)]
pub struct EqualShare;

impl Scheduler for EqualShare {
    fn shares(&mut self, eligible: &[bool], shares: &mut [f64]) {
        let n = eligible.iter().filter(|&&e| e).count();
        for (s, &e) in shares.iter_mut().zip(eligible) {
            *s = if e { 1.0 / n as f64 } else { 0.0 };
        }
    }
}

#[derive(Clone, Debug, Default)]
struct LinkAccumulator {
    ttis: u64,
    sinr_sum: f64,
    mcs_sum: f64,
    share_used_sum: f64,
    tx_pdus: u64,
    queue_delay_sum: f64,
    dropped_pdus: u64,
    offered_pdus: u64,
    pdcp_delay_sum: f64,
    bits_rx: u64,
}

/// Link-layer aggregates of one vehicle over one decision window.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinkStatsWindow {
    pub mean_sinr: f64,
    pub mean_mcs_index: f64,
    pub prb_utilization: f64,
    pub rlc_queue_bytes: u64,
    pub rlc_mean_queue_delay: f64,
    pub rlc_tx_pdus: u64,
    pub rlc_dropped_pdus: u64,
    pub rlc_retx: u64,
    pub pdcp_tx_pdus: u64,
    pub pdcp_rx_pdus: u64,
    pub pdcp_mean_delay: f64,
    pub pdcp_throughput: f64,
    pub pdcp_loss_ratio: f64,
    /// False when nothing was offered or sent in the window.
    pub active: bool,
}

/// All uplink buffers of the cell plus the scheduler.
pub struct RanCell {
    queues: Vec<UeQueue>,
    stats: Vec<LinkAccumulator>,
    carry: Vec<f64>,
    table: McsTable,
    scheduler: Box<dyn Scheduler>,
    bandwidth_hz: f64,
    tti: SimTime,
    core_delay: SimTime,
    eligible: Vec<bool>,
    shares: Vec<f64>,
    done: Vec<QueuedPdu>,
}

impl RanCell {
    pub fn new(n: usize, cfg: &RanConfig, table: McsTable, bandwidth_hz: f64) -> Self {
        RanCell {
            queues: (0..n as u32)
                .map(|v| UeQueue::new(v, cfg.buffer_capacity_bytes))
                .collect(),
            stats: vec![LinkAccumulator::default(); n],
            carry: vec![0.0; n],
            table,
            scheduler: Box::new(EqualShare),
            bandwidth_hz,
            tti: SimTime::from_millis(cfg.tti_ms),
            core_delay: SimTime::from_millis(cfg.core_network_delay_ms),
            eligible: vec![false; n],
            shares: vec![0.0; n],
            done: Vec::new(),
        }
    }

    pub fn with_scheduler(mut self, scheduler: Box<dyn Scheduler>) -> Self {
        self.scheduler = scheduler;
        self
    }

    pub fn queues(&self) -> &[UeQueue] {
        &self.queues
    }

    pub fn table(&self) -> &McsTable {
        &self.table
    }

    pub fn tti(&self) -> SimTime {
        self.tti
    }

    pub fn backlogged_count(&self) -> usize {
        self.queues.iter().filter(|q| !q.is_empty()).count()
    }

    pub fn enqueue_pdu(
        &mut self,
        vehicle: usize,
        pdu_bytes: u32,
        now: SimTime,
        frame_id: u64,
        packet_index: u32,
    ) -> bool {
        let st = &mut self.stats[vehicle];
        st.offered_pdus += 1;
        let ok = self.queues[vehicle].enqueue_pdu(pdu_bytes, now, frame_id, packet_index);
        if !ok {
            st.dropped_pdus += 1;
        }
        ok
    }

    /// Runs one TTI starting at `now`. `snr_db[v]` is the link-adaptation SNR of
    /// every vehicle and is also logged as its SINR sample for the TTI.
    pub fn schedule_tti(&mut self, snr_db: &[f64], now: SimTime) -> Vec<DeliveryRecord> {
        assert_eq!(snr_db.len(), self.queues.len());
        let tti_s = self.tti.as_secs_f64();
        let arrival = now + self.tti + self.core_delay;
        let gnb_rx = now + self.tti;
        let mut out = Vec::new();

        let mut links = Vec::with_capacity(self.queues.len());
        for (v, q) in self.queues.iter().enumerate() {
            let la = self.table.lookup(snr_db[v]);
            self.eligible[v] = !q.is_empty() && !la.outage;
            let st = &mut self.stats[v];
            st.ttis += 1;
            st.sinr_sum += snr_db[v];
            st.mcs_sum += f64::from(la.mcs_index);
            links.push(la);
        }
        self.scheduler.shares(&self.eligible, &mut self.shares);

        for v in 0..self.queues.len() {
            if !self.eligible[v] {
                self.carry[v] = 0.0;
                continue;
            }
            let share = self.shares[v];
            let rate = self.table.rate(&links[v], share * self.bandwidth_hz);
            let exact = rate * tti_s / 8.0 + self.carry[v];
            let budget = exact.floor();
            self.carry[v] = exact - budget;
            let budget = budget as u64;
            self.done.clear();
            let used = self.queues[v].serve(budget, &mut self.done);
            if self.queues[v].is_empty() {
                self.carry[v] = 0.0;
            }
            let st = &mut self.stats[v];
            if budget > 0 {
                st.share_used_sum += share * used as f64 / budget as f64;
            }
            for p in &self.done {
                st.tx_pdus += 1;
                st.queue_delay_sum += (now - p.enqueue_time).as_secs_f64();
                st.pdcp_delay_sum += (gnb_rx - p.enqueue_time).as_secs_f64();
                st.bits_rx += u64::from(p.bytes) * 8;
                out.push(DeliveryRecord {
                    vehicle_id: v as u32,
                    frame_id: p.frame_id,
                    packet_index: p.packet_index,
                    pdu_bytes: p.bytes,
                    enqueue_time: p.enqueue_time,
                    arrival_time: arrival,
                });
            }
        }
        out
    }

    /// Closes the vehicle's window of length `window` and resets its accumulators.
    pub fn collect_window_stats(&mut self, vehicle: usize, window: SimTime) -> LinkStatsWindow {
        let st = std::mem::take(&mut self.stats[vehicle]);
        let q = &self.queues[vehicle];
        let per_tti = |x: f64| if st.ttis > 0 { x / st.ttis as f64 } else { 0.0 };
        let per_pdu = |x: f64| if st.tx_pdus > 0 { x / st.tx_pdus as f64 } else { 0.0 };
        LinkStatsWindow {
            mean_sinr: per_tti(st.sinr_sum),
            mean_mcs_index: per_tti(st.mcs_sum),
            prb_utilization: per_tti(st.share_used_sum).clamp(0.0, 1.0),
            rlc_queue_bytes: q.queued_bytes(),
            rlc_mean_queue_delay: per_pdu(st.queue_delay_sum),
            rlc_tx_pdus: st.tx_pdus,
            rlc_dropped_pdus: st.dropped_pdus,
            rlc_retx: 0,
            pdcp_tx_pdus: st.offered_pdus,
            pdcp_rx_pdus: st.tx_pdus,
            pdcp_mean_delay: per_pdu(st.pdcp_delay_sum),
            pdcp_throughput: st.bits_rx as f64 / window.as_secs_f64(),
            pdcp_loss_ratio: if st.offered_pdus > 0 {
                (st.dropped_pdus as f64 / st.offered_pdus as f64).clamp(0.0, 1.0)
            } else {
                0.0
            },
            active: st.offered_pdus > 0 || st.tx_pdus > 0,
        }
    }
}
