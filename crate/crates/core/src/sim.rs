//! Discrete-event core: integer-microsecond clock, ordered event queue and
//! labelled random streams derived from one master seed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Simulation time in whole microseconds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SimTime(u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub const fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub const fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    /// Rounds to the nearest microsecond. Panics on negative or non-finite input.
    pub fn from_secs_f64(s: f64) -> Self {
        assert!(s.is_finite() && s >= 0.0, "invalid simulation time {s} s");
        SimTime((s * 1e6).round() as u64)
    }

    pub const fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn is_multiple_of(self, period: SimTime) -> bool {
        period.0 != 0 && self.0.is_multiple_of(period.0)
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl std::ops::Sub for SimTime {
    type Output = SimTime;
    fn sub(self, rhs: SimTime) -> SimTime {
        SimTime(self.0.checked_sub(rhs.0).expect("negative time difference"))
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}s", self.as_secs_f64())
    }
}

/// A scheduled event. Ordering is `(fire_time, sequence_id)`.
#[derive(Debug, Clone)]
pub struct SimEvent<P> {
    pub fire_time: SimTime,
    pub sequence_id: u64,
    pub payload: P,
}

impl<P> PartialEq for SimEvent<P> {
    fn eq(&self, other: &Self) -> bool {
        self.fire_time == other.fire_time && self.sequence_id == other.sequence_id
    }
}

impl<P> Eq for SimEvent<P> {}

impl<P> PartialOrd for SimEvent<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for SimEvent<P> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        (other.fire_time, other.sequence_id).cmp(&(self.fire_time, self.sequence_id))
    }
}

/// Event queue with a monotone clock.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<SimEvent<P>>,
    clock: SimTime,
    next_sequence: u64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            clock: SimTime::ZERO,
            next_sequence: 0,
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Enqueues `payload` at `at` and returns its sequence id.
    ///
    /// Scheduling before the current clock is a contract violation and panics.
    pub fn schedule(&mut self, at: SimTime, payload: P) -> u64 {
        assert!(
            at >= self.clock,
            "event scheduled in the past: fire_time {at} < clock {}",
            self.clock
        );
        let sequence_id = self.next_sequence;
        self.next_sequence += 1;
        self.heap.push(SimEvent {
            fire_time: at,
            sequence_id,
            payload,
        });
        sequence_id
    }

    /// Pops the next event with `fire_time <= t_end`, advancing the clock to it.
    pub fn pop_due(&mut self, t_end: SimTime) -> Option<SimEvent<P>> {
        if self.heap.peek()?.fire_time > t_end {
            return None;
        }
        let ev = self.heap.pop()?;
        self.clock = ev.fire_time;
        Some(ev)
    }

    /// Sets the clock to `t` after all due events have been drained.
    pub fn advance_to(&mut self, t: SimTime) {
        assert!(t >= self.clock, "clock cannot move backwards");
        debug_assert!(self.heap.peek().is_none_or(|e| e.fire_time > t));
        self.clock = t;
    }

    /// Dispatches every event with `fire_time <= t_end` to `handler`, which may
    /// schedule further events. Leaves the clock at `t_end`.
    pub fn run_until<F>(&mut self, t_end: SimTime, mut handler: F) -> usize
    where
        F: FnMut(&mut Self, SimEvent<P>),
    {
        assert!(
            t_end >= self.clock,
            "run_until target {t_end} before clock {}",
            self.clock
        );
        let mut count = 0;
        while let Some(ev) = self.pop_due(t_end) {
            handler(self, ev);
            count += 1;
        }
        self.clock = t_end;
        count
    }
}

/// A labelled, reproducible random stream.
///
/// The master seed keys a ChaCha8 generator and the label selects one of its
/// 2^64 independent streams, so streams with different labels never overlap.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(label: &str, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label_hash(label));
        RngStream {
            label: label.to_owned(),
            seed,
            rng,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// FNV-1a, stable across platforms and releases.
pub fn label_hash(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Derives a child seed from a master seed and an index (splitmix64 finalizer).
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut z = master ^ label_hash(label).rotate_left(17) ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn dispatch_order_follows_fire_time() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_millis(100), "late");
        q.schedule(SimTime::from_millis(50), "early");
        let mut seen = Vec::new();
        q.run_until(SimTime::from_millis(200), |_, ev| seen.push(ev.payload));
        assert_eq!(seen, vec!["early", "late"]);
    }

    #[test]
    fn equal_times_break_ties_by_sequence() {
        let mut q = EventQueue::new();
        let t = SimTime::from_millis(100);
        let a = q.schedule(t, 'a');
        let b = q.schedule(t, 'b');
        assert!(a < b);
        let first = q.pop_due(t).unwrap();
        assert_eq!(first.sequence_id, a);
        assert_eq!(first.payload, 'a');
    }

    #[test]
    #[should_panic(expected = "scheduled in the past")]
    fn scheduling_in_the_past_aborts() {
        let mut q: EventQueue<()> = EventQueue::new();
        q.run_until(SimTime::from_millis(10), |_, _| {});
        q.schedule(SimTime::from_micros(9_999), ());
    }

    #[test]
    fn empty_run_moves_clock() {
        let mut q: EventQueue<()> = EventQueue::new();
        assert_eq!(q.run_until(SimTime::from_millis(80_000), |_, _| {}), 0);
        assert_eq!(q.now(), SimTime::from_secs_f64(80.0));
    }

    #[test]
    fn periodic_ticks_over_an_episode() {
        let period = SimTime::from_millis(100);
        let mut q = EventQueue::new();
        q.schedule(period, ());
        let n = q.run_until(SimTime::from_millis(80_000), |q, ev| {
            q.schedule(ev.fire_time + period, ());
        });
        assert_eq!(n, 800);
    }

    #[test]
    fn run_until_boundary() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_millis(50), 1);
        q.schedule(SimTime::from_millis(150), 2);
        assert_eq!(q.run_until(SimTime::from_millis(100), |_, _| {}), 1);
        assert_eq!(q.now(), SimTime::from_millis(100));
        assert_eq!(q.len(), 1);
    }

    #[test]
    fn clock_is_monotone_during_dispatch() {
        let mut q = EventQueue::new();
        for t in [30u64, 10, 20, 10, 50] {
            q.schedule(SimTime::from_millis(t), ());
        }
        let mut last = SimTime::ZERO;
        q.run_until(SimTime::from_millis(60), |q, _| {
            assert!(q.now() >= last);
            last = q.now();
        });
    }

    #[test]
    fn streams_are_reproducible_and_label_separated() {
        let mut a = RngStream::new("channel", 7);
        let mut b = RngStream::new("channel", 7);
        let mut c = RngStream::new("traffic", 7);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        let xc: Vec<u64> = (0..16).map(|_| c.next_u64()).collect();
        assert_eq!(xa, xb);
        assert_ne!(xa, xc);
    }

    #[test]
    fn separate_streams_are_uncorrelated() {
        let mut a = RngStream::new("agent-exploration", 1);
        let mut b = RngStream::new("nn-init", 1);
        let n = 20_000;
        let (mut sab, mut sa, mut sb, mut saa, mut sbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x: f64 = a.random();
            let y: f64 = b.random();
            sab += x * y;
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let corr = cov / ((saa / nf - (sa / nf).powi(2)).sqrt() * (sbb / nf - (sb / nf).powi(2)).sqrt());
        assert!(corr.abs() < 0.03, "corr {corr}");
    }
}
