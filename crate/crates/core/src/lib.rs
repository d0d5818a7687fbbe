//! Simulator of a 5G teleoperated-driving cell in which a gNB-resident
//! orchestrator picks a LiDAR segmentation mode for every vehicle each 100 ms.
//!
//! The crate is organised bottom-up:
//!
//! * [`sim`]: clock, event queue and labelled random streams
//! * [`channel`]: mobility, pathloss, shadowing and SNR
//! * [`ran`]: uplink queues, per-TTI scheduler and link statistics
//! * [`app`]: frame source, PDU fragmentation and application KPIs
//! * [`metrics`]: PRP, QoS, Chamfer distance, QoE, reward, state vectors
//! * [`nn`]: dense networks with hand-written backpropagation
//! * [`agents`]: constant, delay-heuristic, double-Q and PPO policies
//! * [`orchestrator`]: the periodic decision routine
//! * [`episode`], [`harness`]: experiment runs, CSV outputs and summaries

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Per-UE state lives in parallel vectors indexed by vehicle.
#![allow(clippy::needless_range_loop)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{} != {} (tol {})", a, b, $tol);
    }};
}

pub mod agents;
pub mod app;
pub mod channel;
pub mod config;
pub mod episode;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod orchestrator;
pub mod ran;
pub mod sim;

pub use error::{Error, Result};
