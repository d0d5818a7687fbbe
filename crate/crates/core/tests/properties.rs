use proptest::prelude::*;

use ranai_core::app::{AppKpiWindow, SegmentationMode, SegmentationProfile};
use ranai_core::metrics::{
    assemble_state, chamfer_distance, prp, qoe, reward, KpiThresholds, Normalization, Point3, StateConfig,
    StepObservation,
};
use ranai_core::ran::LinkStatsWindow;

fn thr(alpha: f64) -> KpiThresholds {
    KpiThresholds {
        alpha,
        ..KpiThresholds::default()
    }
}

fn point() -> impl Strategy<Value = Point3> {
    prop::array::uniform3(-50.0f64..50.0)
}

fn cloud() -> impl Strategy<Value = Vec<Point3>> {
    prop::collection::vec(point(), 1..20)
}

fn observation(vehicle_id: u32) -> impl Strategy<Value = StepObservation> {
    (
        0.0f64..0.2,
        0.0f64..0.05,
        0u64..200,
        0u64..200,
        -10.0f64..30.0,
        0.0f64..28.0,
        0.0f64..1.0,
        0usize..3,
    )
        .prop_map(move |(delay, std, n_tx, n_rx, sinr, mcs, prb, m)| {
            let app = AppKpiWindow {
                n_tx,
                n_rx,
                delay_mean: delay,
                delay_std: std,
                delay_min: delay * 0.5,
                delay_max: delay * 1.5,
                throughput_mean: 1e6 * delay * 100.0,
            };
            let link = LinkStatsWindow {
                mean_sinr: sinr,
                mean_mcs_index: mcs,
                prb_utilization: prb,
                rlc_queue_bytes: n_tx * 1500,
                rlc_tx_pdus: n_rx,
                pdcp_tx_pdus: n_tx,
                pdcp_rx_pdus: n_rx,
                active: true,
                ..LinkStatsWindow::default()
            };
            StepObservation::new(
                vehicle_id,
                app,
                link,
                SegmentationMode::from_index(m).unwrap(),
                &SegmentationProfile::default(),
                &KpiThresholds::default(),
            )
        })
}

fn norm() -> Normalization {
    Normalization::new(
        &KpiThresholds::default(),
        &SegmentationProfile::default(),
        10,
        1500,
        28,
        2_000_000,
    )
}

proptest! {
    #[test]
    fn reward_stays_in_unit_interval(delay in 0.0f64..0.05, q in any::<bool>(), cd in 0.0f64..45.0, alpha in 0.0f64..=1.0) {
        let t = thr(alpha);
        let r = reward(delay, q, qoe(cd, &t), &t);
        prop_assert!((0.0..=1.0).contains(&r));
        if !q {
            prop_assert_eq!(r, 0.0);
        }
    }

    #[test]
    fn reward_monotone_within_qos_branch(d1 in 0.0f64..0.05, d2 in 0.0f64..0.05, e1 in 0.0f64..=1.0, e2 in 0.0f64..=1.0, alpha in 0.0f64..=1.0) {
        let t = thr(alpha);
        let (dl, dh) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (el, eh) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        prop_assert!(reward(dl, true, el, &t) >= reward(dh, true, el, &t) - 1e-15);
        prop_assert!(reward(dl, true, eh, &t) >= reward(dl, true, el, &t) - 1e-15);
    }

    #[test]
    fn qoe_is_decreasing_and_affine(a in 0.0f64..45.0, b in 0.0f64..45.0, w in 0.0f64..=1.0) {
        let t = KpiThresholds::default();
        if a < b {
            prop_assert!(qoe(a, &t) > qoe(b, &t));
        }
        let mid = w * a + (1.0 - w) * b;
        let lhs = qoe(mid, &t);
        let rhs = w * qoe(a, &t) + (1.0 - w) * qoe(b, &t);
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn prp_is_a_clamped_ratio(n_rx in 0u64..1000, n_tx in 0u64..1000) {
        let p = prp(n_rx, n_tx);
        prop_assert!((0.0..=1.0).contains(&p));
        if n_tx > 0 && n_rx <= n_tx {
            prop_assert!((p - n_rx as f64 / n_tx as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn chamfer_is_symmetric(a in cloud(), b in cloud()) {
        let ab = chamfer_distance(&a, &b).unwrap();
        let ba = chamfer_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.max(1.0));
        prop_assert!(ab >= 0.0);
    }

    #[test]
    fn chamfer_zero_iff_same_set(a in cloud(), extra in point()) {
        let mut shuffled = a.clone();
        shuffled.reverse();
        shuffled.push(a[0]);
        prop_assert_eq!(chamfer_distance(&a, &shuffled).unwrap(), 0.0);
        if !a.contains(&extra) {
            let mut b = a.clone();
            b.push(extra);
            prop_assert!(chamfer_distance(&a, &b).unwrap() > 0.0);
        }
    }

    #[test]
    fn state_is_invariant_to_peer_order(
        own in observation(0),
        peers in (observation(1), observation(2), observation(3), observation(4)),
        rot in 0usize..4,
    ) {
        let n = norm();
        let list = [&peers.0, &peers.1, &peers.2, &peers.3];
        let mut permuted = list.to_vec();
        permuted.rotate_left(rot);
        permuted.swap(0, 3);
        for cfg in StateConfig::ALL {
            let a = assemble_state(&own, &list, cfg, &n);
            let b = assemble_state(&own, &permuted, cfg, &n);
            prop_assert_eq!(a.len(), cfg.dim());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((0.0..=1.0).contains(x));
            }
        }
    }

    #[test]
    fn observation_reward_is_zero_without_qos(o in observation(7)) {
        prop_assert!((0.0..=1.0).contains(&o.reward));
        if !o.qos {
            prop_assert_eq!(o.reward, 0.0);
        }
    }
}
