mod common;

use anchordet::eval::metrics::yaw_error;
use anchordet::eval::{compute_metrics, ScoredBox};
use anchordet::scene::{parse_scene, scene_to_string};
use anchordet::training::{checkpoint_to_string, parse_checkpoint};
use anchordet::{Detector64, RefineSchedule, Tape};
use common::{micro_detector, micro_scene, random_box, rng};
use proptest::prelude::*;
use rand::Rng;

fn rows_are_stochastic(m: &anchordet::Matrix64, mask: Option<&[bool]>) -> bool {
    (0..m.rows()).all(|r| {
        let row = m.row(r);
        let sum: f64 = row.iter().sum();
        let masked_ok = mask.is_none_or(|mask| row.iter().zip(mask).all(|(w, keep)| *keep || *w == 0.0));
        (sum - 1.0).abs() < 1e-9 && row.iter().all(|w| *w >= 0.0) && masked_ok
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn attention_rows_sum_to_one(seed in 0u64..1000, refine in 0usize..2, mask in any::<bool>()) {
        let schedule = if refine == 0 { RefineSchedule::propagation() } else { RefineSchedule::once() };
        let mut det = micro_detector(seed, schedule);
        det.config.decoder.mask_empty = mask;
        let scene = micro_scene(seed);
        let mut tape = Tape::new();
        let p = det.params.bind(&mut tape, |_| false);
        let fwd = det.forward(&mut tape, &p, &scene).unwrap();
        let key_mask = mask.then_some(fwd.tokens.nonempty_mask.as_slice());
        for layer in &fwd.decoder.layers {
            for &w in &layer.cross_weights {
                prop_assert!(rows_are_stochastic(tape.value(w), key_mask));
            }
            for &w in &layer.self_weights {
                prop_assert!(rows_are_stochastic(tape.value(w), None));
            }
        }
    }

    #[test]
    fn scene_text_round_trips(seed in 0u64..500) {
        let scene = micro_scene(seed);
        prop_assert_eq!(parse_scene(&scene_to_string(&scene)).unwrap(), scene);
    }

    #[test]
    fn yaw_error_is_wrapped(a in -20.0f64..20.0, b in -20.0f64..20.0) {
        let e = yaw_error(a, b);
        prop_assert!((0.0..=std::f64::consts::PI + 1e-12).contains(&e));
        prop_assert!((e - yaw_error(b, a)).abs() < 1e-9);
    }

    #[test]
    fn metrics_stay_in_range(seed in 0u64..500, n in 0usize..30) {
        let mut r = rng(seed);
        let gts: Vec<Vec<_>> = (0..3).map(|_| (0..r.random_range(0..5)).map(|_| random_box(&mut r, 20.0)).collect()).collect();
        let dets: Vec<ScoredBox> = (0..n)
            .map(|_| ScoredBox { scene: r.random_range(0..3), bbox: random_box(&mut r, 20.0), score: r.random_range(0.0..1.0) })
            .collect();
        let m = compute_metrics(&dets, &gts, 0);
        prop_assert!((0.0..=1.0).contains(&m.ap));
        prop_assert!(m.ate >= 0.0 && m.ate <= 2.0);
        prop_assert!((0.0..=1.0).contains(&m.ase));
        prop_assert!((0.0..=std::f64::consts::PI).contains(&m.aoe));
    }
}

#[test]
fn checkpoint_text_round_trip_is_exact() {
    let det = micro_detector(51, RefineSchedule::once());
    let text = checkpoint_to_string(&det);
    let back: Detector64 = parse_checkpoint(&text).unwrap();
    assert_eq!(back.config, det.config);
    assert_eq!(back.params, det.params);
    let scene = micro_scene(51);
    assert_eq!(back.infer(&scene, false).unwrap().boxes, det.infer(&scene, false).unwrap().boxes);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let det = micro_detector(52, RefineSchedule::propagation());
    let text = checkpoint_to_string(&det);
    assert!(parse_checkpoint::<f64>("not a checkpoint").is_err());
    assert!(parse_checkpoint::<f64>(&text.replace("END", "")).is_err());
    let truncated: String = text.lines().take(text.lines().count() / 2).collect::<Vec<_>>().join("\n");
    assert!(parse_checkpoint::<f64>(&truncated).is_err());
}
