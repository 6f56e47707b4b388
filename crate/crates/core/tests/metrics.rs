use std::collections::BTreeSet;

use proptest::prelude::*;
use thn_core::data::image::RgbImage;
use thn_core::data::{Sequence, SequenceAnnotation};
use thn_core::eval::{
    attribute_breakdown, evaluate, format_vot_trace, parse_vot_trace, success_curve, summarize_vot, vot_report,
    vot_run, EvalConfig, VotEvent, VotFrame,
};
use thn_core::tracker::ReplayTracker;
use thn_core::BBox;

fn gt_path(len: usize) -> Vec<BBox> {
    (0..len).map(|i| BBox::new(40.0 + i as f64, 50.0, 20.0, 16.0)).collect()
}

fn sequence(name: &str, gt: Vec<BBox>) -> Sequence {
    let n = gt.len();
    let ann = SequenceAnnotation {
        name: name.into(),
        frames: Vec::new(),
        gt,
        attributes: BTreeSet::new(),
        out_of_view: vec![false; n],
    };
    Sequence::new(ann, vec![RgbImage::new(1, 1, [0; 3]); n]).unwrap()
}

fn far_away(b: &BBox) -> BBox {
    b.translate(1000.0, 0.0)
}

#[test]
fn perfect_tracker_never_fails() {
    let gt = gt_path(30);
    let seq = sequence("perfect", gt.clone());
    let (_, rep) = vot_run(&mut ReplayTracker::new(gt), &seq, &EvalConfig::default()).unwrap();
    assert_eq!(rep.robustness, 0);
    assert!(rep.resets.is_empty());
    assert_eq!(rep.accuracy, 1.0);
    assert_eq!(rep.eao_simple, 1.0);
}

#[test]
fn off_target_from_frame_k_fails_at_k() {
    let k = 8;
    let gt = gt_path(30);
    let boxes: Vec<BBox> = gt.iter().enumerate().map(|(i, b)| if i >= k { far_away(b) } else { *b }).collect();
    let seq = sequence("shifted", gt);
    let cfg = EvalConfig::default();
    let (trace, rep) = vot_run(&mut ReplayTracker::new(boxes), &seq, &cfg).unwrap();
    assert_eq!(rep.resets[0], k);
    // Fail at k, skip the gap, re-init, fail on the next tracked frame, and so on.
    assert_eq!(rep.resets, vec![8, 14, 20, 26]);
    assert_eq!(rep.robustness, rep.resets.len());
    assert!(trace[9..13].iter().all(|f| f.event == VotEvent::Skip));
    assert_eq!(trace[13].event, VotEvent::Init);
    // Only frames 1..k count toward accuracy, all perfect.
    assert_eq!((rep.accuracy, rep.accuracy_frames), (1.0, k - 1));
    // First run: k-1 perfect frames, then zeros, over 29 frames.
    assert!((rep.eao_simple - 7.0 / 29.0).abs() < 1e-15);
}

#[test]
fn burn_in_frames_are_left_out_of_accuracy() {
    let gt = gt_path(15);
    let cfg = EvalConfig {
        reinit_gap: 2,
        burn_in: 3,
        eao_horizon: 100,
    };
    // Frame 5 fails, 6 is skipped, 7 re-initializes, 8..10 are burn-in with IoU 1/3.
    let boxes: Vec<BBox> = gt
        .iter()
        .enumerate()
        .map(|(i, b)| match i {
            5 => far_away(b),
            8..=10 => b.translate(b.w / 2.0, 0.0),
            _ => *b,
        })
        .collect();
    let (trace, rep) = vot_run(&mut ReplayTracker::new(boxes), &sequence("burn", gt), &cfg).unwrap();
    assert_eq!(rep.resets, vec![5]);
    assert_eq!(trace[7].event, VotEvent::Init);
    assert!((trace[9].overlap - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(rep.accuracy_frames, 8);
    assert_eq!(rep.accuracy, 1.0);
}

#[test]
fn eao_matches_hand_computation() {
    let frame = |event, overlap| VotFrame {
        event,
        bbox: None,
        overlap,
    };
    let cfg = EvalConfig::default();
    let a = [
        frame(VotEvent::Init, 1.0),
        frame(VotEvent::Track, 0.5),
        frame(VotEvent::Track, 0.7),
        frame(VotEvent::Track, 0.9),
    ];
    let b = [
        frame(VotEvent::Init, 1.0),
        frame(VotEvent::Track, 0.8),
        frame(VotEvent::Fail, 0.0),
        frame(VotEvent::Skip, 0.0),
        frame(VotEvent::Skip, 0.0),
    ];
    let (ra, rb) = (vot_report(&a, &cfg), vot_report(&b, &cfg));
    // (0.5 + 0.7 + 0.9) / 3 and 0.8 / 4.
    assert!((ra.eao_simple - 0.7).abs() < 1e-12);
    assert!((rb.eao_simple - 0.2).abs() < 1e-12);
    assert!((summarize_vot(&[ra, rb]).eao_simple - 0.45).abs() < 1e-12);
    let short = EvalConfig {
        eao_horizon: 2,
        ..cfg
    };
    assert!((vot_report(&a, &short).eao_simple - 0.6).abs() < 1e-12);
}

#[test]
fn no_resets_degenerates_to_one_pass_evaluation() {
    let gt = gt_path(12);
    let boxes: Vec<BBox> = gt
        .iter()
        .enumerate()
        .map(|(i, b)| if i % 3 == 0 && i > 0 { far_away(b) } else { b.translate(i as f64 * 0.5, 0.0) })
        .collect();
    let cfg = EvalConfig {
        reinit_gap: 100,
        ..EvalConfig::default()
    };
    let seq = sequence("short", gt.clone());
    let (trace, rep) = vot_run(&mut ReplayTracker::new(boxes.clone()), &seq, &cfg).unwrap();
    assert_eq!(rep.robustness, 0);
    let mut pred = vec![gt[0]];
    pred.extend(trace[1..].iter().map(|f| f.bbox.unwrap()));
    assert_eq!(pred[1..], boxes[1..]);
    let overlaps: Vec<f64> = trace.iter().map(|f| f.overlap).collect();
    let direct = evaluate([(pred.as_slice(), gt.as_slice())]).unwrap();
    assert_eq!(success_curve(&overlaps).unwrap().1, direct.auc);
}

#[test]
fn vot_trace_round_trips() {
    let gt = gt_path(20);
    let boxes: Vec<BBox> = gt.iter().enumerate().map(|(i, b)| if i == 4 { far_away(b) } else { *b }).collect();
    let (trace, _) = vot_run(&mut ReplayTracker::new(boxes), &sequence("rt", gt), &EvalConfig::default()).unwrap();
    let text = format_vot_trace(&trace);
    assert!(text.starts_with("frame,event,x,y,w,h,overlap\n1,init,"));
    assert_eq!(parse_vot_trace(&text).unwrap(), trace);
}

fn tags(t: &[&str]) -> BTreeSet<String> {
    t.iter().map(|s| s.to_string()).collect()
}

#[test]
fn single_attribute_breakdown_equals_overall() {
    let gt = gt_path(10);
    let pred: Vec<BBox> = gt.iter().map(|b| b.translate(3.0, 1.0)).collect();
    let occ = tags(&["occlusion"]);
    let out = attribute_breakdown(&[(&pred, &gt, &occ), (&gt, &gt, &occ)]).unwrap();
    let overall = evaluate([(pred.as_slice(), gt.as_slice()), (gt.as_slice(), gt.as_slice())]).unwrap();
    assert_eq!(out.curves.len(), 1);
    assert_eq!(out.curves["occlusion"], overall);
}

#[test]
fn disjoint_attributes_are_scored_independently() {
    let gt = gt_path(10);
    let half: Vec<BBox> = gt.iter().map(|b| b.translate(b.w / 2.0, 0.0)).collect();
    let (occ, sv, none, odd) = (tags(&["occlusion"]), tags(&["scale-variation"]), tags(&[]), tags(&["made-up"]));
    let out = attribute_breakdown(&[(&gt, &gt, &occ), (&half, &gt, &sv), (&gt, &gt, &none), (&gt, &gt, &odd)]).unwrap();
    assert_eq!(out.curves["occlusion"].auc, 20.0 / 21.0);
    // IoU 1/3 exceeds thresholds 0, 0.05, ..., 0.3: seven of 21.
    assert!((out.curves["scale-variation"].auc - 7.0 / 21.0).abs() < 1e-12);
    assert_eq!(out.curves.len(), 2);
    assert_eq!(out.skipped, tags(&["made-up"]));
}

proptest! {
    #[test]
    fn curves_are_monotone_and_auc_is_the_mean(
        boxes in prop::collection::vec((0.0..60.0f64, 0.0..60.0f64, 1.0..30.0f64, 1.0..30.0f64), 1..40),
    ) {
        let gt: Vec<BBox> = boxes.iter().map(|&(x, y, w, h)| BBox::from_corner(x, y, w, h)).collect();
        let pred: Vec<BBox> = boxes.iter().map(|&(x, y, w, h)| BBox::from_corner(y, x, h, w)).collect();
        let c = evaluate([(pred.as_slice(), gt.as_slice())]).unwrap();
        prop_assert!(c.success_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(c.precision_values.windows(2).all(|w| w[0] <= w[1]));
        let mean = c.success_values.iter().sum::<f64>() / 21.0;
        prop_assert!((c.auc - mean).abs() <= 1e-12);
    }
}
