use proptest::prelude::*;
use thn_core::data::crop::CropGeometry;
use thn_core::head::{cosine_window, decode, size_penalty, PenaltyConfig, RegressionMap, ResponseGeometry, ScoreMap};
use thn_core::tensor::Tensor;
use thn_core::BBox;

/// Score map whose foreground probability at each point is `fg[i]`.
fn scores(h: usize, w: usize, fg: &[f64]) -> ScoreMap {
    let logits = Tensor::from_fn([1, 2, h, w], |_, c, y, x| {
        let p = fg[y * w + x];
        if c == 1 {
            (p / (1.0 - p)).ln()
        } else {
            0.0
        }
    });
    ScoreMap::from_logits(logits).unwrap()
}

fn regs(h: usize, w: usize, f: impl Fn(usize, usize, usize) -> f64) -> RegressionMap {
    RegressionMap {
        offsets: Tensor::from_fn([1, 4, h, w], |_, c, y, x| f(c, y, x)),
    }
}

/// Crop with unit scale centered on `(cx, cy)`.
fn crop(cx: f64, cy: f64, size: usize) -> CropGeometry {
    CropGeometry::new(cx, cy, size as f64, size).unwrap()
}

const NO_PENALTY: PenaltyConfig = PenaltyConfig {
    window_influence: 0.0,
    penalty_k: 0.0,
    size_lr: 1.0,
};

#[test]
fn map_point_examples() {
    let g = ResponseGeometry::new(31, 31, 8, 255);
    assert_eq!(g.map_point(0, 1).unwrap(), (7.0, 15.0));
    assert_eq!(g.map_point(15, 15).unwrap(), (127.0, 127.0));
    let (_, a) = g.map_point(0, 0).unwrap();
    let (_, b) = g.map_point(0, 30).unwrap();
    assert_eq!(a + b, 254.0);
    assert!(g.map_point(31, 0).is_err());
}

#[test]
fn dominant_point_wins_without_window() {
    let (h, w) = (5, 5);
    let mut fg = vec![0.1; 25];
    fg[7] = 0.9;
    let geom = ResponseGeometry::new(h, w, 8, 63);
    let r = regs(h, w, |c, _, _| [4.0, 6.0, 8.0, 10.0][c]);
    let prev = BBox::new(100.0, 100.0, 12.0, 16.0);
    let d = decode(&scores(h, w, &fg), &r, &geom, &crop(100.0, 100.0, 63), &prev, &NO_PENALTY).unwrap();
    assert_eq!(d.cell, (1, 2));
    assert!((d.confidence - 0.9).abs() < 1e-12);
    let (py, px) = geom.map_point(1, 2).unwrap();
    // Center of the (l, t, r, b) box around the point, in frame coordinates.
    let expected = BBox::new(100.0 + px + 2.0 - 31.0, 100.0 + py + 2.0 - 31.0, 12.0, 16.0);
    assert!((d.bbox.cx - expected.cx).abs() < 1e-12 && (d.bbox.cy - expected.cy).abs() < 1e-12);
    assert_eq!((d.bbox.w, d.bbox.h), (12.0, 16.0));
    assert!(!d.clamped);
}

#[test]
fn full_window_picks_the_center() {
    let (h, w) = (7, 7);
    let fg: Vec<f64> = (0..49).map(|i| 0.01 + 0.98 * ((i * 37) % 49) as f64 / 49.0).collect();
    let pen = PenaltyConfig {
        window_influence: 1.0,
        ..PenaltyConfig::default()
    };
    let d = decode(
        &scores(h, w, &fg),
        &regs(h, w, |_, _, _| 5.0),
        &ResponseGeometry::new(h, w, 8, 63),
        &crop(50.0, 50.0, 63),
        &BBox::new(50.0, 50.0, 10.0, 10.0),
        &pen,
    )
    .unwrap();
    assert_eq!(d.cell, (3, 3));
}

#[test]
fn three_by_three_matches_enumeration() {
    let (h, w) = (3, 3);
    let fg = [0.2, 0.55, 0.3, 0.6, 0.35, 0.5, 0.1, 0.58, 0.4];
    let r = regs(h, w, |c, y, x| 3.0 + ((c * 7 + y * 3 + x * 5) % 11) as f64);
    let geom = ResponseGeometry::new(h, w, 8, 31);
    let cg = CropGeometry::new(40.0, 30.0, 62.0, 31).unwrap();
    let prev = BBox::new(40.0, 30.0, 14.0, 10.0);
    let pen = PenaltyConfig {
        window_influence: 0.3,
        penalty_k: 0.2,
        size_lr: 0.5,
    };
    let d = decode(&scores(h, w, &fg), &r, &geom, &cg, &prev, &pen).unwrap();

    let window = cosine_window(h, w);
    let (pw, ph) = (prev.w * cg.scale, prev.h * cg.scale);
    let mut best = (f64::NEG_INFINITY, 0);
    for i in 0..9 {
        let (y, x) = (i / 3, i % 3);
        let [l, t, rr, b] = [0, 1, 2, 3].map(|c| r.offsets.at(0, c, y, x));
        let s = fg[i] * size_penalty(l + rr, t + b, pw, ph, pen.penalty_k);
        let blended = 0.7 * s + 0.3 * window[i];
        if blended > best.0 {
            best = (blended, i);
        }
    }
    let i = best.1;
    assert_eq!(d.cell, (i / 3, i % 3));
    let [l, t, rr, b] = [0, 1, 2, 3].map(|c| r.offsets.at(0, c, i / 3, i % 3));
    let (py, px) = geom.map_point(i / 3, i % 3).unwrap();
    let (fx, fy) = cg.to_frame_point(px + (rr - l) / 2.0, py + (b - t) / 2.0);
    assert!((d.bbox.cx - fx).abs() < 1e-12 && (d.bbox.cy - fy).abs() < 1e-12);
    assert!((d.bbox.w - (0.5 * prev.w + 0.5 * (l + rr) / cg.scale)).abs() < 1e-12);
    assert!((d.bbox.h - (0.5 * prev.h + 0.5 * (t + b) / cg.scale)).abs() < 1e-12);
}

#[test]
fn degenerate_size_is_clamped_and_flagged() {
    let (h, w) = (3, 3);
    let d = decode(
        &scores(h, w, &[0.5; 9]),
        &regs(h, w, |_, _, _| -1.0),
        &ResponseGeometry::new(h, w, 8, 31),
        &crop(20.0, 20.0, 31),
        &BBox::new(20.0, 20.0, 8.0, 8.0),
        &NO_PENALTY,
    )
    .unwrap();
    assert!(d.clamped);
    assert_eq!((d.bbox.w, d.bbox.h), (2.0, 2.0));
}

#[test]
fn batch_of_two_is_rejected() {
    let logits = Tensor::zeros([2, 2, 3, 3]);
    let r = RegressionMap {
        offsets: Tensor::full([2, 4, 3, 3], 1.0),
    };
    let err = decode(
        &ScoreMap::from_logits(logits).unwrap(),
        &r,
        &ResponseGeometry::new(3, 3, 8, 31),
        &crop(0.0, 0.0, 31),
        &BBox::new(0.0, 0.0, 4.0, 4.0),
        &NO_PENALTY,
    );
    assert!(err.is_err());
}

proptest! {
    #[test]
    fn scaling_probabilities_keeps_the_argmax(
        fg in prop::collection::vec(0.01..0.99f64, 25),
        factor in 0.05..1.0f64,
    ) {
        let (h, w) = (5, 5);
        let base = scores(h, w, &fg);
        let mut scaled = base.clone();
        for v in scaled.probs.data_mut()[25..].iter_mut() {
            *v *= factor;
        }
        let r = regs(h, w, |c, y, x| 2.0 + (c + y + x) as f64);
        let geom = ResponseGeometry::new(h, w, 8, 63);
        let pen = PenaltyConfig { window_influence: 0.0, ..PenaltyConfig::default() };
        let prev = BBox::new(80.0, 60.0, 20.0, 14.0);
        let cg = crop(80.0, 60.0, 63);
        let a = decode(&base, &r, &geom, &cg, &prev, &pen).unwrap();
        let b = decode(&scaled, &r, &geom, &cg, &prev, &pen).unwrap();
        prop_assert_eq!(a.cell, b.cell);
    }

    #[test]
    fn decoded_center_stays_in_the_search_region(
        fg in prop::collection::vec(0.01..0.99f64, 25),
        offs in prop::collection::vec(0.1..200.0f64, 100),
    ) {
        let (h, w) = (5, 5);
        let r = regs(h, w, |c, y, x| offs[c * 25 + y * 5 + x]);
        let cg = CropGeometry::new(70.0, 90.0, 126.0, 63).unwrap();
        let d = decode(&scores(h, w, &fg), &r, &ResponseGeometry::new(h, w, 8, 63), &cg,
            &BBox::new(70.0, 90.0, 30.0, 30.0), &PenaltyConfig::default()).unwrap();
        let (u, v) = cg.to_crop_point(d.bbox.cx, d.bbox.cy);
        prop_assert!((-1e-9..=62.0 + 1e-9).contains(&u) && (-1e-9..=62.0 + 1e-9).contains(&v));
    }
}
