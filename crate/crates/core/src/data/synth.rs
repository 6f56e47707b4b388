//! Procedural tracking sequences with exact ground truth: a textured
//! background, a patterned target moving at constant velocity, optional
//! look-alike distractors, a static occluder and per-frame scale drift.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::image::RgbImage;
use super::{Sequence, SequenceAnnotation, TAG_OCCLUSION, TAG_SCALE, TAG_SIMILAR};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub length: usize,
    /// Target box at frame 0.
    pub start: BBox,
    /// Pixels per frame.
    pub velocity: (f64, f64),
    /// Reflect the target off the frame border instead of letting it leave.
    pub bounce: bool,
    pub distractors: usize,
    /// The occluder sits where the target is at this frame.
    pub occluder_at: Option<usize>,
    /// Relative size change per frame.
    pub scale_drift: f64,
}

impl SynthSpec {
    pub fn static_scene(width: usize, height: usize, length: usize, start: BBox) -> Self {
        Self {
            width,
            height,
            length,
            start,
            velocity: (0.0, 0.0),
            bounce: false,
            distractors: 0,
            occluder_at: None,
            scale_drift: 0.0,
        }
    }

    pub fn attributes(&self) -> BTreeSet<String> {
        let mut tags = BTreeSet::new();
        if self.distractors > 0 {
            tags.insert(TAG_SIMILAR.to_owned());
        }
        if self.occluder_at.is_some() {
            tags.insert(TAG_OCCLUSION.to_owned());
        }
        if self.scale_drift != 0.0 {
            tags.insert(TAG_SCALE.to_owned());
        }
        tags
    }

    fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 || self.length == 0 {
            return Err(Error::Config(format!(
                "synthetic frames must be at least 8x8 with one frame (got {}x{}, {} frames)",
                self.width, self.height, self.length
            )));
        }
        self.start.validate()?;
        if self.scale_drift <= -1.0 {
            return Err(Error::Config(format!("scale drift {} collapses the target", self.scale_drift)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSequence {
    pub sequence: Sequence,
    /// The target left the frame and the sequence was cut there.
    pub truncated: bool,
}

/// Texture of a target-like object, sampled in box-normalized coordinates.
#[derive(Clone, Copy, Debug)]
struct Appearance {
    base: [f64; 3],
    accent: [f64; 3],
    cells: usize,
}

impl Appearance {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let color = |rng: &mut ChaCha8Rng| [0, 1, 2].map(|_| rng.random_range(20.0..235.0));
        Self {
            base: color(rng),
            accent: color(rng),
            cells: rng.random_range(2..=3),
        }
    }

    fn similar(&self, rng: &mut ChaCha8Rng) -> Self {
        let jitter = |c: [f64; 3], rng: &mut ChaCha8Rng| c.map(|v| (v + rng.random_range(-25.0..25.0)).clamp(0.0, 255.0));
        Self {
            base: jitter(self.base, rng),
            accent: jitter(self.accent, rng),
            cells: self.cells,
        }
    }

    fn sample(&self, u: f64, v: f64) -> [f64; 3] {
        let k = self.cells as f64;
        let (cu, cv) = ((u * k).floor() as i64, (v * k).floor() as i64);
        if (cu + cv) % 2 == 0 {
            self.base
        } else {
            self.accent
        }
    }
}

struct Background {
    waves: Vec<([f64; 3], f64, f64, f64)>,
    offset: [f64; 3],
}

impl Background {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..4)
            .map(|_| {
                let amp = [0, 1, 2].map(|_| rng.random_range(5.0..30.0));
                let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
                let freq = rng.random_range(0.03..0.25);
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amp, freq * angle.cos(), freq * angle.sin(), phase)
            })
            .collect();
        Self {
            waves,
            offset: [0, 1, 2].map(|_| rng.random_range(70.0..180.0)),
        }
    }

    fn render(&self, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
        let mut px = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let mut c = self.offset;
                for (amp, fx, fy, phase) in &self.waves {
                    let s = (fx * x as f64 + fy * y as f64 + phase).sin();
                    for k in 0..3 {
                        c[k] += amp[k] * s;
                    }
                }
                let noise = rng.random_range(-6.0..6.0);
                px.push(c.map(|v| v + noise));
            }
        }
        px
    }
}

/// Fraction of the pixel `[i - 0.5, i + 0.5]` covered by `[lo, hi]`.
fn coverage(i: usize, lo: f64, hi: f64) -> f64 {
    let i = i as f64;
    ((hi.min(i + 0.5) - lo.max(i - 0.5)).max(0.0)).min(1.0)
}

fn paint(canvas: &mut [[f64; 3]], width: usize, height: usize, b: &BBox, look: &dyn Fn(f64, f64) -> [f64; 3]) {
    let x0 = (b.left() - 0.5).floor().max(0.0) as usize;
    let y0 = (b.top() - 0.5).floor().max(0.0) as usize;
    let x1 = ((b.right() + 0.5).ceil().max(0.0) as usize).min(width);
    let y1 = ((b.bottom() + 0.5).ceil().max(0.0) as usize).min(height);
    for y in y0..y1 {
        let cy = coverage(y, b.top(), b.bottom());
        if cy == 0.0 {
            continue;
        }
        for x in x0..x1 {
            let a = cy * coverage(x, b.left(), b.right());
            if a == 0.0 {
                continue;
            }
            let u = ((x as f64 - b.left()) / b.w).clamp(0.0, 0.999_999);
            let v = ((y as f64 - b.top()) / b.h).clamp(0.0, 0.999_999);
            let c = look(u, v);
            let dst = &mut canvas[y * width + x];
            for k in 0..3 {
                dst[k] = dst[k] * (1.0 - a) + c[k] * a;
            }
        }
    }
}

fn to_image(canvas: &[[f64; 3]], width: usize, height: usize) -> RgbImage {
    let data = canvas
        .iter()
        .flat_map(|c| c.map(|v| v.round().clamp(0.0, 255.0) as u8))
        .collect();
    RgbImage::from_raw(width, height, data).expect("canvas matches frame size")
}

/// Advances a center along `velocity`, reflecting off the frame border when `bounce`.
fn trajectory(start: f64, velocity: f64, half: f64, limit: f64, length: usize, bounce: bool) -> Vec<f64> {
    let mut out = Vec::with_capacity(length);
    let (mut p, mut v) = (start, velocity);
    for t in 0..length {
        if !bounce {
            out.push(start + velocity * t as f64);
            continue;
        }
        out.push(p);
        p += v;
        if p - half < 0.0 || p + half > limit {
            v = -v;
            p += 2.0 * v;
        }
    }
    out
}

pub fn gen_sequence(name: &str, spec: &SynthSpec, seed: u64) -> Result<SyntheticSequence> {
    spec.validate()?;
    let mut rng = seeds::substream(seed, seeds::DATA, 0);
    let (fw, fh) = (spec.width as f64 - 1.0, spec.height as f64 - 1.0);
    let growth = 1.0 + spec.scale_drift;
    let sizes: Vec<(f64, f64)> = (0..spec.length)
        .map(|t| {
            let g = growth.powi(t as i32);
            (spec.start.w * g, spec.start.h * g)
        })
        .collect();
    let max_w = sizes.iter().map(|s| s.0).fold(0.0, f64::max);
    let max_h = sizes.iter().map(|s| s.1).fold(0.0, f64::max);
    let xs = trajectory(spec.start.cx, spec.velocity.0, max_w / 2.0, fw, spec.length, spec.bounce);
    let ys = trajectory(spec.start.cy, spec.velocity.1, max_h / 2.0, fh, spec.length, spec.bounce);
    let mut gt: Vec<BBox> = (0..spec.length)
        .map(|t| BBox::new(xs[t], ys[t], sizes[t].0, sizes[t].1))
        .collect();
    let visible = |b: &BBox| b.right() > -0.5 && b.left() < fw + 0.5 && b.bottom() > -0.5 && b.top() < fh + 0.5;
    let cut = gt.iter().position(|b| !visible(b));
    let truncated = cut.is_some();
    if let Some(t) = cut {
        gt.truncate(t);
    }
    if gt.is_empty() {
        return Err(Error::Config(format!("sequence {name}: the target starts outside the frame")));
    }

    let background = Background::random(&mut rng);
    let target = Appearance::random(&mut rng);
    let distractors: Vec<(Appearance, BBox, (f64, f64))> = (0..spec.distractors)
        .map(|_| {
            let look = target.similar(&mut rng);
            let s = rng.random_range(0.8..1.2);
            let (w, h) = (spec.start.w * s, spec.start.h * s);
            let b = BBox::new(
                rng.random_range(w / 2.0..(fw - w / 2.0).max(w / 2.0 + 1.0)),
                rng.random_range(h / 2.0..(fh - h / 2.0).max(h / 2.0 + 1.0)),
                w,
                h,
            );
            let v = (rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            (look, b, v)
        })
        .collect();
    let distractor_paths: Vec<(Vec<f64>, Vec<f64>)> = distractors
        .iter()
        .map(|(_, b, v)| {
            (
                trajectory(b.cx, v.0, b.w / 2.0, fw, gt.len(), true),
                trajectory(b.cy, v.1, b.h / 2.0, fh, gt.len(), true),
            )
        })
        .collect();
    let occluder = spec.occluder_at.map(|t| {
        let at = gt[t.min(gt.len() - 1)];
        let shade = rng.random_range(40.0..200.0);
        (BBox::new(at.cx, at.cy, at.w * 0.7, at.h * 1.6), [shade, shade * 0.9, shade * 0.8])
    });

    let mut images = Vec::with_capacity(gt.len());
    let mut out_of_view = Vec::with_capacity(gt.len());
    for (t, b) in gt.iter().enumerate() {
        let mut canvas = background.render(spec.width, spec.height, &mut rng);
        for ((look, d, _), (dx, dy)) in distractors.iter().zip(&distractor_paths) {
            let db = BBox::new(dx[t], dy[t], d.w, d.h);
            paint(&mut canvas, spec.width, spec.height, &db, &|u, v| look.sample(u, v));
        }
        paint(&mut canvas, spec.width, spec.height, b, &|u, v| target.sample(u, v));
        if let Some((ob, color)) = &occluder {
            paint(&mut canvas, spec.width, spec.height, ob, &|_, _| *color);
        }
        images.push(to_image(&canvas, spec.width, spec.height));
        out_of_view.push(b.left() < -0.5 || b.top() < -0.5 || b.right() > fw + 0.5 || b.bottom() > fh + 0.5);
    }
    let annotation = SequenceAnnotation {
        name: name.to_owned(),
        frames: Vec::new(),
        gt,
        attributes: spec.attributes(),
        out_of_view,
    };
    Ok(SyntheticSequence {
        sequence: Sequence::new(annotation, images)?,
        truncated,
    })
}

/// Parameters of a generated benchmark.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_sequences: usize,
    pub width: usize,
    pub height: usize,
    pub length: usize,
    pub target_min: f64,
    pub target_max: f64,
    /// Largest speed in pixels per frame.
    pub speed_max: f64,
    /// Largest per-frame scale drift for scale-variation sequences.
    pub drift_max: f64,
    pub distractors: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_sequences: 24,
            width: 128,
            height: 128,
            length: 40,
            target_min: 16.0,
            target_max: 28.0,
            speed_max: 2.5,
            drift_max: 0.01,
            distractors: 2,
        }
    }
}

/// Sequence specs cycling through the challenge mixes
/// `{similar}, {occlusion}, {scale}, {all three}` so every tag is represented.
pub fn benchmark_specs(cfg: &SynthConfig, seed: u64) -> Vec<(String, SynthSpec)> {
    (0..cfg.n_sequences)
        .map(|i| {
            let mut rng = seeds::substream(seed, "benchmark", i as u64);
            let mix = i % 4;
            let w = rng.random_range(cfg.target_min..=cfg.target_max);
            let h = (w * rng.random_range(0.7..1.4)).clamp(cfg.target_min * 0.7, cfg.target_max * 1.3);
            let margin = w.max(h);
            let cx = rng.random_range(margin..(cfg.width as f64 - margin).max(margin + 1.0));
            let cy = rng.random_range(margin..(cfg.height as f64 - margin).max(margin + 1.0));
            let speed = rng.random_range(0.3 * cfg.speed_max..=cfg.speed_max);
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let drift = if mix == 2 || mix == 3 {
                let d = rng.random_range(0.3 * cfg.drift_max..=cfg.drift_max);
                if rng.random_bool(0.5) {
                    d
                } else {
                    -d * 0.6
                }
            } else {
                0.0
            };
            let spec = SynthSpec {
                width: cfg.width,
                height: cfg.height,
                length: cfg.length,
                start: BBox::new(cx, cy, w, h),
                velocity: (speed * angle.cos(), speed * angle.sin()),
                bounce: true,
                distractors: if mix == 0 || mix == 3 { cfg.distractors } else { 0 },
                occluder_at: (mix == 1 || mix == 3).then(|| rng.random_range(cfg.length / 4..=cfg.length / 2)),
                scale_drift: drift,
            };
            (format!("synth-{i:03}"), spec)
        })
        .collect()
}

/// Generates a whole benchmark in memory; sequence `i` draws from its own sub-stream.
pub fn gen_benchmark(cfg: &SynthConfig, seed: u64) -> Result<Vec<Sequence>> {
    benchmark_specs(cfg, seed)
        .into_iter()
        .enumerate()
        .map(|(i, (name, spec))| Ok(gen_sequence(&name, &spec, seed.wrapping_add(i as u64 * 7919))?.sequence))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> SynthSpec {
        SynthSpec::static_scene(64, 48, 5, BBox::new(30.0, 20.0, 12.0, 10.0))
    }

    #[test]
    fn static_scene_keeps_gt() {
        let s = gen_sequence("s", &base(), 1).unwrap();
        assert!(!s.truncated);
        assert!(s.sequence.annotation.gt.iter().all(|b| *b == base().start));
        assert!(s.sequence.annotation.attributes.is_empty());
    }

    #[test]
    fn scale_drift_is_geometric() {
        let spec = SynthSpec {
            length: 51,
            scale_drift: 0.01,
            width: 200,
            height: 200,
            start: BBox::new(100.0, 100.0, 10.0, 8.0),
            ..base()
        };
        let s = gen_sequence("s", &spec, 1).unwrap();
        let gt = &s.sequence.annotation.gt;
        approx::assert_relative_eq!(gt[50].w, 10.0 * 1.01f64.powi(50), max_relative = 1e-12);
        assert!(s.sequence.annotation.attributes.contains(TAG_SCALE));
    }

    #[test]
    fn same_seed_same_frames() {
        let spec = SynthSpec {
            distractors: 2,
            occluder_at: Some(2),
            velocity: (1.0, 0.5),
            ..base()
        };
        let a = gen_sequence("s", &spec, 9).unwrap();
        let b = gen_sequence("s", &spec, 9).unwrap();
        assert_eq!(a.sequence.images, b.sequence.images);
        let c = gen_sequence("s", &spec, 10).unwrap();
        assert_ne!(a.sequence.images, c.sequence.images);
        let tags = &a.sequence.annotation.attributes;
        assert!(tags.contains(TAG_OCCLUSION) && tags.contains(TAG_SIMILAR));
    }

    #[test]
    fn leaving_target_truncates() {
        let spec = SynthSpec {
            length: 40,
            velocity: (6.0, 0.0),
            ..base()
        };
        let s = gen_sequence("s", &spec, 1).unwrap();
        assert!(s.truncated);
        let n = s.sequence.len();
        assert!(n < 40 && n > 1);
        assert!(s.sequence.annotation.out_of_view[n - 1]);
    }

    #[test]
    fn benchmark_covers_every_tag() {
        let cfg = SynthConfig {
            n_sequences: 4,
            length: 6,
            ..SynthConfig::default()
        };
        let seqs = gen_benchmark(&cfg, 3).unwrap();
        let tags: BTreeSet<String> = seqs.iter().flat_map(|s| s.annotation.attributes.clone()).collect();
        assert_eq!(tags.len(), 3);
        assert!(seqs.iter().all(|s| s.len() == 6));
    }
}
