//! Anchor-free head: a classification branch producing two-class logits and
//! a regression branch producing `(left, top, right, bottom)` edge distances
//! at every response point, plus inference-time decoding of the best box.

use std::f64::consts::PI;

use rand::Rng;

use crate::bbox::BBox;
use crate::binder::Binder;
use crate::data::crop::CropGeometry;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{ops, ConvGeom, Graph, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadConfig {
    /// Channels of the fused response map fed to both branches.
    pub c_in: usize,
    pub hidden: usize,
    /// Regression outputs are `stride_scale * exp(raw)`.
    pub stride_scale: f64,
    pub penalties: PenaltyConfig,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            c_in: 64,
            hidden: 64,
            stride_scale: 8.0,
            penalties: PenaltyConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PenaltyConfig {
    /// Cosine-window blend factor.
    pub window_influence: f64,
    /// Scale/aspect change penalty strength.
    pub penalty_k: f64,
    /// Size smoothing factor toward the new prediction.
    pub size_lr: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            window_influence: 0.40,
            penalty_k: 0.05,
            size_lr: 0.30,
        }
    }
}

impl HeadConfig {
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        store.init_conv("head.cls.conv1", self.hidden, self.c_in, 3, rng);
        store.init_conv("head.cls.conv2", 2, self.hidden, 1, rng);
        store.init_conv("head.reg.conv1", self.hidden, self.c_in, 3, rng);
        store.init_conv("head.reg.conv2", 4, self.hidden, 1, rng);
        // Small output layers: near-uniform scores and offsets near `stride_scale` at the start.
        for name in ["head.cls.conv2.weight", "head.reg.conv2.weight"] {
            if let Ok(w) = store.get_mut(name) {
                w.data_mut().iter_mut().for_each(|v| *v *= 0.1);
            }
        }
    }
}

fn branch_on(g: &mut Graph, binder: &mut Binder, cfg: &HeadConfig, name: &str, fused: Var) -> Result<Var> {
    let c = g.value(fused).c();
    if c != cfg.c_in {
        return Err(Error::dim(
            "head",
            format!("fused map has {c} channels, head expects {}", cfg.c_in),
        ));
    }
    let (w1, b1) = binder.conv(g, &format!("head.{name}.conv1"))?;
    let h = g.conv2d(fused, w1, Some(b1), ConvGeom::new(1, 1))?;
    let h = g.relu(h);
    let (w2, b2) = binder.conv(g, &format!("head.{name}.conv2"))?;
    g.conv2d(h, w2, Some(b2), ConvGeom::UNIT)
}

/// Two-channel logits `(n, 2, h, w)`; channel 1 is the target class.
pub fn classify_on(g: &mut Graph, binder: &mut Binder, cfg: &HeadConfig, fused: Var) -> Result<Var> {
    branch_on(g, binder, cfg, "cls", fused)
}

/// Positive edge distances `(n, 4, h, w)` in search-crop pixels.
pub fn regress_on(g: &mut Graph, binder: &mut Binder, cfg: &HeadConfig, fused: Var) -> Result<Var> {
    let raw = branch_on(g, binder, cfg, "reg", fused)?;
    let e = g.exp(raw);
    Ok(g.scale(e, cfg.stride_scale))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub logits: Tensor,
    pub probs: Tensor,
}

impl ScoreMap {
    pub fn from_logits(logits: Tensor) -> Result<Self> {
        let probs = ops::softmax_channelwise(&logits)?;
        Ok(Self { logits, probs })
    }

    /// Target-class probability at sample 0, row-major over the map.
    pub fn foreground(&self) -> &[f64] {
        self.probs.plane(0, 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionMap {
    pub offsets: Tensor,
}

impl RegressionMap {
    /// `(l, t, r, b)` at flat index `i` of sample 0.
    pub fn ltrb(&self, i: usize) -> [f64; 4] {
        [0, 1, 2, 3].map(|c| self.offsets.plane(0, c)[i])
    }
}

pub fn classify(params: &ParamStore, cfg: &HeadConfig, fused: &Tensor) -> Result<ScoreMap> {
    let mut g = Graph::new();
    let mut binder = Binder::frozen(params);
    let x = g.constant(fused.clone());
    let logits = classify_on(&mut g, &mut binder, cfg, x)?;
    ScoreMap::from_logits(g.value(logits).clone())
}

pub fn regress(params: &ParamStore, cfg: &HeadConfig, fused: &Tensor) -> Result<RegressionMap> {
    let mut g = Graph::new();
    let mut binder = Binder::frozen(params);
    let x = g.constant(fused.clone());
    let offsets = regress_on(&mut g, &mut binder, cfg, x)?;
    Ok(RegressionMap {
        offsets: g.value(offsets).clone(),
    })
}

/// Placement of response-map points in search-crop pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseGeometry {
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub search_size: usize,
}

impl ResponseGeometry {
    pub fn new(height: usize, width: usize, stride: usize, search_size: usize) -> Self {
        Self {
            height,
            width,
            stride,
            search_size,
        }
    }

    fn origin(&self, len: usize) -> f64 {
        (self.search_size as f64 - 1.0 - ((len as f64 - 1.0) * self.stride as f64)) / 2.0
    }

    /// Pixel `(y, x)` of response cell `(iy, ix)`; the map is centered on the crop.
    pub fn map_point(&self, iy: usize, ix: usize) -> Result<(f64, f64)> {
        if iy >= self.height || ix >= self.width {
            return Err(Error::Usage(format!(
                "response index ({iy}, {ix}) outside {}x{}",
                self.height, self.width
            )));
        }
        Ok((
            self.origin(self.height) + (iy * self.stride) as f64,
            self.origin(self.width) + (ix * self.stride) as f64,
        ))
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outer product of two Hann windows, peaking at 1 in the center.
pub fn cosine_window(height: usize, width: usize) -> Vec<f64> {
    let hann = |n: usize| -> Vec<f64> {
        if n == 1 {
            return vec![1.0];
        }
        (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n as f64 - 1.0)).cos())
            .collect()
    };
    let (wy, wx) = (hann(height), hann(width));
    wy.iter().flat_map(|a| wx.iter().map(move |b| a * b)).collect()
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

fn padded_size(w: f64, h: f64) -> f64 {
    let pad = (w + h) * 0.5;
    ((w + pad) * (h + pad)).sqrt()
}

/// Multiplicative penalty for a candidate of size `(w, h)` against the previous
/// target size `(pw, ph)`, all in crop pixels.
pub fn size_penalty(w: f64, h: f64, pw: f64, ph: f64, k: f64) -> f64 {
    let s_c = change(padded_size(w, h) / padded_size(pw, ph));
    let r_c = change((pw / ph) / (w / h));
    (-(r_c * s_c - 1.0) * k).exp()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Decoded {
    /// New target box in frame coordinates.
    pub bbox: BBox,
    /// Target-class probability at the selected point.
    pub confidence: f64,
    /// Selected response cell `(iy, ix)`.
    pub cell: (usize, usize),
    /// Size fell to zero or below and was clamped to 2 px.
    pub clamped: bool,
}

/// Picks the best response point and turns its edge distances into the next box.
pub fn decode(
    scores: &ScoreMap,
    regs: &RegressionMap,
    geom: &ResponseGeometry,
    crop: &CropGeometry,
    prev: &BBox,
    penalties: &PenaltyConfig,
) -> Result<Decoded> {
    let [n, c, h, w] = scores.probs.shape();
    if n != 1 || c != 2 || (h, w) != (geom.height, geom.width) || regs.offsets.shape() != [1, 4, h, w] {
        return Err(Error::dim(
            "decode",
            format!(
                "scores {:?} / offsets {:?} do not match a single {}x{} response",
                scores.probs.shape(),
                regs.offsets.shape(),
                geom.height,
                geom.width
            ),
        ));
    }
    let window = cosine_window(h, w);
    let (pw, ph) = (prev.w * crop.scale, prev.h * crop.scale);
    let fg = scores.foreground();
    let lambda = penalties.window_influence;
    let mut best = (0usize, f64::NEG_INFINITY);
    let mut best_candidate = (0.0, 0.0, 0.0, 0.0, 0.0);
    for iy in 0..h {
        for ix in 0..w {
            let i = iy * w + ix;
            let (y, x) = geom.map_point(iy, ix)?;
            let [l, t, r, b] = regs.ltrb(i);
            let (cw, ch) = (l + r, t + b);
            let penalty = size_penalty(cw, ch, pw, ph, penalties.penalty_k);
            let score = fg[i] * penalty;
            let blended = (1.0 - lambda) * score + lambda * window[i];
            if blended > best.1 {
                best = (i, blended);
                best_candidate = (x + (r - l) / 2.0, y + (b - t) / 2.0, cw, ch, penalty);
            }
        }
    }
    let (i, _) = best;
    let (cx, cy, cw, ch, _) = best_candidate;
    let limit = geom.search_size as f64 - 1.0;
    let (cx, cy) = (cx.clamp(0.0, limit), cy.clamp(0.0, limit));
    let (fx, fy) = crop.to_frame_point(cx, cy);
    let gamma = penalties.size_lr;
    let mut new_w = (1.0 - gamma) * prev.w + gamma * cw / crop.scale;
    let mut new_h = (1.0 - gamma) * prev.h + gamma * ch / crop.scale;
    let mut clamped = false;
    if !(new_w > 0.0) {
        new_w = 2.0;
        clamped = true;
    }
    if !(new_h > 0.0) {
        new_h = 2.0;
        clamped = true;
    }
    Ok(Decoded {
        bbox: BBox::new(fx, fy, new_w, new_h),
        confidence: fg[i],
        cell: (i / w, i % w),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> HeadConfig {
        HeadConfig {
            c_in: 4,
            hidden: 5,
            stride_scale: 8.0,
            penalties: PenaltyConfig::default(),
        }
    }

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn zeroed(cfg: &HeadConfig) -> ParamStore {
        let mut store = ParamStore::new();
        cfg.init(&mut store, &mut ChaCha8Rng::seed_from_u64(0));
        for (_, t) in store.iter_mut() {
            t.data_mut().fill(0.0);
        }
        store
    }

    #[test]
    fn zero_head_is_uniform_and_unit_offsets() {
        let cfg = cfg();
        let store = zeroed(&cfg);
        let fused = random([1, 4, 5, 5], &mut ChaCha8Rng::seed_from_u64(1));
        let s = classify(&store, &cfg, &fused).unwrap();
        assert!(s.probs.data().iter().all(|&p| p == 0.5));
        let r = regress(&store, &cfg, &fused).unwrap();
        assert!(r.offsets.data().iter().all(|&d| d == 8.0));
    }

    #[test]
    fn raw_ln2_doubles_offsets() {
        let cfg = cfg();
        let mut store = zeroed(&cfg);
        store.get_mut("head.reg.conv2.bias").unwrap().data_mut().fill(2f64.ln());
        let fused = random([1, 4, 3, 3], &mut ChaCha8Rng::seed_from_u64(2));
        let r = regress(&store, &cfg, &fused).unwrap();
        assert!(r.offsets.data().iter().all(|&d| (d - 16.0).abs() < 1e-12));
    }

    #[test]
    fn probs_match_manual_softmax() {
        let cfg = cfg();
        let mut store = ParamStore::new();
        cfg.init(&mut store, &mut ChaCha8Rng::seed_from_u64(3));
        let fused = random([2, 4, 4, 4], &mut ChaCha8Rng::seed_from_u64(4));
        let s = classify(&store, &cfg, &fused).unwrap();
        for n in 0..2 {
            for i in 0..16 {
                let (z0, z1) = (s.logits.plane(n, 0)[i], s.logits.plane(n, 1)[i]);
                let p1 = z1.exp() / (z0.exp() + z1.exp());
                assert!((s.probs.plane(n, 1)[i] - p1).abs() < 1e-12);
                assert!((s.probs.plane(n, 0)[i] + s.probs.plane(n, 1)[i] - 1.0).abs() < 1e-9);
            }
        }
        let shifted = ScoreMap::from_logits(s.logits.map(|v| v + 3.0)).unwrap();
        assert!(shifted.probs.max_abs_diff(&s.probs) < 1e-12);
        assert!(classify(&store, &cfg, &Tensor::zeros([1, 3, 4, 4])).is_err());
    }

    #[test]
    fn map_point_geometry() {
        let g = ResponseGeometry::new(31, 31, 8, 255);
        assert_eq!(g.map_point(15, 15).unwrap(), (127.0, 127.0));
        assert_eq!(g.map_point(0, 1).unwrap().1, 15.0);
        let (_, x0) = g.map_point(0, 0).unwrap();
        let (_, x1) = g.map_point(0, 30).unwrap();
        assert_eq!(x0 + x1, 254.0);
        assert!(g.map_point(31, 0).is_err());
        let g = ResponseGeometry::new(9, 9, 8, 127);
        assert_eq!(g.map_point(4, 4).unwrap(), (63.0, 63.0));
    }

    #[test]
    fn cosine_window_peaks_at_center() {
        let w = cosine_window(5, 5);
        assert_eq!(w[12], 1.0);
        assert_eq!(w[0], 0.0);
        assert!(w.iter().all(|&v| v <= 1.0));
    }
}
