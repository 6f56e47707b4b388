//! Context-padded square crops around a target and the mapping between crop
//! and frame coordinates.

use super::image::{normalize, RgbImage};
use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A square window of side `side` frame pixels centered on `(cx, cy)`,
/// resampled to `out_size` pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropGeometry {
    pub cx: f64,
    pub cy: f64,
    pub side: f64,
    pub out_size: usize,
    /// Crop pixels per frame pixel.
    pub scale: f64,
}

impl CropGeometry {
    pub fn new(cx: f64, cy: f64, side: f64, out_size: usize) -> Result<Self> {
        if !(side > 0.0) || !side.is_finite() || out_size == 0 {
            return Err(Error::Domain(format!("degenerate crop side {side} -> {out_size}")));
        }
        Ok(Self {
            cx,
            cy,
            side,
            out_size,
            scale: out_size as f64 / side,
        })
    }

    fn half(&self) -> f64 {
        (self.out_size as f64 - 1.0) / 2.0
    }

    pub fn to_frame_point(&self, u: f64, v: f64) -> (f64, f64) {
        (
            self.cx + (u - self.half()) / self.scale,
            self.cy + (v - self.half()) / self.scale,
        )
    }

    pub fn to_crop_point(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.cx) * self.scale + self.half(),
            (y - self.cy) * self.scale + self.half(),
        )
    }

    pub fn to_crop_box(&self, b: &BBox) -> BBox {
        let (u, v) = self.to_crop_point(b.cx, b.cy);
        BBox::new(u, v, b.w * self.scale, b.h * self.scale)
    }

    pub fn to_frame_box(&self, b: &BBox) -> BBox {
        let (x, y) = self.to_frame_point(b.cx, b.cy);
        BBox::new(x, y, b.w / self.scale, b.h / self.scale)
    }
}

/// Side of the context-padded template window: `sqrt((w + p)(h + p))`, `p = (w + h) / 2`.
pub fn context_side(w: f64, h: f64) -> f64 {
    let p = (w + h) / 2.0;
    ((w + p) * (h + p)).sqrt()
}

/// Template window for a target box.
pub fn template_geometry(target: &BBox, template_size: usize) -> Result<CropGeometry> {
    target.validate()?;
    CropGeometry::new(target.cx, target.cy, context_side(target.w, target.h), template_size)
}

/// Search window around `target`, scaled so objects keep their template scale.
pub fn search_geometry(target: &BBox, template_size: usize, search_size: usize) -> Result<CropGeometry> {
    target.validate()?;
    let side = context_side(target.w, target.h) * search_size as f64 / template_size as f64;
    CropGeometry::new(target.cx, target.cy, side, search_size)
}

/// Bilinear resampling of the crop window into a `(1, 3, out, out)` tensor of
/// normalized values. Samples outside the frame take the frame's mean color.
pub fn crop_region(frame: &RgbImage, geom: &CropGeometry) -> Tensor {
    let n = geom.out_size;
    let mean = frame.mean_color();
    let (fw, fh) = (frame.width(), frame.height());
    let mut out = vec![0.0; 3 * n * n];
    for v in 0..n {
        for u in 0..n {
            let (x, y) = geom.to_frame_point(u as f64, v as f64);
            let rgb = if x >= 0.0 && y >= 0.0 && x <= (fw - 1) as f64 && y <= (fh - 1) as f64 {
                let (x0, y0) = (x.floor() as usize, y.floor() as usize);
                let (x1, y1) = ((x0 + 1).min(fw - 1), (y0 + 1).min(fh - 1));
                let (ax, ay) = (x - x0 as f64, y - y0 as f64);
                let (p00, p10, p01, p11) = (frame.get(x0, y0), frame.get(x1, y0), frame.get(x0, y1), frame.get(x1, y1));
                [0, 1, 2].map(|c| {
                    let top = f64::from(p00[c]) * (1.0 - ax) + f64::from(p10[c]) * ax;
                    let bottom = f64::from(p01[c]) * (1.0 - ax) + f64::from(p11[c]) * ax;
                    top * (1.0 - ay) + bottom * ay
                })
            } else {
                mean
            };
            for c in 0..3 {
                out[(c * n + v) * n + u] = normalize(rgb[c]);
            }
        }
    }
    Tensor::new([1, 3, n, n], out).expect("crop buffer matches its shape")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CropMode {
    Train,
    Inference,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CropSizes {
    pub template: usize,
    pub search_train: usize,
    pub search_inference: usize,
}

impl CropSizes {
    pub fn search(&self, mode: CropMode) -> usize {
        match mode {
            CropMode::Train => self.search_train,
            CropMode::Inference => self.search_inference,
        }
    }
}

impl Default for CropSizes {
    fn default() -> Self {
        Self {
            template: 127,
            search_train: 511,
            search_inference: 255,
        }
    }
}

/// Random perturbation of the search window, in units of the window side.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jitter {
    pub dx: f64,
    pub dy: f64,
    /// Multiplicative change of the window side.
    pub scale: f64,
}

#[derive(Clone, Debug)]
pub struct CropPair {
    pub template: Tensor,
    pub search: Tensor,
    pub template_geom: CropGeometry,
    pub search_geom: CropGeometry,
    /// Search-frame target in search-crop pixels.
    pub gt_in_search: BBox,
}

pub fn crop_pair(
    frame_t: &RgbImage,
    gt_t: &BBox,
    frame_s: &RgbImage,
    gt_s: &BBox,
    sizes: &CropSizes,
    mode: CropMode,
    jitter: Option<Jitter>,
) -> Result<CropPair> {
    let template_geom = template_geometry(gt_t, sizes.template)?;
    let mut search_geom = search_geometry(gt_s, sizes.template, sizes.search(mode))?;
    if let Some(j) = jitter {
        let scale = if j.scale > 0.0 { j.scale } else { 1.0 };
        let side = search_geom.side;
        search_geom = CropGeometry::new(
            search_geom.cx + j.dx * side,
            search_geom.cy + j.dy * side,
            side * scale,
            search_geom.out_size,
        )?;
    }
    Ok(CropPair {
        template: crop_region(frame_t, &template_geom),
        search: crop_region(frame_s, &search_geom),
        template_geom,
        search_geom,
        gt_in_search: search_geom.to_crop_box(gt_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_target_scale() {
        assert_eq!(context_side(64.0, 64.0), 128.0);
        let g = template_geometry(&BBox::new(100.0, 100.0, 64.0, 64.0), 127).unwrap();
        assert_eq!(g.scale, 127.0 / 128.0);
    }

    #[test]
    fn geometry_round_trip() {
        let g = CropGeometry::new(40.3, 71.9, 93.0, 127).unwrap();
        let b = BBox::new(35.0, 80.0, 20.0, 11.0);
        let back = g.to_frame_box(&g.to_crop_box(&b));
        for (a, b) in back.corner().iter().zip(b.corner()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn interior_crop_is_centered_without_padding() {
        let mut frame = RgbImage::new(300, 300, [10, 10, 10]);
        for y in 140..160 {
            for x in 140..160 {
                frame.set(x, y, [250, 250, 250]);
            }
        }
        // A 20x20 target at pixel centers 140..=159 has center 149.5.
        let gt = BBox::new(149.5, 149.5, 20.0, 20.0);
        let g = template_geometry(&gt, 41).unwrap();
        let t = crop_region(&frame, &g);
        assert!((t.at(0, 0, 20, 20) - normalize(250.0)).abs() < 1e-9);
        assert!((t.at(0, 0, 0, 0) - normalize(10.0)).abs() < 1e-9);
    }

    #[test]
    fn corner_target_pads_with_mean() {
        let mut frame = RgbImage::new(50, 40, [0, 0, 0]);
        for y in 0..40 {
            for x in 0..50 {
                frame.set(x, y, [(x * 5) as u8, (y * 3) as u8, 77]);
            }
        }
        let mean = frame.mean_color();
        let g = template_geometry(&BBox::new(0.0, 0.0, 10.0, 10.0), 31).unwrap();
        let t = crop_region(&frame, &g);
        for c in 0..3 {
            assert_eq!(t.at(0, c, 0, 0), normalize(mean[c]));
        }
    }
}
