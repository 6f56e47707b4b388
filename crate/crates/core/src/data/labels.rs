//! Per-point training targets on the response grid.

use crate::bbox::BBox;
use crate::error::Result;
use crate::head::ResponseGeometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Pos,
    Neg,
    Ignore,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelConfig {
    /// Positive ellipse semi-axes as a fraction of the box size.
    pub pos_radius: f64,
    /// Points outside the ellipse with these semi-axes are negative.
    pub neg_radius: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            pos_radius: 0.25,
            neg_radius: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelAssignment {
    pub height: usize,
    pub width: usize,
    pub cls: Vec<Label>,
    /// Distances `(l, t, r, b)` from the point to the gt edges; zero off positives.
    pub d_hat: Vec<[f64; 4]>,
}

impl LabelAssignment {
    pub fn all_negative(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            cls: vec![Label::Neg; height * width],
            d_hat: vec![[0.0; 4]; height * width],
        }
    }

    pub fn n_pos(&self) -> usize {
        self.cls.iter().filter(|&&l| l == Label::Pos).count()
    }

    pub fn n_neg(&self) -> usize {
        self.cls.iter().filter(|&&l| l == Label::Neg).count()
    }
}

fn ellipse(x: f64, y: f64, gt: &BBox, radius: f64) -> f64 {
    let dx = (x - gt.cx) / (gt.w * radius);
    let dy = (y - gt.cy) / (gt.h * radius);
    dx * dx + dy * dy
}

/// Labels every response point against `gt`, given in search-crop pixels.
pub fn assign_labels(gt: &BBox, geom: &ResponseGeometry, cfg: &LabelConfig) -> Result<LabelAssignment> {
    gt.validate()?;
    let mut out = LabelAssignment::all_negative(geom.height, geom.width);
    let mut nearest = (usize::MAX, f64::INFINITY, 0.0, 0.0);
    for iy in 0..geom.height {
        for ix in 0..geom.width {
            let i = iy * geom.width + ix;
            let (y, x) = geom.map_point(iy, ix)?;
            let label = if ellipse(x, y, gt, cfg.pos_radius) < 1.0 {
                Label::Pos
            } else if ellipse(x, y, gt, cfg.neg_radius) > 1.0 {
                Label::Neg
            } else {
                Label::Ignore
            };
            out.cls[i] = label;
            if label == Label::Pos {
                out.d_hat[i] = edge_distances(x, y, gt);
            }
            let dist = (x - gt.cx).hypot(y - gt.cy);
            if dist < nearest.1 {
                nearest = (i, dist, x, y);
            }
        }
    }
    let (i, _, x, y) = nearest;
    let inside = x > gt.left() && x < gt.right() && y > gt.top() && y < gt.bottom();
    if out.n_pos() == 0 && i != usize::MAX && inside {
        out.cls[i] = Label::Pos;
        out.d_hat[i] = edge_distances(x, y, gt);
    }
    Ok(out)
}

pub fn edge_distances(x: f64, y: f64, gt: &BBox) -> [f64; 4] {
    [x - gt.left(), y - gt.top(), gt.right() - x, gt.bottom() - y]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_point_is_positive_with_half_extents() {
        let geom = ResponseGeometry::new(9, 9, 8, 127);
        let (cy, cx) = geom.map_point(4, 4).unwrap();
        let gt = BBox::new(cx, cy, 40.0, 24.0);
        let lab = assign_labels(&gt, &geom, &LabelConfig::default()).unwrap();
        assert_eq!(lab.cls[4 * 9 + 4], Label::Pos);
        assert_eq!(lab.d_hat[4 * 9 + 4], [20.0, 12.0, 20.0, 12.0]);
        assert_eq!(lab.cls[0], Label::Neg);
    }

    #[test]
    fn tiny_target_promotes_nearest_point() {
        let geom = ResponseGeometry::new(9, 9, 8, 127);
        let (cy, cx) = geom.map_point(2, 6).unwrap();
        let gt = BBox::new(cx + 1.0, cy - 1.0, 4.0, 4.0);
        let lab = assign_labels(&gt, &geom, &LabelConfig::default()).unwrap();
        assert_eq!(lab.n_pos(), 1);
        assert_eq!(lab.cls[2 * 9 + 6], Label::Pos);
        assert!(lab.d_hat[2 * 9 + 6].iter().all(|&d| d > 0.0));
    }
}
