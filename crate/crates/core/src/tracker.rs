//! Frame-by-frame tracking and per-sequence result files.
//!
//! Result CSV: header `frame,x,y,w,h,confidence`, one row per frame with a
//! 1-based frame index and the box as top-left corner plus size. Row 1 is the
//! initialization box.

use std::borrow::Borrow;
use std::fs;
use std::path::Path;

use crate::bbox::BBox;
use crate::data::crop::{crop_region, search_geometry, template_geometry, CropSizes};
use crate::data::image::RgbImage;
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::head::{decode, PenaltyConfig, ResponseGeometry};
use crate::model::{Network, TemplateState};

pub trait Tracker {
    fn init(&mut self, frame: &RgbImage, target: &BBox) -> Result<()>;
    /// Next box and its confidence.
    fn update(&mut self, frame: &RgbImage) -> Result<(BBox, f64)>;
    /// Announces the 0-based index of the frame passed to the next `init` or `update`.
    fn set_frame_index(&mut self, _index: usize) {}
}

/// Tracker over a network it owns (`Network`) or borrows (`&Network`).
pub struct SiameseTracker<N: Borrow<Network>> {
    net: N,
    sizes: CropSizes,
    penalties: PenaltyConfig,
    response: ResponseGeometry,
    template: Option<TemplateState>,
    state: BBox,
}

impl<N: Borrow<Network>> SiameseTracker<N> {
    pub fn new(net: N, sizes: CropSizes) -> Result<Self> {
        let cfg = &net.borrow().cfg;
        let side = cfg.response_size(sizes.template, sizes.search_inference)?;
        let response = ResponseGeometry::new(side, side, cfg.backbone.total_stride, sizes.search_inference);
        Ok(Self {
            penalties: cfg.head.penalties,
            net,
            sizes,
            response,
            template: None,
            state: BBox::new(0.0, 0.0, 1.0, 1.0),
        })
    }

    pub fn state(&self) -> BBox {
        self.state
    }
}

impl<N: Borrow<Network>> Tracker for SiameseTracker<N> {
    fn init(&mut self, frame: &RgbImage, target: &BBox) -> Result<()> {
        let geom = template_geometry(target, self.sizes.template)?;
        self.template = Some(self.net.borrow().prepare_template(&crop_region(frame, &geom))?);
        self.state = *target;
        Ok(())
    }

    fn update(&mut self, frame: &RgbImage) -> Result<(BBox, f64)> {
        let template = self
            .template
            .as_ref()
            .ok_or_else(|| Error::Usage("tracker updated before init".into()))?;
        let geom = search_geometry(&self.state, self.sizes.template, self.sizes.search_inference)?;
        let out = self.net.borrow().infer(template, &crop_region(frame, &geom))?;
        let d = decode(&out.scores, &out.regs, &self.response, &geom, &self.state, &self.penalties)?;
        let (fw, fh) = (frame.width() as f64, frame.height() as f64);
        let b = d.bbox;
        let cx = b.cx.clamp(0.0, fw - 1.0);
        let cy = b.cy.clamp(0.0, fh - 1.0);
        let w = b.w.clamp(4.0, fw);
        let h = b.h.clamp(4.0, fh);
        self.state = BBox::new(cx, cy, w, h);
        Ok((self.state, d.confidence))
    }
}

/// Plays back precomputed per-frame boxes, ignoring the images.
pub struct ReplayTracker {
    boxes: Vec<BBox>,
    cursor: usize,
}

impl ReplayTracker {
    pub fn new(boxes: Vec<BBox>) -> Self {
        Self { boxes, cursor: 0 }
    }
}

impl Tracker for ReplayTracker {
    fn init(&mut self, _frame: &RgbImage, _target: &BBox) -> Result<()> {
        Ok(())
    }

    fn update(&mut self, _frame: &RgbImage) -> Result<(BBox, f64)> {
        let b = self
            .boxes
            .get(self.cursor)
            .copied()
            .ok_or_else(|| Error::Eval(format!("replay exhausted after {} boxes", self.boxes.len())))?;
        Ok((b, 1.0))
    }

    fn set_frame_index(&mut self, index: usize) {
        self.cursor = index;
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackRow {
    /// 1-based.
    pub frame: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

/// One-pass tracking from the first-frame ground truth.
pub fn track_sequence(tracker: &mut dyn Tracker, seq: &Sequence) -> Result<Vec<TrackRow>> {
    let Some(first) = seq.annotation.gt.first() else {
        return Err(Error::Usage(format!("sequence {} has no frames", seq.name())));
    };
    tracker.set_frame_index(0);
    tracker.init(&seq.images[0], first)?;
    let mut rows = vec![TrackRow {
        frame: 1,
        bbox: *first,
        confidence: 1.0,
    }];
    for (i, img) in seq.images.iter().enumerate().skip(1) {
        tracker.set_frame_index(i);
        let (bbox, confidence) = tracker.update(img)?;
        rows.push(TrackRow {
            frame: i + 1,
            bbox,
            confidence,
        });
    }
    Ok(rows)
}

pub const RESULT_HEADER: &str = "frame,x,y,w,h,confidence";

pub fn format_results(rows: &[TrackRow]) -> String {
    let mut out = String::from(RESULT_HEADER);
    out.push('\n');
    for r in rows {
        let [x, y, w, h] = r.bbox.corner();
        out.push_str(&format!("{},{x},{y},{w},{h},{}\n", r.frame, r.confidence));
    }
    out
}

pub fn parse_results(text: &str) -> Result<Vec<TrackRow>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Eval(format!("malformed result row {line:?}"));
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            Ok(TrackRow {
                frame: f[0].parse().map_err(|_| bad())?,
                bbox: BBox::from_corner(num(1)?, num(2)?, num(3)?, num(4)?),
                confidence: num(5)?,
            })
        })
        .collect()
}

pub fn write_results(path: &Path, rows: &[TrackRow]) -> Result<()> {
    fs::write(path, format_results(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<TrackRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text)
}
