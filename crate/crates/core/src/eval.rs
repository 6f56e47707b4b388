//! Benchmark metrics: precision and success curves with AUC, VOT-style
//! accuracy/robustness under a reset protocol, a simplified expected average
//! overlap, and per-attribute breakdowns.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::bbox::BBox;
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::losses::iou;
use crate::tracker::Tracker;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Frames between a failure and re-initialization.
    pub reinit_gap: usize,
    /// Frames after each re-initialization left out of accuracy.
    pub burn_in: usize,
    /// Frames per sequence considered by the simplified EAO.
    pub eao_horizon: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            reinit_gap: 5,
            burn_in: 10,
            eao_horizon: 100,
        }
    }
}

pub const PRECISION_MAX: usize = 50;
pub const SUCCESS_STEPS: usize = 20;

pub fn center_error(pred: &BBox, gt: &BBox) -> f64 {
    (pred.cx - gt.cx).hypot(pred.cy - gt.cy)
}

/// IoU, with degenerate predictions scoring zero.
pub fn overlap(pred: &BBox, gt: &BBox) -> Result<f64> {
    if !pred.is_valid() {
        return Ok(0.0);
    }
    iou(pred, gt)
}

pub fn success_thresholds() -> Vec<f64> {
    (0..=SUCCESS_STEPS).map(|i| i as f64 / SUCCESS_STEPS as f64).collect()
}

pub fn precision_thresholds() -> Vec<f64> {
    (0..=PRECISION_MAX).map(|t| t as f64).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
}

/// Fraction of frames whose overlap exceeds each threshold, and the AUC (mean of the curve).
pub fn success_curve(overlaps: &[f64]) -> Result<(Curve, f64)> {
    if overlaps.is_empty() {
        return Err(Error::Eval("success curve of zero frames".into()));
    }
    if let Some(o) = overlaps.iter().find(|o| !(0.0..=1.0).contains(*o)) {
        return Err(Error::Eval(format!("overlap {o} outside [0, 1]")));
    }
    let thresholds = success_thresholds();
    let n = overlaps.len() as f64;
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| overlaps.iter().filter(|&&o| o > t).count() as f64 / n)
        .collect();
    let auc = values.iter().sum::<f64>() / values.len() as f64;
    Ok((Curve { thresholds, values }, auc))
}

/// Fraction of frames whose center error is within each pixel threshold, and the value at 20 px.
pub fn precision_curve(errors: &[f64]) -> Result<(Curve, f64)> {
    if errors.is_empty() {
        return Err(Error::Eval("precision curve of zero frames".into()));
    }
    if let Some(e) = errors.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::Eval(format!("center error {e} is not a non-negative number")));
    }
    let thresholds = precision_thresholds();
    let n = errors.len() as f64;
    let values: Vec<f64> = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    let at20 = values[20];
    Ok((Curve { thresholds, values }, at20))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCurves {
    pub precision_thresholds: Vec<f64>,
    pub precision_values: Vec<f64>,
    pub success_thresholds: Vec<f64>,
    pub success_values: Vec<f64>,
    pub auc: f64,
    pub precision_at_20: f64,
    pub frames: usize,
}

/// Curves over all frames of all `(prediction, ground truth)` sequences.
pub fn evaluate<'a>(pairs: impl IntoIterator<Item = (&'a [BBox], &'a [BBox])>) -> Result<EvalCurves> {
    let mut overlaps = Vec::new();
    let mut errors = Vec::new();
    for (pred, gt) in pairs {
        if pred.len() != gt.len() {
            return Err(Error::Eval(format!("{} predictions for {} frames", pred.len(), gt.len())));
        }
        for (p, g) in pred.iter().zip(gt) {
            overlaps.push(overlap(p, g)?);
            errors.push(center_error(p, g));
        }
    }
    let (s, auc) = success_curve(&overlaps)?;
    let (p, at20) = precision_curve(&errors)?;
    Ok(EvalCurves {
        precision_thresholds: p.thresholds,
        precision_values: p.values,
        success_thresholds: s.thresholds,
        success_values: s.values,
        auc,
        precision_at_20: at20,
        frames: overlaps.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VotEvent {
    Init,
    Track,
    Fail,
    Skip,
}

impl VotEvent {
    pub fn as_str(&self) -> &'static str {
        match self {
            VotEvent::Init => "init",
            VotEvent::Track => "track",
            VotEvent::Fail => "fail",
            VotEvent::Skip => "skip",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "init" => Some(VotEvent::Init),
            "track" => Some(VotEvent::Track),
            "fail" => Some(VotEvent::Fail),
            "skip" => Some(VotEvent::Skip),
            _ => None,
        }
    }
}

/// What happened at one frame of a reset-protocol run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VotFrame {
    pub event: VotEvent,
    /// Box reported (or used for initialization); none on skipped frames.
    pub bbox: Option<BBox>,
    pub overlap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VotReport {
    /// Mean overlap over tracked frames outside burn-in windows.
    pub accuracy: f64,
    pub accuracy_frames: usize,
    /// Number of failures.
    pub robustness: usize,
    pub eao_simple: f64,
    pub eao_frames: usize,
    /// 0-based frame indices of failures.
    pub resets: Vec<usize>,
}

/// Runs `tracker` on `seq` under the reset protocol: a frame with zero
/// overlap is a failure, and the tracker is re-initialized from ground truth
/// `reinit_gap` frames later. Sequences no longer than the gap run without resets.
pub fn vot_run(tracker: &mut dyn Tracker, seq: &Sequence, cfg: &EvalConfig) -> Result<(Vec<VotFrame>, VotReport)> {
    let gt = &seq.annotation.gt;
    if gt.is_empty() {
        return Err(Error::Eval(format!("sequence {} has no frames", seq.name())));
    }
    let resets_allowed = seq.len() > cfg.reinit_gap && cfg.reinit_gap > 0;
    let mut trace = Vec::with_capacity(seq.len());
    let mut next_init = Some(0);
    let mut i = 0;
    while i < seq.len() {
        if next_init == Some(i) {
            tracker.set_frame_index(i);
            tracker.init(&seq.images[i], &gt[i])?;
            trace.push(VotFrame {
                event: VotEvent::Init,
                bbox: Some(gt[i]),
                overlap: 1.0,
            });
            next_init = None;
        } else if next_init.is_some() {
            trace.push(VotFrame {
                event: VotEvent::Skip,
                bbox: None,
                overlap: 0.0,
            });
        } else {
            tracker.set_frame_index(i);
            let (b, _) = tracker.update(&seq.images[i])?;
            let o = overlap(&b, &gt[i])?;
            let failed = o == 0.0 && resets_allowed;
            trace.push(VotFrame {
                event: if failed { VotEvent::Fail } else { VotEvent::Track },
                bbox: Some(b),
                overlap: o,
            });
            if failed {
                next_init = Some(i + cfg.reinit_gap);
            }
        }
        i += 1;
    }
    let report = vot_report(&trace, cfg);
    Ok((trace, report))
}

/// Summarizes a reset-protocol trace.
pub fn vot_report(trace: &[VotFrame], cfg: &EvalConfig) -> VotReport {
    let mut resets = Vec::new();
    let mut sum = 0.0;
    let mut count = 0;
    let mut since_reinit = usize::MAX;
    let mut seen_init = false;
    for (i, f) in trace.iter().enumerate() {
        match f.event {
            VotEvent::Init => {
                since_reinit = if seen_init { 0 } else { usize::MAX };
                seen_init = true;
            }
            VotEvent::Fail => resets.push(i),
            VotEvent::Track => {
                if since_reinit == usize::MAX || since_reinit >= cfg.burn_in {
                    sum += f.overlap;
                    count += 1;
                }
            }
            VotEvent::Skip => {}
        }
        if f.event != VotEvent::Init && since_reinit != usize::MAX {
            since_reinit += 1;
        }
    }
    // First run: frames after the initial init up to the horizon, zero from the first failure on.
    let horizon = trace.len().saturating_sub(1).min(cfg.eao_horizon);
    let mut failed = false;
    let mut eao_sum = 0.0;
    for f in trace.iter().skip(1).take(horizon) {
        failed |= f.event == VotEvent::Fail;
        if !failed {
            eao_sum += f.overlap;
        }
    }
    VotReport {
        accuracy: if count > 0 { sum / count as f64 } else { 0.0 },
        accuracy_frames: count,
        robustness: resets.len(),
        eao_simple: if horizon > 0 { eao_sum / horizon as f64 } else { 0.0 },
        eao_frames: horizon,
        resets,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VotSummary {
    /// Frame-weighted accuracy over all sequences.
    pub accuracy: f64,
    /// Total failures.
    pub robustness: usize,
    /// Mean per-sequence EAO over sequences with at least one scored frame.
    pub eao_simple: f64,
}

pub fn summarize_vot(reports: &[VotReport]) -> VotSummary {
    let frames: usize = reports.iter().map(|r| r.accuracy_frames).sum();
    let acc: f64 = reports.iter().map(|r| r.accuracy * r.accuracy_frames as f64).sum();
    let scored: Vec<f64> = reports.iter().filter(|r| r.eao_frames > 0).map(|r| r.eao_simple).collect();
    VotSummary {
        accuracy: if frames > 0 { acc / frames as f64 } else { 0.0 },
        robustness: reports.iter().map(|r| r.robustness).sum(),
        eao_simple: if scored.is_empty() {
            0.0
        } else {
            scored.iter().sum::<f64>() / scored.len() as f64
        },
    }
}

pub const VOT_HEADER: &str = "frame,event,x,y,w,h,overlap";

pub fn format_vot_trace(trace: &[VotFrame]) -> String {
    let mut out = format!("{VOT_HEADER}\n");
    for (i, f) in trace.iter().enumerate() {
        let [x, y, w, h] = f.bbox.map(|b| b.corner()).unwrap_or([f64::NAN; 4]);
        let _ = writeln!(out, "{},{},{x},{y},{w},{h},{}", i + 1, f.event.as_str(), f.overlap);
    }
    out
}

pub fn parse_vot_trace(text: &str) -> Result<Vec<VotFrame>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || Error::Eval(format!("malformed VOT trace row {line:?}"));
            if f.len() != 7 {
                return Err(bad());
            }
            let event = VotEvent::parse(f[1]).ok_or_else(bad)?;
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
            let [x, y, w, h] = [num(2)?, num(3)?, num(4)?, num(5)?];
            Ok(VotFrame {
                event,
                bbox: (!x.is_nan()).then(|| BBox::from_corner(x, y, w, h)),
                overlap: num(6)?,
            })
        })
        .collect()
}

/// Known attribute tags: the OTB challenge attributes plus the generator's tags.
pub const KNOWN_TAGS: &[&str] = &[
    "illumination-variation",
    "scale-variation",
    "occlusion",
    "deformation",
    "motion-blur",
    "fast-motion",
    "in-plane-rotation",
    "out-of-plane-rotation",
    "out-of-view",
    "background-clutter",
    "low-resolution",
    "similar-object",
    "IV",
    "SV",
    "OCC",
    "DEF",
    "MB",
    "FM",
    "IPR",
    "OPR",
    "OV",
    "BC",
    "LR",
];

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeBreakdown {
    pub curves: BTreeMap<String, EvalCurves>,
    /// Tags outside [`KNOWN_TAGS`], not evaluated.
    pub skipped: BTreeSet<String>,
}

/// One set of curves per attribute over the frames of every sequence bearing it.
pub fn attribute_breakdown(results: &[(&[BBox], &[BBox], &BTreeSet<String>)]) -> Result<AttributeBreakdown> {
    let mut tags = BTreeSet::new();
    for (_, _, a) in results {
        tags.extend(a.iter().cloned());
    }
    let mut out = AttributeBreakdown {
        curves: BTreeMap::new(),
        skipped: BTreeSet::new(),
    };
    for tag in tags {
        if !KNOWN_TAGS.contains(&tag.as_str()) {
            out.skipped.insert(tag);
            continue;
        }
        let subset = results.iter().filter(|(_, _, a)| a.contains(&tag)).map(|(p, g, _)| (*p, *g));
        let curves = evaluate(subset)?;
        out.curves.insert(tag, curves);
    }
    Ok(out)
}

pub fn format_curve(thresholds: &[f64], values: &[f64]) -> String {
    let mut out = String::from("threshold,value\n");
    for (t, v) in thresholds.iter().zip(values) {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

/// Fixed-key summary: `auc`, `precision_at_20`, `accuracy`, `robustness`, `eao_simple`.
pub fn format_summary(curves: &EvalCurves, vot: &VotSummary) -> String {
    format!(
        "auc = {}\nprecision_at_20 = {}\naccuracy = {}\nrobustness = {}\neao_simple = {}\n",
        curves.auc, curves.precision_at_20, vot.accuracy, vot.robustness, vot.eao_simple
    )
}

pub fn write_curves(dir: &Path, stem: &str, curves: &EvalCurves) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = dir.join(format!("{stem}_success.csv"));
    fs::write(&s, format_curve(&curves.success_thresholds, &curves.success_values)).map_err(|e| Error::io(&s, e))?;
    let p = dir.join(format!("{stem}_precision.csv"));
    fs::write(&p, format_curve(&curves.precision_thresholds, &curves.precision_values))
        .map_err(|e| Error::io(&p, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_error_examples() {
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(3.0, 4.0, 1.0, 1.0);
        assert_eq!(center_error(&a, &a), 0.0);
        assert_eq!(center_error(&a, &b), 5.0);
        assert_eq!(center_error(&b, &a), 5.0);
    }

    #[test]
    fn success_examples() {
        let (c, auc) = success_curve(&[1.0; 7]).unwrap();
        assert!(c.values[..20].iter().all(|&v| v == 1.0));
        assert_eq!(c.values[20], 0.0);
        assert_eq!(auc, 20.0 / 21.0);
        let (c, auc) = success_curve(&[0.0, 0.0]).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
        assert_eq!(auc, 0.0);
        let (c, _) = success_curve(&[0.3, 0.7]).unwrap();
        for (t, v) in c.thresholds.iter().zip(&c.values) {
            let expected = if *t < 0.3 {
                1.0
            } else if *t < 0.7 {
                0.5
            } else {
                0.0
            };
            assert_eq!(*v, expected, "threshold {t}");
        }
        assert!(success_curve(&[]).is_err());
    }

    #[test]
    fn precision_examples() {
        let (c, at20) = precision_curve(&[0.0, 0.0]).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert_eq!(at20, 1.0);
        let (c, at20) = precision_curve(&[5.0, 25.0]).unwrap();
        assert_eq!(at20, 0.5);
        assert!(c.values[50] >= c.values[0]);
        assert!(precision_curve(&[]).is_err());
    }
}
