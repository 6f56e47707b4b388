//! Training objectives: IoU and Smooth L1 regression terms, their sum, the
//! confidence-weighted positive-sample loss, and the batch total over
//! positive and negative points.
//!
//! Each differentiable loss comes with a hand-derived gradient; the batch
//! total is placed on the tape through [`Graph::scalar_with_grads`].

use crate::bbox::BBox;
use crate::data::labels::{Label, LabelAssignment};
use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Normalizer {
    /// Divide by positives plus negatives.
    PosNeg,
    /// Divide by positives only (negatives when there are none).
    Pos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub normalizer: Normalizer,
    /// Weight the regression term of positives by `1 + exp(-CE)`.
    pub corrective: bool,
    /// Let gradients flow through that weight instead of treating it as constant.
    pub coefficient_grad: bool,
    /// Offsets are divided by this before Smooth L1.
    pub offset_scale: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            normalizer: Normalizer::PosNeg,
            corrective: true,
            coefficient_grad: false,
            offset_scale: 8.0,
        }
    }
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.validate()?;
    b.validate()?;
    let iw = (a.right().min(b.right()) - a.left().max(b.left())).max(0.0);
    let ih = (a.bottom().min(b.bottom()) - a.top().max(b.top())).max(0.0);
    let inter = iw * ih;
    // Rounding can push the ratio of nearly identical boxes just past 1.
    Ok((inter / (a.area() + b.area() - inter)).min(1.0))
}

pub fn iou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    Ok(1.0 - iou(pred, gt)?)
}

fn smooth_l1_term(e: f64, beta: f64) -> (f64, f64) {
    if e.abs() < beta {
        (0.5 * e * e / beta, e / beta)
    } else {
        (e.abs() - 0.5 * beta, e.signum())
    }
}

/// Mean Smooth L1 over components.
pub fn smooth_l1(d: &[f64], d_hat: &[f64], beta: f64) -> Result<f64> {
    Ok(smooth_l1_with_grad(d, d_hat, beta)?.0)
}

/// Mean Smooth L1 and its gradient with respect to `d`.
pub fn smooth_l1_with_grad(d: &[f64], d_hat: &[f64], beta: f64) -> Result<(f64, Vec<f64>)> {
    if !(beta > 0.0) {
        return Err(Error::Config(format!("smooth L1 beta must be positive, got {beta}")));
    }
    if d.len() != d_hat.len() || d.is_empty() {
        return Err(Error::dim(
            "smooth_l1",
            format!("{} predictions vs {} targets", d.len(), d_hat.len()),
        ));
    }
    let inv = 1.0 / d.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(d.len());
    for (&a, &b) in d.iter().zip(d_hat) {
        let (v, g) = smooth_l1_term(a - b, beta);
        total += v;
        grad.push(g * inv);
    }
    Ok((total * inv, grad))
}

/// IoU of two boxes that share an interior point, given as distances
/// `(l, t, r, b)` from that point to their edges, with the gradient with
/// respect to the prediction.
pub fn ltrb_iou_with_grad(d: &[f64; 4], d_hat: &[f64; 4]) -> (f64, [f64; 4]) {
    let [l, t, r, b] = *d;
    let [gl, gt, gr, gb] = *d_hat;
    let pred_area = (l + r) * (t + b);
    let gt_area = (gl + gr) * (gt + gb);
    let iw = l.min(gl) + r.min(gr);
    let ih = t.min(gt) + b.min(gb);
    let inter = iw * ih;
    let union = pred_area + gt_area - inter;
    let value = inter / union;
    // d(inter)/d(l) is ih while l is the smaller distance, zero otherwise; same pattern per edge.
    let d_inter = [
        if l < gl { ih } else { 0.0 },
        if t < gt { iw } else { 0.0 },
        if r < gr { ih } else { 0.0 },
        if b < gb { iw } else { 0.0 },
    ];
    let d_area = [t + b, l + r, t + b, l + r];
    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        grad[k] = (d_inter[k] * union - inter * d_union) / (union * union);
    }
    (value, grad)
}

/// Gradient of [`pos_loss`] with respect to `(p, reg)`. With `coefficient_grad`
/// off the coefficient is a constant weight and only `CE` depends on `p`.
pub fn pos_loss_grad(p: f64, reg: f64, coefficient_grad: bool) -> (f64, f64) {
    let dp = -1.0 / p + if coefficient_grad { reg } else { 0.0 };
    (dp, 1.0 + p)
}

/// `-ln softmax(z)[target]` and its gradient `softmax(z) - onehot(target)`.
pub fn softmax_cross_entropy(z: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= z.len() {
        return Err(Error::dim("softmax_cross_entropy", format!("class {target} of {}", z.len())));
    }
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    let mut grad: Vec<f64> = z.iter().map(|v| (v - lse).exp()).collect();
    grad[target] -= 1.0;
    Ok((lse - z[target], grad))
}

/// Smooth L1 of the offsets plus IoU loss of the decoded boxes.
pub fn reg_loss(d: &[f64; 4], d_hat: &[f64; 4], pred: &BBox, gt: &BBox, beta: f64) -> Result<f64> {
    Ok(smooth_l1(d, d_hat, beta)? + iou_loss(pred, gt)?)
}

/// `1 + exp(-CE)` with `CE = -ln p`; equal to `1 + p`.
pub fn corrective_coefficient(p: f64) -> f64 {
    1.0 + (-(-p.ln())).exp()
}

/// `CE + (1 + exp(-CE)) * reg` for a positive point with target probability `p`.
pub fn pos_loss(p: f64, reg: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("classification score {p} outside (0, 1)")));
    }
    let ce = -p.ln();
    Ok(ce + (1.0 + (-ce).exp()) * reg)
}

/// Per-step loss breakdown. Every part is already divided by the normalizer,
/// and the regression parts carry each positive's coefficient, so
/// `total = cls_pos + cls_neg + reg_smooth_l1 + reg_iou`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub cls_pos: f64,
    pub cls_neg: f64,
    pub reg_smooth_l1: f64,
    pub reg_iou: f64,
    /// Mean regression weight over positives; 1 without positives or with the weight disabled.
    pub coefficient_mean: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl LossReport {
    pub fn recomposed_total(&self) -> f64 {
        self.cls_pos + self.cls_neg + self.reg_smooth_l1 + self.reg_iou
    }
}

/// Loss over a batch plus gradients with respect to the logits and offsets.
pub struct LossWithGrads {
    pub report: LossReport,
    pub grad_logits: Vec<f64>,
    pub grad_offsets: Vec<f64>,
}

/// `-ln softmax(z)_k` for two logits.
fn two_class_ce(z0: f64, z1: f64, target: usize) -> (f64, f64) {
    let m = z0.max(z1);
    let lse = m + ((z0 - m).exp() + (z1 - m).exp()).ln();
    let p1 = (z1 - lse).exp();
    let ce = if target == 1 { lse - z1 } else { lse - z0 };
    (ce, p1)
}

/// Batch loss: `(sum_pos L_pos + sum_neg CE) / normalizer`, with gradients.
///
/// `logits` is `(n, 2, h, w)`, `offsets` is `(n, 4, h, w)` in crop pixels and
/// `labels` holds one assignment per sample.
pub fn total_loss_with_grads(
    logits: &Tensor,
    offsets: &Tensor,
    labels: &[LabelAssignment],
    cfg: &LossConfig,
) -> Result<LossWithGrads> {
    let [n, c, h, w] = logits.shape();
    if c != 2 || offsets.shape() != [n, 4, h, w] || labels.len() != n {
        return Err(Error::dim(
            "total_loss",
            format!(
                "logits {:?}, offsets {:?} and {} label maps are inconsistent",
                logits.shape(),
                offsets.shape(),
                labels.len()
            ),
        ));
    }
    if let Some(bad) = labels.iter().find(|l| (l.height, l.width) != (h, w)) {
        return Err(Error::dim(
            "total_loss",
            format!("label map {}x{} vs score map {h}x{w}", bad.height, bad.width),
        ));
    }
    let n_pos: usize = labels.iter().map(LabelAssignment::n_pos).sum();
    let n_neg: usize = labels.iter().map(LabelAssignment::n_neg).sum();
    if n_pos + n_neg == 0 {
        return Err(Error::Training("every point of the batch is ignored".into()));
    }
    let norm = match cfg.normalizer {
        Normalizer::PosNeg => (n_pos + n_neg) as f64,
        Normalizer::Pos if n_pos > 0 => n_pos as f64,
        Normalizer::Pos => n_neg as f64,
    };
    let inv = 1.0 / norm;
    let hw = h * w;
    let scale = cfg.offset_scale;
    let mut report = LossReport {
        total: 0.0,
        cls_pos: 0.0,
        cls_neg: 0.0,
        reg_smooth_l1: 0.0,
        reg_iou: 0.0,
        coefficient_mean: 1.0,
        n_pos,
        n_neg,
    };
    let mut coefficient_sum = 0.0;
    let mut grad_logits = vec![0.0; logits.len()];
    let mut grad_offsets = vec![0.0; offsets.len()];
    let z = logits.data();
    let off = offsets.data();
    for (b, lab) in labels.iter().enumerate() {
        for i in 0..hw {
            let (i0, i1) = ((b * 2) * hw + i, (b * 2 + 1) * hw + i);
            match lab.cls[i] {
                Label::Ignore => {}
                Label::Neg => {
                    let (ce, p1) = two_class_ce(z[i0], z[i1], 0);
                    report.cls_neg += ce * inv;
                    // d CE / dz = softmax - onehot(0)
                    grad_logits[i0] += -p1 * inv;
                    grad_logits[i1] += p1 * inv;
                }
                Label::Pos => {
                    let (ce, p1) = two_class_ce(z[i0], z[i1], 1);
                    let d: [f64; 4] = [0, 1, 2, 3].map(|k| off[(b * 4 + k) * hw + i]);
                    let d_hat = lab.d_hat[i];
                    let d_n = d.map(|v| v / scale);
                    let d_hat_n = d_hat.map(|v| v / scale);
                    let (sl1, sl1_grad) = smooth_l1_with_grad(&d_n, &d_hat_n, cfg.beta)?;
                    let (iou_v, iou_grad) = ltrb_iou_with_grad(&d, &d_hat);
                    let iou_l = 1.0 - iou_v;
                    let reg = sl1 + iou_l;
                    let coefficient = if cfg.corrective { 1.0 + (-ce).exp() } else { 1.0 };
                    coefficient_sum += coefficient;
                    report.cls_pos += ce * inv;
                    report.reg_smooth_l1 += coefficient * sl1 * inv;
                    report.reg_iou += coefficient * iou_l * inv;
                    // CE part: softmax - onehot(1).
                    let mut dz1 = p1 - 1.0;
                    if cfg.corrective && cfg.coefficient_grad {
                        // coefficient = 1 + p1 and dp1/dz1 = p1 (1 - p1) = -dp1/dz0.
                        dz1 += reg * p1 * (1.0 - p1);
                    }
                    grad_logits[i1] += dz1 * inv;
                    grad_logits[i0] += -dz1 * inv;
                    for k in 0..4 {
                        let g = sl1_grad[k] / scale - iou_grad[k];
                        grad_offsets[(b * 4 + k) * hw + i] += coefficient * g * inv;
                    }
                }
            }
        }
    }
    if n_pos > 0 {
        report.coefficient_mean = coefficient_sum / n_pos as f64;
    }
    report.total = report.cls_pos + report.cls_neg + report.reg_smooth_l1 + report.reg_iou;
    Ok(LossWithGrads {
        report,
        grad_logits,
        grad_offsets,
    })
}

pub fn total_loss(logits: &Tensor, offsets: &Tensor, labels: &[LabelAssignment], cfg: &LossConfig) -> Result<LossReport> {
    Ok(total_loss_with_grads(logits, offsets, labels, cfg)?.report)
}

/// Records the batch loss on the tape and returns its scalar node.
pub fn total_loss_on(
    g: &mut Graph,
    logits: Var,
    offsets: Var,
    labels: &[LabelAssignment],
    cfg: &LossConfig,
) -> Result<(Var, LossReport)> {
    let lw = total_loss_with_grads(g.value(logits), g.value(offsets), labels, cfg)?;
    let v = g.scalar_with_grads(&[logits, offsets], lw.report.total, vec![lw.grad_logits, lw.grad_offsets])?;
    Ok((v, lw.report))
}
