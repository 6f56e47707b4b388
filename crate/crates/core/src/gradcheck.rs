//! Finite-difference verification of every hand-written gradient.
//!
//! Each check compares analytic gradients with central differences
//! (`eps = 1e-5`). An element passes when the absolute difference is at most
//! [`ABS_FLOOR`] or the relative difference `|a - n| / max(|a|, |n|)` is below
//! [`REL_TOL`].

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::binder::Binder;
use crate::data::labels::{Label, LabelAssignment};
use crate::error::Result;
use crate::head::{self, HeadConfig};
use crate::losses::{self, LossConfig, Normalizer};
use crate::matcher;
use crate::params::ParamStore;
use crate::seeds;
use crate::tensor::{ConvGeom, Graph, Tensor, Var};

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-7;
/// Elements probed per input tensor and seed.
const PROBES: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct OpReport {
    pub op: &'static str,
    pub module: &'static str,
    pub checked: usize,
    pub failed: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
}

impl OpReport {
    fn new(op: &'static str, module: &'static str) -> Self {
        Self {
            op,
            module,
            checked: 0,
            failed: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.failed == 0 && self.checked > 0
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let abs = (analytic - numeric).abs();
        let rel = if abs <= ABS_FLOOR {
            0.0
        } else {
            abs / analytic.abs().max(numeric.abs())
        };
        self.checked += 1;
        self.max_abs_error = self.max_abs_error.max(abs);
        self.max_rel_error = self.max_rel_error.max(rel);
        if !(rel < REL_TOL) {
            self.failed += 1;
        }
    }

    fn merge(&mut self, other: &OpReport) {
        self.checked += other.checked;
        self.failed += other.failed;
        self.max_rel_error = self.max_rel_error.max(other.max_rel_error);
        self.max_abs_error = self.max_abs_error.max(other.max_abs_error);
    }
}

fn random_tensor(rng: &mut impl Rng, shape: [usize; 4], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(lo..hi))
}

fn probe_indices(rng: &mut impl Rng, len: usize) -> Vec<usize> {
    if len <= PROBES {
        (0..len).collect()
    } else {
        (0..PROBES).map(|_| rng.random_range(0..len)).collect()
    }
}

fn forward_scalar<'s>(
    store: &'s ParamStore,
    r: Option<&Tensor>,
    build: &dyn Fn(&mut Graph, &mut Binder) -> Result<Var>,
) -> Result<(Graph, Var, Binder<'s>)> {
    let mut g = Graph::new();
    let mut b = Binder::new(store, |_| true);
    let y = build(&mut g, &mut b)?;
    let out = match r {
        Some(r) => {
            let rv = g.constant(r.clone());
            let p = g.mul(y, rv)?;
            g.sum(p)
        }
        None => y,
    };
    Ok((g, out, b))
}

/// Checks a graph-built function of the named tensors in `store`. The scalar
/// under test is `sum(r * f(...))` for a fixed random `r`.
fn check_graph(
    report: &mut OpReport,
    rng: &mut ChaCha8Rng,
    store: &ParamStore,
    build: &dyn Fn(&mut Graph, &mut Binder) -> Result<Var>,
) -> Result<()> {
    let shape = {
        let (g, y, _) = forward_scalar(store, None, build)?;
        g.value(y).shape()
    };
    let r = random_tensor(rng, shape, -1.0, 1.0);
    let (mut g, loss, binder) = forward_scalar(store, Some(&r), build)?;
    g.backward(loss)?;
    let analytic: Vec<(String, Vec<f64>)> = binder
        .bound()
        .map(|(n, v)| (n.to_owned(), g.grad(v).map(<[f64]>::to_vec).unwrap_or_default()))
        .collect();
    for (name, grad) in analytic {
        let len = store.get(&name)?.len();
        let grad = if grad.is_empty() { vec![0.0; len] } else { grad };
        for i in probe_indices(rng, len) {
            let eval = |delta: f64| -> Result<f64> {
                let mut s = store.clone();
                s.get_mut(&name)?.data_mut()[i] += delta;
                let (g, out, _) = forward_scalar(&s, Some(&r), build)?;
                Ok(g.value(out).item())
            };
            let numeric = (eval(EPS)? - eval(-EPS)?) / (2.0 * EPS);
            report.record(grad[i], numeric);
        }
    }
    Ok(())
}

/// Checks a plain function of a flat vector against its analytic gradient.
fn check_flat(report: &mut OpReport, x: &[f64], f: &dyn Fn(&[f64]) -> Result<f64>, grad: &[f64]) -> Result<()> {
    for i in 0..x.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut y = x.to_vec();
            y[i] += delta;
            f(&y)
        };
        let numeric = (eval(EPS)? - eval(-EPS)?) / (2.0 * EPS);
        report.record(grad[i], numeric);
    }
    Ok(())
}

fn conv_store(rng: &mut ChaCha8Rng, store: &mut ParamStore, prefix: &str, c_out: usize, c_in: usize, k: usize) {
    store.insert(format!("{prefix}.weight"), random_tensor(rng, [c_out, c_in, k, k], -0.5, 0.5));
    store.insert(format!("{prefix}.bias"), random_tensor(rng, [c_out, 1, 1, 1], -0.2, 0.2));
}

type Check = fn(&mut OpReport, &mut ChaCha8Rng) -> Result<()>;

fn check_conv2d(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let stride = rng.random_range(1..=2);
    let padding = rng.random_range(0..=1);
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(rng, [2, 2, 7, 7], -1.0, 1.0));
    conv_store(rng, &mut s, "c", 3, 2, 3);
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        let (w, bias) = b.conv(g, "c")?;
        g.conv2d(x, w, Some(bias), ConvGeom::new(stride, padding))
    })
}

fn check_sigmoid(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(rng, [1, 3, 4, 4], -4.0, 4.0));
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        Ok(g.sigmoid(x))
    })
}

fn check_global_avg_pool(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(rng, [2, 3, 5, 4], -1.0, 1.0));
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        g.global_avg_pool(x)
    })
}

fn check_exp_scale(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(rng, [1, 2, 3, 3], -1.0, 1.0));
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        let e = g.exp(x);
        Ok(g.scale(e, 8.0))
    })
}

fn check_elementwise(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("a", random_tensor(rng, [2, 3, 4, 4], -1.0, 1.0));
    s.insert("b", random_tensor(rng, [2, 3, 4, 4], -1.0, 1.0));
    s.insert("gate", random_tensor(rng, [2, 3, 1, 1], -1.0, 1.0));
    check_graph(rep, rng, &s, &|g, b| {
        let (x, y, w) = (b.var(g, "a")?, b.var(g, "b")?, b.var(g, "gate")?);
        let sum = g.add(x, y)?;
        g.mul(sum, w)
    })
}

fn check_center_crop(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(rng, [1, 2, 7, 7], -1.0, 1.0));
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        g.center_crop(x, 3)
    })
}

fn check_softmax_channelwise(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("x", random_tensor(rng, [2, 2, 3, 4], -3.0, 3.0));
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        g.softmax_channelwise(x)
    })
}

fn check_dw_xcorr(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    s.insert("t", random_tensor(rng, [2, 3, 3, 3], -1.0, 1.0));
    s.insert("s", random_tensor(rng, [2, 3, 7, 6], -1.0, 1.0));
    check_graph(rep, rng, &s, &|g, b| {
        let (t, x) = (b.var(g, "t")?, b.var(g, "s")?);
        g.dw_xcorr(t, x)
    })
}

fn check_level_fusion(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let mut s = ParamStore::new();
    for l in 0..3 {
        s.insert(format!("r{l}"), random_tensor(rng, [1, 2, 4, 4], -1.0, 1.0));
    }
    s.insert("logits", random_tensor(rng, [3, 1, 1, 1], -1.0, 1.0));
    check_graph(rep, rng, &s, &|g, b| {
        let levels = [b.var(g, "r0")?, b.var(g, "r1")?, b.var(g, "r2")?];
        let logits = b.var(g, "logits")?;
        g.level_fusion(&levels, logits)
    })
}

fn check_relu(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    // Keep inputs away from the kink at 0, where central differences are meaningless.
    let x = Tensor::from_fn([1, 2, 4, 4], |_, _, _, _| {
        let m = rng.random_range(0.01..1.0);
        if rng.random_bool(0.5) {
            m
        } else {
            -m
        }
    });
    let mut s = ParamStore::new();
    s.insert("x", x);
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "x")?;
        Ok(g.relu(x))
    })
}

fn check_thm_reduce(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let (c_in, mid, c_out) = (8, 2, 4);
    let mut s = ParamStore::new();
    s.insert("f", random_tensor(rng, [2, c_in, 5, 5], -1.0, 1.0));
    conv_store(rng, &mut s, "m.reduce", c_out, c_in, 1);
    conv_store(rng, &mut s, "m.squeeze", mid, c_in, 1);
    conv_store(rng, &mut s, "m.excite", c_out, mid, 1);
    check_graph(rep, rng, &s, &|g, b| {
        let f = b.var(g, "f")?;
        matcher::reduce_on(g, b, "m", true, f)
    })
}

fn head_store(rng: &mut ChaCha8Rng, cfg: &HeadConfig) -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("fused", random_tensor(rng, [1, cfg.c_in, 5, 5], -1.0, 1.0));
    for (branch, out) in [("cls", 2), ("reg", 4)] {
        conv_store(rng, &mut s, &format!("head.{branch}.conv1"), cfg.hidden, cfg.c_in, 3);
        conv_store(rng, &mut s, &format!("head.{branch}.conv2"), out, cfg.hidden, 1);
    }
    s
}

fn small_head() -> HeadConfig {
    HeadConfig {
        c_in: 4,
        hidden: 3,
        ..HeadConfig::default()
    }
}

fn check_classify(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = small_head();
    let s = head_store(rng, &cfg);
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "fused")?;
        head::classify_on(g, b, &cfg, x)
    })
}

fn check_regress(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let cfg = HeadConfig {
        stride_scale: 1.0,
        ..small_head()
    };
    let s = head_store(rng, &cfg);
    check_graph(rep, rng, &s, &|g, b| {
        let x = b.var(g, "fused")?;
        head::regress_on(g, b, &cfg, x)
    })
}

fn check_softmax_ce(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let z: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
    let target = rng.random_range(0..2);
    let (_, grad) = losses::softmax_cross_entropy(&z, target)?;
    check_flat(rep, &z, &|v| Ok(losses::softmax_cross_entropy(v, target)?.0), &grad)
}

fn check_smooth_l1(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let d: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
    let d_hat: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
    // Stay clear of the branch switch at |e| = beta.
    if d.iter().zip(&d_hat).any(|(a, b)| ((a - b).abs() - 1.0).abs() < 1e-3) {
        return Ok(());
    }
    let (_, grad) = losses::smooth_l1_with_grad(&d, &d_hat, 1.0)?;
    check_flat(rep, &d, &|v| losses::smooth_l1(v, &d_hat, 1.0), &grad)
}

fn random_ltrb(rng: &mut ChaCha8Rng) -> [f64; 4] {
    [0, 1, 2, 3].map(|_| rng.random_range(1.0..20.0))
}

fn check_iou_loss(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let d = random_ltrb(rng);
    let d_hat = random_ltrb(rng);
    let (_, g) = losses::ltrb_iou_with_grad(&d, &d_hat);
    let grad = g.map(|v| -v);
    let loss = |v: &[f64]| -> Result<f64> {
        let d: [f64; 4] = [v[0], v[1], v[2], v[3]];
        let pred = crate::bbox::BBox::from_ltrb(-d[0], -d[1], d[2], d[3]);
        let gt = crate::bbox::BBox::from_ltrb(-d_hat[0], -d_hat[1], d_hat[2], d_hat[3]);
        losses::iou_loss(&pred, &gt)
    };
    check_flat(rep, &d, &loss, &grad)
}

fn check_pos_loss(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let x = [rng.random_range(0.05..0.95), rng.random_range(0.0..3.0)];
    // Full derivative, coefficient included.
    let (dp, dr) = losses::pos_loss_grad(x[0], x[1], true);
    check_flat(rep, &x, &|v| losses::pos_loss(v[0], v[1]), &[dp, dr])?;
    // Detached coefficient: the derivative of CE plus a constant-weighted reg.
    let (dp, dr) = losses::pos_loss_grad(x[0], x[1], false);
    let frozen = losses::corrective_coefficient(x[0]);
    check_flat(rep, &x, &|v| Ok(-v[0].ln() + frozen * v[1]), &[dp, dr])
}

fn random_labels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> LabelAssignment {
    let mut lab = LabelAssignment::all_negative(h, w);
    for i in 0..h * w {
        lab.cls[i] = match rng.random_range(0..3) {
            0 => Label::Pos,
            1 => Label::Neg,
            _ => Label::Ignore,
        };
        if lab.cls[i] == Label::Pos {
            lab.d_hat[i] = random_ltrb(rng);
        }
    }
    lab.cls[0] = Label::Pos;
    lab.d_hat[0] = random_ltrb(rng);
    lab
}

fn check_total_loss(rep: &mut OpReport, rng: &mut ChaCha8Rng) -> Result<()> {
    let (n, h, w) = (2, 3, 3);
    let logits = random_tensor(rng, [n, 2, h, w], -2.0, 2.0);
    let offsets = random_tensor(rng, [n, 4, h, w], 1.0, 20.0);
    let labels: Vec<LabelAssignment> = (0..n).map(|_| random_labels(rng, h, w)).collect();
    let variants = [
        LossConfig {
            corrective: true,
            coefficient_grad: true,
            ..LossConfig::default()
        },
        LossConfig {
            corrective: false,
            normalizer: Normalizer::Pos,
            ..LossConfig::default()
        },
    ];
    for cfg in variants {
        let lw = losses::total_loss_with_grads(&logits, &offsets, &labels, &cfg)?;
        let mut x = logits.data().to_vec();
        x.extend_from_slice(offsets.data());
        let mut grad = lw.grad_logits.clone();
        grad.extend_from_slice(&lw.grad_offsets);
        let split = logits.len();
        let f = |v: &[f64]| -> Result<f64> {
            let l = Tensor::new(logits.shape(), v[..split].to_vec())?;
            let o = Tensor::new(offsets.shape(), v[split..].to_vec())?;
            Ok(losses::total_loss(&l, &o, &labels, &cfg)?.total)
        };
        check_flat(rep, &x, &f, &grad)?;
    }
    Ok(())
}

/// Every check: `(op, module, check)`.
pub const CHECKS: &[(&str, &str, Check)] = &[
    ("conv2d", "tensor-core", check_conv2d),
    ("sigmoid", "tensor-core", check_sigmoid),
    ("global_avg_pool", "tensor-core", check_global_avg_pool),
    ("relu", "tensor-core", check_relu),
    ("exp_scale", "tensor-core", check_exp_scale),
    ("elementwise", "tensor-core", check_elementwise),
    ("center_crop", "tensor-core", check_center_crop),
    ("softmax_channelwise", "tensor-core", check_softmax_channelwise),
    ("dw_xcorr", "tensor-core", check_dw_xcorr),
    ("level_fusion", "tensor-core", check_level_fusion),
    ("thm_reduce", "matcher", check_thm_reduce),
    ("classify", "head", check_classify),
    ("regress", "head", check_regress),
    ("softmax_ce", "losses", check_softmax_ce),
    ("smooth_l1", "losses", check_smooth_l1),
    ("iou_loss", "losses", check_iou_loss),
    ("pos_loss", "losses", check_pos_loss),
    ("total_loss", "losses", check_total_loss),
];

pub const DEFAULT_SEEDS: usize = 10;

/// Runs every check for `n_seeds` seeds derived from `seed`.
pub fn run_suite(seed: u64, n_seeds: usize) -> Result<Vec<OpReport>> {
    CHECKS
        .iter()
        .enumerate()
        .map(|(k, &(op, module, check))| {
            let mut total = OpReport::new(op, module);
            for s in 0..n_seeds {
                let mut rng = seeds::substream(seed, "gradcheck", (k * 1000 + s) as u64);
                let mut rep = OpReport::new(op, module);
                check(&mut rep, &mut rng)?;
                total.merge(&rep);
            }
            Ok(total)
        })
        .collect()
}

pub fn format_report(reports: &[OpReport]) -> String {
    let mut out = String::from("module,op,checked,failed,max_rel_error,max_abs_error,status\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{:.3e},{:.3e},{}\n",
            r.module,
            r.op,
            r.checked,
            r.failed,
            r.max_rel_error,
            r.max_abs_error,
            if r.passed() { "pass" } else { "FAIL" }
        ));
    }
    let mut modules: Vec<&str> = reports.iter().map(|r| r.module).collect();
    modules.dedup();
    for m in modules {
        let ok = reports.iter().filter(|r| r.module == m).all(OpReport::passed);
        out.push_str(&format!("module {m}: {}\n", if ok { "pass" } else { "FAIL" }));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::CORRUPT_SIGMOID_BACKWARD;

    #[test]
    fn suite_passes() {
        let reports = run_suite(0, 3).unwrap();
        for r in &reports {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn corrupted_sigmoid_is_named() {
        CORRUPT_SIGMOID_BACKWARD.with(|c| c.set(true));
        let reports = run_suite(0, 2);
        CORRUPT_SIGMOID_BACKWARD.with(|c| c.set(false));
        let reports = reports.unwrap();
        let failing: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.op).collect();
        assert!(failing.contains(&"sigmoid"), "{failing:?}");
        assert!(failing.contains(&"thm_reduce"), "{failing:?}");
        assert!(format_report(&reports).contains("tensor-core,sigmoid"));
    }
}
