//! Forward kernels and their backward rules. Every function here is pure:
//! inputs are borrowed, results are freshly allocated.

use super::{ConvGeom, ConvParams, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementwiseKind {
    Add,
    Mul,
}

/// Output index range `[lo, hi)` whose input index `o*stride + offset - padding`
/// stays inside `[0, input_len)`.
fn valid_range(out_len: usize, input_len: usize, stride: usize, offset: usize, padding: usize) -> (usize, usize) {
    let lo = if offset >= padding {
        0
    } else {
        (padding - offset).div_ceil(stride)
    };
    let last = input_len + padding;
    let hi = if last <= offset {
        0
    } else {
        ((last - 1 - offset) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    conv2d_forward(input, &params.weight, params.bias.as_deref(), params.geom)
}

pub fn conv2d_output_shape(input: [usize; 4], weight: [usize; 4], geom: ConvGeom) -> Result<[usize; 4]> {
    let [n, c, h, w] = input;
    let [o, ci, kh, kw] = weight;
    if c != ci {
        return Err(Error::dim(
            "conv2d",
            format!("input {input:?} has {c} channels but weight {weight:?} expects {ci}"),
        ));
    }
    if kh != kw {
        return Err(Error::dim("conv2d", format!("non-square kernel {weight:?}")));
    }
    let ho = geom.output_len(h, kh)?;
    let wo = geom.output_len(w, kw)?;
    Ok([n, o, ho, wo])
}

pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>, geom: ConvGeom) -> Result<Tensor> {
    let out_shape = conv2d_output_shape(input.shape(), weight.shape(), geom)?;
    if let Some(b) = bias {
        if b.len() != out_shape[1] {
            return Err(Error::dim(
                "conv2d",
                format!("bias of length {} for {} output channels", b.len(), out_shape[1]),
            ));
        }
    }
    let [n, c, h, w] = input.shape();
    let [_, o, ho, wo] = out_shape;
    let k = weight.h();
    let ConvGeom {
        stride: s,
        padding: p,
        dilation: d,
    } = geom;
    let x_in = input.data();
    let wt = weight.data();
    let mut out = vec![0.0; n * o * ho * wo];
    for b in 0..n {
        for oc in 0..o {
            let out_plane = &mut out[(b * o + oc) * ho * wo..][..ho * wo];
            if let Some(bias) = bias {
                out_plane.fill(bias[oc]);
            }
            for ic in 0..c {
                let in_plane = &x_in[(b * c + ic) * h * w..][..h * w];
                for u in 0..k {
                    let (y0, y1) = valid_range(ho, h, s, u * d, p);
                    for v in 0..k {
                        let wv = wt[((oc * c + ic) * k + u) * k + v];
                        let (x0, x1) = valid_range(wo, w, s, v * d, p);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let iy = y * s + u * d - p;
                            let row_in = &in_plane[iy * w..][..w];
                            let row_out = &mut out_plane[y * wo + x0..y * wo + x1];
                            let ix0 = x0 * s + v * d - p;
                            if s == 1 {
                                for (acc, &xv) in row_out.iter_mut().zip(&row_in[ix0..ix0 + (x1 - x0)]) {
                                    *acc += wv * xv;
                                }
                            } else {
                                for (j, acc) in row_out.iter_mut().enumerate() {
                                    *acc += wv * row_in[ix0 + j * s];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Gradients of a convolution. `input` and `weight` are `None` when not requested.
pub struct ConvGrads {
    pub input: Option<Vec<f64>>,
    pub weight: Option<Vec<f64>>,
    pub bias: Vec<f64>,
}

/// Backward of [`conv2d_forward`]: the input gradient is the transposed
/// correlation of `grad_out` with the kernel, the weight gradient the
/// correlation of `grad_out` with the input.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    geom: ConvGeom,
    grad_out: &[f64],
    need_input: bool,
    need_weight: bool,
) -> Result<ConvGrads> {
    let [n, o, ho, wo] = conv2d_output_shape(input.shape(), weight.shape(), geom)?;
    let [_, c, h, w] = input.shape();
    let k = weight.h();
    let ConvGeom {
        stride: s,
        padding: p,
        dilation: d,
    } = geom;
    let x_in = input.data();
    let wt = weight.data();
    let mut g_in = need_input.then(|| vec![0.0; input.len()]);
    let mut g_w = need_weight.then(|| vec![0.0; weight.len()]);
    let mut g_b = vec![0.0; o];
    for b in 0..n {
        for oc in 0..o {
            let g_plane = &grad_out[(b * o + oc) * ho * wo..][..ho * wo];
            g_b[oc] += g_plane.iter().sum::<f64>();
            for ic in 0..c {
                let in_off = (b * c + ic) * h * w;
                for u in 0..k {
                    let (y0, y1) = valid_range(ho, h, s, u * d, p);
                    for v in 0..k {
                        let widx = ((oc * c + ic) * k + u) * k + v;
                        let wv = wt[widx];
                        let (x0, x1) = valid_range(wo, w, s, v * d, p);
                        if x0 >= x1 {
                            continue;
                        }
                        let ix0 = x0 * s + v * d - p;
                        let mut acc_w = 0.0;
                        for y in y0..y1 {
                            let iy = y * s + u * d - p;
                            let g_row = &g_plane[y * wo + x0..y * wo + x1];
                            let row_start = in_off + iy * w + ix0;
                            if need_weight {
                                if s == 1 {
                                    acc_w += g_row
                                        .iter()
                                        .zip(&x_in[row_start..row_start + (x1 - x0)])
                                        .map(|(g, xv)| g * xv)
                                        .sum::<f64>();
                                } else {
                                    for (j, g) in g_row.iter().enumerate() {
                                        acc_w += g * x_in[row_start + j * s];
                                    }
                                }
                            }
                            if let Some(gi) = g_in.as_mut() {
                                if s == 1 {
                                    for (dst, g) in gi[row_start..row_start + (x1 - x0)].iter_mut().zip(g_row) {
                                        *dst += wv * g;
                                    }
                                } else {
                                    for (j, g) in g_row.iter().enumerate() {
                                        gi[row_start + j * s] += wv * g;
                                    }
                                }
                            }
                        }
                        if let Some(gw) = g_w.as_mut() {
                            gw[widx] += acc_w;
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    })
}

pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    if h * w == 0 {
        return Err(Error::dim("global_avg_pool", format!("empty spatial plane in {:?}", input.shape())));
    }
    let inv = 1.0 / (h * w) as f64;
    let data = (0..n * c)
        .map(|i| input.data()[i * h * w..(i + 1) * h * w].iter().sum::<f64>() * inv)
        .collect();
    Tensor::new([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward(input_shape: [usize; 4], grad_out: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = input_shape;
    let inv = 1.0 / (h * w) as f64;
    let mut g = Vec::with_capacity(n * c * h * w);
    for &go in &grad_out[..n * c] {
        g.extend(std::iter::repeat_n(go * inv, h * w));
    }
    g
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(sigmoid_scalar)
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

fn check_broadcast(op: &'static str, a: &Tensor, b: &Tensor) -> Result<bool> {
    let [n, c, _, _] = a.shape();
    if a.shape() == b.shape() {
        Ok(false)
    } else if b.shape() == [n, c, 1, 1] {
        Ok(true)
    } else {
        Err(Error::dim(
            op,
            format!(
                "cannot combine {:?} with {:?}; only equal shapes or (n,c,1,1) broadcasting",
                a.shape(),
                b.shape()
            ),
        ))
    }
}

/// `a (+|*) b`, with `b` either the same shape or `(n, c, 1, 1)` replicated over the plane.
pub fn elementwise(a: &Tensor, b: &Tensor, kind: ElementwiseKind) -> Result<Tensor> {
    let broadcast = check_broadcast("elementwise", a, b)?;
    let hw = a.h() * a.w();
    let f = |x: f64, y: f64| match kind {
        ElementwiseKind::Add => x + y,
        ElementwiseKind::Mul => x * y,
    };
    let data = if broadcast {
        a.data().iter().enumerate().map(|(i, &x)| f(x, b.data()[i / hw])).collect()
    } else {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    };
    Tensor::new(a.shape(), data)
}

/// Gradients of `elementwise` with respect to `a` and `b` (the latter reduced over
/// the plane when broadcast).
pub fn elementwise_backward(a: &Tensor, b: &Tensor, kind: ElementwiseKind, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let broadcast = a.shape() != b.shape();
    let hw = a.h() * a.w();
    let bi = |i: usize| if broadcast { i / hw } else { i };
    let mut ga = vec![0.0; a.len()];
    let mut gb = vec![0.0; b.len()];
    for (i, &g) in grad_out.iter().enumerate() {
        match kind {
            ElementwiseKind::Add => {
                ga[i] = g;
                gb[bi(i)] += g;
            }
            ElementwiseKind::Mul => {
                ga[i] = g * b.data()[bi(i)];
                gb[bi(i)] += g * a.data()[i];
            }
        }
    }
    (ga, gb)
}

fn crop_origin(input: &Tensor, size: usize) -> Result<(usize, usize)> {
    let (h, w) = (input.h(), input.w());
    if size == 0 || size > h || size > w {
        return Err(Error::dim(
            "center_crop",
            format!("crop {size} does not fit spatial extent {h}x{w}"),
        ));
    }
    Ok(((h - size) / 2, (w - size) / 2))
}

pub fn center_crop(input: &Tensor, size: usize) -> Result<Tensor> {
    let (y0, x0) = crop_origin(input, size)?;
    let [n, c, _, _] = input.shape();
    Ok(Tensor::from_fn([n, c, size, size], |b, ch, y, x| input.at(b, ch, y + y0, x + x0)))
}

pub fn center_crop_backward(input_shape: [usize; 4], size: usize, grad_out: &[f64]) -> Vec<f64> {
    let [n, c, h, w] = input_shape;
    let (y0, x0) = ((h - size) / 2, (w - size) / 2);
    let mut g = vec![0.0; n * c * h * w];
    for b in 0..n {
        for ch in 0..c {
            for y in 0..size {
                for x in 0..size {
                    g[((b * c + ch) * h + y + y0) * w + x + x0] = grad_out[((b * c + ch) * size + y) * size + x];
                }
            }
        }
    }
    g
}

/// Two-class softmax across the channel axis at every spatial point.
pub fn softmax_channelwise(input: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.shape();
    if c != 2 {
        return Err(Error::dim("softmax_channelwise", format!("expected 2 channels, got {:?}", input.shape())));
    }
    let hw = h * w;
    let mut out = vec![0.0; input.len()];
    let d = input.data();
    for b in 0..n {
        let base = b * 2 * hw;
        for i in 0..hw {
            let (z0, z1) = (d[base + i], d[base + hw + i]);
            let m = z0.max(z1);
            let (e0, e1) = ((z0 - m).exp(), (z1 - m).exp());
            let s = e0 + e1;
            out[base + i] = e0 / s;
            out[base + hw + i] = e1 / s;
        }
    }
    Tensor::new(input.shape(), out)
}

pub fn softmax_channelwise_backward(probs: &Tensor, grad_out: &[f64]) -> Vec<f64> {
    let [n, _, h, w] = probs.shape();
    let hw = h * w;
    let p = probs.data();
    let mut g = vec![0.0; probs.len()];
    for b in 0..n {
        let base = b * 2 * hw;
        for i in 0..hw {
            let (i0, i1) = (base + i, base + hw + i);
            let dot = grad_out[i0] * p[i0] + grad_out[i1] * p[i1];
            g[i0] = p[i0] * (grad_out[i0] - dot);
            g[i1] = p[i1] * (grad_out[i1] - dot);
        }
    }
    g
}

/// Per-channel valid correlation of `template` over `search`; no channel mixing.
pub fn dw_xcorr(template: &Tensor, search: &Tensor) -> Result<Tensor> {
    let [tn, tc, th, tw] = template.shape();
    let [sn, sc, sh, sw] = search.shape();
    if tn != sn || tc != sc {
        return Err(Error::dim(
            "dw_xcorr",
            format!("template {:?} and search {:?} differ in batch or channels", template.shape(), search.shape()),
        ));
    }
    if th > sh || tw > sw || th == 0 || tw == 0 {
        return Err(Error::dim(
            "dw_xcorr",
            format!("template {:?} larger than search {:?}", template.shape(), search.shape()),
        ));
    }
    let (ho, wo) = (sh - th + 1, sw - tw + 1);
    let mut out = vec![0.0; tn * tc * ho * wo];
    for plane in 0..tn * tc {
        let t = &template.data()[plane * th * tw..][..th * tw];
        let s = &search.data()[plane * sh * sw..][..sh * sw];
        let o = &mut out[plane * ho * wo..][..ho * wo];
        for u in 0..th {
            for v in 0..tw {
                let tv = t[u * tw + v];
                for y in 0..ho {
                    let row = &s[(y + u) * sw + v..][..wo];
                    for (acc, &sv) in o[y * wo..(y + 1) * wo].iter_mut().zip(row) {
                        *acc += tv * sv;
                    }
                }
            }
        }
    }
    Tensor::new([tn, tc, ho, wo], out)
}

/// Returns `(grad_template, grad_search)`.
pub fn dw_xcorr_backward(template: &Tensor, search: &Tensor, grad_out: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let [tn, tc, th, tw] = template.shape();
    let [_, _, sh, sw] = search.shape();
    let (ho, wo) = (sh - th + 1, sw - tw + 1);
    let mut gt = vec![0.0; template.len()];
    let mut gs = vec![0.0; search.len()];
    for plane in 0..tn * tc {
        let t = &template.data()[plane * th * tw..][..th * tw];
        let s = &search.data()[plane * sh * sw..][..sh * sw];
        let g = &grad_out[plane * ho * wo..][..ho * wo];
        let gtp = &mut gt[plane * th * tw..][..th * tw];
        let gsp = &mut gs[plane * sh * sw..][..sh * sw];
        for u in 0..th {
            for v in 0..tw {
                let tv = t[u * tw + v];
                let mut acc = 0.0;
                for y in 0..ho {
                    let start = (y + u) * sw + v;
                    let g_row = &g[y * wo..(y + 1) * wo];
                    acc += g_row.iter().zip(&s[start..start + wo]).map(|(a, b)| a * b).sum::<f64>();
                    for (dst, gv) in gsp[start..start + wo].iter_mut().zip(g_row) {
                        *dst += tv * gv;
                    }
                }
                gtp[u * tw + v] += acc;
            }
        }
    }
    (gt, gs)
}

/// Numerically stable softmax of a vector.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// `Σ_l softmax(logits)_l · levels[l]`.
pub fn level_fusion(levels: &[&Tensor], logits: &[f64]) -> Result<Tensor> {
    let first = levels
        .first()
        .ok_or_else(|| Error::dim("level_fusion", "no levels to fuse"))?;
    if logits.len() != levels.len() {
        return Err(Error::dim(
            "level_fusion",
            format!("{} logits for {} levels", logits.len(), levels.len()),
        ));
    }
    if let Some(bad) = levels.iter().find(|l| l.shape() != first.shape()) {
        return Err(Error::dim(
            "level_fusion",
            format!("level shapes differ: {:?} vs {:?}", first.shape(), bad.shape()),
        ));
    }
    let weights = softmax(logits);
    let mut out = vec![0.0; first.len()];
    for (level, &wl) in levels.iter().zip(&weights) {
        for (acc, &v) in out.iter_mut().zip(level.data()) {
            *acc += wl * v;
        }
    }
    Tensor::new(first.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn naive_conv(input: &Tensor, weight: &Tensor, bias: &[f64], g: ConvGeom) -> Tensor {
        let [n, c, h, w] = input.shape();
        let [o, _, k, _] = weight.shape();
        let ho = (h + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
        let wo = (w + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
        Tensor::from_fn([n, o, ho, wo], |b, oc, y, x| {
            let mut acc = bias[oc];
            for i in 0..c {
                for u in 0..k {
                    for v in 0..k {
                        let iy = (y * g.stride + u * g.dilation) as isize - g.padding as isize;
                        let ix = (x * g.stride + v * g.dilation) as isize - g.padding as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += weight.at(oc, i, u, v) * input.at(b, i, iy as usize, ix as usize);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_identity_and_sum_of_ones() {
        let out = conv2d_forward(&Tensor::scalar(5.0), &Tensor::scalar(1.0), Some(&[0.0]), ConvGeom::UNIT).unwrap();
        assert_eq!(out.data(), &[5.0]);
        let out = conv2d_forward(&Tensor::full([1, 1, 3, 3], 1.0), &Tensor::full([1, 1, 3, 3], 1.0), None, ConvGeom::UNIT)
            .unwrap();
        assert_eq!(out.shape(), [1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random([2, 3, 8, 8], &mut rng);
        let weight = random([4, 3, 3, 3], &mut rng);
        let bias = vec![0.1, -0.2, 0.3, 0.0];
        for geom in [ConvGeom::UNIT, ConvGeom::new(1, 1), ConvGeom { stride: 1, padding: 2, dilation: 2 }] {
            let fast = conv2d_forward(&input, &weight, Some(&bias), geom).unwrap();
            let slow = naive_conv(&input, &weight, &bias, geom);
            assert!(fast.max_abs_diff(&slow) < 1e-12, "{geom:?}");
        }
        let input = random([1, 2, 9, 9], &mut rng);
        let weight = random([3, 2, 3, 3], &mut rng);
        let geom = ConvGeom::new(2, 1);
        let fast = conv2d_forward(&input, &weight, Some(&[0.0; 3]), geom).unwrap();
        assert!(fast.max_abs_diff(&naive_conv(&input, &weight, &[0.0; 3], geom)) < 1e-12);
    }

    #[test]
    fn conv_reports_both_shapes_on_mismatch() {
        let err = conv2d_forward(&Tensor::zeros([1, 2, 4, 4]), &Tensor::zeros([1, 3, 3, 3]), None, ConvGeom::UNIT)
            .unwrap_err()
            .to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn pooling_examples() {
        let t = Tensor::full([2, 3, 4, 5], 3.5);
        assert!(global_avg_pool(&t).unwrap().data().iter().all(|&v| v == 3.5));
        let t = Tensor::new([1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        assert_eq!(global_avg_pool(&t).unwrap().data(), &[4.0]);
        assert!(global_avg_pool(&Tensor::zeros([1, 2, 3, 3])).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(global_avg_pool(&Tensor::zeros([1, 2, 0, 3])).is_err());
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((sigmoid_scalar(2.0) - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-15);
        for x in [-30.0, -2.5, 0.3, 4.0, 700.0] {
            assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
        }
        assert!(sigmoid_scalar(-800.0) >= 0.0 && sigmoid_scalar(800.0) <= 1.0);
    }

    #[test]
    fn elementwise_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random([1, 2, 3, 3], &mut rng);
        let ones = Tensor::full([1, 2, 1, 1], 1.0);
        assert_eq!(elementwise(&a, &ones, ElementwiseKind::Mul).unwrap(), a);
        assert_eq!(elementwise(&a, &Tensor::zeros([1, 2, 3, 3]), ElementwiseKind::Add).unwrap(), a);
        let wts = Tensor::new([1, 2, 1, 1], vec![0.5, 2.0]).unwrap();
        let out = elementwise(&a, &wts, ElementwiseKind::Mul).unwrap();
        for y in 0..3 {
            for x in 0..3 {
                assert_eq!(out.at(0, 0, y, x), a.at(0, 0, y, x) * 0.5);
                assert_eq!(out.at(0, 1, y, x), a.at(0, 1, y, x) * 2.0);
            }
        }
        assert!(elementwise(&a, &Tensor::zeros([1, 2, 3, 1]), ElementwiseKind::Add).is_err());
    }

    #[test]
    fn center_crop_examples() {
        let t = Tensor::from_fn([1, 1, 7, 7], |_, _, y, x| (y * 7 + x) as f64);
        assert_eq!(center_crop(&t, 7).unwrap(), t);
        let rows = Tensor::from_fn([1, 1, 9, 9], |_, _, y, _| y as f64);
        let c = center_crop(&rows, 7).unwrap();
        for y in 0..7 {
            assert_eq!(c.at(0, 0, y, 3), (y + 1) as f64);
        }
        let big = Tensor::from_fn([1, 1, 15, 15], |_, _, y, x| (y * 100 + x) as f64);
        let c = center_crop(&big, 7).unwrap();
        assert_eq!(c.at(0, 0, 0, 0), 404.0);
        assert_eq!(c.at(0, 0, 6, 6), 1010.0);
        assert!(center_crop(&big, 16).is_err());
    }

    #[test]
    fn softmax_examples() {
        let t = Tensor::new([1, 2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert_eq!(softmax_channelwise(&t).unwrap().data(), &[0.5, 0.5]);
        let a = softmax_channelwise(&Tensor::new([1, 2, 1, 1], vec![0.7, 1.9]).unwrap()).unwrap();
        let b = softmax_channelwise(&Tensor::new([1, 2, 1, 1], vec![100.7, 101.9]).unwrap()).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
        let p = softmax_channelwise(&Tensor::new([1, 2, 1, 1], vec![1.0, 3.0]).unwrap()).unwrap();
        let e2 = 2.0f64.exp();
        assert!((p.data()[0] - 1.0 / (1.0 + e2)).abs() < 1e-15);
        assert!((p.data()[1] - e2 / (1.0 + e2)).abs() < 1e-15);
        assert!(softmax_channelwise(&Tensor::zeros([1, 3, 1, 1])).is_err());
    }
}
