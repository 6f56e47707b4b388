//! Helpers shared by the integration tests: naive-loop oracles and fixtures.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thn_core::tensor::Tensor;
use thn_core::BBox;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: [usize; 4]) -> Tensor {
    Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
}

/// Direct six-loop convolution with zero padding.
pub fn naive_conv(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor {
    let [n, c, h, w] = input.shape();
    let [o, _, k, _] = weight.shape();
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (w + 2 * pad - k) / stride + 1;
    Tensor::from_fn([n, o, ho, wo], |b, oc, y, x| {
        let mut acc = bias.map_or(0.0, |bs| bs[oc]);
        for ic in 0..c {
            for u in 0..k {
                for v in 0..k {
                    let iy = (y * stride + u) as isize - pad as isize;
                    let ix = (x * stride + v) as isize - pad as isize;
                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                        acc += input.at(b, ic, iy as usize, ix as usize) * weight.at(oc, ic, u, v);
                    }
                }
            }
        }
        acc
    })
}

/// Per-channel valid correlation written as plain loops.
pub fn naive_dw_xcorr(template: &Tensor, search: &Tensor) -> Tensor {
    let [n, c, th, tw] = template.shape();
    let [_, _, sh, sw] = search.shape();
    Tensor::from_fn([n, c, sh - th + 1, sw - tw + 1], |b, ch, y, x| {
        let mut acc = 0.0;
        for u in 0..th {
            for v in 0..tw {
                acc += template.at(b, ch, u, v) * search.at(b, ch, y + u, x + v);
            }
        }
        acc
    })
}

/// IoU by counting cells of a `side x side` grid whose centers fall in each box.
pub fn raster_iou(a: &BBox, b: &BBox, side: usize) -> f64 {
    let inside = |bx: &BBox, x: f64, y: f64| x >= bx.left() && x < bx.right() && y >= bx.top() && y < bx.bottom();
    let (mut inter, mut union) = (0usize, 0usize);
    for gy in 0..side {
        for gx in 0..side {
            let (x, y) = (gx as f64 + 0.5, gy as f64 + 0.5);
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
    }
    inter as f64 / union as f64
}

/// Random integer box fully inside a `side x side` grid.
pub fn random_int_box(rng: &mut impl Rng, side: usize) -> BBox {
    let w = rng.random_range(1..=side / 2);
    let h = rng.random_range(1..=side / 2);
    let x = rng.random_range(0..=side - w);
    let y = rng.random_range(0..=side - h);
    BBox::from_corner(x as f64, y as f64, w as f64, h as f64)
}
