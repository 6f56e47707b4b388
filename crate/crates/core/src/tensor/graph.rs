use super::ops::{self, ElementwiseKind};
use super::{ConvGeom, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    GlobalAvgPool(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Scale(Var, f64),
    Elementwise(Var, Var, ElementwiseKind),
    CenterCrop(Var, usize),
    SoftmaxChannelwise(Var),
    DwXcorr(Var, Var),
    LevelFusion {
        levels: Vec<Var>,
        logits: Var,
        weights: Vec<f64>,
    },
    Sum(Var),
    /// Scalar whose derivative with respect to each input was computed alongside its value.
    ScalarWithGrads {
        inputs: Vec<Var>,
        local: Vec<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Append-only tape. Nodes are stored in creation order, which is a
/// topological order, so backward is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

#[cfg(test)]
thread_local! {
    /// Test-only fault injection: corrupts the sigmoid backward rule.
    pub(crate) static CORRUPT_SIGMOID_BACKWARD: std::cell::Cell<bool> = const { std::cell::Cell::new(false) };
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` target with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let out = ops::conv2d_forward(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b).data()),
            geom,
        )?;
        let rg = self.needs(input) || self.needs(weight) || bias.is_some_and(|b| self.needs(b));
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::sigmoid(self.value(x));
        let rg = self.needs(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::relu(self.value(x));
        let rg = self.needs(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::exp);
        let rg = self.needs(x);
        self.push(out, Op::Exp(x), rg)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let out = self.value(x).map(|v| v * k);
        let rg = self.needs(x);
        self.push(out, Op::Scale(x, k), rg)
    }

    pub fn elementwise(&mut self, a: Var, b: Var, kind: ElementwiseKind) -> Result<Var> {
        let out = ops::elementwise(self.value(a), self.value(b), kind)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Elementwise(a, b, kind), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, ElementwiseKind::Mul)
    }

    pub fn center_crop(&mut self, x: Var, size: usize) -> Result<Var> {
        let out = ops::center_crop(self.value(x), size)?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::CenterCrop(x, size), rg))
    }

    pub fn softmax_channelwise(&mut self, x: Var) -> Result<Var> {
        let out = ops::softmax_channelwise(self.value(x))?;
        let rg = self.needs(x);
        Ok(self.push(out, Op::SoftmaxChannelwise(x), rg))
    }

    pub fn dw_xcorr(&mut self, template: Var, search: Var) -> Result<Var> {
        let out = ops::dw_xcorr(self.value(template), self.value(search))?;
        let rg = self.needs(template) || self.needs(search);
        Ok(self.push(out, Op::DwXcorr(template, search), rg))
    }

    /// Softmax-weighted sum of equally shaped levels; `logits` holds one value per level.
    pub fn level_fusion(&mut self, levels: &[Var], logits: Var) -> Result<Var> {
        let refs: Vec<&Tensor> = levels.iter().map(|&l| self.value(l)).collect();
        let out = ops::level_fusion(&refs, self.value(logits).data())?;
        let weights = ops::softmax(self.value(logits).data());
        let rg = self.needs(logits) || levels.iter().any(|&l| self.needs(l));
        Ok(self.push(
            out,
            Op::LevelFusion {
                levels: levels.to_vec(),
                logits,
                weights,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        let rg = self.needs(x);
        self.push(Tensor::scalar(total), Op::Sum(x), rg)
    }

    /// Records a scalar computed outside the tape together with its gradient
    /// with respect to each input (`local[i]` has the shape of `inputs[i]`).
    pub fn scalar_with_grads(&mut self, inputs: &[Var], value: f64, local: Vec<Vec<f64>>) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(Error::Usage(format!(
                "{} local gradients for {} inputs",
                local.len(),
                inputs.len()
            )));
        }
        for (&v, g) in inputs.iter().zip(&local) {
            if g.len() != self.value(v).len() {
                return Err(Error::dim(
                    "scalar_with_grads",
                    format!("gradient of length {} for input {:?}", g.len(), self.value(v).shape()),
                ));
            }
        }
        let rg = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::scalar(value),
            Op::ScalarWithGrads {
                inputs: inputs.to_vec(),
                local,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar. Leaf gradients land in the leaves' grad slots;
    /// leaves that do not require gradients are left untouched.
    pub fn backward(&mut self, output: Var) -> Result<()> {
        if self.value(output).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar output, got shape {:?}",
                self.value(output).shape()
            )));
        }
        for node in &mut self.nodes {
            node.value.clear_grad();
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {
                    self.nodes[idx].value.set_grad(g)?;
                }
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                } => {
                    let cg = ops::conv2d_backward(
                        self.value(*input),
                        self.value(*weight),
                        *geom,
                        &g,
                        self.needs(*input),
                        self.needs(*weight),
                    )?;
                    if let Some(gi) = cg.input {
                        accumulate(&mut grads[input.0], gi);
                    }
                    if let Some(gw) = cg.weight {
                        accumulate(&mut grads[weight.0], gw);
                    }
                    if let Some(b) = bias.filter(|b| self.needs(*b)) {
                        accumulate(&mut grads[b.0], cg.bias);
                    }
                }
                Op::GlobalAvgPool(x) => {
                    let gi = ops::global_avg_pool_backward(self.value(*x).shape(), &g);
                    accumulate(&mut grads[x.0], gi);
                }
                Op::Sigmoid(x) => {
                    #[cfg(test)]
                    let corrupt = CORRUPT_SIGMOID_BACKWARD.with(|c| c.get());
                    #[cfg(not(test))]
                    let corrupt = false;
                    let y = node.value.data();
                    let gi = g
                        .iter()
                        .zip(y)
                        .map(|(g, &y)| if corrupt { g * y } else { g * y * (1.0 - y) })
                        .collect();
                    accumulate(&mut grads[x.0], gi);
                }
                Op::Relu(x) => {
                    let xin = self.value(*x).data();
                    let gi = g.iter().zip(xin).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect();
                    accumulate(&mut grads[x.0], gi);
                }
                Op::Exp(x) => {
                    let gi = g.iter().zip(node.value.data()).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads[x.0], gi);
                }
                Op::Scale(x, k) => {
                    let gi = g.iter().map(|g| g * k).collect();
                    accumulate(&mut grads[x.0], gi);
                }
                Op::Elementwise(a, b, kind) => {
                    let (ga, gb) = ops::elementwise_backward(self.value(*a), self.value(*b), *kind, &g);
                    if self.needs(*a) {
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::CenterCrop(x, size) => {
                    let gi = ops::center_crop_backward(self.value(*x).shape(), *size, &g);
                    accumulate(&mut grads[x.0], gi);
                }
                Op::SoftmaxChannelwise(x) => {
                    let gi = ops::softmax_channelwise_backward(&node.value, &g);
                    accumulate(&mut grads[x.0], gi);
                }
                Op::DwXcorr(t, s) => {
                    let (gt, gs) = ops::dw_xcorr_backward(self.value(*t), self.value(*s), &g);
                    if self.needs(*t) {
                        accumulate(&mut grads[t.0], gt);
                    }
                    if self.needs(*s) {
                        accumulate(&mut grads[s.0], gs);
                    }
                }
                Op::LevelFusion {
                    levels,
                    logits,
                    weights,
                } => {
                    // d/dw_l = <g, level_l>; softmax Jacobian maps that onto the logits.
                    let dots: Vec<f64> = levels
                        .iter()
                        .map(|l| self.value(*l).data().iter().zip(&g).map(|(a, b)| a * b).sum())
                        .collect();
                    let mean: f64 = dots.iter().zip(weights).map(|(d, w)| d * w).sum();
                    let g_logits: Vec<f64> = weights.iter().zip(&dots).map(|(w, d)| w * (d - mean)).collect();
                    let updates: Vec<(Var, Vec<f64>)> = levels
                        .iter()
                        .zip(weights)
                        .filter(|(l, _)| self.needs(**l))
                        .map(|(l, w)| (*l, g.iter().map(|v| v * w).collect()))
                        .collect();
                    let logits = *logits;
                    for (l, gl) in updates {
                        accumulate(&mut grads[l.0], gl);
                    }
                    if self.needs(logits) {
                        accumulate(&mut grads[logits.0], g_logits);
                    }
                }
                Op::Sum(x) => {
                    let gi = vec![g[0]; self.value(*x).len()];
                    accumulate(&mut grads[x.0], gi);
                }
                Op::ScalarWithGrads { inputs, local } => {
                    let updates: Vec<(Var, Vec<f64>)> = inputs
                        .iter()
                        .zip(local)
                        .filter(|(v, _)| self.needs(**v))
                        .map(|(v, l)| (*v, l.iter().map(|x| x * g[0]).collect()))
                        .collect();
                    for (v, gl) in updates {
                        accumulate(&mut grads[v.0], gl);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn([1, 2, 2, 2], |_, c, y, x| (c + y + x) as f64));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([1, 3, 2, 2]));
        let y = g.sigmoid(x);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::new();
        let x = g.param(Tensor::zeros([1, 1, 2, 2]));
        let y = g.sigmoid(x);
        assert!(matches!(g.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([1, 1, 2, 2], 2.0));
        let w = g.param(Tensor::full([1, 1, 1, 1], 3.0));
        let y = g.conv2d(x, w, None, ConvGeom::UNIT).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap(), &[8.0]);
    }

    #[test]
    fn shared_input_accumulates() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([1, 1, 1, 1], 3.0));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[6.0]);
    }
}
