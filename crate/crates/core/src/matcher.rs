//! Similarity matching: per-level channel reduction (optionally gated by the
//! target-highlight channel attention), depth-wise cross-correlation of the
//! template against the search features, and softmax-weighted level fusion.

use rand::Rng;

use crate::binder::Binder;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{ops, ConvGeom, ConvParams, Graph, Tensor, Var};

pub const LEVELS: usize = 3;
pub const FUSION_LOGITS: &str = "matcher.fusion.logits";

#[derive(Clone, Debug, PartialEq)]
pub struct MatcherConfig {
    /// Channels after reduction, shared by every level and branch.
    pub c_out: usize,
    /// Side of the centered template window kept before correlation.
    pub template_crop: usize,
    /// Gate the reduction with channel attention; off means a plain 1x1 reduction.
    pub thm: bool,
    /// One set of attention weights for both branches of a level.
    pub share_thm: bool,
    /// Squeeze width is `c_in / squeeze_ratio`.
    pub squeeze_ratio: usize,
    /// Initial bias of the excite layer; the gates start near `sigmoid(gate_bias)`.
    pub gate_bias: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        Self {
            c_out: 64,
            template_crop: 7,
            thm: true,
            share_thm: false,
            squeeze_ratio: 8,
            gate_bias: 3.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Template,
    Search,
}

impl MatcherConfig {
    pub fn prefix(&self, level: usize, branch: Branch) -> String {
        let b = match (self.share_thm, branch) {
            (true, _) => "shared",
            (false, Branch::Template) => "template",
            (false, Branch::Search) => "search",
        };
        format!("matcher.level{level}.{b}")
    }

    pub fn squeeze_channels(&self, c_in: usize) -> usize {
        (c_in / self.squeeze_ratio).max(1)
    }

    pub fn init(&self, store: &mut ParamStore, level_channels: [usize; 3], rng: &mut impl Rng) {
        for (level, &c_in) in level_channels.iter().enumerate() {
            let branches: &[Branch] = if self.share_thm {
                &[Branch::Template]
            } else {
                &[Branch::Template, Branch::Search]
            };
            for &branch in branches {
                let prefix = self.prefix(level, branch);
                store.init_conv(&format!("{prefix}.reduce"), self.c_out, c_in, 1, rng);
                if self.thm {
                    let mid = self.squeeze_channels(c_in);
                    store.init_conv(&format!("{prefix}.squeeze"), mid, c_in, 1, rng);
                    store.init_conv(&format!("{prefix}.excite"), self.c_out, mid, 1, rng);
                    store.insert(
                        format!("{prefix}.excite.bias"),
                        Tensor::full([self.c_out, 1, 1, 1], self.gate_bias),
                    );
                }
            }
        }
        store.insert(FUSION_LOGITS, Tensor::zeros([LEVELS, 1, 1, 1]));
    }
}

/// Sigmoid channel gates `(n, c_out, 1, 1)`, each strictly inside (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelWeights {
    pub values: Tensor,
}

/// The three 1x1 convolutions of one attention-gated reduction.
#[derive(Clone, Debug, PartialEq)]
pub struct ThmParams {
    pub reduce: ConvParams,
    pub squeeze: ConvParams,
    pub excite: ConvParams,
}

impl ThmParams {
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let conv = |name: &str| -> Result<ConvParams> {
            let w = store.get(&format!("{prefix}.{name}.weight"))?.clone();
            let b = store.get(&format!("{prefix}.{name}.bias"))?.data().to_vec();
            ConvParams::new(w, Some(b), ConvGeom::UNIT)
        };
        Ok(Self {
            reduce: conv("reduce")?,
            squeeze: conv("squeeze")?,
            excite: conv("excite")?,
        })
    }

    pub fn into_store(self, prefix: &str) -> Result<ParamStore> {
        let mut store = ParamStore::new();
        for (name, p) in [("reduce", self.reduce), ("squeeze", self.squeeze), ("excite", self.excite)] {
            let c_out = p.c_out();
            store.insert(format!("{prefix}.{name}.weight"), p.weight);
            let bias = p.bias.unwrap_or_else(|| vec![0.0; c_out]);
            store.insert(format!("{prefix}.{name}.bias"), Tensor::new([c_out, 1, 1, 1], bias)?);
        }
        Ok(store)
    }

    fn check(&self, f: &Tensor) -> Result<()> {
        if f.c() != self.reduce.c_in() || f.c() != self.squeeze.c_in() {
            return Err(Error::dim(
                "thm",
                format!(
                    "feature {:?} does not match c_in {} of the reduction",
                    f.shape(),
                    self.reduce.c_in()
                ),
            ));
        }
        if self.excite.c_out() != self.reduce.c_out() || self.excite.c_in() != self.squeeze.c_out() {
            return Err(Error::dim("thm", "squeeze/excite/reduce channel counts disagree"));
        }
        Ok(())
    }
}

/// `sigmoid(excite(relu(squeeze(avg(f)))))` recorded on `g`.
pub fn thm_weights_on(g: &mut Graph, binder: &mut Binder, prefix: &str, f: Var) -> Result<Var> {
    let pooled = g.global_avg_pool(f)?;
    let (sw, sb) = binder.conv(g, &format!("{prefix}.squeeze"))?;
    let squeezed = g.conv2d(pooled, sw, Some(sb), ConvGeom::UNIT)?;
    let squeezed = g.relu(squeezed);
    let (ew, eb) = binder.conv(g, &format!("{prefix}.excite"))?;
    let excited = g.conv2d(squeezed, ew, Some(eb), ConvGeom::UNIT)?;
    Ok(g.sigmoid(excited))
}

/// `weights(f) * reduce(f)`, or the plain 1x1 reduction when `thm` is false.
pub fn reduce_on(g: &mut Graph, binder: &mut Binder, prefix: &str, thm: bool, f: Var) -> Result<Var> {
    let (rw, rb) = binder.conv(g, &format!("{prefix}.reduce"))?;
    let reduced = g.conv2d(f, rw, Some(rb), ConvGeom::UNIT)?;
    if !thm {
        return Ok(reduced);
    }
    let weights = thm_weights_on(g, binder, prefix, f)?;
    g.mul(reduced, weights)
}

fn thm_store(params: &ThmParams) -> Result<ParamStore> {
    params.clone().into_store("thm")
}

pub fn thm_weights(f: &Tensor, params: &ThmParams) -> Result<ChannelWeights> {
    params.check(f)?;
    let store = thm_store(params)?;
    let mut g = Graph::new();
    let mut binder = Binder::frozen(&store);
    let x = g.constant(f.clone());
    let w = thm_weights_on(&mut g, &mut binder, "thm", x)?;
    Ok(ChannelWeights {
        values: g.value(w).clone(),
    })
}

pub fn thm_reduce(f: &Tensor, params: &ThmParams) -> Result<Tensor> {
    params.check(f)?;
    let store = thm_store(params)?;
    let mut g = Graph::new();
    let mut binder = Binder::frozen(&store);
    let x = g.constant(f.clone());
    let y = reduce_on(&mut g, &mut binder, "thm", true, x)?;
    Ok(g.value(y).clone())
}

pub fn dw_xcorr(template: &Tensor, search: &Tensor) -> Result<Tensor> {
    ops::dw_xcorr(template, search)
}

/// Reduces one template level and keeps its centered window.
pub fn template_level_on(g: &mut Graph, binder: &mut Binder, cfg: &MatcherConfig, level: usize, f: Var) -> Result<Var> {
    let reduced = reduce_on(g, binder, &cfg.prefix(level, Branch::Template), cfg.thm, f)?;
    let size = g.value(reduced).h();
    if size == cfg.template_crop {
        Ok(reduced)
    } else {
        g.center_crop(reduced, cfg.template_crop)
    }
}

pub fn search_level_on(g: &mut Graph, binder: &mut Binder, cfg: &MatcherConfig, level: usize, f: Var) -> Result<Var> {
    reduce_on(g, binder, &cfg.prefix(level, Branch::Search), cfg.thm, f)
}

/// Per-level responses and their fusion, recorded on `g`.
pub struct ResponseVars {
    pub levels: Vec<Var>,
    pub fused: Var,
}

/// Correlates already-reduced template and search levels and fuses them.
/// Each response is divided by the square root of the template area so its
/// scale does not grow with the template window.
pub fn correlate_on(g: &mut Graph, binder: &mut Binder, templates: &[Var], searches: &[Var]) -> Result<ResponseVars> {
    if templates.len() != searches.len() || templates.is_empty() {
        return Err(Error::dim(
            "match",
            format!("{} template levels vs {} search levels", templates.len(), searches.len()),
        ));
    }
    let levels = templates
        .iter()
        .zip(searches)
        .map(|(&t, &s)| {
            let area = (g.value(t).h() * g.value(t).w()) as f64;
            let r = g.dw_xcorr(t, s)?;
            Ok(g.scale(r, area.sqrt().recip()))
        })
        .collect::<Result<Vec<_>>>()?;
    let logits = binder.var(g, FUSION_LOGITS)?;
    let used = if levels.len() == LEVELS {
        logits
    } else {
        let first: Vec<f64> = g.value(logits).data()[..levels.len()].to_vec();
        let n = first.len();
        g.constant(Tensor::new([n, 1, 1, 1], first)?)
    };
    let fused = g.level_fusion(&levels, used)?;
    Ok(ResponseVars { levels, fused })
}

/// Template/search level pairs through reduction, correlation and fusion.
pub fn match_on(
    g: &mut Graph,
    binder: &mut Binder,
    cfg: &MatcherConfig,
    template: &[Var; 3],
    search: &[Var; 3],
) -> Result<ResponseVars> {
    let mut t = Vec::with_capacity(LEVELS);
    let mut s = Vec::with_capacity(LEVELS);
    for level in 0..LEVELS {
        t.push(template_level_on(g, binder, cfg, level, template[level])?);
        s.push(search_level_on(g, binder, cfg, level, search[level])?);
    }
    correlate_on(g, binder, &t, &s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResponseMap {
    pub levels: Vec<Tensor>,
    pub fused: Tensor,
}

/// Inference-only matching of two pyramids.
pub fn match_pyramids(
    params: &ParamStore,
    cfg: &MatcherConfig,
    template: &crate::backbone::FeaturePyramid,
    search: &crate::backbone::FeaturePyramid,
) -> Result<ResponseMap> {
    let mut g = Graph::new();
    let mut binder = Binder::frozen(params);
    let t = template.levels.clone().map(|l| g.constant(l));
    let s = search.levels.clone().map(|l| g.constant(l));
    let r = match_on(&mut g, &mut binder, cfg, &t, &s)?;
    Ok(ResponseMap {
        levels: r.levels.iter().map(|&v| g.value(v).clone()).collect(),
        fused: g.value(r.fused).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_fn(shape, |_, _, _, _| rng.random_range(-1.0..1.0))
    }

    fn random_thm(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> ThmParams {
        let conv = |o, i, rng: &mut ChaCha8Rng| {
            let w = random([o, i, 1, 1], rng);
            let b = (0..o).map(|_| rng.random_range(-0.5..0.5)).collect();
            ConvParams::new(w, Some(b), ConvGeom::UNIT).unwrap()
        };
        let mid = (c_in / 8).max(1);
        ThmParams {
            reduce: conv(c_out, c_in, rng),
            squeeze: conv(mid, c_in, rng),
            excite: conv(c_out, mid, rng),
        }
    }

    fn zero_biases(p: &mut ThmParams) {
        for c in [&mut p.reduce, &mut p.squeeze, &mut p.excite] {
            c.bias = Some(vec![0.0; c.c_out()]);
        }
    }

    #[test]
    fn zero_input_gives_half_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = random_thm(16, 8, &mut rng);
        zero_biases(&mut p);
        let w = thm_weights(&Tensor::zeros([1, 16, 5, 5]), &p).unwrap();
        assert_eq!(w.values.shape(), [1, 8, 1, 1]);
        assert!(w.values.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn weights_strictly_inside_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_thm(16, 8, &mut rng);
        let f = random([2, 16, 4, 4], &mut rng).map(|v| v * 50.0);
        let w = thm_weights(&f, &p).unwrap();
        assert!(w.values.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn weights_match_manual_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = random_thm(16, 8, &mut rng);
        let f = random([1, 16, 6, 6], &mut rng);
        let pooled = ops::global_avg_pool(&f).unwrap();
        let sq = ops::relu(&ops::conv2d(&pooled, &p.squeeze).unwrap());
        let manual = ops::sigmoid(&ops::conv2d(&sq, &p.excite).unwrap());
        assert!(thm_weights(&f, &p).unwrap().values.max_abs_diff(&manual) < 1e-15);
    }

    #[test]
    fn saturated_gate_is_plain_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = random_thm(16, 8, &mut rng);
        p.excite.weight = Tensor::zeros(p.excite.weight.shape());
        p.excite.bias = Some(vec![50.0; 8]);
        let f = random([1, 16, 5, 5], &mut rng);
        let plain = ops::conv2d(&f, &p.reduce).unwrap();
        assert!(thm_reduce(&f, &p).unwrap().max_abs_diff(&plain) < 1e-9);
    }

    #[test]
    fn half_gate_halves_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut p = random_thm(16, 8, &mut rng);
        zero_biases(&mut p);
        let f = Tensor::zeros([1, 16, 5, 5]);
        let plain = ops::conv2d(&f, &p.reduce).unwrap().map(|v| v * 0.5);
        assert!(thm_reduce(&f, &p).unwrap().max_abs_diff(&plain) < 1e-15);
        // Nonzero reduction bias makes the halving visible on a zero input.
        p.reduce.bias = Some((0..8).map(|i| i as f64 - 3.0).collect());
        let plain = ops::conv2d(&f, &p.reduce).unwrap().map(|v| v * 0.5);
        assert!(thm_reduce(&f, &p).unwrap().max_abs_diff(&plain) < 1e-15);
    }

    #[test]
    fn channel_mismatch_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = random_thm(16, 8, &mut rng);
        assert!(matches!(thm_weights(&Tensor::zeros([1, 15, 3, 3]), &p), Err(Error::Dimension { .. })));
    }

    #[test]
    fn xcorr_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = random([1, 3, 9, 9], &mut rng);
        let zero = dw_xcorr(&Tensor::zeros([1, 3, 3, 3]), &s).unwrap();
        assert_eq!(zero.shape(), [1, 3, 7, 7]);
        assert!(zero.data().iter().all(|&v| v == 0.0));
        assert!(dw_xcorr(&Tensor::zeros([1, 3, 10, 3]), &s).is_err());

        let t = Tensor::from_fn([1, 2, 3, 3], |_, c, y, x| (1 + c + y * 3 + x) as f64);
        let planted = Tensor::from_fn([1, 2, 12, 12], |_, c, y, x| {
            if (3..6).contains(&y) && (5..8).contains(&x) {
                t.at(0, c, y - 3, x - 5)
            } else {
                0.0
            }
        });
        let r = dw_xcorr(&t, &planted).unwrap();
        for c in 0..2 {
            let plane = r.plane(0, c);
            let (arg, _) = plane
                .iter()
                .enumerate()
                .fold((0, f64::MIN), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
            assert_eq!((arg / r.w(), arg % r.w()), (3, 5));
        }
    }

    #[test]
    fn fusion_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let levels: Vec<Tensor> = (0..3).map(|_| random([1, 2, 3, 3], &mut rng)).collect();
        let refs: Vec<&Tensor> = levels.iter().collect();
        let single = ops::level_fusion(&refs[..1], &[0.7]).unwrap();
        assert_eq!(single, levels[0]);
        let mean = ops::level_fusion(&refs, &[0.3, 0.3, 0.3]).unwrap();
        let manual = Tensor::from_fn([1, 2, 3, 3], |n, c, y, x| {
            (levels[0].at(n, c, y, x) + levels[1].at(n, c, y, x) + levels[2].at(n, c, y, x)) / 3.0
        });
        assert!(mean.max_abs_diff(&manual) < 1e-15);
        let w = ops::softmax(&[0.0, 0.0, 2f64.ln()]);
        assert!((w[0] - 0.25).abs() < 1e-15 && (w[1] - 0.25).abs() < 1e-15 && (w[2] - 0.5).abs() < 1e-15);
        let skew = ops::level_fusion(&refs, &[0.0, 0.0, 2f64.ln()]).unwrap();
        let manual = Tensor::from_fn([1, 2, 3, 3], |n, c, y, x| {
            0.25 * levels[0].at(n, c, y, x) + 0.25 * levels[1].at(n, c, y, x) + 0.5 * levels[2].at(n, c, y, x)
        });
        assert!(skew.max_abs_diff(&manual) < 1e-14);
    }
}
