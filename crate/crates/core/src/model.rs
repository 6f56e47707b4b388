//! The full network: shared backbone, matcher and head wired together, for
//! training on a graph and for frame-by-frame inference.

use std::collections::BTreeSet;

use crate::backbone::{self, BackboneConfig};
use crate::binder::Binder;
use crate::error::{Error, Result};
use crate::head::{self, HeadConfig, RegressionMap, ScoreMap};
use crate::matcher::{self, MatcherConfig, LEVELS};
use crate::params::ParamStore;
use crate::seeds;
use crate::tensor::{Graph, Tensor, Var};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub matcher: MatcherConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.matcher.c_out == 0 || self.matcher.template_crop == 0 || self.matcher.squeeze_ratio == 0 {
            return Err(Error::Config("matcher sizes must be positive".into()));
        }
        if self.head.c_in != self.matcher.c_out {
            return Err(Error::Config(format!(
                "head input channels {} differ from matcher output {}",
                self.head.c_in, self.matcher.c_out
            )));
        }
        if self.head.hidden == 0 || !(self.head.stride_scale > 0.0) {
            return Err(Error::Config("head.hidden and head.stride_scale must be positive".into()));
        }
        Ok(())
    }

    /// Side of the response map for a template/search input pair.
    pub fn response_size(&self, template_size: usize, search_size: usize) -> Result<usize> {
        let t = self.backbone.feature_size(template_size)?;
        let s = self.backbone.feature_size(search_size)?;
        let k = self.matcher.template_crop;
        if k > t || k > s {
            return Err(Error::Config(format!(
                "template window {k} does not fit template features {t} / search features {s}"
            )));
        }
        Ok(s - k + 1)
    }

    pub fn init(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = seeds::substream(seed, seeds::INIT, 0);
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, &mut rng);
        self.matcher.init(&mut store, self.backbone.block_channels, &mut rng);
        self.head.init(&mut store, &mut rng);
        Ok(store)
    }

    pub fn frozen(&self) -> BTreeSet<String> {
        backbone::freeze_mask(&self.backbone)
    }
}

/// Graph nodes of one forward pass.
pub struct Outputs {
    pub logits: Var,
    pub offsets: Var,
    pub fused: Var,
    pub levels: Vec<Var>,
}

pub fn forward_on(g: &mut Graph, binder: &mut Binder, cfg: &ModelConfig, template: Var, search: Var) -> Result<Outputs> {
    let t = backbone::extract_on(g, binder, &cfg.backbone, template)?;
    let s = backbone::extract_on(g, binder, &cfg.backbone, search)?;
    let r = matcher::match_on(g, binder, &cfg.matcher, &t, &s)?;
    let logits = head::classify_on(g, binder, &cfg.head, r.fused)?;
    let offsets = head::regress_on(g, binder, &cfg.head, r.fused)?;
    Ok(Outputs {
        logits,
        offsets,
        fused: r.fused,
        levels: r.levels,
    })
}

/// Reduced, windowed template features of every level.
#[derive(Clone, Debug)]
pub struct TemplateState {
    pub levels: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Inference {
    pub scores: ScoreMap,
    pub regs: RegressionMap,
    pub fused: Tensor,
}

#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: ModelConfig,
    pub params: ParamStore,
}

impl Network {
    pub fn new(cfg: ModelConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg, params })
    }

    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let params = cfg.init(seed)?;
        Self::new(cfg, params)
    }

    pub fn prepare_template(&self, template: &Tensor) -> Result<TemplateState> {
        let mut g = Graph::new();
        let mut binder = Binder::frozen(&self.params);
        let x = g.constant(template.clone());
        let f = backbone::extract_on(&mut g, &mut binder, &self.cfg.backbone, x)?;
        let levels = (0..LEVELS)
            .map(|l| {
                let v = matcher::template_level_on(&mut g, &mut binder, &self.cfg.matcher, l, f[l])?;
                Ok(g.value(v).clone())
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TemplateState { levels })
    }

    pub fn infer(&self, template: &TemplateState, search: &Tensor) -> Result<Inference> {
        let mut g = Graph::new();
        let mut binder = Binder::frozen(&self.params);
        let x = g.constant(search.clone());
        let f = backbone::extract_on(&mut g, &mut binder, &self.cfg.backbone, x)?;
        let t: Vec<Var> = template.levels.iter().map(|l| g.constant(l.clone())).collect();
        let s = (0..LEVELS)
            .map(|l| matcher::search_level_on(&mut g, &mut binder, &self.cfg.matcher, l, f[l]))
            .collect::<Result<Vec<_>>>()?;
        let r = matcher::correlate_on(&mut g, &mut binder, &t, &s)?;
        let logits = head::classify_on(&mut g, &mut binder, &self.cfg.head, r.fused)?;
        let offsets = head::regress_on(&mut g, &mut binder, &self.cfg.head, r.fused)?;
        Ok(Inference {
            scores: ScoreMap::from_logits(g.value(logits).clone())?,
            regs: RegressionMap {
                offsets: g.value(offsets).clone(),
            },
            fused: g.value(r.fused).clone(),
        })
    }
}
