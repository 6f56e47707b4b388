//! Run configuration: a sectioned `key = value` text format.
//!
//! ```text
//! # comment
//! seed = 7
//! [backbone]
//! block_channels = 64,128,256
//! [losses]
//! normalizer = pos_neg
//! ```
//!
//! Top-level keys precede the first section. Every key must be known to its
//! section; unknown keys and sections are rejected by name. Overrides use
//! `section.key=value` (or `seed=N`). Booleans accept `on|off|true|false`.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::backbone::BackboneConfig;
use crate::data::crop::CropSizes;
use crate::data::labels::LabelConfig;
use crate::data::pairs::PairConfig;
use crate::data::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::head::HeadConfig;
use crate::losses::{LossConfig, Normalizer};
use crate::matcher::MatcherConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

pub trait ConfigValue: Sized {
    fn parse_value(s: &str) -> Option<Self>;
    fn render(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl ConfigValue for $t {
            fn parse_value(s: &str) -> Option<Self> {
                s.parse().ok()
            }
            fn render(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, f64);

impl ConfigValue for bool {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "on" | "true" | "1" => Some(true),
            "off" | "false" | "0" => Some(false),
            _ => None,
        }
    }
    fn render(&self) -> String {
        if *self { "on" } else { "off" }.to_owned()
    }
}

impl ConfigValue for [usize; 3] {
    fn parse_value(s: &str) -> Option<Self> {
        let v: Vec<usize> = s.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
        v.try_into().ok()
    }
    fn render(&self) -> String {
        format!("{},{},{}", self[0], self[1], self[2])
    }
}

impl ConfigValue for Normalizer {
    fn parse_value(s: &str) -> Option<Self> {
        match s {
            "pos_neg" => Some(Normalizer::PosNeg),
            "pos" => Some(Normalizer::Pos),
            _ => None,
        }
    }
    fn render(&self) -> String {
        match self {
            Normalizer::PosNeg => "pos_neg",
            Normalizer::Pos => "pos",
        }
        .to_owned()
    }
}

fn parse_or_err<T: ConfigValue>(section: &str, key: &str, value: &str) -> Result<T> {
    T::parse_value(value).ok_or_else(|| Error::Config(format!("{section}.{key}: cannot parse {value:?}")))
}

/// A config section: settable by key, listable in canonical order.
pub trait Section {
    const NAME: &'static str;
    fn set(&mut self, key: &str, value: &str) -> Result<()>;
    fn entries(&self) -> Vec<(&'static str, String)>;
}

macro_rules! section {
    ($t:ty, $name:literal, { $($key:literal => $($field:ident).+),* $(,)? }) => {
        impl Section for $t {
            const NAME: &'static str = $name;
            fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $($key => self.$($field).+ = parse_or_err($name, key, value)?,)*
                    _ => return Err(Error::Config(format!("unknown key `{}.{key}`", $name))),
                }
                Ok(())
            }
            fn entries(&self) -> Vec<(&'static str, String)> {
                vec![$(($key, self.$($field).+.render())),*]
            }
        }
    };
}

section!(BackboneConfig, "backbone", {
    "stem_channels" => stem_channels,
    "block_channels" => block_channels,
    "total_stride" => total_stride,
    "frozen_layers" => frozen_layers,
});

section!(MatcherConfig, "matcher", {
    "c_out" => c_out,
    "template_crop" => template_crop,
    "thm" => thm,
    "share_thm" => share_thm,
    "squeeze_ratio" => squeeze_ratio,
    "gate_bias" => gate_bias,
});

section!(HeadConfig, "head", {
    "hidden" => hidden,
    "stride_scale" => stride_scale,
    "window_influence" => penalties.window_influence,
    "penalty_k" => penalties.penalty_k,
    "size_lr" => penalties.size_lr,
});

section!(LossConfig, "losses", {
    "beta" => beta,
    "normalizer" => normalizer,
    "corrective" => corrective,
    "coefficient_grad" => coefficient_grad,
    "offset_scale" => offset_scale,
});

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataConfig {
    pub synth: SynthConfig,
    pub sizes: CropSizes,
    pub pairs: PairConfig,
    pub labels: LabelConfig,
}

section!(DataConfig, "data", {
    "n_sequences" => synth.n_sequences,
    "width" => synth.width,
    "height" => synth.height,
    "length" => synth.length,
    "target_min" => synth.target_min,
    "target_max" => synth.target_max,
    "speed_max" => synth.speed_max,
    "drift_max" => synth.drift_max,
    "distractors" => synth.distractors,
    "template_size" => sizes.template,
    "search_train" => sizes.search_train,
    "search_inference" => sizes.search_inference,
    "max_gap" => pairs.max_gap,
    "neg_rate" => pairs.neg_rate,
    "shift" => pairs.shift,
    "scale_jitter" => pairs.scale,
    "pos_radius" => labels.pos_radius,
    "neg_radius" => labels.neg_radius,
});

section!(TrainConfig, "trainer", {
    "epochs" => epochs,
    "warmup_epochs" => warmup_epochs,
    "lr_start" => lr_start,
    "lr_peak" => lr_peak,
    "lr_end" => lr_end,
    "momentum" => momentum,
    "weight_decay" => weight_decay,
    "clip_norm" => clip_norm,
    "batch" => batch,
    "pairs_per_epoch" => pairs_per_epoch,
});

section!(EvalConfig, "eval", {
    "reinit_gap" => reinit_gap,
    "burn_in" => burn_in,
    "eao_horizon" => eao_horizon,
});

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub backbone: BackboneConfig,
    pub matcher: MatcherConfig,
    pub head: HeadConfig,
    pub losses: LossConfig,
    pub data: DataConfig,
    pub trainer: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            backbone: BackboneConfig::default(),
            matcher: MatcherConfig::default(),
            head: HeadConfig::default(),
            losses: LossConfig::default(),
            data: DataConfig::default(),
            trainer: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Small network and crops sized for single-core runs.
    pub fn toy() -> Self {
        let mut c = Self::default();
        c.backbone.stem_channels = 8;
        c.backbone.block_channels = [8, 16, 16];
        c.matcher.c_out = 16;
        c.head.hidden = 16;
        c.data.sizes = CropSizes {
            template: 63,
            search_train: 127,
            search_inference: 127,
        };
        c.trainer.pairs_per_epoch = 160;
        // The narrow network needs larger steps and more updates per epoch.
        c.trainer.lr_start = 0.01;
        c.trainer.lr_peak = 0.05;
        c.trainer.lr_end = 0.0005;
        c.trainer.batch = 4;
        c.head.penalties.window_influence = 0.1;
        c.finish();
        c
    }

    /// Derived fields: the head reads the matcher's output channels.
    fn finish(&mut self) {
        self.head.c_in = self.matcher.c_out;
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Layers `text` over the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut section = String::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_owned();
                if !self.has_section(&section) {
                    return Err(Error::Config(format!("line {}: unknown section [{section}]", n + 1)));
                }
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {line:?}", n + 1)))?;
            self.set(&section, key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        self.finish();
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn has_section(&self, name: &str) -> bool {
        matches!(name, "backbone" | "matcher" | "head" | "losses" | "data" | "trainer" | "eval")
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let r = match section {
            "" => match key {
                "seed" => {
                    self.seed = parse_or_err("", key, value)?;
                    Ok(())
                }
                _ => Err(Error::Config(format!("unknown top-level key `{key}`"))),
            },
            "backbone" => self.backbone.set(key, value),
            "matcher" => self.matcher.set(key, value),
            "head" => self.head.set(key, value),
            "losses" => self.losses.set(key, value),
            "data" => self.data.set(key, value),
            "trainer" => self.trainer.set(key, value),
            "eval" => self.eval.set(key, value),
            other => Err(Error::Config(format!("unknown section [{other}]"))),
        };
        self.finish();
        r
    }

    /// Applies one `section.key=value` or `seed=N` override.
    pub fn apply_override(&mut self, item: &str) -> Result<()> {
        let (path, value) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {item:?} is not `section.key=value`")))?;
        let (section, key) = path.trim().split_once('.').unwrap_or(("", path.trim()));
        self.set(section, key, value.trim())
    }

    fn sections(&self) -> Vec<(&'static str, Vec<(&'static str, String)>)> {
        vec![
            (BackboneConfig::NAME, self.backbone.entries()),
            (MatcherConfig::NAME, self.matcher.entries()),
            (HeadConfig::NAME, self.head.entries()),
            (LossConfig::NAME, self.losses.entries()),
            (DataConfig::NAME, self.data.entries()),
            (TrainConfig::NAME, self.trainer.entries()),
            (EvalConfig::NAME, self.eval.entries()),
        ]
    }

    /// Canonical text; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut out = format!("seed = {}\n", self.seed);
        for (name, entries) in self.sections() {
            out.push_str(&format!("\n[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone.clone(),
            matcher: self.matcher.clone(),
            head: self.head.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.trainer.validate()?;
        let s = &self.data.sizes;
        self.model().response_size(s.template, s.search_train)?;
        self.model().response_size(s.template, s.search_inference)?;
        if !(self.data.labels.pos_radius > 0.0 && self.data.labels.neg_radius >= self.data.labels.pos_radius) {
            return Err(Error::Config("data.pos_radius must be positive and at most data.neg_radius".into()));
        }
        if !(self.losses.beta > 0.0) {
            return Err(Error::Config(format!("losses.beta must be positive, got {}", self.losses.beta)));
        }
        Ok(())
    }

    /// Fingerprint of everything that determines parameter shapes and the
    /// meaning of a forward pass. Decode-time penalties and init-only
    /// settings are left out.
    pub fn model_hash(&self) -> u64 {
        const SKIPPED: [&str; 4] = ["head.window_influence", "head.penalty_k", "head.size_lr", "matcher.gate_bias"];
        let mut text = String::new();
        for (name, entries) in self.sections().into_iter().take(3) {
            for (k, v) in entries {
                let key = format!("{name}.{k}");
                if !SKIPPED.contains(&key.as_str()) {
                    text.push_str(&format!("{key}={v}\n"));
                }
            }
        }
        let s = &self.data.sizes;
        text.push_str(&format!("data.template_size={}\n", s.template));
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(s) => s.clone(),
        other => other.to_string(),
    }
}
