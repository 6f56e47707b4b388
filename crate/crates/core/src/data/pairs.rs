//! Training-pair sampling: template and search frames drawn a bounded gap
//! apart within one sequence, or from two different sequences as an
//! all-negative pair, with shift/scale jitter of the search window.

use rand::Rng;

use super::crop::{crop_pair, CropMode, CropSizes, Jitter};
use super::labels::{assign_labels, LabelAssignment, LabelConfig};
use super::Sequence;
use crate::error::{Error, Result};
use crate::head::ResponseGeometry;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PairConfig {
    /// Largest frame distance between template and search.
    pub max_gap: usize,
    /// Probability of a cross-sequence negative pair.
    pub neg_rate: f64,
    /// Largest search-window shift as a fraction of its side.
    pub shift: f64,
    /// Search side is multiplied by `exp(u)`, `u` uniform in `[-scale, scale]`.
    pub scale: f64,
}

impl Default for PairConfig {
    fn default() -> Self {
        Self {
            max_gap: 20,
            neg_rate: 0.1,
            shift: 0.12,
            scale: 0.08,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingSample {
    pub template: Tensor,
    pub search: Tensor,
    pub labels: LabelAssignment,
    pub negative: bool,
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub template: Tensor,
    pub search: Tensor,
    pub labels: Vec<LabelAssignment>,
}

impl Batch {
    pub fn from_samples(samples: &[TrainingSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Training("empty batch".into()));
        }
        let t: Vec<Tensor> = samples.iter().map(|s| s.template.clone()).collect();
        let s: Vec<Tensor> = samples.iter().map(|s| s.search.clone()).collect();
        Ok(Self {
            template: Tensor::stack(&t)?,
            search: Tensor::stack(&s)?,
            labels: samples.iter().map(|s| s.labels.clone()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub struct PairSampler<'a> {
    sequences: &'a [Sequence],
    cfg: PairConfig,
    sizes: CropSizes,
    labels: LabelConfig,
    response: ResponseGeometry,
}

impl<'a> PairSampler<'a> {
    pub fn new(
        sequences: &'a [Sequence],
        cfg: PairConfig,
        sizes: CropSizes,
        labels: LabelConfig,
        response: ResponseGeometry,
    ) -> Result<Self> {
        if sequences.iter().all(|s| s.is_empty()) {
            return Err(Error::Training("training set has no frames".into()));
        }
        if !(0.0..=1.0).contains(&cfg.neg_rate) {
            return Err(Error::Config(format!("data.neg_rate {} outside [0, 1]", cfg.neg_rate)));
        }
        Ok(Self {
            sequences,
            cfg,
            sizes,
            labels,
            response,
        })
    }

    fn pick_sequence(&self, rng: &mut impl Rng) -> usize {
        loop {
            let i = rng.random_range(0..self.sequences.len());
            if !self.sequences[i].is_empty() {
                return i;
            }
        }
    }

    /// Draws one pair; degenerate ground truth is skipped by redrawing.
    pub fn sample(&self, rng: &mut impl Rng) -> Result<TrainingSample> {
        for _ in 0..64 {
            if let Some(s) = self.try_sample(rng)? {
                return Ok(s);
            }
        }
        Err(Error::Training("no valid training pair after 64 draws".into()))
    }

    fn try_sample(&self, rng: &mut impl Rng) -> Result<Option<TrainingSample>> {
        let a = self.pick_sequence(rng);
        let seq_a = &self.sequences[a];
        let ti = rng.random_range(0..seq_a.len());
        let negative = self.sequences.len() > 1 && rng.random_bool(self.cfg.neg_rate);
        let (seq_s, si) = if negative {
            let mut b = self.pick_sequence(rng);
            while b == a {
                b = self.pick_sequence(rng);
            }
            let seq_b = &self.sequences[b];
            (seq_b, rng.random_range(0..seq_b.len()))
        } else {
            let lo = ti.saturating_sub(self.cfg.max_gap);
            let hi = (ti + self.cfg.max_gap).min(seq_a.len() - 1);
            (seq_a, rng.random_range(lo..=hi))
        };
        let (gt_t, gt_s) = (seq_a.annotation.gt[ti], seq_s.annotation.gt[si]);
        if !gt_t.is_valid() || !gt_s.is_valid() {
            return Ok(None);
        }
        let jitter = Jitter {
            dx: rng.random_range(-self.cfg.shift..=self.cfg.shift),
            dy: rng.random_range(-self.cfg.shift..=self.cfg.shift),
            scale: rng.random_range(-self.cfg.scale..=self.cfg.scale).exp(),
        };
        let pair = crop_pair(
            &seq_a.images[ti],
            &gt_t,
            &seq_s.images[si],
            &gt_s,
            &self.sizes,
            CropMode::Train,
            Some(jitter),
        )?;
        let labels = if negative {
            LabelAssignment::all_negative(self.response.height, self.response.width)
        } else {
            assign_labels(&pair.gt_in_search, &self.response, &self.labels)?
        };
        Ok(Some(TrainingSample {
            template: pair.template,
            search: pair.search,
            labels,
            negative,
        }))
    }
}
