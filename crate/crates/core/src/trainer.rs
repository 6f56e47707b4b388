//! SGD with momentum over sampled pairs: warmup-then-decay learning rate,
//! frozen early backbone stages, weight decay, global-norm clipping,
//! per-step loss logging and per-epoch checkpoints that resume exactly.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::binder::Binder;
use crate::config::RunConfig;
use crate::data::pairs::{Batch, PairSampler};
use crate::data::Sequence;
use crate::error::{Error, Result};
use crate::head::ResponseGeometry;
use crate::losses::{total_loss_on, LossReport};
use crate::model::forward_on;
use crate::params::ParamStore;
use crate::seeds;
use crate::tensor::{Graph, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub lr_start: f64,
    pub lr_peak: f64,
    pub lr_end: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub clip_norm: f64,
    pub batch: usize,
    pub pairs_per_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            warmup_epochs: 5,
            lr_start: 0.001,
            lr_peak: 0.005,
            lr_end: 0.00005,
            momentum: 0.9,
            weight_decay: 1e-4,
            clip_norm: 10.0,
            batch: 8,
            pairs_per_epoch: 800,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_start > 0.0 && self.lr_peak > 0.0 && self.lr_end > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "trainer.warmup_epochs {} must be below trainer.epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if self.batch == 0 || self.pairs_per_epoch == 0 {
            return Err(Error::Config("trainer.batch and trainer.pairs_per_epoch must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 || !(self.clip_norm > 0.0) {
            return Err(Error::Config("momentum in [0, 1), weight decay >= 0 and clip norm > 0 required".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.pairs_per_epoch.div_ceil(self.batch)
    }
}

/// Learning rate for a whole epoch: linear from `lr_start` to `lr_peak` over
/// the warmup epochs (the last warmup epoch is at the peak), then log-linear
/// down to `lr_end` at the final epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch >= cfg.epochs {
        return Err(Error::Usage(format!("epoch {epoch} outside 0..{}", cfg.epochs)));
    }
    let w = cfg.warmup_epochs;
    if epoch < w {
        if w == 1 {
            return Ok(cfg.lr_peak);
        }
        let t = epoch as f64 / (w - 1) as f64;
        return Ok(cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * t);
    }
    let t = (epoch + 1 - w) as f64 / (cfg.epochs - w) as f64;
    Ok(cfg.lr_peak * (cfg.lr_end / cfg.lr_peak).powf(t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Added to the gradient of 4-D conv weights as `weight_decay * p`.
    pub weight_decay: f64,
}

/// `v <- momentum * v + g; p <- p - lr * v` for every parameter outside `frozen`.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    momentum: &mut ParamStore,
    cfg: &SgdConfig,
    frozen: &BTreeSet<String>,
) -> Result<()> {
    for (name, p) in params.iter_mut() {
        if frozen.contains(name) {
            continue;
        }
        let g = grads
            .get(name)
            .ok_or_else(|| Error::Training(format!("no gradient for trainable parameter `{name}`")))?;
        if g.len() != p.len() {
            return Err(Error::Training(format!("gradient of `{name}` has the wrong length")));
        }
        if !momentum.contains(name) {
            momentum.insert(name, Tensor::zeros(p.shape()));
        }
        let v = momentum.get_mut(name)?;
        let decay = if name.ends_with(".weight") { cfg.weight_decay } else { 0.0 };
        let pd = p.data_mut();
        for ((pi, vi), gi) in pd.iter_mut().zip(v.data_mut()).zip(g) {
            *vi = cfg.momentum * *vi + gi + decay * *pi;
            *pi -= cfg.lr * *vi;
        }
    }
    Ok(())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        grads.values_mut().flatten().for_each(|g| *g *= k);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub report: LossReport,
}

pub const LOG_HEADER: &str = "step,epoch,lr,cls_pos,cls_neg,reg_smooth_l1,reg_iou,coefficient_mean,total";

impl LogRow {
    pub fn to_csv(&self) -> String {
        let r = &self.report;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.epoch,
            self.lr,
            r.cls_pos,
            r.cls_neg,
            r.reg_smooth_l1,
            r.reg_iou,
            r.coefficient_mean,
            r.total
        )
    }

    /// Parses a row written by [`LogRow::to_csv`]. Sample counts are not
    /// logged and come back as zero.
    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Training(format!("malformed log row {line:?}"));
        if f.len() != 9 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            lr: num(2)?,
            report: LossReport {
                cls_pos: num(3)?,
                cls_neg: num(4)?,
                reg_smooth_l1: num(5)?,
                reg_iou: num(6)?,
                coefficient_mean: num(7)?,
                n_pos: 0,
                n_neg: 0,
                total: num(8)?,
            },
        })
    }
}

/// Everything needed to continue training after `epochs_done` epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epochs_done: usize,
    pub step: usize,
    pub params: ParamStore,
    pub momentum: ParamStore,
    pub config_hash: u64,
}

const MOMENTUM_PREFIX: &str = "optim.momentum.";
const META_EPOCH: &str = "meta.epoch";
const META_STEP: &str = "meta.step";
const META_HASH: &str = "meta.config_hash";

fn split_u64(v: u64) -> Tensor {
    Tensor::new([2, 1, 1, 1], vec![(v & 0xffff_ffff) as f64, (v >> 32) as f64]).expect("two values")
}

fn join_u64(t: &Tensor) -> Result<u64> {
    match t.data() {
        [lo, hi] if lo.fract() == 0.0 && hi.fract() == 0.0 && *lo >= 0.0 && *hi >= 0.0 => {
            Ok((*lo as u64) | ((*hi as u64) << 32))
        }
        _ => Err(Error::Checkpoint("malformed 64-bit metadata record".into())),
    }
}

impl TrainState {
    pub fn fresh(params: ParamStore, config_hash: u64) -> Self {
        Self {
            epochs_done: 0,
            step: 0,
            params,
            momentum: ParamStore::new(),
            config_hash,
        }
    }

    pub fn to_store(&self) -> ParamStore {
        let mut out = self.params.clone();
        for (name, v) in self.momentum.iter() {
            out.insert(format!("{MOMENTUM_PREFIX}{name}"), v.clone());
        }
        out.insert(META_EPOCH, split_u64(self.epochs_done as u64));
        out.insert(META_STEP, split_u64(self.step as u64));
        out.insert(META_HASH, split_u64(self.config_hash));
        out
    }

    pub fn from_store(store: ParamStore) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut momentum = ParamStore::new();
        let mut meta = BTreeMap::new();
        for (name, t) in store.iter() {
            if let Some(rest) = name.strip_prefix(MOMENTUM_PREFIX) {
                momentum.insert(rest, t.clone());
            } else if name.starts_with("meta.") {
                meta.insert(name.to_owned(), join_u64(t)?);
            } else {
                params.insert(name, t.clone());
            }
        }
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("checkpoint lacks `{k}`")))
        };
        Ok(Self {
            epochs_done: get(META_EPOCH)? as usize,
            step: get(META_STEP)? as usize,
            params,
            momentum,
            config_hash: get(META_HASH)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_store().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_store(ParamStore::load(path)?)
    }
}

/// Loads checkpoint parameters, refusing ones trained under another architecture.
pub fn load_params(path: &Path, cfg: &RunConfig) -> Result<ParamStore> {
    let state = TrainState::load(path)?;
    if state.config_hash != cfg.model_hash() {
        return Err(Error::Checkpoint(format!(
            "{} was trained with model config hash {:016x}, current config hashes to {:016x}; \
             pass the config used for training",
            path.display(),
            state.config_hash,
            cfg.model_hash()
        )));
    }
    Ok(state.params)
}

pub fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch-{epoch:02}.thnk"))
}

pub const LOG_FILE: &str = "train_log.csv";

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().skip(1).filter(|l| !l.is_empty()).map(LogRow::from_csv).collect()
}

pub fn response_geometry(cfg: &RunConfig, search_size: usize) -> Result<ResponseGeometry> {
    let side = cfg.model().response_size(cfg.data.sizes.template, search_size)?;
    Ok(ResponseGeometry::new(side, side, cfg.backbone.total_stride, search_size))
}

/// One forward/backward pass on a batch; returns the report and the
/// gradients of every trainable parameter.
pub fn compute_gradients(
    cfg: &RunConfig,
    params: &ParamStore,
    frozen: &BTreeSet<String>,
    batch: &Batch,
) -> Result<(LossReport, BTreeMap<String, Vec<f64>>)> {
    let model = cfg.model();
    let mut g = Graph::new();
    let mut binder = Binder::new(params, |name| !frozen.contains(name));
    let t = g.constant(batch.template.clone());
    let s = g.constant(batch.search.clone());
    let out = forward_on(&mut g, &mut binder, &model, t, s)?;
    let (loss, report) = total_loss_on(&mut g, out.logits, out.offsets, &batch.labels, &cfg.losses)?;
    g.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (name, v) in binder.bound() {
        if frozen.contains(name) {
            continue;
        }
        let grad = g
            .grad(v)
            .ok_or_else(|| Error::Training(format!("`{name}` received no gradient")))?;
        grads.insert(name.to_owned(), grad.to_vec());
    }
    Ok((report, grads))
}

pub struct TrainOptions<'a> {
    /// Checkpoints and the log are written here when set.
    pub out_dir: Option<&'a Path>,
    /// Stop after this many epochs in total (for interrupting a run).
    pub stop_after: Option<usize>,
}

pub struct TrainRun {
    pub state: TrainState,
    /// Rows produced by this call.
    pub log: Vec<LogRow>,
}

/// Runs the remaining epochs of `state`. Sampling of epoch `e` draws from its
/// own seeded stream, so a resumed run replays exactly what an uninterrupted
/// one would have done.
pub fn train(cfg: &RunConfig, sequences: &[Sequence], mut state: TrainState, opts: &TrainOptions) -> Result<TrainRun> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    if state.config_hash != cfg.model_hash() {
        return Err(Error::Checkpoint("resume state was produced under a different model config".into()));
    }
    let tc = &cfg.trainer;
    let frozen = cfg.model().frozen();
    let response = response_geometry(cfg, cfg.data.sizes.search_train)?;
    let sampler = PairSampler::new(
        sequences,
        cfg.data.pairs.clone(),
        cfg.data.sizes.clone(),
        cfg.data.labels,
        response,
    )?;
    let mut log_file = match opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(open_log(dir, state.epochs_done)?)
        }
        None => None,
    };
    let last = opts.stop_after.unwrap_or(tc.epochs).min(tc.epochs);
    let mut log = Vec::new();
    for epoch in state.epochs_done..last {
        let lr = lr_at(epoch, tc)?;
        let sgd = SgdConfig {
            lr,
            momentum: tc.momentum,
            weight_decay: tc.weight_decay,
        };
        let mut rng = seeds::substream(cfg.seed, seeds::SAMPLING, epoch as u64);
        let mut remaining = tc.pairs_per_epoch;
        while remaining > 0 {
            let n = remaining.min(tc.batch);
            remaining -= n;
            let samples = (0..n).map(|_| sampler.sample(&mut rng)).collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_samples(&samples)?;
            let (report, mut grads) = compute_gradients(cfg, &state.params, &frozen, &batch)?;
            let finite = report.total.is_finite() && grads.values().flatten().all(|g| g.is_finite());
            if !finite {
                return Err(Error::Training(format!(
                    "loss diverged at step {} (epoch {epoch}); last good checkpoint is epoch {}",
                    state.step,
                    state.epochs_done
                )));
            }
            clip_global_norm(&mut grads, tc.clip_norm);
            sgd_step(&mut state.params, &grads, &mut state.momentum, &sgd, &frozen)?;
            let row = LogRow {
                step: state.step,
                epoch,
                lr,
                report,
            };
            if let Some(f) = log_file.as_mut() {
                writeln!(f.1, "{}", row.to_csv()).map_err(|e| Error::io(&f.0, e))?;
            }
            log.push(row);
            state.step += 1;
        }
        state.epochs_done = epoch + 1;
        if let Some(dir) = opts.out_dir {
            state.save(&checkpoint_path(dir, epoch))?;
            state.save(&dir.join("last.thnk"))?;
        }
    }
    Ok(TrainRun { state, log })
}

/// Opens the log for appending after `epochs_done` epochs, dropping rows of
/// later epochs left behind by an interrupted run.
fn open_log(dir: &Path, epochs_done: usize) -> Result<(PathBuf, fs::File)> {
    let path = dir.join(LOG_FILE);
    let mut keep = vec![LOG_HEADER.to_owned()];
    if epochs_done > 0 && path.exists() {
        for row in read_log(&path)? {
            if row.epoch < epochs_done {
                keep.push(row.to_csv());
            }
        }
    }
    let mut text = keep.join("\n");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let f = fs::OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    Ok((path, f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_endpoints() {
        let c = TrainConfig::default();
        assert_eq!(lr_at(0, &c).unwrap(), 0.001);
        assert_eq!(lr_at(4, &c).unwrap(), 0.005);
        assert!((lr_at(19, &c).unwrap() - 0.00005).abs() < 1e-18);
        assert!(matches!(lr_at(20, &c), Err(Error::Usage(_))));
        let first_decay = lr_at(5, &c).unwrap();
        assert!(first_decay < 0.005 && first_decay > 0.005 * 0.7);
        for e in 5..19 {
            assert!(lr_at(e + 1, &c).unwrap() < lr_at(e, &c).unwrap());
        }
    }

    #[test]
    fn momentum_recurrence() {
        let mut params = ParamStore::new();
        params.insert("p", Tensor::scalar(1.0));
        let mut mom = ParamStore::new();
        let grads = BTreeMap::from([("p".to_owned(), vec![1.0])]);
        let sgd = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut params, &grads, &mut mom, &sgd, &BTreeSet::new()).unwrap();
        assert!((params.get("p").unwrap().item() - 0.9).abs() < 1e-15);
        sgd_step(&mut params, &grads, &mut mom, &sgd, &BTreeSet::new()).unwrap();
        assert!((params.get("p").unwrap().item() - (0.9 - 0.19)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_and_frozen_are_no_ops() {
        let mut params = ParamStore::new();
        params.insert("a", Tensor::scalar(2.0));
        params.insert("b", Tensor::scalar(3.0));
        let mut mom = ParamStore::new();
        let grads = BTreeMap::from([("a".to_owned(), vec![0.0]), ("b".to_owned(), vec![5.0])]);
        let sgd = SgdConfig {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        let frozen = BTreeSet::from(["b".to_owned()]);
        sgd_step(&mut params, &grads, &mut mom, &sgd, &frozen).unwrap();
        assert_eq!(params.get("a").unwrap().item(), 2.0);
        assert_eq!(params.get("b").unwrap().item(), 3.0);
        let missing = BTreeMap::from([("b".to_owned(), vec![1.0])]);
        assert!(matches!(
            sgd_step(&mut params, &missing, &mut mom, &sgd, &BTreeSet::new()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn clipping_bounds_the_norm() {
        let mut g = BTreeMap::from([("a".to_owned(), vec![30.0, 40.0])]);
        assert_eq!(clip_global_norm(&mut g, 10.0), 50.0);
        assert!((g["a"][0] - 6.0).abs() < 1e-12 && (g["a"][1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn state_round_trips_through_store() {
        let mut params = ParamStore::new();
        params.insert("x.weight", Tensor::full([2, 1, 1, 1], 0.5));
        let mut s = TrainState::fresh(params, u64::MAX - 12345);
        s.momentum.insert("x.weight", Tensor::full([2, 1, 1, 1], -1.0));
        s.epochs_done = 3;
        s.step = 77;
        assert_eq!(TrainState::from_store(s.to_store()).unwrap(), s);
    }
}
