//! Command-line front end: `thn gen | train | track | eval | gradcheck`.
//!
//! Every command takes `--config PATH`, `--seed N`, `--deterministic`,
//! `--thm on|off`, `--corrective on|off` and trailing `section.key=value`
//! overrides, applied in that order over the built-in defaults.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bbox::BBox;
use crate::config::RunConfig;
use crate::data::image::RgbImage;
use crate::data::otb::{load_annotations, load_dataset, write_dataset};
use crate::data::synth::gen_benchmark;
use crate::data::{Sequence, SequenceAnnotation};
use crate::error::{Error, Result};
use crate::eval::{
    attribute_breakdown, evaluate, format_summary, format_vot_trace, parse_vot_trace, summarize_vot, vot_report,
    vot_run, write_curves, EvalCurves, VotReport, VotSummary,
};
use crate::gradcheck::{format_report, run_suite, OpReport, DEFAULT_SEEDS};
use crate::model::Network;
use crate::parallel;
use crate::tracker::{read_results, track_sequence, write_results, ReplayTracker, SiameseTracker};
use crate::trainer::{load_params, train, TrainOptions, TrainRun, TrainState};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFICATION: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;

/// Exit status for an error that ended a command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Checkpoint(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Ingestion { .. } => EXIT_IO,
        Error::Dimension { .. } | Error::Domain(_) | Error::Training(_) | Error::Eval(_) => EXIT_VERIFICATION,
    }
}

#[derive(Parser, Debug)]
#[command(name = "thn", version, about = "Siamese single-object tracker: data, training, tracking and metrics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic benchmark in OTB layout with a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model, writing per-epoch checkpoints and a CSV log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training dataset (OTB layout with manifest).
        #[arg(long)]
        data: PathBuf,
        /// Continue from `<out>/last.thnk`.
        #[arg(long)]
        resume: bool,
        /// Stop once this many epochs are done in total.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Track every sequence of a dataset from its first-frame box.
    Track {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Score result directories against a dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// A directory of per-sequence result CSVs; repeat to compare trackers.
        #[arg(long = "results", required = true)]
        results: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of every op.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Number of random seeds per op.
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    fn as_str(self) -> &'static str {
        match self {
            Switch::On => "on",
            Switch::Off => "off",
        }
    }
}

#[derive(Args, Debug, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single worker thread; results are then bitwise reproducible.
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long, value_enum)]
    pub thm: Option<Switch>,
    #[arg(long, value_enum)]
    pub corrective: Option<Switch>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `section.key=value` overrides applied last.
    #[arg(trailing_var_arg = true)]
    pub overrides: Vec<String>,
}

impl Common {
    /// Config file (or defaults), then flags, then overrides.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.thm {
            cfg.set("matcher", "thm", t.as_str())?;
        }
        if let Some(c) = self.corrective {
            cfg.set("losses", "corrective", c.as_str())?;
        }
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Usage("this command needs --out DIR".into()))
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("thn: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Gen { common } => {
            let cfg = common.resolve()?;
            let out = common.out_dir()?;
            let n = cmd_gen(&cfg, out)?;
            println!("wrote {n} sequences to {}", out.display());
            Ok(EXIT_OK)
        }
        Command::Train {
            common,
            data,
            resume,
            stop_after,
        } => {
            let cfg = common.resolve()?;
            let out = common.out_dir()?;
            let run = cmd_train(&cfg, &data, out, resume, stop_after)?;
            if let Some(last) = run.log.last() {
                println!(
                    "trained to epoch {} ({} steps), final loss {:.6}",
                    run.state.epochs_done, run.state.step, last.report.total
                );
            } else {
                println!("nothing to do: {} epochs already done", run.state.epochs_done);
            }
            Ok(EXIT_OK)
        }
        Command::Track {
            common,
            checkpoint,
            data,
        } => {
            let cfg = common.resolve()?;
            let out = common.out_dir()?;
            let s = cmd_track(&cfg, &checkpoint, &data, out, common.deterministic)?;
            println!(
                "tracked {} sequences, {} frames in {:.2}s ({:.1} frames/s)",
                s.sequences,
                s.frames,
                s.seconds,
                s.fps()
            );
            Ok(EXIT_OK)
        }
        Command::Eval {
            common,
            results,
            data,
        } => {
            let cfg = common.resolve()?;
            let out = common.out_dir()?;
            let rows = cmd_eval(&cfg, &results, &data, out, common.deterministic)?;
            print!("{}", format_comparison(&rows));
            Ok(EXIT_OK)
        }
        Command::Gradcheck { common, seeds } => {
            let cfg = common.resolve()?;
            let reports = cmd_gradcheck(cfg.seed, seeds)?;
            let text = format_report(&reports);
            print!("{text}");
            if let Some(out) = &common.out {
                fs::write(out, &text).map_err(|e| Error::io(out, e))?;
            }
            Ok(if reports.iter().all(OpReport::passed) {
                EXIT_OK
            } else {
                EXIT_VERIFICATION
            })
        }
    }
}

/// Generates the configured synthetic benchmark into `out`; returns the sequence count.
pub fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<usize> {
    let seqs = gen_benchmark(&cfg.data.synth, cfg.seed)?;
    write_dataset(out, &seqs)?;
    Ok(seqs.len())
}

pub const CONFIG_FILE: &str = "config.cfg";
pub const LAST_CHECKPOINT: &str = "last.thnk";

pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, resume: bool, stop_after: Option<usize>) -> Result<TrainRun> {
    let sequences = load_dataset(data)?;
    let state = if resume {
        let state = TrainState::load(&out.join(LAST_CHECKPOINT))?;
        if state.config_hash != cfg.model_hash() {
            return Err(Error::Checkpoint(format!(
                "{} was written under a different model config (hash {:016x}, current {:016x})",
                out.join(LAST_CHECKPOINT).display(),
                state.config_hash,
                cfg.model_hash()
            )));
        }
        state
    } else {
        TrainState::fresh(cfg.model().init(cfg.seed)?, cfg.model_hash())
    };
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join(CONFIG_FILE);
    fs::write(&cfg_path, cfg.to_text()).map_err(|e| Error::io(&cfg_path, e))?;
    train(
        cfg,
        &sequences,
        state,
        &TrainOptions {
            out_dir: Some(out),
            stop_after,
        },
    )
}

#[derive(Clone, Copy, Debug)]
pub struct TrackSummary {
    pub sequences: usize,
    pub frames: usize,
    /// Wall time of the one-pass runs only.
    pub seconds: f64,
}

impl TrackSummary {
    pub fn fps(&self) -> f64 {
        self.frames as f64 / self.seconds.max(1e-9)
    }
}

pub fn vot_trace_name(sequence: &str) -> String {
    format!("{sequence}.vot.csv")
}

pub fn result_name(sequence: &str) -> String {
    format!("{sequence}.csv")
}

/// Writes `<name>.csv` (one-pass) and `<name>.vot.csv` (reset protocol) per sequence.
pub fn cmd_track(cfg: &RunConfig, checkpoint: &Path, data: &Path, out: &Path, deterministic: bool) -> Result<TrackSummary> {
    let net = Network::new(cfg.model(), load_params(checkpoint, cfg)?)?;
    let sequences = load_dataset(data)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let workers = parallel::worker_count(deterministic);
    let timed = parallel::map(&sequences, workers, |seq| -> Result<(usize, f64)> {
        let mut tracker = SiameseTracker::new(&net, cfg.data.sizes.clone())?;
        let start = Instant::now();
        let rows = track_sequence(&mut tracker, seq)?;
        let secs = start.elapsed().as_secs_f64();
        write_results(&out.join(result_name(seq.name())), &rows)?;
        let mut tracker = SiameseTracker::new(&net, cfg.data.sizes.clone())?;
        let (trace, _) = vot_run(&mut tracker, seq, &cfg.eval)?;
        let path = out.join(vot_trace_name(seq.name()));
        fs::write(&path, format_vot_trace(&trace)).map_err(|e| Error::io(&path, e))?;
        Ok((rows.len(), secs))
    });
    let mut summary = TrackSummary {
        sequences: sequences.len(),
        frames: 0,
        seconds: 0.0,
    };
    for r in timed {
        let (frames, secs) = r?;
        summary.frames += frames;
        summary.seconds += secs;
    }
    Ok(summary)
}

#[derive(Clone, Debug)]
pub struct TrackerScore {
    pub name: String,
    pub curves: EvalCurves,
    pub vot: VotSummary,
}

/// Loads one sequence's predictions and its reset-protocol report. Without a
/// stored trace, the one-pass boxes are replayed through the protocol.
fn score_sequence(ann: &SequenceAnnotation, dir: &Path, cfg: &RunConfig) -> Result<(Vec<BBox>, VotReport)> {
    let path = dir.join(result_name(&ann.name));
    if !path.exists() {
        return Err(Error::Eval(format!(
            "missing results for sequence `{}` in {}",
            ann.name,
            dir.display()
        )));
    }
    let pred: Vec<BBox> = read_results(&path)?.into_iter().map(|r| r.bbox).collect();
    if pred.len() != ann.gt.len() {
        return Err(Error::Eval(format!(
            "{} has {} rows for {} frames",
            path.display(),
            pred.len(),
            ann.gt.len()
        )));
    }
    let trace_path = dir.join(vot_trace_name(&ann.name));
    let report = if trace_path.exists() {
        let text = fs::read_to_string(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        vot_report(&parse_vot_trace(&text)?, &cfg.eval)
    } else {
        let blank = vec![RgbImage::new(1, 1, [0; 3]); ann.gt.len()];
        let seq = Sequence::new(ann.clone(), blank)?;
        vot_run(&mut ReplayTracker::new(pred.clone()), &seq, &cfg.eval)?.1
    };
    Ok((pred, report))
}

/// Scores every results directory; writes `<out>/<tracker>/` curves and
/// summaries plus `<out>/comparison.csv`.
pub fn cmd_eval(
    cfg: &RunConfig,
    results: &[PathBuf],
    data: &Path,
    out: &Path,
    deterministic: bool,
) -> Result<Vec<TrackerScore>> {
    let anns = load_annotations(data)?;
    let workers = parallel::worker_count(deterministic);
    let mut rows = Vec::new();
    let mut used = BTreeSet::new();
    for dir in results {
        let name = tracker_name(dir, &used);
        used.insert(name.clone());
        let scored = parallel::map(&anns, workers, |a| score_sequence(a, dir, cfg))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        let curves = evaluate(anns.iter().zip(&scored).map(|(a, (p, _))| (p.as_slice(), a.gt.as_slice())))?;
        let reports: Vec<VotReport> = scored.iter().map(|(_, r)| r.clone()).collect();
        let vot = summarize_vot(&reports);
        let per_attr: Vec<(&[BBox], &[BBox], &BTreeSet<String>)> = anns
            .iter()
            .zip(&scored)
            .map(|(a, (p, _))| (p.as_slice(), a.gt.as_slice(), &a.attributes))
            .collect();
        let breakdown = attribute_breakdown(&per_attr)?;
        let tdir = out.join(&name);
        write_curves(&tdir, "overall", &curves)?;
        for (tag, c) in &breakdown.curves {
            write_curves(&tdir, &format!("attr-{tag}"), c)?;
        }
        for tag in &breakdown.skipped {
            eprintln!("thn: skipping unknown attribute tag `{tag}`");
        }
        let summary = tdir.join("summary.txt");
        fs::write(&summary, format_summary(&curves, &vot)).map_err(|e| Error::io(&summary, e))?;
        rows.push(TrackerScore { name, curves, vot });
    }
    let table = out.join("comparison.csv");
    fs::write(&table, format_comparison(&rows)).map_err(|e| Error::io(&table, e))?;
    Ok(rows)
}

fn tracker_name(dir: &Path, used: &BTreeSet<String>) -> String {
    let base = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .filter(|n| !n.is_empty())
        .unwrap_or_else(|| "results".to_owned());
    let mut name = base.clone();
    let mut k = 2;
    while used.contains(&name) {
        name = format!("{base}-{k}");
        k += 1;
    }
    name
}

pub fn format_comparison(rows: &[TrackerScore]) -> String {
    let mut out = String::from("tracker,auc,precision_at_20,accuracy,robustness,eao_simple\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.name, r.curves.auc, r.curves.precision_at_20, r.vot.accuracy, r.vot.robustness, r.vot.eao_simple
        ));
    }
    out
}

pub fn cmd_gradcheck(seed: u64, n_seeds: usize) -> Result<Vec<OpReport>> {
    if n_seeds == 0 {
        return Err(Error::Usage("--seeds must be at least 1".into()));
    }
    run_suite(seed, n_seeds)
}
