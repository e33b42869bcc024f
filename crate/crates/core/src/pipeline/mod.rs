//! End-to-end runs: train, evaluate, sweep and report, each writing into an
//! output directory.

pub mod config;
pub mod eval;
pub mod infer;
pub mod report;
pub mod rng;
pub mod train;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::data::{Manifest, ID_TEST, ID_TRAIN};
use crate::error::{Error, Result};
use crate::model::Model;

pub use config::{ExtractionRefresh, RunConfig, Stage};
pub use eval::{evaluate, write_evaluation, EvalEntry, EvalSettings, EvalSummary, Evaluation};
pub use infer::{featurize, SplitFeatures};
pub use report::{build_report, Report};
pub use train::{train, EpochRecord, Objective, TrainData, TrainSummary};

pub const EFFECTIVE_CONFIG: &str = "effective-config.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train-log.csv";
pub const EXTRACTION_DUMP: &str = "extraction.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub(crate) fn require<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("missing required flag --{flag}")))
}

pub(crate) fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_effective_config(dir: &Path, text: &str) -> Result<()> {
    let path = dir.join(EFFECTIVE_CONFIG);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Finished training run.
#[derive(Debug)]
pub struct TrainRun {
    pub model: Model,
    pub summary: TrainSummary,
    pub checkpoint: PathBuf,
}

/// Pre-train from scratch or fine-tune a checkpoint, per `cfg.stage`.
///
/// Writes `model.ckpt`, `train-log.csv`, `effective-config.txt` and, when
/// asked, `extraction.csv` under `cfg.out`.
pub fn run_training(cfg: &RunConfig) -> Result<TrainRun> {
    let mut cfg = cfg.clone();
    let data_dir = require(&cfg.data, "data")?.to_path_buf();
    let out = require(&cfg.out, "out")?.to_path_buf();
    cfg.validate()?;
    let manifest = Manifest::load(&data_dir)?;
    let model = match cfg.stage {
        Stage::Pretrain => {
            if cfg.encoder.image_side != manifest.image_side {
                cfg.encoder.image_side = manifest.image_side;
            }
            Model::new(cfg.encoder.clone(), manifest.classes, &mut rng::stream(cfg.seed, rng::Stream::Init))?
        }
        Stage::Finetune => {
            let ckpt = require(&cfg.checkpoint, "checkpoint")?;
            if !ckpt.exists() {
                return Err(Error::MissingFile(ckpt.to_path_buf()));
            }
            let (m, _) = Model::load(ckpt)?;
            cfg.encoder = m.config.clone();
            m
        }
    };
    let train_set = manifest.load_split(&data_dir, ID_TRAIN)?;
    let test_set = manifest.load_split(&data_dir, ID_TEST)?;
    make_dir(&out)?;
    write_effective_config(&out, &cfg.to_text())?;

    let data = TrainData { train: &train_set, test: Some(&test_set), norm: &manifest.normalization };
    let objective = Objective::from_config(&cfg);
    let summary = if cfg.dump_extraction && cfg.stage == Stage::Finetune {
        let path = out.join(EXTRACTION_DUMP);
        let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
        let s = train(&model, &data, &cfg, objective, Some(&mut w))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        s
    } else {
        train(&model, &data, &cfg, objective, None)?
    };

    let checkpoint = out.join(CHECKPOINT_FILE);
    model.save(&checkpoint, &cfg.echo())?;
    let log = out.join(TRAIN_LOG);
    let mut w = BufWriter::new(File::create(&log).map_err(|e| Error::io(&log, e))?);
    train::write_train_log(&mut w, &summary).and_then(|_| w.flush()).map_err(|e| Error::io(&log, e))?;
    Ok(TrainRun { model, summary, checkpoint })
}

/// Score a checkpoint on every test split and write the results to `cfg.out`.
///
/// The label used in reports is the output directory's name.
pub fn run_evaluation(cfg: &RunConfig) -> Result<Evaluation> {
    let ckpt = require(&cfg.checkpoint, "checkpoint")?;
    let data_dir = require(&cfg.data, "data")?;
    let out = require(&cfg.out, "out")?;
    if !ckpt.exists() {
        return Err(Error::MissingFile(ckpt.to_path_buf()));
    }
    let (model, _) = Model::load(ckpt)?;
    let mut echo = cfg.clone();
    echo.encoder = model.config.clone();
    let label = out.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "eval".into());
    let evaluation = evaluate(&model, data_dir, &label, &EvalSettings::from_config(cfg))?;
    make_dir(out)?;
    write_effective_config(out, &echo.to_text())?;
    write_evaluation(out, &evaluation)?;
    Ok(evaluation)
}

/// One sweep result row.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub value: String,
    pub ood_split: String,
    pub score: String,
    pub fpr95: f64,
    pub auroc: f64,
    pub s_count_mean: f64,
}

pub const SWEEP_HEADER: &str = "value,fpr95,auroc,ood_split,score,s_count_mean";

/// Fine-tune and evaluate once per value of `param`, each into
/// `<out>/<param>-<value>/`, and write `sweep.csv`.
pub fn run_sweep(cfg: &RunConfig, param: &str, values: &[String]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value (--values)".into()));
    }
    if matches!(param, "stage" | "data" | "checkpoint" | "out") {
        return Err(Error::Config(format!("cannot sweep over '{param}'")));
    }
    let out = require(&cfg.out, "out")?.to_path_buf();
    let mut checked = cfg.clone();
    checked.stage = Stage::Finetune;
    for v in values {
        let mut c = checked.clone();
        c.set(param, v)?;
        c.validate()?;
    }
    make_dir(&out)?;
    write_effective_config(&out, &(checked.to_text() + &format!("sweep-param = {param}\nsweep-values = {}\n", values.join(","))))?;

    let mut rows = Vec::new();
    for v in values {
        let mut c = checked.clone();
        c.set(param, v)?;
        let dir = out.join(format!("{param}-{v}"));
        c.out = Some(dir.join("train"));
        let run = run_training(&c)?;
        let s_mean = run.summary.batch_s_counts.iter().sum::<usize>() as f64 / run.summary.batch_s_counts.len().max(1) as f64;
        c.checkpoint = Some(run.checkpoint.clone());
        c.out = Some(dir.join("eval"));
        let evaluation = run_evaluation(&c)?;
        for e in &evaluation.summary.entries {
            rows.push(SweepRow {
                value: v.clone(),
                ood_split: e.ood_split.clone(),
                score: e.score.clone(),
                fpr95: e.fpr95,
                auroc: e.auroc,
                s_count_mean: s_mean,
            });
        }
    }
    let path = out.join(SWEEP_FILE);
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    let io = |e| Error::io(&path, e);
    writeln!(w, "{SWEEP_HEADER}").map_err(io)?;
    for r in &rows {
        writeln!(w, "{},{},{},{},{},{}", r.value, r.fpr95, r.auroc, r.ood_split, r.score, r.s_count_mean).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(rows)
}
