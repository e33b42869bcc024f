//! Scoring every test split and summarizing detection quality.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Manifest, Normalization, ID_TEST, ID_TRAIN};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport, Histogram};
use crate::model::Model;
use crate::scoring::{self, ReactThreshold, ScoreKind, ScoreRecord};
use crate::tensor::{kernels, Tensor};

use super::infer::{self, normalized_batch, SplitFeatures};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub react_percentile: f32,
    pub odin_temperature: f32,
    pub odin_epsilon: f32,
    /// First N images of each test split (0 = all).
    pub eval_limit: usize,
    pub threads: usize,
    pub scores: Vec<ScoreKind>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            react_percentile: 90.0,
            odin_temperature: 1000.0,
            odin_epsilon: 0.0,
            eval_limit: 0,
            threads: 1,
            scores: ScoreKind::ALL.to_vec(),
        }
    }
}

impl EvalSettings {
    pub fn from_config(cfg: &super::RunConfig) -> Self {
        EvalSettings {
            react_percentile: cfg.react_percentile,
            odin_temperature: cfg.odin_temperature,
            odin_epsilon: cfg.odin_epsilon,
            eval_limit: cfg.eval_limit,
            threads: infer::threads_from_env(),
            scores: ScoreKind::ALL.to_vec(),
        }
    }
}

/// One (OOD split, score) result.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub ood_split: String,
    pub score: String,
    pub fpr95: f64,
    pub auroc: f64,
    /// `null` when no threshold reaches the target rate.
    pub gamma95: Option<f32>,
    pub id_count: usize,
    pub ood_count: usize,
}

impl EvalEntry {
    fn new(ood_split: &str, kind: ScoreKind, r: &EvalReport) -> Self {
        EvalEntry {
            ood_split: ood_split.to_string(),
            score: kind.name().to_string(),
            fpr95: r.fpr95,
            auroc: r.auroc,
            gamma95: r.gamma95.is_finite().then_some(r.gamma95),
            id_count: r.id_count,
            ood_count: r.ood_count,
        }
    }
}

/// Contents of `eval.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub label: String,
    pub id_test_accuracy: f64,
    pub react: ReactThreshold,
    /// Mean L2 norm of the pooled feature per split.
    pub mean_global_norm: BTreeMap<String, f64>,
    /// Mean local feature norm per split.
    pub mean_featurenorm: BTreeMap<String, f64>,
    pub entries: Vec<EvalEntry>,
}

impl EvalSummary {
    pub fn entry(&self, ood_split: &str, kind: ScoreKind) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.ood_split == ood_split && e.score == kind.name())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// `(split, per-image scores)` pairs.
pub type SplitScores = Vec<(String, Vec<f32>)>;

/// Full evaluation result, including per-image scores.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub summary: EvalSummary,
    /// `(split, features)`, ID test first.
    pub features: Vec<(String, SplitFeatures)>,
    /// Per score: `(split, per-image scores)` in the same split order.
    pub scores: Vec<(ScoreKind, SplitScores)>,
}

impl Evaluation {
    pub fn scores_of(&self, kind: ScoreKind, split: &str) -> Option<&[f32]> {
        let (_, per) = self.scores.iter().find(|(k, _)| *k == kind)?;
        per.iter().find(|(s, _)| s == split).map(|(_, v)| v.as_slice())
    }
}

/// Per-image values of one score. Higher means more in-distribution.
pub fn score_split(
    model: &Model,
    kind: ScoreKind,
    feats: &SplitFeatures,
    react: &ReactThreshold,
    settings: &EvalSettings,
    images: Option<(&Dataset, &Normalization)>,
) -> Result<Vec<f32>> {
    let head = model.head();
    (0..feats.count)
        .map(|i| match kind {
            ScoreKind::Msp => Ok(scoring::msp_score(feats.logit_row(i))),
            ScoreKind::Energy => Ok(scoring::energy_score(feats.logit_row(i))),
            ScoreKind::ReactEnergy => scoring::react_energy_score(feats.global_row(i), &head, Some(react)),
            ScoreKind::FeatureNorm => Ok(feats.featurenorm[i]),
            ScoreKind::Odin if settings.odin_epsilon == 0.0 => {
                Ok(scoring::tempered_msp(feats.logit_row(i), settings.odin_temperature))
            }
            ScoreKind::Odin => {
                let (data, norm) =
                    images.ok_or_else(|| Error::InvalidArgument("ODIN with epsilon > 0 needs the images".into()))?;
                let side = data.side;
                let x = Tensor::new(&[1, 3, side, side], normalized_batch(data, norm, i..i + 1))?;
                scoring::odin_score(model, &x, settings.odin_temperature, settings.odin_epsilon)
            }
        })
        .collect()
}

/// Fit ReAct on id-train, then score ID test and every OOD split.
pub fn evaluate(model: &Model, data_dir: &Path, label: &str, settings: &EvalSettings) -> Result<Evaluation> {
    let manifest = Manifest::load(data_dir)?;
    let norm = &manifest.normalization;
    let frozen = model.freeze();

    let train = manifest.load_split(data_dir, ID_TRAIN)?;
    let train_feats = infer::featurize(&frozen, &train, norm, 0, settings.threads)?;
    let react = scoring::fit_react_threshold(&train_feats.global, settings.react_percentile, ID_TRAIN)?;

    let mut names = vec![ID_TEST.to_string()];
    names.extend(manifest.ood_splits());
    let mut datasets = Vec::new();
    let mut features = Vec::new();
    for name in &names {
        let mut d = manifest.load_split(data_dir, name)?;
        if settings.eval_limit > 0 {
            d = d.take(settings.eval_limit);
        }
        features.push((name.clone(), infer::featurize(&frozen, &d, norm, 0, settings.threads)?));
        datasets.push(d);
    }

    let mut scores = Vec::new();
    for &kind in &settings.scores {
        let mut per = Vec::new();
        for ((name, f), d) in features.iter().zip(&datasets) {
            per.push((name.clone(), score_split(model, kind, f, &react, settings, Some((d, norm)))?));
        }
        scores.push((kind, per));
    }

    let mut entries = Vec::new();
    for (kind, per) in &scores {
        let id = &per[0].1;
        for (name, ood) in &per[1..] {
            entries.push(EvalEntry::new(name, *kind, &EvalReport::compute(id, ood)?));
        }
    }
    let summary = EvalSummary {
        label: label.to_string(),
        id_test_accuracy: features[0].1.accuracy(),
        react,
        mean_global_norm: features.iter().map(|(n, f)| (n.clone(), f.mean_global_norm())).collect(),
        mean_featurenorm: features
            .iter()
            .map(|(n, f)| (n.clone(), f.featurenorm.iter().map(|&v| f64::from(v)).sum::<f64>() / f.count.max(1) as f64))
            .collect(),
        entries,
    };
    Ok(Evaluation { summary, features, scores })
}

const BINS: usize = 40;

fn shared_range(a: &[f32], b: &[f32]) -> (f32, f32) {
    let (lo, hi) = a.iter().chain(b).fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo { (lo, hi + (hi - lo) * 1e-6) } else { (lo, lo + 1.0) }
}

fn histogram(values: &[f32], lo: f32, hi: f32) -> Result<Histogram> {
    let mut h = Histogram::new(BINS, lo, hi)?;
    values.iter().for_each(|&v| h.add(v));
    Ok(h)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// `eval.json`, `scores-<score>.csv`, `norm-hist-<split>.csv` and
/// `score-hist-<score>-<split>.csv` under `dir`.
pub fn write_evaluation(dir: &Path, eval: &Evaluation) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join("eval.json");
    fs::write(&path, serde_json::to_string_pretty(&eval.summary)? + "\n").map_err(|e| Error::io(&path, e))?;

    for (kind, per) in &eval.scores {
        let path = dir.join(format!("scores-{}.csv", kind.name()));
        let records: Vec<ScoreRecord> = per
            .iter()
            .flat_map(|(split, v)| {
                v.iter().enumerate().map(move |(i, &s)| ScoreRecord { id: i, split: split.clone(), score: s })
            })
            .collect();
        let mut out = create(&path)?;
        scoring::write_scores_csv(&mut out, &records).and_then(|_| out.flush()).map_err(|e| Error::io(&path, e))?;

        let id = &per[0].1;
        for (split, ood) in &per[1..] {
            let (lo, hi) = shared_range(id, ood);
            let path = dir.join(format!("score-hist-{}-{split}.csv", kind.name()));
            let mut out = create(&path)?;
            metrics::write_histogram_csv(&mut out, &histogram(id, lo, hi)?, &histogram(ood, lo, hi)?)?;
            out.flush().map_err(|e| Error::io(&path, e))?;
        }
    }

    let norms = |f: &SplitFeatures| f.global.chunks_exact(f.channels).map(kernels::l2_norm).collect::<Vec<f32>>();
    let id = norms(&eval.features[0].1);
    for (split, f) in &eval.features[1..] {
        let ood = norms(f);
        let (_, hi) = shared_range(&id, &ood);
        let path = dir.join(format!("norm-hist-{split}.csv"));
        let mut out = create(&path)?;
        metrics::write_histogram_csv(&mut out, &histogram(&id, 0.0, hi.max(1e-6))?, &histogram(&ood, 0.0, hi.max(1e-6))?)?;
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
