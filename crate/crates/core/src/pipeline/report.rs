//! Aggregating evaluation directories into one report plus heatmaps.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bgextract;
use crate::data::{Manifest, ID_TEST};
use crate::error::{Error, Result};
use crate::model::{FeatureMaps, Model};
use crate::tensor::kernels;

use super::config::RunConfig;
use super::eval::EvalSummary;
use super::infer::normalized_batch;
use super::{make_dir, require, EFFECTIVE_CONFIG};

/// Images per split rendered as heatmaps.
pub const HEATMAP_IMAGES: usize = 4;

/// Local maps of one image: probability of the predicted class and feature norm.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub predicted: usize,
    pub prob: Vec<f32>,
    pub norm: Vec<f32>,
}

/// Heatmaps of images `0..count` of `split` (or fewer if the split is shorter).
pub fn heatmaps(model: &Model, data_dir: &Path, split: &str, count: usize) -> Result<Vec<Heatmap>> {
    let manifest = Manifest::load(data_dir)?;
    let data = manifest.load_split(data_dir, split)?;
    let n = count.min(data.len());
    let frozen = model.freeze();
    let z = frozen.feature_maps(&normalized_batch(&data, &manifest.normalization, 0..n), n)?;
    let side = frozen.config.feature_side();
    let maps = FeatureMaps::new(&z, n, frozen.feature_channels(), side, side)?;
    let logits = frozen.logits(&maps.global_features(), n);
    let k = frozen.class_count;
    (0..n)
        .map(|i| {
            let predicted = kernels::argmax(&logits[i * k..(i + 1) * k]);
            let probs = bgextract::local_softmax(&maps, i, &frozen.head)?;
            Ok(Heatmap {
                height: side,
                width: side,
                predicted,
                prob: probs.chunks_exact(k).map(|p| p[predicted]).collect(),
                norm: maps.local_vectors(i).chunks_exact(maps.channels).map(kernels::l2_norm).collect(),
            })
        })
        .collect()
}

/// `H` lines of `W` comma-separated values.
pub fn write_grid(out: &mut impl Write, values: &[f32], width: usize) -> std::io::Result<()> {
    for row in values.chunks(width) {
        let line: Vec<String> = row.iter().map(f32::to_string).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    /// Evaluation directory relative to the run directory.
    pub eval_dir: String,
    /// Mean local feature norm over the rendered heatmaps, per split.
    pub heatmap_mean_norm: BTreeMap<String, f64>,
    pub summary: EvalSummary,
}

/// Contents of `report.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub evaluations: Vec<ReportEntry>,
}

impl Report {
    pub fn find(&self, label: &str) -> Option<&ReportEntry> {
        self.evaluations.iter().find(|e| e.summary.label == label)
    }
}

fn eval_dirs(root: &Path, depth: usize, found: &mut Vec<PathBuf>) -> Result<()> {
    if root.join("eval.json").is_file() {
        found.push(root.to_path_buf());
    }
    if depth == 0 {
        return Ok(());
    }
    let mut children: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    children.sort();
    for c in children {
        eval_dirs(&c, depth - 1, found)?;
    }
    Ok(())
}

/// Collect every evaluation under `run_dir` (up to three levels deep) into
/// `<out>/report.json`, with heatmap grids under `<out>/heatmaps/<label>/`.
pub fn build_report(run_dir: &Path, out: &Path) -> Result<Report> {
    if !run_dir.is_dir() {
        return Err(Error::MissingFile(run_dir.to_path_buf()));
    }
    let mut dirs = Vec::new();
    eval_dirs(run_dir, 3, &mut dirs)?;
    if dirs.is_empty() {
        return Err(Error::Config(format!("no eval.json found under {}", run_dir.display())));
    }
    make_dir(out)?;
    let mut evaluations = Vec::new();
    for dir in dirs {
        let summary = EvalSummary::load(&dir.join("eval.json"))?;
        let mut cfg = RunConfig::defaults(super::Stage::Pretrain);
        cfg.apply_file(&dir.join(EFFECTIVE_CONFIG))?;
        let (model, _) = Model::load(require(&cfg.checkpoint, "checkpoint")?)?;
        let data_dir = require(&cfg.data, "data")?;

        let heat_dir = out.join("heatmaps").join(&summary.label);
        make_dir(&heat_dir)?;
        let mut splits = vec![ID_TEST.to_string()];
        splits.extend(Manifest::load(data_dir)?.ood_splits());
        let mut heatmap_mean_norm = BTreeMap::new();
        for split in splits {
            let maps = heatmaps(&model, data_dir, &split, HEATMAP_IMAGES)?;
            let mut total = 0f64;
            let mut cells = 0usize;
            for (i, h) in maps.iter().enumerate() {
                for (suffix, values) in [("prob", &h.prob), ("norm", &h.norm)] {
                    let path = heat_dir.join(format!("{split}-{i}-{suffix}.csv"));
                    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
                    write_grid(&mut w, values, h.width).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))?;
                }
                total += h.norm.iter().map(|&v| f64::from(v)).sum::<f64>();
                cells += h.norm.len();
            }
            heatmap_mean_norm.insert(split, total / cells.max(1) as f64);
        }
        let rel = dir.strip_prefix(run_dir).unwrap_or(&dir).display().to_string();
        evaluations.push(ReportEntry { eval_dir: if rel.is_empty() { ".".into() } else { rel }, heatmap_mean_norm, summary });
    }
    let report = Report { evaluations };
    let path = out.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
