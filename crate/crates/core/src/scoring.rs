//! Post-hoc OOD scores. Every score is oriented so that higher means more
//! in-distribution.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureMaps, LinearHead, Model};
use crate::tensor::{self, kernels, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreKind {
    Msp,
    Energy,
    Odin,
    ReactEnergy,
    FeatureNorm,
}

impl ScoreKind {
    pub const ALL: [ScoreKind; 5] =
        [ScoreKind::Msp, ScoreKind::Energy, ScoreKind::Odin, ScoreKind::ReactEnergy, ScoreKind::FeatureNorm];

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::Msp => "msp",
            ScoreKind::Energy => "energy",
            ScoreKind::Odin => "odin",
            ScoreKind::ReactEnergy => "react-energy",
            ScoreKind::FeatureNorm => "featurenorm",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScoreKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScoreKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown score '{s}' (expected msp, energy, odin, react-energy, featurenorm)")))
    }
}

/// `log Σ exp(logits)`.
pub fn energy_score(logits: &[f32]) -> f32 {
    kernels::log_sum_exp(logits)
}

/// Largest softmax probability.
pub fn msp_score(logits: &[f32]) -> f32 {
    kernels::softmax(logits).into_iter().fold(f32::NEG_INFINITY, f32::max)
}

/// Largest softmax probability at temperature `t`.
pub fn tempered_msp(logits: &[f32], t: f32) -> f32 {
    let inv = 1.0 / t;
    let scaled: Vec<f32> = logits.iter().map(|v| v * inv).collect();
    msp_score(&scaled)
}

/// Temperature-scaled MSP after an optional input perturbation of size `epsilon`
/// that raises the tempered max-softmax. `image` is one normalized `1×C×S×S` input.
pub fn odin_score(model: &Model, image: &Tensor, temperature: f32, epsilon: f32) -> Result<f32> {
    if !(temperature > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "odin needs temperature > 0 and epsilon >= 0, got {temperature}, {epsilon}"
        )));
    }
    if image.shape().first() != Some(&1) {
        return Err(Error::shape("odin_score", format!("expected one image, got {:?}", image.shape())));
    }
    let frozen = model.freeze();
    let logits_of = |pixels: &[f32]| -> Result<Vec<f32>> {
        let z = frozen.feature_maps(pixels, 1)?;
        let maps = FeatureMaps::of(&z, &[1, frozen.feature_channels(), frozen.config.feature_side(), frozen.config.feature_side()])?;
        Ok(frozen.logits(&maps.global_features(), 1))
    };
    if epsilon == 0.0 {
        return Ok(tempered_msp(&logits_of(&image.data())?, temperature));
    }

    // Constant copy of the weights so only the input collects a gradient.
    let constant = Model {
        config: model.config.clone(),
        class_count: model.class_count,
        layers: model
            .layers
            .iter()
            .map(crate::model::ConvLayer::detached)
            .collect(),
        head_weight: model.head_weight.detach(),
        head_bias: model.head_bias.detach(),
    };
    let x = Tensor::parameter(image.shape(), image.to_vec())?;
    let z = constant.forward_encoder(&x, crate::model::Mode::Eval)?;
    let logits = constant.classify(&tensor::global_average_pool(&z)?)?;
    let predicted = kernels::argmax(&logits.data());
    // cross-entropy on the predicted class is −log S_max(x; T)
    let nll = tensor::cross_entropy(&tensor::scale(&logits, 1.0 / temperature), &[predicted])?;
    nll.backward()?;
    let grad = x.grad().expect("input requires grad");
    let perturbed: Vec<f32> = x
        .data()
        .iter()
        .zip(&grad)
        .map(|(v, g)| v - epsilon * if *g > 0.0 { 1.0 } else if *g < 0.0 { -1.0 } else { 0.0 })
        .collect();
    Ok(tempered_msp(&logits_of(&perturbed)?, temperature))
}

/// Clip value for ReAct, fitted on pooled ID-training activations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactThreshold {
    pub clip: f32,
    pub percentile: f32,
    pub fitted_on: String,
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f32], pct: f32) -> Result<f32> {
    if values.is_empty() || !(0.0..=100.0).contains(&pct) {
        return Err(Error::InvalidArgument(format!("percentile {pct} of {} values", values.len())));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f32::total_cmp);
    let pos = f64::from(pct) / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    Ok((f64::from(sorted[lo]) + frac * (f64::from(sorted[hi]) - f64::from(sorted[lo]))) as f32)
}

pub fn fit_react_threshold(activations: &[f32], pct: f32, fitted_on: &str) -> Result<ReactThreshold> {
    let clip = percentile(activations, pct)?;
    if !(clip > 0.0) {
        return Err(Error::InvalidArgument(format!("ReAct clip value must be positive, fitted {clip}")));
    }
    Ok(ReactThreshold { clip, percentile: pct, fitted_on: fitted_on.to_string() })
}

/// Energy of the head applied to the global feature clipped at `c`.
pub fn react_energy_score(global_feature: &[f32], head: &LinearHead, threshold: Option<&ReactThreshold>) -> Result<f32> {
    let threshold = threshold.ok_or_else(|| Error::InvalidArgument("ReAct threshold has not been fitted".into()))?;
    if global_feature.len() != head.channels {
        return Err(Error::shape("react_energy_score", format!("feature width {} vs head {}", global_feature.len(), head.channels)));
    }
    let clipped: Vec<f32> = global_feature.iter().map(|v| v.min(threshold.clip)).collect();
    Ok(energy_score(&head.logits(&clipped, 1)))
}

/// Mean per-location L2 norm of sample `n`'s feature map.
pub fn featurenorm_score(maps: &FeatureMaps<'_>, n: usize) -> f32 {
    let plane = maps.locations();
    let c = maps.channels;
    let total: f32 = maps.local_vectors(n).chunks_exact(c).map(kernels::l2_norm).sum();
    total / plane as f32
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Detection {
    Id,
    Ood,
}

/// ID iff `score ≥ gamma`.
pub fn detect(score: f32, gamma: f32) -> Detection {
    if score >= gamma {
        Detection::Id
    } else {
        Detection::Ood
    }
}

/// One scored sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: usize,
    pub split: String,
    pub score: f32,
}

pub fn write_scores_csv(out: &mut impl Write, records: &[ScoreRecord]) -> std::io::Result<()> {
    writeln!(out, "id,split,score")?;
    for r in records {
        writeln!(out, "{},{},{}", r.id, r.split, r.score)?;
    }
    Ok(())
}

pub const FVEC_MAGIC: &[u8; 4] = b"FVEC";

/// `"FVEC" | count u64 LE | dim u64 LE | count×dim f32 LE`.
pub fn encode_fvec(rows: &[f32], dim: usize) -> Result<Vec<u8>> {
    if dim == 0 || !rows.len().is_multiple_of(dim) {
        return Err(Error::MalformedFeatures(format!("{} values do not split into rows of {dim}", rows.len())));
    }
    let mut out = Vec::with_capacity(20 + rows.len() * 4);
    out.extend_from_slice(FVEC_MAGIC);
    out.extend_from_slice(&((rows.len() / dim) as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    rows.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
    Ok(out)
}

/// Returns `(rows, dim)`.
pub fn decode_fvec(bytes: &[u8]) -> Result<(Vec<f32>, usize)> {
    if bytes.len() < 20 || &bytes[..4] != FVEC_MAGIC {
        return Err(Error::MalformedFeatures("missing FVEC header".into()));
    }
    let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap()) as usize;
    let dim = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let expected = count.checked_mul(dim).and_then(|n| n.checked_mul(4)).and_then(|n| n.checked_add(20));
    if expected != Some(bytes.len()) {
        return Err(Error::MalformedFeatures(format!("{count}×{dim} rows do not match {} bytes", bytes.len())));
    }
    let rows = bytes[20..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((rows, dim))
}

pub fn write_fvec(path: &Path, rows: &[f32], dim: usize) -> Result<()> {
    fs::write(path, encode_fvec(rows, dim)?).map_err(|e| Error::io(path, e))
}

pub fn read_fvec(path: &Path) -> Result<(Vec<f32>, usize)> {
    decode_fvec(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
