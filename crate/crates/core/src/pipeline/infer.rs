//! Batched, optionally multi-threaded inference over whole datasets.

use crate::data::{Dataset, Normalization};
use crate::error::Result;
use crate::model::{FeatureMaps, FrozenModel};
use crate::scoring;
use crate::tensor::kernels;

const CHUNK: usize = 64;

/// Per-image quantities every score is computed from.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitFeatures {
    pub count: usize,
    pub channels: usize,
    pub classes: usize,
    /// `N×C` pooled features.
    pub global: Vec<f32>,
    /// `N×K` head outputs.
    pub logits: Vec<f32>,
    /// Mean local feature norm per image.
    pub featurenorm: Vec<f32>,
    pub labels: Vec<u8>,
}

impl SplitFeatures {
    pub fn global_row(&self, i: usize) -> &[f32] {
        &self.global[i * self.channels..(i + 1) * self.channels]
    }

    pub fn logit_row(&self, i: usize) -> &[f32] {
        &self.logits[i * self.classes..(i + 1) * self.classes]
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.logits.chunks_exact(self.classes).map(kernels::argmax).collect()
    }

    /// Fraction of images whose prediction matches the stored label.
    pub fn accuracy(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let hits = self.predictions().iter().zip(&self.labels).filter(|(p, &y)| **p == usize::from(y)).count();
        hits as f64 / self.count as f64
    }

    pub fn mean_global_norm(&self) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        let total: f64 = self.global.chunks_exact(self.channels).map(|v| f64::from(kernels::l2_norm(v))).sum();
        total / self.count as f64
    }

    fn append(&mut self, other: SplitFeatures) {
        self.count += other.count;
        self.global.extend(other.global);
        self.logits.extend(other.logits);
        self.featurenorm.extend(other.featurenorm);
        self.labels.extend(other.labels);
    }
}

/// Images `range` normalized into one `N×3×S×S` buffer.
pub fn normalized_batch(data: &Dataset, norm: &Normalization, range: std::ops::Range<usize>) -> Vec<f32> {
    let mut x = Vec::with_capacity(range.len() * data.image_len());
    for i in range {
        let mut img = data.image(i);
        norm.apply(&mut img);
        x.extend(img);
    }
    x
}

fn featurize_range(model: &FrozenModel, data: &Dataset, norm: &Normalization, range: std::ops::Range<usize>) -> Result<SplitFeatures> {
    let c = model.feature_channels();
    let side = model.config.feature_side();
    let mut out = SplitFeatures { channels: c, classes: model.class_count, ..Default::default() };
    let mut start = range.start;
    while start < range.end {
        let end = (start + CHUNK).min(range.end);
        let n = end - start;
        let z = model.feature_maps(&normalized_batch(data, norm, start..end), n)?;
        let maps = FeatureMaps::new(&z, n, c, side, side)?;
        let global = maps.global_features();
        out.logits.extend(model.logits(&global, n));
        out.global.extend(global);
        out.featurenorm.extend((0..n).map(|i| scoring::featurenorm_score(&maps, i)));
        out.labels.extend_from_slice(&data.labels[start..end]);
        out.count += n;
        start = end;
    }
    Ok(out)
}

/// Features of the first `limit` images (0 = all) on `threads` workers.
///
/// Every image is processed on its own, so the result does not depend on the
/// thread count.
pub fn featurize(model: &FrozenModel, data: &Dataset, norm: &Normalization, limit: usize, threads: usize) -> Result<SplitFeatures> {
    let total = if limit == 0 { data.len() } else { limit.min(data.len()) };
    let threads = threads.max(1).min(total.div_ceil(CHUNK).max(1));
    if threads == 1 {
        return featurize_range(model, data, norm, 0..total);
    }
    let per = total.div_ceil(threads);
    let parts: Vec<Result<SplitFeatures>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let range = (t * per).min(total)..((t + 1) * per).min(total);
                s.spawn(move || featurize_range(model, data, norm, range))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("inference worker panicked")).collect()
    });
    let mut out = SplitFeatures { channels: model.feature_channels(), classes: model.class_count, ..Default::default() };
    for p in parts {
        out.append(p?);
    }
    Ok(out)
}

/// Worker count from `OODKIT_THREADS`, defaulting to 1.
pub fn threads_from_env() -> usize {
    std::env::var("OODKIT_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}
