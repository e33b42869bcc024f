//! Local background feature extraction.
//!
//! Each spatial location `j` of a feature map is pushed through the shared
//! head on its own; locations whose ground-truth-class probability falls
//! strictly below `delta` form the background set. Selection is a hard mask:
//! no gradient flows through the decision.

use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{FeatureMaps, LinearHead};
use crate::tensor::kernels;

/// Ground-truth-class probability at every location of one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalProbGrid {
    pub height: usize,
    pub width: usize,
    pub label: usize,
    /// Row-major `H×W`.
    pub probs: Vec<f32>,
}

/// A selected local feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackgroundMember {
    pub sample: usize,
    pub location: usize,
}

/// Selected local features pooled over a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BackgroundSet {
    pub delta: f32,
    pub channels: usize,
    pub members: Vec<BackgroundMember>,
    /// Feature vectors of the members, `|S|×C` row-major.
    pub vectors: Vec<f32>,
}

impl BackgroundSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// `(sample, location)` pairs in selection order.
    pub fn picks(&self) -> Vec<(usize, usize)> {
        self.members.iter().map(|m| (m.sample, m.location)).collect()
    }

    pub fn vector(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.channels..(i + 1) * self.channels]
    }
}

/// Softmax of the head applied to every local vector of sample `n`, all classes.
/// Returns an `(H·W)×K` row-major matrix.
pub fn local_softmax(maps: &FeatureMaps<'_>, n: usize, head: &LinearHead) -> Result<Vec<f32>> {
    if maps.channels != head.channels {
        return Err(Error::shape(
            "local_probabilities",
            format!("map has {} channels, head expects {}", maps.channels, head.channels),
        ));
    }
    let plane = maps.locations();
    let logits = head.logits(&maps.local_vectors(n), plane);
    Ok(logits.chunks_exact(head.classes).flat_map(kernels::softmax).collect())
}

/// Per-location probability of `label` for sample `n`.
pub fn local_probabilities(maps: &FeatureMaps<'_>, n: usize, head: &LinearHead, label: usize) -> Result<LocalProbGrid> {
    if label >= head.classes {
        return Err(Error::InvalidArgument(format!("label {label} outside 0..{}", head.classes)));
    }
    let probs = local_softmax(maps, n, head)?.chunks_exact(head.classes).map(|p| p[label]).collect();
    Ok(LocalProbGrid { height: maps.height, width: maps.width, label, probs })
}

fn check_delta(delta: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::InvalidArgument(format!("delta must lie in [0, 1], got {delta}")));
    }
    Ok(())
}

/// Probability grids for a whole batch.
pub fn batch_probabilities(maps: &FeatureMaps<'_>, labels: &[usize], head: &LinearHead) -> Result<Vec<LocalProbGrid>> {
    if labels.len() != maps.batch {
        return Err(Error::shape("extract_background_set", format!("{} labels for {} maps", labels.len(), maps.batch)));
    }
    labels.iter().enumerate().map(|(n, &y)| local_probabilities(maps, n, head, y)).collect()
}

/// Select the background set from already computed grids.
pub fn select_background(maps: &FeatureMaps<'_>, grids: &[LocalProbGrid], delta: f32) -> Result<BackgroundSet> {
    check_delta(delta)?;
    let mut members = Vec::new();
    let mut vectors = Vec::new();
    for (n, grid) in grids.iter().enumerate() {
        for (j, &p) in grid.probs.iter().enumerate() {
            if p < delta {
                members.push(BackgroundMember { sample: n, location: j });
                vectors.extend(maps.local_vector(n, j));
            }
        }
    }
    Ok(BackgroundSet { delta, channels: maps.channels, members, vectors })
}

/// The background set of a batch: every location with `p_j(y_i) < delta`.
pub fn extract_background_set(
    maps: &FeatureMaps<'_>,
    labels: &[usize],
    head: &LinearHead,
    delta: f32,
) -> Result<BackgroundSet> {
    check_delta(delta)?;
    let grids = batch_probabilities(maps, labels, head)?;
    select_background(maps, &grids, delta)
}

/// Debug dump rows `sample,j,p,selected`. `offset` shifts sample indices.
pub fn write_extraction_csv(out: &mut impl Write, grids: &[LocalProbGrid], delta: f32, offset: usize, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "sample,j,p,selected")?;
    }
    for (n, g) in grids.iter().enumerate() {
        for (j, &p) in g.probs.iter().enumerate() {
            writeln!(out, "{},{},{},{}", n + offset, j, p, u8::from(p < delta))?;
        }
    }
    Ok(())
}
