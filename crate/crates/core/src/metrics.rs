//! Detection metrics over score collections, plus norm histograms.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn non_empty(id: &[f32], ood: &[f32]) -> Result<()> {
    if id.is_empty() || ood.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "metrics need non-empty score lists (got {} ID, {} OOD)",
            id.len(),
            ood.len()
        )));
    }
    if id.iter().chain(ood).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("score list".into()));
    }
    Ok(())
}

/// `P(id > ood) + ½·P(id = ood)` over all pairs.
///
/// Computed from sorted OOD scores; the pair counts are accumulated as
/// integers so the value is exactly the pairwise-count ratio.
pub fn auroc(id_scores: &[f32], ood_scores: &[f32]) -> Result<f64> {
    non_empty(id_scores, ood_scores)?;
    let mut ood = ood_scores.to_vec();
    ood.sort_by(f32::total_cmp);
    // twice the number of wins, plus ties
    let mut doubled: u64 = 0;
    for &s in id_scores {
        let below = ood.partition_point(|&o| o < s);
        let not_above = ood.partition_point(|&o| o <= s);
        doubled += 2 * below as u64 + (not_above - below) as u64;
    }
    Ok(doubled as f64 / (2 * id_scores.len() as u64 * ood_scores.len() as u64) as f64)
}

/// Operating point at a target ID acceptance rate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub fpr: f64,
    /// Largest threshold that still accepts at least the target fraction of ID scores.
    pub gamma: f32,
}

/// False-positive rate at the largest `gamma` with `frac(id ≥ gamma) ≥ tpr_target`.
pub fn fpr_at_tpr(id_scores: &[f32], ood_scores: &[f32], tpr_target: f64) -> Result<OperatingPoint> {
    non_empty(id_scores, ood_scores)?;
    if !(0.0..=1.0).contains(&tpr_target) {
        return Err(Error::InvalidArgument(format!("TPR target must lie in [0, 1], got {tpr_target}")));
    }
    let n = id_scores.len();
    let mut id = id_scores.to_vec();
    id.sort_by(|a, b| b.total_cmp(a));
    // fewest accepted ID samples that reaches the target
    let needed = (0..=n).find(|&k| k as f64 / n as f64 >= tpr_target).expect("k = n always qualifies");
    if needed == 0 {
        return Ok(OperatingPoint { fpr: 0.0, gamma: f32::INFINITY });
    }
    let gamma = id[needed - 1];
    let accepted = ood_scores.iter().filter(|&&s| s >= gamma).count();
    Ok(OperatingPoint { fpr: accepted as f64 / ood_scores.len() as f64, gamma })
}

/// Summary for one (ID test set, OOD set, score) triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fpr95: f64,
    pub auroc: f64,
    pub gamma95: f32,
    pub id_count: usize,
    pub ood_count: usize,
}

impl EvalReport {
    pub fn compute(id_scores: &[f32], ood_scores: &[f32]) -> Result<Self> {
        let op = fpr_at_tpr(id_scores, ood_scores, 0.95)?;
        Ok(EvalReport {
            fpr95: op.fpr,
            auroc: auroc(id_scores, ood_scores)?,
            gamma95: op.gamma,
            id_count: id_scores.len(),
            ood_count: ood_scores.len(),
        })
    }
}

/// Equal-width bins over `[lo, hi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lo: f32,
    pub hi: f32,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bins: usize, lo: f32, hi: f32) -> Result<Self> {
        if bins == 0 || !(hi > lo) {
            return Err(Error::InvalidArgument(format!("histogram needs bins ≥ 1 and hi > lo, got {bins} over [{lo}, {hi})")));
        }
        Ok(Histogram { lo, hi, counts: vec![0; bins] })
    }

    /// Values outside the range land in the edge bins.
    pub fn add(&mut self, value: f32) {
        let bins = self.counts.len();
        let t = (value - self.lo) / (self.hi - self.lo) * bins as f32;
        let i = if t.is_nan() { 0 } else { (t.floor().max(0.0) as usize).min(bins - 1) };
        self.counts[i] += 1;
    }

    pub fn edges(&self, i: usize) -> (f32, f32) {
        let w = (self.hi - self.lo) / self.counts.len() as f32;
        (self.lo + w * i as f32, self.lo + w * (i + 1) as f32)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Histogram of the L2 norms of `dim`-wide row vectors.
pub fn norm_histogram(vectors: &[f32], dim: usize, bins: usize, lo: f32, hi: f32) -> Result<Histogram> {
    let mut h = Histogram::new(bins, lo, hi)?;
    if dim == 0 || !vectors.len().is_multiple_of(dim) {
        return Err(Error::InvalidArgument(format!("{} values are not rows of width {dim}", vectors.len())));
    }
    vectors.chunks_exact(dim).for_each(|v| h.add(crate::tensor::kernels::l2_norm(v)));
    Ok(h)
}

/// `bin_lo,bin_hi,count_id,count_ood` for two histograms over the same bins.
pub fn write_histogram_csv(out: &mut impl Write, id: &Histogram, ood: &Histogram) -> Result<()> {
    if id.counts.len() != ood.counts.len() || id.lo != ood.lo || id.hi != ood.hi {
        return Err(Error::InvalidArgument("histograms must share their bins".into()));
    }
    let io = |e| Error::io("histogram csv", e);
    writeln!(out, "bin_lo,bin_hi,count_id,count_ood").map_err(io)?;
    for i in 0..id.counts.len() {
        let (a, b) = id.edges(i);
        writeln!(out, "{a},{b},{},{}", id.counts[i], ood.counts[i]).map_err(io)?;
    }
    Ok(())
}
