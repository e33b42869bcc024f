//! Exhaustive oracles for metrics, extraction and score identities.
#![allow(dead_code)]

use oodkit::bgextract::{self, BackgroundMember};
use oodkit::metrics::{auroc, fpr_at_tpr};
use oodkit::model::{FeatureMaps, LinearHead};
use oodkit::scoring::{self, ReactThreshold};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{rng, values, widen};

pub const SCORE_TOLERANCE: f32 = 1e-5;

fn tied_scores(g: &mut impl Rng, n: usize, discrete: bool) -> Vec<f32> {
    (0..n).map(|_| if discrete { g.random_range(0..8) as f32 } else { g.random_range(-3.0f32..3.0) }).collect()
}

pub fn pairwise_auroc(id: &[f32], ood: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for &a in id {
        for &b in ood {
            acc += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
        }
    }
    acc / (id.len() * ood.len()) as f64
}

/// Largest candidate threshold whose ID acceptance reaches the target.
pub fn sweep_fpr(id: &[f32], ood: &[f32], target: f64) -> (f64, f32) {
    let mut candidates: Vec<f32> = id.to_vec();
    candidates.push(f32::INFINITY);
    let mut best: Option<f32> = None;
    for &gamma in &candidates {
        let tpr = id.iter().filter(|&&s| s >= gamma).count() as f64 / id.len() as f64;
        if tpr >= target && best.is_none_or(|b| gamma > b) {
            best = Some(gamma);
        }
    }
    let gamma = best.unwrap();
    (ood.iter().filter(|&&s| s >= gamma).count() as f64 / ood.len() as f64, gamma)
}

/// One random instance with n, m ≤ 200; even seeds are heavily tied.
pub fn metric_instance(seed: u64) {
    let mut g = rng(seed);
    let (n, m) = (g.random_range(1..=200), g.random_range(1..=200));
    let discrete = seed.is_multiple_of(2);
    let id = tied_scores(&mut g, n, discrete);
    let ood = tied_scores(&mut g, m, discrete);
    assert_eq!(auroc(&id, &ood).unwrap(), pairwise_auroc(&id, &ood), "seed {seed}");
    for target in [0.95, 0.5, 0.0, 1.0, g.random_range(0.0..1.0)] {
        let op = fpr_at_tpr(&id, &ood, target).unwrap();
        let (fpr, gamma) = sweep_fpr(&id, &ood, target);
        assert_eq!((op.fpr, op.gamma), (fpr, gamma), "seed {seed} target {target}");
    }
}

/// Membership by recomputing every location's probability in f64.
pub fn enumerate(data: &[f32], n: usize, c: usize, plane: usize, head: &LinearHead, labels: &[usize], delta: f32) -> Vec<BackgroundMember> {
    let (w, b) = (widen(&head.weight), widen(&head.bias));
    let mut out = Vec::new();
    for (s, &label) in labels.iter().enumerate().take(n) {
        for j in 0..plane {
            let v: Vec<f64> = (0..c).map(|ch| f64::from(data[(s * c + ch) * plane + j])).collect();
            let logits = super::linear(&v, &w, &b, 1, c, head.classes);
            if super::softmax(&logits)[label] < f64::from(delta) {
                out.push(BackgroundMember { sample: s, location: j });
            }
        }
    }
    out
}

pub const DELTAS: [f32; 5] = [0.0, 0.01, 0.1, 0.5, 1.0];

/// One random feature map checked at every δ, including growth of S with δ.
pub fn extraction_instance(seed: u64) {
    let mut g = rng(seed);
    let (n, c, h, w, k) =
        (g.random_range(1..=3), g.random_range(1..=4), g.random_range(1..=4), g.random_range(1..=4), g.random_range(2..=5));
    let data: Vec<f32> = values(&mut g, n * c * h * w).into_iter().map(|v| 2.0 * v).collect();
    let head = LinearHead::new(values(&mut g, k * c), values(&mut g, k), k, c).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..k)).collect();
    let maps = FeatureMaps::new(&data, n, c, h, w).unwrap();
    let mut previous: Vec<BackgroundMember> = Vec::new();
    for &delta in &DELTAS {
        let set = bgextract::extract_background_set(&maps, &labels, &head, delta).unwrap();
        assert_eq!(set.members, enumerate(&data, n, c, h * w, &head, &labels, delta), "seed {seed} delta {delta}");
        for (i, m) in set.members.iter().enumerate() {
            assert_eq!(set.vector(i), maps.local_vector(m.sample, m.location).as_slice());
        }
        assert!(previous.iter().all(|m| set.members.contains(m)), "seed {seed}: S shrank at delta {delta}");
        previous = set.members;
    }
}

/// Energy shifts with the logits; MSP and ODIN at ε = 0 do not; ReAct below the clip is plain energy.
pub fn score_instance(g: &mut ChaCha8Rng) {
    let k = g.random_range(2..=10);
    let logits: Vec<f32> = values(g, k).into_iter().map(|v| 10.0 * v).collect();
    let c: f32 = g.random_range(-5.0..5.0);
    let shifted: Vec<f32> = logits.iter().map(|v| v + c).collect();
    assert!((scoring::energy_score(&shifted) - scoring::energy_score(&logits) - c).abs() <= SCORE_TOLERANCE);
    assert!((scoring::msp_score(&shifted) - scoring::msp_score(&logits)).abs() <= SCORE_TOLERANCE);
    let t = g.random_range(0.5f32..1000.0);
    assert!((scoring::tempered_msp(&shifted, t) - scoring::tempered_msp(&logits, t)).abs() <= SCORE_TOLERANCE);

    let ch = g.random_range(1..=8);
    let head = LinearHead::new(values(g, k * ch), values(g, k), k, ch).unwrap();
    let feature: Vec<f32> = (0..ch).map(|_| g.random_range(0.0f32..2.0)).collect();
    let clip = feature.iter().cloned().fold(0.0f32, f32::max) + g.random_range(0.0f32..1.0);
    let react = ReactThreshold { clip, percentile: 90.0, fitted_on: "test".into() };
    let plain = scoring::energy_score(&head.logits(&feature, 1));
    assert!((scoring::react_energy_score(&feature, &head, Some(&react)).unwrap() - plain).abs() <= SCORE_TOLERANCE);
}
