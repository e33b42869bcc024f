//! Straight-loop f64 references shared by the integration tests.
#![allow(dead_code)]

pub mod fd;
pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, 1)`, rounded to f32.
pub fn values(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Uniform values kept at least `gap` away from `kink`.
pub fn values_off(rng: &mut ChaCha8Rng, n: usize, kink: f32, gap: f32) -> Vec<f32> {
    (0..n)
        .map(|_| loop {
            let v = rng.random_range(-1.0f32..1.0) + kink;
            if (v - kink).abs() >= gap {
                break v;
            }
        })
        .collect()
}

pub fn widen(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| f64::from(x)).collect()
}

/// `N×Cin×H×W` input, `Cout×Cin×k×k` weight, zero padding.
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    x: &[f64],
    w: &[f64],
    b: &[f64],
    n: usize,
    cin: usize,
    h: usize,
    wd: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let mut y = vec![0.0; n * cout * oh * ow];
    for s in 0..n {
        for o in 0..cout {
            for r in 0..oh {
                for c in 0..ow {
                    let mut acc = b[o];
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let yy = (r * stride + ky) as isize - pad as isize;
                                let xx = (c * stride + kx) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xv = x[((s * cin + i) * h + yy as usize) * wd + xx as usize];
                                acc += xv * w[((o * cin + i) * k + ky) * k + kx];
                            }
                        }
                    }
                    y[((s * cout + o) * oh + r) * ow + c] = acc;
                }
            }
        }
    }
    (y, oh, ow)
}

/// `x·Wᵀ + b` with `x: rows×inner`, `W: outer×inner`.
pub fn linear(x: &[f64], w: &[f64], b: &[f64], rows: usize, inner: usize, outer: usize) -> Vec<f64> {
    let mut y = vec![0.0; rows * outer];
    for r in 0..rows {
        for o in 0..outer {
            y[r * outer + o] = b[o] + (0..inner).map(|i| x[r * inner + i] * w[o * inner + i]).sum::<f64>();
        }
    }
    y
}

pub fn gap(z: &[f64], n: usize, c: usize, plane: usize) -> Vec<f64> {
    (0..n * c).map(|i| z[i * plane..(i + 1) * plane].iter().sum::<f64>() / plane as f64).collect()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let l = log_sum_exp(row);
    row.iter().map(|v| (v - l).exp()).collect()
}

pub fn cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> f64 {
    let n = labels.len();
    (0..n).map(|i| log_sum_exp(&logits[i * k..(i + 1) * k]) - logits[i * k + labels[i]]).sum::<f64>() / n as f64
}

/// Per-channel `γ·(x − m)/√(v + 1e-5) + β`; statistics from `x` when not given.
pub fn batch_norm(
    x: &[f64],
    gamma: &[f64],
    beta: &[f64],
    stats: Option<(&[f64], &[f64])>,
    n: usize,
    c: usize,
    plane: usize,
) -> Vec<f64> {
    let mut out = x.to_vec();
    for ch in 0..c {
        let idx: Vec<usize> = (0..n).flat_map(|s| (0..plane).map(move |j| (s * c + ch) * plane + j)).collect();
        let (mean, var) = match stats {
            Some((m, v)) => (m[ch], v[ch]),
            None => {
                let mean = idx.iter().map(|&i| x[i]).sum::<f64>() / idx.len() as f64;
                (mean, idx.iter().map(|&i| (x[i] - mean).powi(2)).sum::<f64>() / idx.len() as f64)
            }
        };
        for &i in &idx {
            out[i] = gamma[ch] * (x[i] - mean) / (var + 1e-5).sqrt() + beta[ch];
        }
    }
    out
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
