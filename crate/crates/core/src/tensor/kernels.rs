//! Slice-level numeric kernels shared by the autodiff ops and the
//! graph-free inference path.
//!
//! Convolutions run per sample (im2col followed by one sgemm), so a sample's
//! output never depends on which batch it was computed in.

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel) / self.stride + 1
    }

    /// Rows of the unrolled patch matrix.
    pub fn patch_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn out_plane(&self) -> usize {
        self.out_height() * self.out_width()
    }

    pub fn in_sample(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn out_sample(&self) -> usize {
        self.out_channels * self.out_plane()
    }
}

/// `C = alpha * A·B + beta * C` for row-major operands, with optional transposes.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_transposed: bool,
    b: &[f32],
    b_transposed: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds checked above; strides describe the row-major layouts of a, b and c.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unroll one sample (`C×H×W`) into a `patch_len × out_plane` matrix.
pub fn im2col(input: &[f32], g: &ConvGeometry, cols: &mut [f32]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &input[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let dst = &mut cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.height as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        *v = if ix < 0 || ix >= g.width as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-add a patch matrix back onto one sample; adjoint of [`im2col`].
pub fn col2im(cols: &[f32], g: &ConvGeometry, out: &mut [f32]) {
    let (ho, wo) = (g.out_height(), g.out_width());
    let k = g.kernel;
    for c in 0..g.in_channels {
        let plane = &mut out[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ki in 0..k {
            for kj in 0..k {
                let row = (c * k + ki) * k + kj;
                let src = &cols[row * ho * wo..(row + 1) * ho * wo];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Convolve one sample. `cols` is scratch (or saved patches) of `patch_len × out_plane`.
pub fn conv2d_sample(input: &[f32], weight: &[f32], bias: &[f32], g: &ConvGeometry, cols: &mut [f32], out: &mut [f32]) {
    im2col(input, g, cols);
    let plane = g.out_plane();
    for (o, b) in bias.iter().enumerate() {
        out[o * plane..(o + 1) * plane].fill(*b);
    }
    gemm(g.out_channels, g.patch_len(), plane, weight, false, cols, false, out, 1.0);
}

/// Batched forward without retaining patches.
pub fn conv2d_forward(input: &[f32], batch: usize, weight: &[f32], bias: &[f32], g: &ConvGeometry) -> Vec<f32> {
    let mut out = vec![0.0; batch * g.out_sample()];
    let mut cols = vec![0.0; g.patch_len() * g.out_plane()];
    for n in 0..batch {
        conv2d_sample(
            &input[n * g.in_sample()..(n + 1) * g.in_sample()],
            weight,
            bias,
            g,
            &mut cols,
            &mut out[n * g.out_sample()..(n + 1) * g.out_sample()],
        );
    }
    out
}

/// `y = x·Wᵀ + b` for `x: rows×inner`, `W: outer×inner`.
pub fn linear_forward(x: &[f32], rows: usize, inner: usize, weight: &[f32], bias: &[f32]) -> Vec<f32> {
    let outer = bias.len();
    let mut y = Vec::with_capacity(rows * outer);
    for _ in 0..rows {
        y.extend_from_slice(bias);
    }
    gemm(rows, inner, outer, x, false, weight, true, &mut y, 1.0);
    y
}

/// Channelwise spatial mean of an `N×C×H×W` buffer.
pub fn global_average_pool(z: &[f32], batch: usize, channels: usize, plane: usize) -> Vec<f32> {
    let inv = 1.0 / plane as f32;
    (0..batch * channels)
        .map(|i| z[i * plane..(i + 1) * plane].iter().sum::<f32>() * inv)
        .collect()
}

pub const NORM_EPS: f32 = 1e-5;

/// Per-channel mean and biased variance of an `N×C×H×W` buffer.
pub fn channel_moments(x: &[f32], batch: usize, channels: usize, plane: usize) -> (Vec<f32>, Vec<f32>) {
    let count = (batch * plane) as f64;
    let mut mean = Vec::with_capacity(channels);
    let mut var = Vec::with_capacity(channels);
    for c in 0..channels {
        let values = || (0..batch).flat_map(move |n| x[(n * channels + c) * plane..(n * channels + c + 1) * plane].iter());
        let m = values().map(|&v| f64::from(v)).sum::<f64>() / count;
        let v = values().map(|&v| (f64::from(v) - m).powi(2)).sum::<f64>() / count;
        mean.push(m as f32);
        var.push(v as f32);
    }
    (mean, var)
}

/// `γ_c·(x − m_c)/√(v_c + ε) + β_c` over an `N×C×H×W` buffer.
#[allow(clippy::too_many_arguments)]
pub fn batch_norm_apply(
    x: &[f32],
    batch: usize,
    channels: usize,
    plane: usize,
    mean: &[f32],
    var: &[f32],
    gamma: &[f32],
    beta: &[f32],
) -> Vec<f32> {
    let mut y = Vec::with_capacity(x.len());
    for n in 0..batch {
        for c in 0..channels {
            let inv = 1.0 / (var[c] + NORM_EPS).sqrt();
            let (scale, m, shift) = (gamma[c] * inv, mean[c], beta[c]);
            let start = (n * channels + c) * plane;
            y.extend(x[start..start + plane].iter().map(|&v| (v - m) * scale + shift));
        }
    }
    y
}

pub fn relu_inplace(x: &mut [f32]) {
    x.iter_mut().for_each(|v| *v = v.max(0.0));
}

/// `log Σ exp(x)` with max subtraction.
pub fn log_sum_exp(logits: &[f32]) -> f32 {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !max.is_finite() {
        return max;
    }
    max + logits.iter().map(|&v| (v - max).exp()).sum::<f32>().ln()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn l2_norm(v: &[f32]) -> f32 {
    v.iter().map(|x| x * x).sum::<f32>().sqrt()
}
