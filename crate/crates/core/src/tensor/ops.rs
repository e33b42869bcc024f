use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::error::{Error, Result};

/// 2-D convolution, `N×Cin×H×W` ⊛ `Cout×Cin×k×k` + bias, zero padding.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (is, ws) = (input.shape(), weight.shape());
    if is.len() != 4 || ws.len() != 4 || ws[2] != ws[3] {
        return Err(Error::shape("conv2d", format!("input {is:?}, weight {ws:?}")));
    }
    if is[1] != ws[1] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels but weight expects {}", is[1], ws[1]),
        ));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::shape("conv2d", format!("bias {:?} for {} filters", bias.shape(), ws[0])));
    }
    if stride == 0 || ws[2] > is[2] + 2 * padding || ws[3] > is[3] + 2 * padding {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {} with padding {padding}, stride {stride} on {}×{}", ws[2], is[2], is[3]),
        ));
    }
    let g = ConvGeometry {
        in_channels: is[1],
        out_channels: ws[0],
        height: is[2],
        width: is[3],
        kernel: ws[2],
        stride,
        padding,
    };
    let batch = is[0];
    let track = input.requires_grad() || weight.requires_grad() || bias.requires_grad();
    let patch = g.patch_len() * g.out_plane();
    let mut out = vec![0.0; batch * g.out_sample()];
    let mut cols = vec![0.0; if track { batch * patch } else { patch }];
    {
        let (x, w, b) = (input.data(), weight.data(), bias.data());
        for n in 0..batch {
            let scratch = if track { &mut cols[n * patch..(n + 1) * patch] } else { &mut cols[..] };
            kernels::conv2d_sample(
                &x[n * g.in_sample()..(n + 1) * g.in_sample()],
                &w,
                &b,
                &g,
                scratch,
                &mut out[n * g.out_sample()..(n + 1) * g.out_sample()],
            );
        }
    }
    let shape = vec![batch, g.out_channels, g.out_height(), g.out_width()];
    Ok(Tensor::from_op(
        shape,
        out,
        vec![input.clone(), weight.clone(), bias.clone()],
        Box::new(move |dy, parents| {
            let (input, weight, bias) = (&parents[0], &parents[1], &parents[2]);
            let plane = g.out_plane();
            let w = weight.data();
            let mut dw = weight.requires_grad().then(|| vec![0.0; w.len()]);
            let mut db = bias.requires_grad().then(|| vec![0.0; g.out_channels]);
            let mut dx = input.requires_grad().then(|| vec![0.0; batch * g.in_sample()]);
            let mut dcols = vec![0.0; if dx.is_some() { patch } else { 0 }];
            for n in 0..batch {
                let dy_n = &dy[n * g.out_sample()..(n + 1) * g.out_sample()];
                let cols_n = &cols[n * patch..(n + 1) * patch];
                if let Some(dw) = dw.as_mut() {
                    kernels::gemm(g.out_channels, plane, g.patch_len(), dy_n, false, cols_n, true, dw, 1.0);
                }
                if let Some(db) = db.as_mut() {
                    for (o, acc) in db.iter_mut().enumerate() {
                        *acc += dy_n[o * plane..(o + 1) * plane].iter().sum::<f32>();
                    }
                }
                if let Some(dx) = dx.as_mut() {
                    kernels::gemm(g.patch_len(), g.out_channels, plane, &w, true, dy_n, false, &mut dcols, 0.0);
                    kernels::col2im(&dcols, &g, &mut dx[n * g.in_sample()..(n + 1) * g.in_sample()]);
                }
            }
            vec![dx, dw, db]
        }),
    ))
}

fn norm_shapes(op: &'static str, x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::shape(op, format!("expected N×C×H×W, got {s:?}")));
    }
    if gamma.shape() != [s[1]] || beta.shape() != [s[1]] {
        return Err(Error::shape(
            op,
            format!("gamma {:?} and beta {:?} for {} channels", gamma.shape(), beta.shape(), s[1]),
        ));
    }
    Ok((s[0], s[1], s[2] * s[3]))
}

/// Batch normalization with the statistics of `x` itself. Returns the output
/// together with the per-channel batch mean and biased variance.
pub fn batch_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, Vec<f32>, Vec<f32>)> {
    let (batch, channels, plane) = norm_shapes("batch_norm", x, gamma, beta)?;
    let (mean, var) = kernels::channel_moments(&x.data(), batch, channels, plane);
    let y = kernels::batch_norm_apply(&x.data(), batch, channels, plane, &mean, &var, &gamma.data(), &beta.data());
    let (m, v) = (mean.clone(), var.clone());
    let out = Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |dy, parents| {
            let (x, gamma) = (parents[0].data(), parents[1].data());
            let count = (batch * plane) as f32;
            let mut dx = vec![0.0; dy.len()];
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for c in 0..channels {
                let inv = 1.0 / (v[c] + kernels::NORM_EPS).sqrt();
                let rows = || (0..batch).map(|n| (n * channels + c) * plane);
                let (mut sum_dy, mut sum_dy_xhat) = (0.0f32, 0.0f32);
                for start in rows() {
                    for i in start..start + plane {
                        sum_dy += dy[i];
                        sum_dy_xhat += dy[i] * (x[i] - m[c]) * inv;
                    }
                }
                dgamma[c] = sum_dy_xhat;
                dbeta[c] = sum_dy;
                let k = gamma[c] * inv / count;
                for start in rows() {
                    for i in start..start + plane {
                        let xhat = (x[i] - m[c]) * inv;
                        dx[i] = k * (count * dy[i] - sum_dy - xhat * sum_dy_xhat);
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    );
    Ok((out, mean, var))
}

/// Batch normalization with given statistics; they receive no gradient.
pub fn batch_norm_fixed(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f32], var: &[f32]) -> Result<Tensor> {
    let (batch, channels, plane) = norm_shapes("batch_norm", x, gamma, beta)?;
    if mean.len() != channels || var.len() != channels {
        return Err(Error::shape("batch_norm", format!("{} means and {} variances for {channels} channels", mean.len(), var.len())));
    }
    let y = kernels::batch_norm_apply(&x.data(), batch, channels, plane, mean, var, &gamma.data(), &beta.data());
    let (m, v) = (mean.to_vec(), var.to_vec());
    Ok(Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |dy, parents| {
            let (x, gamma) = (parents[0].data(), parents[1].data());
            let mut dx = vec![0.0; dy.len()];
            let mut dgamma = vec![0.0; channels];
            let mut dbeta = vec![0.0; channels];
            for n in 0..batch {
                for c in 0..channels {
                    let inv = 1.0 / (v[c] + kernels::NORM_EPS).sqrt();
                    let start = (n * channels + c) * plane;
                    for i in start..start + plane {
                        dx[i] = dy[i] * gamma[c] * inv;
                        dgamma[c] += dy[i] * (x[i] - m[c]) * inv;
                        dbeta[c] += dy[i];
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    ))
}

/// Elementwise `max(x, 0)`; the gradient passes only where `x > 0`.
pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.to_vec();
    kernels::relu_inplace(&mut y);
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(|dy, parents| {
            let x = parents[0].data();
            vec![Some(dy.iter().zip(x.iter()).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect())]
        }),
    )
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("add", a, b)?;
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        vec![a.clone(), b.clone()],
        Box::new(|dy, _| vec![Some(dy.to_vec()), Some(dy.to_vec())]),
    ))
}

/// Elementwise product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    same_shape("mul", a, b)?;
    let y = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    Ok(Tensor::from_op(
        a.shape().to_vec(),
        y,
        vec![a.clone(), b.clone()],
        Box::new(|dy, parents| {
            let (a, b) = (parents[0].data(), parents[1].data());
            vec![
                Some(dy.iter().zip(b.iter()).map(|(g, v)| g * v).collect()),
                Some(dy.iter().zip(a.iter()).map(|(g, v)| g * v).collect()),
            ]
        }),
    ))
}

pub fn scale(x: &Tensor, factor: f32) -> Tensor {
    let y = x.data().iter().map(|v| v * factor).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |dy, _| vec![Some(dy.iter().map(|g| g * factor).collect())]),
    )
}

pub fn sum(x: &Tensor) -> Tensor {
    let total = x.data().iter().sum();
    let n = x.numel();
    Tensor::from_op(vec![1], vec![total], vec![x.clone()], Box::new(move |dy, _| vec![Some(vec![dy[0]; n])]))
}

pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel();
    let total: f32 = x.data().iter().sum();
    Tensor::from_op(
        vec![1],
        vec![total / n as f32],
        vec![x.clone()],
        Box::new(move |dy, _| vec![Some(vec![dy[0] / n as f32; n])]),
    )
}

/// `N×C×H×W → N×C`, mean over spatial positions.
pub fn global_average_pool(z: &Tensor) -> Result<Tensor> {
    let s = z.shape();
    if s.len() != 4 {
        return Err(Error::shape("global_average_pool", format!("expected N×C×H×W, got {s:?}")));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let y = kernels::global_average_pool(&z.data(), n, c, plane);
    Ok(Tensor::from_op(
        vec![n, c],
        y,
        vec![z.clone()],
        Box::new(move |dy, _| {
            let inv = 1.0 / plane as f32;
            let mut dz = Vec::with_capacity(n * c * plane);
            for g in dy {
                dz.extend(std::iter::repeat_n(g * inv, plane));
            }
            vec![Some(dz)]
        }),
    ))
}

/// `x·Wᵀ + b` for `x: N×C`, `W: K×C`, `b: K`.
pub fn linear(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bias.shape() != [ws[0]] {
        return Err(Error::shape(
            "linear",
            format!("input {xs:?}, weight {ws:?}, bias {:?}", bias.shape()),
        ));
    }
    let (rows, inner, outer) = (xs[0], xs[1], ws[0]);
    let y = kernels::linear_forward(&x.data(), rows, inner, &weight.data(), &bias.data());
    Ok(Tensor::from_op(
        vec![rows, outer],
        y,
        vec![x.clone(), weight.clone(), bias.clone()],
        Box::new(move |dy, parents| {
            let (x, w, b) = (&parents[0], &parents[1], &parents[2]);
            let dx = x.requires_grad().then(|| {
                let mut dx = vec![0.0; rows * inner];
                kernels::gemm(rows, outer, inner, dy, false, &w.data(), false, &mut dx, 0.0);
                dx
            });
            let dw = w.requires_grad().then(|| {
                let mut dw = vec![0.0; outer * inner];
                kernels::gemm(outer, rows, inner, dy, true, &x.data(), false, &mut dw, 0.0);
                dw
            });
            let db = b.requires_grad().then(|| {
                let mut db = vec![0.0; outer];
                for row in dy.chunks_exact(outer) {
                    db.iter_mut().zip(row).for_each(|(a, g)| *a += g);
                }
                db
            });
            vec![dx, dw, db]
        }),
    ))
}

/// Gather local feature vectors: each pick `(sample, location)` indexes an
/// `N×C×H×W` map with `location = row·W + col`. Output is `M×C`.
pub fn select_locations(z: &Tensor, picks: &[(usize, usize)]) -> Result<Tensor> {
    let s = z.shape();
    if s.len() != 4 {
        return Err(Error::shape("select_locations", format!("expected N×C×H×W, got {s:?}")));
    }
    if picks.is_empty() {
        return Err(Error::InvalidArgument("select_locations needs at least one pick".into()));
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    if let Some(&(i, j)) = picks.iter().find(|&&(i, j)| i >= n || j >= plane) {
        return Err(Error::InvalidArgument(format!("pick ({i}, {j}) outside {n} samples × {plane} locations")));
    }
    let picks = picks.to_vec();
    let mut y = Vec::with_capacity(picks.len() * c);
    {
        let data = z.data();
        for &(i, j) in &picks {
            y.extend((0..c).map(|ch| data[(i * c + ch) * plane + j]));
        }
    }
    let rows = picks.len();
    Ok(Tensor::from_op(
        vec![rows, c],
        y,
        vec![z.clone()],
        Box::new(move |dy, _| {
            let mut dz = vec![0.0; n * c * plane];
            for (m, &(i, j)) in picks.iter().enumerate() {
                for ch in 0..c {
                    dz[(i * c + ch) * plane + j] += dy[m * c + ch];
                }
            }
            vec![Some(dz)]
        }),
    ))
}

/// Euclidean norm of each row of an `M×C` tensor. Zero rows get a zero gradient.
pub fn row_norms(x: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 2 {
        return Err(Error::shape("row_norms", format!("expected M×C, got {s:?}")));
    }
    let c = s[1];
    let norms: Vec<f32> = x.data().chunks_exact(c).map(kernels::l2_norm).collect();
    let saved = norms.clone();
    Ok(Tensor::from_op(
        vec![s[0]],
        norms,
        vec![x.clone()],
        Box::new(move |dy, parents| {
            let x = parents[0].data();
            let mut dx = vec![0.0; x.len()];
            for (m, (row, out)) in x.chunks_exact(c).zip(dx.chunks_exact_mut(c)).enumerate() {
                if saved[m] > 0.0 {
                    let k = dy[m] / saved[m];
                    out.iter_mut().zip(row).for_each(|(o, v)| *o = v * k);
                }
            }
            vec![Some(dx)]
        }),
    ))
}

/// `max(x − margin, 0)` elementwise; the kink takes the zero branch.
pub fn hinge(x: &Tensor, margin: f32) -> Tensor {
    let y = x.data().iter().map(|v| (v - margin).max(0.0)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        y,
        vec![x.clone()],
        Box::new(move |dy, parents| {
            let x = parents[0].data();
            vec![Some(dy.iter().zip(x.iter()).map(|(g, &v)| if v > margin { *g } else { 0.0 }).collect())]
        }),
    )
}

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::shape("cross_entropy", format!("logits {s:?} for {} labels", labels.len())));
    }
    let (n, k) = (s[0], s[1]);
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside 0..{k}")));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = 0.0f32;
    {
        let data = logits.data();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cross_entropy logits".into()));
        }
        for (row, &y) in data.chunks_exact(k).zip(labels) {
            total += kernels::log_sum_exp(row) - row[y];
            probs.extend(kernels::softmax(row));
        }
    }
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![1],
        vec![total / n as f32],
        vec![logits.clone()],
        Box::new(move |dy, _| {
            let scale = dy[0] / n as f32;
            let mut d = probs.clone();
            for (row, &y) in d.chunks_exact_mut(k).zip(&labels) {
                row[y] -= 1.0;
                row.iter_mut().for_each(|v| *v *= scale);
            }
            vec![Some(d)]
        }),
    ))
}
