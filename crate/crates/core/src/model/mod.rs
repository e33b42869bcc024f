//! Small residual CNN encoder plus a linear head that is shared between the
//! pooled (global) feature and every local feature vector of the map.

pub mod checkpoint;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{self, kernels, kernels::ConvGeometry, Tensor};

pub use checkpoint::{read_records, write_records, Record, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_channels: usize,
    /// Channel count of each stage. Every stage after the first halves the resolution.
    pub widths: Vec<usize>,
    /// Conv layers per stage: one transition conv followed by residual convs.
    pub blocks_per_stage: usize,
    pub image_side: usize,
    /// Batch normalization after every conv.
    pub batch_norm: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { input_channels: 3, widths: vec![16, 32, 64], blocks_per_stage: 2, image_side: 32, batch_norm: true }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 || self.widths.is_empty() || self.widths.contains(&0) || self.blocks_per_stage == 0 {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        let factor = 1usize << (self.widths.len() - 1);
        if !self.image_side.is_multiple_of(factor) || self.image_side / factor < 2 {
            return Err(Error::Config(format!(
                "image side {} with {} stages leaves fewer than 2×2 feature locations",
                self.image_side,
                self.widths.len()
            )));
        }
        Ok(())
    }

    pub fn feature_channels(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn feature_side(&self) -> usize {
        self.image_side >> (self.widths.len() - 1)
    }

    pub fn feature_locations(&self) -> usize {
        self.feature_side() * self.feature_side()
    }
}

/// Per-channel batch normalization. Training batches use their own statistics
/// and fold them into the running estimates; evaluation uses the estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Tensor,
    pub running_var: Tensor,
}

/// Weight of the newest batch in the running statistics.
pub const NORM_MOMENTUM: f32 = 0.1;

impl BatchNorm {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(BatchNorm {
            gamma: Tensor::parameter(&[channels], vec![1.0; channels])?,
            beta: Tensor::parameter(&[channels], vec![0.0; channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::new(&[channels], vec![1.0; channels])?,
        })
    }

    fn forward(&self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Eval => tensor::batch_norm_fixed(x, &self.gamma, &self.beta, &self.running_mean.data(), &self.running_var.data()),
            Mode::Train => {
                let (y, mean, var) = tensor::batch_norm(x, &self.gamma, &self.beta)?;
                let s = x.shape();
                let count = (s[0] * s[2] * s[3]) as f32;
                // running variance tracks the unbiased estimate
                let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
                let blend = |old: &mut Vec<f32>, new: &[f32], k: f32| {
                    old.iter_mut().zip(new).for_each(|(o, n)| *o = (1.0 - NORM_MOMENTUM) * *o + NORM_MOMENTUM * n * k);
                };
                blend(&mut self.running_mean.data_mut(), &mean, 1.0);
                blend(&mut self.running_var.data_mut(), &var, unbias);
                Ok(y)
            }
        }
    }
}

/// Which statistics batch normalization uses in [`Model::forward_encoder`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One 3×3 conv, optionally batch-normalized. Residual layers compute
/// `relu(x + bn(conv(x)))`, others `relu(bn(conv(x)))`.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
    pub norm: Option<BatchNorm>,
    pub stride: usize,
    pub residual: bool,
}

impl ConvLayer {
    /// Trainable tensors; running statistics are not among them.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p = vec![self.weight.clone(), self.bias.clone()];
        if let Some(n) = &self.norm {
            p.push(n.gamma.clone());
            p.push(n.beta.clone());
        }
        p
    }

    /// Copy whose tensors are constants.
    pub fn detached(&self) -> ConvLayer {
        ConvLayer {
            weight: self.weight.detach(),
            bias: self.bias.detach(),
            norm: self.norm.as_ref().map(|n| BatchNorm {
                gamma: n.gamma.detach(),
                beta: n.beta.detach(),
                running_mean: n.running_mean.detach(),
                running_var: n.running_var.detach(),
            }),
            ..self.clone()
        }
    }
}

/// Encoder and classifier parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: EncoderConfig,
    pub class_count: usize,
    pub layers: Vec<ConvLayer>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

const KERNEL: usize = 3;

fn uniform(rng: &mut impl Rng, n: usize, bound: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl Model {
    /// Kaiming-uniform conv weights, zero conv biases, fan-in uniform head.
    pub fn new(config: EncoderConfig, class_count: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if class_count < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {class_count}")));
        }
        let mut layers = Vec::new();
        let mut channels = config.input_channels;
        for (stage, &width) in config.widths.iter().enumerate() {
            for block in 0..config.blocks_per_stage {
                let fan_in = channels * KERNEL * KERNEL;
                let bound = (6.0 / fan_in as f32).sqrt();
                let residual = block > 0;
                // residual branches start at half the Kaiming bound
                let bound = if residual { bound * 0.5 } else { bound };
                layers.push(ConvLayer {
                    weight: Tensor::parameter(&[width, channels, KERNEL, KERNEL], uniform(rng, width * fan_in, bound))?,
                    bias: Tensor::parameter(&[width], vec![0.0; width])?,
                    norm: if config.batch_norm { Some(BatchNorm::new(width)?) } else { None },
                    stride: if stage > 0 && block == 0 { 2 } else { 1 },
                    residual,
                });
                channels = width;
            }
        }
        let bound = 1.0 / (channels as f32).sqrt();
        Ok(Model {
            head_weight: Tensor::parameter(&[class_count, channels], uniform(rng, class_count * channels, bound))?,
            head_bias: Tensor::parameter(&[class_count], uniform(rng, class_count, bound))?,
            config,
            class_count,
            layers,
        })
    }

    pub fn feature_channels(&self) -> usize {
        self.config.feature_channels()
    }

    /// Every trainable tensor, in checkpoint order.
    pub fn parameters(&self) -> Vec<Tensor> {
        let mut p: Vec<Tensor> = self.layers.iter().flat_map(ConvLayer::parameters).collect();
        p.push(self.head_weight.clone());
        p.push(self.head_bias.clone());
        p
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(Tensor::zero_grad);
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        if shape.len() != 4 || shape[1] != c.input_channels || shape[2] != c.image_side || shape[3] != c.image_side {
            return Err(Error::shape(
                "forward_encoder",
                format!(
                    "expected N×{}×{}×{} images, got {shape:?}",
                    c.input_channels, c.image_side, c.image_side
                ),
            ));
        }
        Ok(())
    }

    /// Post-ReLU feature map `N×C×H'×W'` with graph tracking. Training mode
    /// also updates the running normalization statistics.
    pub fn forward_encoder(&self, images: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(images.shape())?;
        let mut x = images.clone();
        for layer in &self.layers {
            let mut y = tensor::conv2d(&x, &layer.weight, &layer.bias, layer.stride, 1)?;
            if let Some(n) = &layer.norm {
                y = n.forward(&y, mode)?;
            }
            x = if layer.residual { tensor::relu(&tensor::add(&y, &x)?) } else { tensor::relu(&y) };
        }
        Ok(x)
    }

    /// Raw logits of the shared head for `M×C` feature rows.
    pub fn classify(&self, features: &Tensor) -> Result<Tensor> {
        let s = features.shape();
        if s.len() != 2 || s[1] != self.feature_channels() {
            return Err(Error::shape(
                "classify",
                format!("head expects width {}, got features {s:?}", self.feature_channels()),
            ));
        }
        tensor::linear(features, &self.head_weight, &self.head_bias)
    }

    /// Graph-free copy of the weights for inference and extraction snapshots.
    pub fn freeze(&self) -> FrozenModel {
        FrozenModel {
            config: self.config.clone(),
            class_count: self.class_count,
            layers: self
                .layers
                .iter()
                .map(|l| FrozenConv {
                    weight: l.weight.to_vec(),
                    bias: l.bias.to_vec(),
                    norm: l.norm.as_ref().map(|n| [n.running_mean.to_vec(), n.running_var.to_vec(), n.gamma.to_vec(), n.beta.to_vec()]),
                    out_channels: l.weight.shape()[0],
                    in_channels: l.weight.shape()[1],
                    stride: l.stride,
                    residual: l.residual,
                })
                .collect(),
            head: self.head(),
        }
    }

    pub fn head(&self) -> LinearHead {
        LinearHead {
            weight: self.head_weight.to_vec(),
            bias: self.head_bias.to_vec(),
            classes: self.class_count,
            channels: self.feature_channels(),
        }
    }
}

/// Plain copy of the classifier head `f(·)`: `K×C` weight and `K` bias.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearHead {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
    pub classes: usize,
    pub channels: usize,
}

impl LinearHead {
    pub fn new(weight: Vec<f32>, bias: Vec<f32>, classes: usize, channels: usize) -> Result<Self> {
        if weight.len() != classes * channels || bias.len() != classes {
            return Err(Error::shape(
                "classify",
                format!("head {classes}×{channels} given {} weights and {} biases", weight.len(), bias.len()),
            ));
        }
        Ok(LinearHead { weight, bias, classes, channels })
    }

    /// Logits for `rows` feature vectors laid out row-major.
    pub fn logits(&self, features: &[f32], rows: usize) -> Vec<f32> {
        debug_assert_eq!(features.len(), rows * self.channels);
        kernels::linear_forward(features, rows, self.channels, &self.weight, &self.bias)
    }
}

#[derive(Clone, Debug)]
struct FrozenConv {
    weight: Vec<f32>,
    bias: Vec<f32>,
    /// running mean, running variance, gamma, beta
    norm: Option<[Vec<f32>; 4]>,
    out_channels: usize,
    in_channels: usize,
    stride: usize,
    residual: bool,
}

/// Immutable, thread-shareable weights. Produces the same bits as the
/// graph-tracking forward pass.
#[derive(Clone, Debug)]
pub struct FrozenModel {
    pub config: EncoderConfig,
    pub class_count: usize,
    layers: Vec<FrozenConv>,
    pub head: LinearHead,
}

impl FrozenModel {
    pub fn feature_channels(&self) -> usize {
        self.config.feature_channels()
    }

    /// Feature maps for `batch` normalized images laid out `N×3×S×S`.
    pub fn feature_maps(&self, images: &[f32], batch: usize) -> Result<Vec<f32>> {
        let side = self.config.image_side;
        if images.len() != batch * self.config.input_channels * side * side {
            return Err(Error::shape(
                "forward_encoder",
                format!("{} values for {batch} images of side {side}", images.len()),
            ));
        }
        let mut x = images.to_vec();
        let mut side = side;
        for layer in &self.layers {
            let g = ConvGeometry {
                in_channels: layer.in_channels,
                out_channels: layer.out_channels,
                height: side,
                width: side,
                kernel: KERNEL,
                stride: layer.stride,
                padding: 1,
            };
            let mut y = kernels::conv2d_forward(&x, batch, &layer.weight, &layer.bias, &g);
            if let Some([mean, var, gamma, beta]) = &layer.norm {
                y = kernels::batch_norm_apply(&y, batch, layer.out_channels, g.out_plane(), mean, var, gamma, beta);
            }
            if layer.residual {
                y.iter_mut().zip(&x).for_each(|(a, b)| *a += b);
            }
            kernels::relu_inplace(&mut y);
            x = y;
            side = g.out_height();
        }
        Ok(x)
    }

    /// Head logits for `rows` feature vectors of width C.
    pub fn logits(&self, features: &[f32], rows: usize) -> Vec<f32> {
        self.head.logits(features, rows)
    }
}

/// Borrowed `N×C×H×W` feature maps.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMaps<'a> {
    pub data: &'a [f32],
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl<'a> FeatureMaps<'a> {
    pub fn new(data: &'a [f32], batch: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        if data.len() != batch * channels * height * width || height * width == 0 {
            return Err(Error::shape(
                "feature map",
                format!("{} values for {batch}×{channels}×{height}×{width}", data.len()),
            ));
        }
        Ok(FeatureMaps { data, batch, channels, height, width })
    }

    /// View over a tensor's buffer; the tensor must stay borrowed meanwhile.
    pub fn of(data: &'a [f32], shape: &[usize]) -> Result<Self> {
        match shape {
            &[n, c, h, w] => Self::new(data, n, c, h, w),
            _ => Err(Error::shape("feature map", format!("expected N×C×H×W, got {shape:?}"))),
        }
    }

    pub fn locations(&self) -> usize {
        self.height * self.width
    }

    pub fn sample(&self, n: usize) -> &'a [f32] {
        let len = self.channels * self.locations();
        &self.data[n * len..(n + 1) * len]
    }

    /// The C-vector at location `j` (row-major over H×W) of sample `n`.
    pub fn local_vector(&self, n: usize, j: usize) -> Vec<f32> {
        let plane = self.locations();
        let s = self.sample(n);
        (0..self.channels).map(|c| s[c * plane + j]).collect()
    }

    /// All local vectors of sample `n` as an `(H·W)×C` row-major matrix.
    pub fn local_vectors(&self, n: usize) -> Vec<f32> {
        let plane = self.locations();
        let s = self.sample(n);
        let mut out = vec![0.0; plane * self.channels];
        for c in 0..self.channels {
            for j in 0..plane {
                out[j * self.channels + c] = s[c * plane + j];
            }
        }
        out
    }

    /// Channelwise spatial means, `N×C`.
    pub fn global_features(&self) -> Vec<f32> {
        kernels::global_average_pool(self.data, self.batch, self.channels, self.locations())
    }
}
