//! Training objectives: cross-entropy, the background-norm hinge, and their sum.

use crate::bgextract::BackgroundSet;
use crate::error::{Error, Result};
use crate::tensor::{self, Tensor};

/// Threshold, norm margin and weight of the background term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub delta: f32,
    pub mu: f32,
    pub lambda: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { delta: 0.1, mu: 1.0, lambda: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::Config(format!("delta must lie in [0, 1], got {}", self.delta)));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::Config(format!("mu must be >= 0, got {}", self.mu)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// Mean negative log-likelihood over the batch.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    tensor::cross_entropy(logits, labels)
}

/// `(1/|S|) Σ max(‖z‖₂ − μ, 0)` over the rows of an `M×C` tensor.
pub fn lff_loss_rows(rows: &Tensor, mu: f32) -> Result<Tensor> {
    Ok(tensor::mean(&tensor::hinge(&tensor::row_norms(rows)?, mu)))
}

/// Background hinge on the members of `set`, gathered from the live feature
/// map `z` so gradients reach the encoder. An empty set yields a constant 0.
pub fn lff_loss(z: &Tensor, set: &BackgroundSet, mu: f32) -> Result<Tensor> {
    if set.is_empty() {
        return Ok(Tensor::scalar(0.0));
    }
    lff_loss_rows(&tensor::select_locations(z, &set.picks())?, mu)
}

/// `ce + λ·lff`.
pub fn joint_loss(ce: &Tensor, lff: &Tensor, lambda: f32) -> Result<Tensor> {
    tensor::add(ce, &tensor::scale(lff, lambda))
}
