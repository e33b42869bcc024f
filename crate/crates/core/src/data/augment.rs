//! Pad-and-crop, horizontal flip and per-channel colour jitter on `[0, 1]` images.

use rand::Rng;

use super::CHANNELS;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentationPolicy {
    pub random_crop_padding: usize,
    pub horizontal_flip: bool,
    pub color_jitter: bool,
}

impl AugmentationPolicy {
    pub const NONE: AugmentationPolicy =
        AugmentationPolicy { random_crop_padding: 0, horizontal_flip: false, color_jitter: false };

    pub fn pretrain() -> Self {
        AugmentationPolicy { random_crop_padding: 4, horizontal_flip: true, color_jitter: true }
    }

    /// Same as pre-training minus colour jitter.
    pub fn finetune() -> Self {
        AugmentationPolicy { color_jitter: false, ..Self::pretrain() }
    }
}

const JITTER: f32 = 0.2;

/// Mirror each row of a channel-major image.
pub fn hflip(image: &[f32], side: usize) -> Vec<f32> {
    let mut out = image.to_vec();
    for row in out.chunks_exact_mut(side) {
        row.reverse();
    }
    out
}

/// Random draws happen in a fixed order: crop offsets, flip coin, then six
/// jitter factors, each only when its option is enabled.
pub fn augment(image: &[f32], side: usize, policy: &AugmentationPolicy, rng: &mut impl Rng) -> Vec<f32> {
    let plane = side * side;
    debug_assert_eq!(image.len(), CHANNELS * plane);
    let mut out = image.to_vec();
    let pad = policy.random_crop_padding;
    if pad > 0 {
        let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
        let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
        for c in 0..CHANNELS {
            for y in 0..side {
                for x in 0..side {
                    let (sy, sx) = (y as isize + dy, x as isize + dx);
                    out[c * plane + y * side + x] = if sy < 0 || sx < 0 || sy >= side as isize || sx >= side as isize {
                        0.0
                    } else {
                        image[c * plane + sy as usize * side + sx as usize]
                    };
                }
            }
        }
    }
    if policy.horizontal_flip && rng.random_bool(0.5) {
        out = hflip(&out, side);
    }
    if policy.color_jitter {
        for c in 0..CHANNELS {
            let brightness = rng.random_range(-JITTER..JITTER);
            let contrast = 1.0 + rng.random_range(-JITTER..JITTER);
            let ch = &mut out[c * plane..(c + 1) * plane];
            let mean = ch.iter().sum::<f32>() / plane as f32;
            ch.iter_mut().for_each(|v| *v = ((*v - mean) * contrast + mean + brightness).clamp(0.0, 1.0));
        }
    }
    out
}
