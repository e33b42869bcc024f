//! Labeled image sets, the synthetic shapes benchmark, CIFAR-binary I/O and
//! augmentation.

pub mod augment;
pub mod cifar;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use augment::{augment, hflip, AugmentationPolicy};
pub use cifar::{decode_cifar10, encode_cifar10, read_cifar10_binary, write_cifar10_binary};
pub use synth::{generate_benchmark, Benchmark, GeneratedSplit, ShapeKind, ShapesBenchmark};

pub const CHANNELS: usize = 3;

/// Byte-quantized RGB images, channel-major per image, with one label byte each.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub side: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn empty(side: usize) -> Self {
        Dataset { side, pixels: Vec::new(), labels: Vec::new() }
    }

    pub fn image_len(&self) -> usize {
        CHANNELS * self.side * self.side
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn push(&mut self, image: &[u8], label: u8) {
        debug_assert_eq!(image.len(), self.image_len());
        self.pixels.extend_from_slice(image);
        self.labels.push(label);
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        &self.pixels[i * self.image_len()..(i + 1) * self.image_len()]
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Vec<f32> {
        self.raw(i).iter().map(|&b| f32::from(b) / 255.0).collect()
    }

    /// First `n` images (or all).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset { side: self.side, pixels: self.pixels[..n * self.image_len()].to_vec(), labels: self.labels[..n].to_vec() }
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Per-channel statistics used to standardize inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; CHANNELS],
    pub std: [f32; CHANNELS],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization { mean: [0.5; CHANNELS], std: [0.25; CHANNELS] }
    }
}

impl Normalization {
    /// Mean and population standard deviation of each channel over a dataset.
    pub fn fit(data: &Dataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::InvalidArgument("cannot fit normalization on an empty dataset".into()));
        }
        let plane = data.side * data.side;
        let mut sum = [0f64; CHANNELS];
        let mut sq = [0f64; CHANNELS];
        for i in 0..data.len() {
            let img = data.raw(i);
            for c in 0..CHANNELS {
                for &b in &img[c * plane..(c + 1) * plane] {
                    let v = f64::from(b) / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let n = (data.len() * plane) as f64;
        let mut mean = [0f32; CHANNELS];
        let mut std = [0f32; CHANNELS];
        for c in 0..CHANNELS {
            let m = sum[c] / n;
            mean[c] = m as f32;
            std[c] = ((sq[c] / n - m * m).max(1e-12)).sqrt() as f32;
        }
        Ok(Normalization { mean, std })
    }

    pub fn apply(&self, image: &mut [f32]) {
        let plane = image.len() / CHANNELS;
        for c in 0..CHANNELS {
            let (m, s) = (self.mean[c], self.std[c]);
            image[c * plane..(c + 1) * plane].iter_mut().for_each(|v| *v = (*v - m) / s);
        }
    }
}

/// One split entry of the dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub name: String,
    pub path: String,
    pub count: usize,
    pub texture_ids: Vec<u16>,
}

/// `manifest.json` of a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub classes: usize,
    pub class_names: Vec<String>,
    pub image_side: usize,
    pub texture_pool: usize,
    pub normalization: Normalization,
    pub splits: Vec<SplitEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const ID_TRAIN: &str = "id-train";
pub const ID_TEST: &str = "id-test";
pub const OOD_BACKGROUND: &str = "ood-background";
pub const OOD_NOVELSHAPE: &str = "ood-novelshape";

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split(&self, name: &str) -> Result<&SplitEntry> {
        self.splits
            .iter()
            .find(|s| s.name == name)
            .ok_or_else(|| Error::Config(format!("dataset has no split '{name}'")))
    }

    pub fn split_path(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        Ok(dir.join(&self.split(name)?.path))
    }

    /// Names of every OOD split, in manifest order.
    pub fn ood_splits(&self) -> Vec<String> {
        self.splits.iter().filter(|s| s.name.starts_with("ood-")).map(|s| s.name.clone()).collect()
    }

    pub fn load_split(&self, dir: &Path, name: &str) -> Result<Dataset> {
        let path = self.split_path(dir, name)?;
        if !path.exists() {
            return Err(Error::MissingFile(path));
        }
        let data = read_cifar10_binary(&path)?;
        if data.len() != self.split(name)?.count {
            return Err(Error::Config(format!(
                "{}: manifest lists {} images, file holds {}",
                path.display(),
                self.split(name)?.count,
                data.len()
            )));
        }
        Ok(data)
    }
}

/// Write every split as a CIFAR-layout file plus `manifest.json`.
pub fn write_benchmark(dir: &Path, bench: &Benchmark) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut splits = Vec::new();
    for s in &bench.splits {
        let file = format!("{}.bin", s.name);
        write_cifar10_binary(&dir.join(&file), &s.data)?;
        splits.push(SplitEntry { name: s.name.clone(), path: file, count: s.data.len(), texture_ids: s.texture_ids.clone() });
    }
    let train = bench
        .splits
        .iter()
        .find(|s| s.name == ID_TRAIN)
        .ok_or_else(|| Error::Config("benchmark has no id-train split".into()))?;
    let manifest = Manifest {
        seed: bench.config.seed,
        classes: bench.config.classes,
        class_names: ShapeKind::ID[..bench.config.classes].iter().map(|k| k.name().to_string()).collect(),
        image_side: bench.config.image_side,
        texture_pool: bench.config.texture_pool,
        normalization: Normalization::fit(&train.data)?,
        splits,
    };
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}
