//! Run configuration as plain `key = value` text.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::AugmentationPolicy;
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::EncoderConfig;
use crate::optim::SgdConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Pretrain,
    Finetune,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Finetune => "finetune",
        }
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pretrain" => Ok(Stage::Pretrain),
            "finetune" => Ok(Stage::Finetune),
            _ => Err(Error::Config(format!("stage must be pretrain or finetune, got '{s}'"))),
        }
    }
}

/// When the background set is re-derived during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExtractionRefresh {
    /// From the live model on every batch.
    Batch,
    /// From a snapshot taken at the start of each epoch.
    Epoch,
    /// From a snapshot of the input checkpoint.
    Once,
}

impl ExtractionRefresh {
    pub fn name(self) -> &'static str {
        match self {
            ExtractionRefresh::Batch => "batch",
            ExtractionRefresh::Epoch => "epoch",
            ExtractionRefresh::Once => "once",
        }
    }
}

impl FromStr for ExtractionRefresh {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batch" => Ok(ExtractionRefresh::Batch),
            "epoch" => Ok(ExtractionRefresh::Epoch),
            "once" => Ok(ExtractionRefresh::Once),
            _ => Err(Error::Config(format!("extraction-refresh must be batch, epoch or once, got '{s}'"))),
        }
    }
}

/// Everything a training, evaluation or sweep run depends on.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub lr: f32,
    /// The learning rate is divided by this at every decay epoch.
    pub lr_decay_factor: f32,
    pub lr_decay_epochs: Vec<usize>,
    pub momentum: f32,
    pub weight_decay: f32,
    pub loss: LossConfig,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: AugmentationPolicy,
    pub react_percentile: f32,
    pub odin_temperature: f32,
    pub odin_epsilon: f32,
    pub extraction_refresh: ExtractionRefresh,
    pub encoder: EncoderConfig,
    /// Train on only the first N id-train images (0 = all).
    pub train_limit: usize,
    /// Evaluate on only the first N images of every test split (0 = all).
    pub eval_limit: usize,
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub dump_extraction: bool,
}

impl RunConfig {
    /// Desk-scale defaults for a stage.
    pub fn defaults(stage: Stage) -> Self {
        let (epochs, lr, decay, augmentation) = match stage {
            Stage::Pretrain => (20, 0.05, vec![10], AugmentationPolicy::pretrain()),
            Stage::Finetune => (4, 1e-4, vec![2], AugmentationPolicy::finetune()),
        };
        let sgd = SgdConfig::default();
        RunConfig {
            stage,
            epochs,
            lr,
            lr_decay_factor: 10.0,
            lr_decay_epochs: decay,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            loss: LossConfig::default(),
            batch_size: 64,
            seed: 7,
            augmentation,
            react_percentile: 90.0,
            odin_temperature: 1000.0,
            odin_epsilon: 0.0,
            extraction_refresh: ExtractionRefresh::Batch,
            encoder: EncoderConfig::default(),
            train_limit: 0,
            eval_limit: 0,
            data: None,
            checkpoint: None,
            out: None,
            dump_extraction: false,
        }
    }

    pub const KEYS: [&'static str; 30] = [
        "stage",
        "epochs",
        "lr",
        "lr-decay-factor",
        "lr-decay-epochs",
        "momentum",
        "weight-decay",
        "delta",
        "mu",
        "lambda",
        "batch-size",
        "seed",
        "crop-padding",
        "hflip",
        "color-jitter",
        "react-percentile",
        "odin-temperature",
        "odin-epsilon",
        "extraction-refresh",
        "widths",
        "blocks-per-stage",
        "image-side",
        "batch-norm",
        "train-limit",
        "eval-limit",
        "data",
        "checkpoint",
        "out",
        "dump-extraction",
        "input-channels",
    ];

    /// Learning rate in effect during 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let decays = self.lr_decay_epochs.iter().filter(|&&d| d <= epoch).count() as i32;
        self.lr / self.lr_decay_factor.powi(decays)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig { learning_rate: self.lr, momentum: self.momentum, weight_decay: self.weight_decay }
    }

    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "stage" => {
                // switching stage swaps in that stage's defaults for the schedule
                let stage: Stage = value.parse()?;
                if stage != self.stage {
                    let d = RunConfig::defaults(stage);
                    self.stage = stage;
                    self.epochs = d.epochs;
                    self.lr = d.lr;
                    self.lr_decay_epochs = d.lr_decay_epochs;
                    self.augmentation = d.augmentation;
                }
            }
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "lr-decay-factor" => self.lr_decay_factor = parse(key, value)?,
            "lr-decay-epochs" => self.lr_decay_epochs = parse_list(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight-decay" => self.weight_decay = parse(key, value)?,
            "delta" => self.loss.delta = parse(key, value)?,
            "mu" => self.loss.mu = parse(key, value)?,
            "lambda" => self.loss.lambda = parse(key, value)?,
            "batch-size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "crop-padding" => self.augmentation.random_crop_padding = parse(key, value)?,
            "hflip" => self.augmentation.horizontal_flip = parse(key, value)?,
            "color-jitter" => self.augmentation.color_jitter = parse(key, value)?,
            "react-percentile" => self.react_percentile = parse(key, value)?,
            "odin-temperature" => self.odin_temperature = parse(key, value)?,
            "odin-epsilon" => self.odin_epsilon = parse(key, value)?,
            "extraction-refresh" => self.extraction_refresh = value.parse()?,
            "widths" => self.encoder.widths = parse_list(key, value)?,
            "blocks-per-stage" => self.encoder.blocks_per_stage = parse(key, value)?,
            "image-side" => self.encoder.image_side = parse(key, value)?,
            "batch-norm" => self.encoder.batch_norm = parse(key, value)?,
            "input-channels" => self.encoder.input_channels = parse(key, value)?,
            "train-limit" => self.train_limit = parse(key, value)?,
            "eval-limit" => self.eval_limit = parse(key, value)?,
            "data" => self.data = path(value),
            "checkpoint" => self.checkpoint = path(value),
            "out" => self.out = path(value),
            "dump-extraction" => self.dump_extraction = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a `key = value` document; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (key, value) in parse_pairs(text)? {
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage == Stage::Finetune && self.checkpoint.is_none() {
            return Err(Error::Config("finetune needs an input checkpoint (--checkpoint)".into()));
        }
        let mut prev = 0;
        for &d in &self.lr_decay_epochs {
            if d <= prev || d > self.epochs {
                return Err(Error::Config(format!(
                    "lr-decay-epochs must be strictly increasing within [1, {}], got {:?}",
                    self.epochs, self.lr_decay_epochs
                )));
            }
            prev = d;
        }
        if !(self.lr_decay_factor >= 1.0) {
            return Err(Error::Config(format!("lr-decay-factor must be >= 1, got {}", self.lr_decay_factor)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch-size must be positive".into()));
        }
        if !(0.0..=100.0).contains(&self.react_percentile) {
            return Err(Error::Config(format!("react-percentile must lie in [0, 100], got {}", self.react_percentile)));
        }
        if !(self.odin_temperature > 0.0) || !(self.odin_epsilon >= 0.0) {
            return Err(Error::Config("odin-temperature must be > 0 and odin-epsilon >= 0".into()));
        }
        self.loss.validate()?;
        self.encoder.validate()?;
        crate::optim::Sgd::new(self.sgd(), &[]).map(|_| ())
    }

    /// Every key except `out`, one per line, in a fixed order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let a = &self.augmentation;
        let pairs: Vec<(&str, String)> = vec![
            ("stage", self.stage.name().into()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.lr.to_string()),
            ("lr-decay-factor", self.lr_decay_factor.to_string()),
            ("lr-decay-epochs", list(&self.lr_decay_epochs)),
            ("momentum", self.momentum.to_string()),
            ("weight-decay", self.weight_decay.to_string()),
            ("delta", self.loss.delta.to_string()),
            ("mu", self.loss.mu.to_string()),
            ("lambda", self.loss.lambda.to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("crop-padding", a.random_crop_padding.to_string()),
            ("hflip", a.horizontal_flip.to_string()),
            ("color-jitter", a.color_jitter.to_string()),
            ("react-percentile", self.react_percentile.to_string()),
            ("odin-temperature", self.odin_temperature.to_string()),
            ("odin-epsilon", self.odin_epsilon.to_string()),
            ("extraction-refresh", self.extraction_refresh.name().into()),
            ("input-channels", self.encoder.input_channels.to_string()),
            ("widths", list(&self.encoder.widths)),
            ("blocks-per-stage", self.encoder.blocks_per_stage.to_string()),
            ("image-side", self.encoder.image_side.to_string()),
            ("batch-norm", self.encoder.batch_norm.to_string()),
            ("train-limit", self.train_limit.to_string()),
            ("eval-limit", self.eval_limit.to_string()),
            ("data", p(&self.data)),
            ("checkpoint", p(&self.checkpoint)),
            ("dump-extraction", self.dump_extraction.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Hyperparameters echoed into checkpoints.
    pub fn echo(&self) -> Vec<(String, f32)> {
        vec![
            ("stage".into(), if self.stage == Stage::Pretrain { 0.0 } else { 1.0 }),
            ("epochs".into(), self.epochs as f32),
            ("lr".into(), self.lr),
            ("momentum".into(), self.momentum),
            ("weight_decay".into(), self.weight_decay),
            ("delta".into(), self.loss.delta),
            ("mu".into(), self.loss.mu),
            ("lambda".into(), self.loss.lambda),
            ("batch_size".into(), self.batch_size as f32),
        ]
    }
}

fn path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

/// `key = value` lines, skipping blanks and `#` comments.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
