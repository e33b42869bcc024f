//! Mini-batch SGD for both stages.

use std::io::Write;

use rand::seq::SliceRandom;

use crate::bgextract;
use crate::data::{augment, Dataset, Normalization};
use crate::error::{Error, Result};
use crate::losses::{self, LossConfig};
use crate::model::{FeatureMaps, FrozenModel, Mode, Model};
use crate::optim::Sgd;
use crate::tensor::{self, Tensor};

use super::config::{ExtractionRefresh, RunConfig};
use super::infer;
use super::rng::{stream, Stream};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Objective {
    CrossEntropy,
    Joint { loss: LossConfig, refresh: ExtractionRefresh },
}

impl Objective {
    /// The objective a config asks for.
    pub fn from_config(cfg: &RunConfig) -> Self {
        match cfg.stage {
            super::Stage::Pretrain => Objective::CrossEntropy,
            super::Stage::Finetune => Objective::Joint { loss: cfg.loss, refresh: cfg.extraction_refresh },
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub ce_loss: f64,
    pub lff_loss: f64,
    pub s_count_mean: f64,
    pub lr: f32,
    pub id_test_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    /// `|S|` of every batch in order (empty for cross-entropy training).
    pub batch_s_counts: Vec<usize>,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,ce_loss,lff_loss,s_count_mean,lr,id_test_acc";

pub fn write_train_log(out: &mut impl Write, summary: &TrainSummary) -> std::io::Result<()> {
    writeln!(out, "{TRAIN_LOG_HEADER}")?;
    for e in &summary.epochs {
        let acc = e.id_test_acc.map(|a| a.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", e.epoch, e.ce_loss, e.lff_loss, e.s_count_mean, e.lr, acc)?;
    }
    Ok(())
}

/// What one training run sees.
pub struct TrainData<'a> {
    pub train: &'a Dataset,
    /// Scored after every epoch when present.
    pub test: Option<&'a Dataset>,
    pub norm: &'a Normalization,
}

/// Train `model` in place for `cfg.epochs` epochs.
///
/// Data order and augmentation draw from their own seed-derived streams, so a
/// run is a pure function of the config, the data and the starting weights.
pub fn train(
    model: &Model,
    data: &TrainData<'_>,
    cfg: &RunConfig,
    objective: Objective,
    mut dump: Option<&mut dyn Write>,
) -> Result<TrainSummary> {
    let train_set = if cfg.train_limit > 0 { data.train.take(cfg.train_limit) } else { data.train.clone() };
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let side = train_set.side;
    if side != model.config.image_side {
        return Err(Error::Config(format!("dataset images are {side}×{side}, model expects {}", model.config.image_side)));
    }
    if let Some(&bad) = train_set.labels.iter().find(|&&y| usize::from(y) >= model.class_count) {
        return Err(Error::Config(format!("training label {bad} outside the model's {} classes", model.class_count)));
    }

    let params = model.parameters();
    let mut sgd = Sgd::new(cfg.sgd(), &params)?;
    let mut order_rng = stream(cfg.seed, Stream::Order);
    let mut aug_rng = stream(cfg.seed, Stream::Augment);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let image_len = train_set.image_len();
    let mut summary = TrainSummary::default();
    let mut snapshot: Option<FrozenModel> = match objective {
        Objective::Joint { refresh: ExtractionRefresh::Once, .. } => Some(model.freeze()),
        _ => None,
    };
    let mut dumped = 0usize;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        sgd.set_learning_rate(lr);
        if let Objective::Joint { refresh: ExtractionRefresh::Epoch, .. } = objective {
            snapshot = Some(model.freeze());
        }
        order.shuffle(&mut order_rng);
        let (mut ce_sum, mut lff_sum, mut s_sum, mut batches) = (0f64, 0f64, 0f64, 0usize);

        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let n = idx.len();
            let mut x = Vec::with_capacity(n * image_len);
            for &i in idx {
                let mut img = augment(&train_set.image(i), side, &cfg.augmentation, &mut aug_rng);
                data.norm.apply(&mut img);
                x.extend(img);
            }
            let labels: Vec<usize> = idx.iter().map(|&i| usize::from(train_set.labels[i])).collect();
            let x = Tensor::new(&[n, 3, side, side], x)?;
            let diverged = |loss: f32| Error::Diverged { epoch: epoch + 1, batch: b + 1, loss };

            let z = model.forward_encoder(&x, Mode::Train)?;
            let logits = model.classify(&tensor::global_average_pool(&z)?)?;
            let ce = match losses::cross_entropy(&logits, &labels) {
                Err(Error::NonFinite(_)) => return Err(diverged(f32::NAN)),
                r => r?,
            };
            let (loss, lff_value) = match objective {
                Objective::CrossEntropy => (ce.clone(), 0.0),
                Objective::Joint { loss: lc, .. } => {
                    let set = {
                        let live;
                        let frozen_maps;
                        let (maps, head) = match &snapshot {
                            Some(s) => {
                                frozen_maps = s.feature_maps(&x.data(), n)?;
                                (FeatureMaps::of(&frozen_maps, z.shape())?, s.head.clone())
                            }
                            None => {
                                live = z.to_vec();
                                (FeatureMaps::of(&live, z.shape())?, model.head())
                            }
                        };
                        let grids = bgextract::batch_probabilities(&maps, &labels, &head)?;
                        if let Some(out) = dump.as_deref_mut() {
                            bgextract::write_extraction_csv(&mut &mut *out, &grids, lc.delta, dumped, dumped == 0)
                                .map_err(|e| Error::io("extraction dump", e))?;
                        }
                        dumped += n;
                        bgextract::select_background(&maps, &grids, lc.delta)?
                    };
                    summary.batch_s_counts.push(set.len());
                    s_sum += set.len() as f64;
                    let lff = losses::lff_loss(&z, &set, lc.mu)?;
                    let value = lff.item();
                    (losses::joint_loss(&ce, &lff, lc.lambda)?, value)
                }
            };
            let value = loss.item();
            if !value.is_finite() {
                return Err(diverged(value));
            }
            ce_sum += f64::from(ce.item());
            lff_sum += f64::from(lff_value);
            batches += 1;
            loss.backward()?;
            sgd.step(&params)?;
        }

        let id_test_acc = match data.test {
            Some(t) => Some(infer::featurize(&model.freeze(), t, data.norm, cfg.eval_limit, infer::threads_from_env())?.accuracy()),
            None => None,
        };
        let b = batches.max(1) as f64;
        summary.epochs.push(EpochRecord {
            epoch: epoch + 1,
            ce_loss: ce_sum / b,
            lff_loss: lff_sum / b,
            s_count_mean: s_sum / b,
            lr,
            id_test_acc,
        });
    }
    Ok(summary)
}
