//! Small shared setup so each example runs in seconds and can build on the
//! output of the previous one.
#![allow(dead_code)]

use std::path::{Path, PathBuf};

use oodkit::data::{generate_benchmark, write_benchmark, ShapesBenchmark, MANIFEST_FILE};
use oodkit::model::EncoderConfig;
use oodkit::pipeline::{run_training, RunConfig, Stage, CHECKPOINT_FILE};

/// First argument, or a fixed directory under the system temp dir.
pub fn workdir() -> PathBuf {
    std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("oodkit-examples"))
}

pub fn small_benchmark() -> ShapesBenchmark {
    ShapesBenchmark { id_train: 3000, id_test: 300, ood_background: 300, ood_novelshape: 300, ..Default::default() }
}

pub fn small_config(stage: Stage, root: &Path) -> RunConfig {
    let mut cfg = RunConfig::defaults(stage);
    cfg.encoder = EncoderConfig { widths: vec![8, 16, 32], blocks_per_stage: 2, image_side: 32, ..Default::default() };
    cfg.batch_size = 32;
    cfg.data = Some(root.join("data"));
    match stage {
        Stage::Pretrain => {
            cfg.epochs = 12;
            cfg.lr_decay_epochs = vec![8];
            cfg.out = Some(root.join("pretrain"));
        }
        Stage::Finetune => {
            cfg.epochs = 3;
            cfg.lr_decay_epochs = vec![2];
            cfg.checkpoint = Some(root.join("pretrain").join(CHECKPOINT_FILE));
            cfg.out = Some(root.join("finetune"));
        }
    }
    cfg
}

pub fn ensure_data(root: &Path) -> PathBuf {
    let dir = root.join("data");
    if !dir.join(MANIFEST_FILE).is_file() {
        write_benchmark(&dir, &generate_benchmark(&small_benchmark()).unwrap()).unwrap();
    }
    dir
}

/// Checkpoint of `stage`, training it (and its prerequisites) if missing.
pub fn ensure_checkpoint(root: &Path, stage: Stage) -> PathBuf {
    ensure_data(root);
    if stage == Stage::Finetune {
        ensure_checkpoint(root, Stage::Pretrain);
    }
    let cfg = small_config(stage, root);
    let path = cfg.out.as_ref().unwrap().join(CHECKPOINT_FILE);
    if !path.is_file() {
        run_training(&cfg).unwrap();
    }
    path
}
