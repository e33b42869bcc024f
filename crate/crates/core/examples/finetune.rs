//! Fine-tune the pre-trained model with the background-norm objective and
//! compare pooled feature norms before and after.
//!
//! cargo run --release --example finetune [-- DIR]

use oodkit::data::{Manifest, OOD_BACKGROUND, ID_TEST};
use oodkit::model::Model;
use oodkit::pipeline::{featurize, run_training, Stage};

mod common;

fn mean_norms(model: &Model, data: &std::path::Path) -> (f64, f64) {
    let manifest = Manifest::load(data).unwrap();
    let frozen = model.freeze();
    let norm = |split: &str| {
        let set = manifest.load_split(data, split).unwrap();
        featurize(&frozen, &set, &manifest.normalization, 0, 1).unwrap().mean_global_norm()
    };
    (norm(ID_TEST), norm(OOD_BACKGROUND))
}

fn main() {
    let root = common::workdir();
    let data = common::ensure_data(&root);
    let before = common::ensure_checkpoint(&root, Stage::Pretrain);
    let cfg = common::small_config(Stage::Finetune, &root);
    println!("delta {} mu {} lambda {}", cfg.loss.delta, cfg.loss.mu, cfg.loss.lambda);

    let run = run_training(&cfg).unwrap();
    for e in &run.summary.epochs {
        println!(
            "epoch {}  ce {:.4}  lff {:.4}  mean |S| {:.1}  id-test acc {:.3}",
            e.epoch,
            e.ce_loss,
            e.lff_loss,
            e.s_count_mean,
            e.id_test_acc.unwrap_or(f64::NAN)
        );
    }
    let (pre_id, pre_bg) = mean_norms(&Model::load(&before).unwrap().0, &data);
    let (ft_id, ft_bg) = mean_norms(&run.model, &data);
    println!("mean pooled norm   id-test {pre_id:.3} -> {ft_id:.3}   ood-background {pre_bg:.3} -> {ft_bg:.3}");
}
