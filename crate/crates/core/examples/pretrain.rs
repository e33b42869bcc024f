//! Train a small encoder and head with cross-entropy only.
//!
//! cargo run --release --example pretrain [-- DIR]

use oodkit::pipeline::{run_training, Stage};

mod common;

fn main() {
    let root = common::workdir();
    common::ensure_data(&root);
    let cfg = common::small_config(Stage::Pretrain, &root);
    let run = run_training(&cfg).unwrap();
    for e in &run.summary.epochs {
        println!("epoch {:2}  lr {:.4}  ce {:.4}  id-test acc {:.3}", e.epoch, e.lr, e.ce_loss, e.id_test_acc.unwrap_or(f64::NAN));
    }
    println!("checkpoint {}", run.checkpoint.display());
}
