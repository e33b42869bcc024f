//! Fine-tune once per threshold value and compare detection quality.
//!
//! cargo run --release --example sweep [-- DIR]

use oodkit::pipeline::{run_sweep, Stage};

mod common;

fn main() {
    let root = common::workdir();
    common::ensure_checkpoint(&root, Stage::Pretrain);
    let mut cfg = common::small_config(Stage::Finetune, &root);
    cfg.epochs = 1;
    cfg.lr_decay_epochs.clear();
    cfg.out = Some(root.join("sweep"));
    let values: Vec<String> = ["0", "0.05", "0.1", "0.3"].iter().map(|s| s.to_string()).collect();
    let rows = run_sweep(&cfg, "delta", &values).unwrap();
    println!("{:>6} {:13} {:>7} {:>7} {:>8}", "delta", "score", "FPR95", "AUROC", "mean |S|");
    for r in rows.iter().filter(|r| r.ood_split == "ood-background") {
        println!("{:>6} {:13} {:7.4} {:7.4} {:8.1}", r.value, r.score, r.fpr95, r.auroc, r.s_count_mean);
    }
}
