//! Evaluate the pre-trained and fine-tuned checkpoints with every score.
//!
//! cargo run --release --example evaluate [-- DIR]

use oodkit::pipeline::{run_evaluation, EvalSummary, RunConfig, Stage};

mod common;

fn table(s: &EvalSummary) {
    println!("{}: id-test accuracy {:.3}, ReAct clip {:.3}", s.label, s.id_test_accuracy, s.react.clip);
    println!("  {:15} {:13} {:>7} {:>7}", "ood split", "score", "FPR95", "AUROC");
    for e in &s.entries {
        println!("  {:15} {:13} {:7.4} {:7.4}", e.ood_split, e.score, e.fpr95, e.auroc);
    }
}

fn main() {
    let root = common::workdir();
    for (stage, name) in [(Stage::Pretrain, "pretrained"), (Stage::Finetune, "finetuned")] {
        let checkpoint = common::ensure_checkpoint(&root, stage);
        let mut cfg = RunConfig::defaults(stage);
        cfg.data = Some(root.join("data"));
        cfg.checkpoint = Some(checkpoint);
        cfg.out = Some(root.join("evals").join(name));
        table(&run_evaluation(&cfg).unwrap().summary);
    }
}
