//! Aggregate the evaluations written by the `evaluate` example and print the
//! mean local feature norm of the rendered heatmaps.
//!
//! cargo run --release --example report [-- DIR]

use oodkit::pipeline::{build_report, run_evaluation, RunConfig, Stage};

mod common;

fn main() {
    let root = common::workdir();
    let evals = root.join("evals");
    for (stage, name) in [(Stage::Pretrain, "pretrained"), (Stage::Finetune, "finetuned")] {
        if !evals.join(name).join("eval.json").is_file() {
            let mut cfg = RunConfig::defaults(stage);
            cfg.data = Some(root.join("data"));
            cfg.checkpoint = Some(common::ensure_checkpoint(&root, stage));
            cfg.out = Some(evals.join(name));
            run_evaluation(&cfg).unwrap();
        }
    }
    let out = root.join("report");
    let report = build_report(&evals, &out).unwrap();
    for entry in &report.evaluations {
        println!("{} ({})", entry.summary.label, entry.eval_dir);
        for (split, norm) in &entry.heatmap_mean_norm {
            println!("  {split:15} mean local norm {norm:.3}");
        }
    }
    println!("heatmap grids under {}", out.join("heatmaps").display());
}
