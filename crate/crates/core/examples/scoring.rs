//! The post-hoc scores on a hand-made logit vector, then ID vs OOD metrics
//! of one score.
//!
//! cargo run --release --example scoring

use oodkit::metrics::{auroc, fpr_at_tpr};
use oodkit::model::LinearHead;
use oodkit::scoring::{energy_score, fit_react_threshold, msp_score, react_energy_score, tempered_msp};

fn main() {
    let logits = [4.0f32, 1.0, 0.5, -1.0];
    println!("msp {:.4}", msp_score(&logits));
    println!("energy {:.4}", energy_score(&logits));
    println!("tempered msp (T = 1000) {:.6}", tempered_msp(&logits, 1000.0));
    let shifted: Vec<f32> = logits.iter().map(|v| v + 3.0).collect();
    println!("adding 3 to every logit: msp {:.4}, energy {:.4}", msp_score(&shifted), energy_score(&shifted));

    // ReAct clips activations above a percentile of the training activations
    let head = LinearHead::new(vec![1.0, -0.5, 0.2, 0.3, 0.8, -0.1], vec![0.0, 0.1], 2, 3).unwrap();
    let train_activations = [0.1f32, 0.4, 0.9, 1.3, 0.2, 0.7, 2.5, 0.3, 0.6, 1.1];
    let react = fit_react_threshold(&train_activations, 90.0, "example").unwrap();
    let feature = [0.5f32, 6.0, 0.2];
    println!(
        "clip {:.3}: energy {:.4} plain, {:.4} rectified",
        react.clip,
        energy_score(&head.logits(&feature, 1)),
        react_energy_score(&feature, &head, Some(&react)).unwrap()
    );

    let id = [5.1f32, 4.8, 6.0, 3.9, 5.5, 4.4];
    let ood = [3.0f32, 4.5, 2.2, 3.8, 1.9, 4.9];
    let op = fpr_at_tpr(&id, &ood, 0.95).unwrap();
    println!("AUROC {:.4}, FPR at 95% TPR {:.4} (threshold {})", auroc(&id, &ood).unwrap(), op.fpr, op.gamma);
}
