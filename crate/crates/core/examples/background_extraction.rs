//! Show which local features a pre-trained model treats as background.
//!
//! cargo run --release --example background_extraction [-- DIR]

use oodkit::bgextract::{batch_probabilities, select_background};
use oodkit::data::{Manifest, ID_TRAIN};
use oodkit::model::{FeatureMaps, Model};
use oodkit::pipeline::infer::normalized_batch;
use oodkit::pipeline::Stage;

mod common;

fn main() {
    let root = common::workdir();
    let data = common::ensure_data(&root);
    let (model, _) = Model::load(&common::ensure_checkpoint(&root, Stage::Pretrain)).unwrap();
    let manifest = Manifest::load(&data).unwrap();
    let train = manifest.load_split(&data, ID_TRAIN).unwrap();

    let n = 4;
    let frozen = model.freeze();
    let z = frozen.feature_maps(&normalized_batch(&train, &manifest.normalization, 0..n), n).unwrap();
    let side = frozen.config.feature_side();
    let maps = FeatureMaps::new(&z, n, frozen.feature_channels(), side, side).unwrap();
    let labels: Vec<usize> = train.labels[..n].iter().map(|&l| l as usize).collect();
    let grids = batch_probabilities(&maps, &labels, &model.head()).unwrap();

    for delta in [0.01, 0.1, 0.5] {
        let set = select_background(&maps, &grids, delta).unwrap();
        println!("delta {delta:4}: |S| = {} of {}", set.len(), n * maps.locations());
    }

    // true-class probability per location; '#' marks members of S at delta 0.1
    for (s, grid) in grids.iter().enumerate() {
        println!("sample {s} ({})", manifest.class_names[grid.label]);
        for y in 0..grid.height {
            let row: Vec<String> = (0..grid.width)
                .map(|x| {
                    let p = grid.probs[y * grid.width + x];
                    format!("{p:.2}{}", if p < 0.1 { '#' } else { ' ' })
                })
                .collect();
            println!("  {}", row.join(" "));
        }
    }
}
