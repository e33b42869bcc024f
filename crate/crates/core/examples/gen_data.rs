//! Generate a small shapes-on-textures benchmark and describe it.
//!
//! cargo run --release --example gen_data [-- DIR]

use oodkit::data::{generate_benchmark, write_benchmark};

mod common;

fn main() {
    let root = common::workdir();
    let config = common::small_benchmark();
    let bench = generate_benchmark(&config).unwrap();
    let manifest = write_benchmark(&root.join("data"), &bench).unwrap();

    println!("classes {:?}", manifest.class_names);
    println!("{} textures, {}x{} images", manifest.texture_pool, manifest.image_side, manifest.image_side);
    for split in &bench.splits {
        let shaped = split.foreground_pixels.iter().filter(|&&p| p > 0).count();
        let mut per_class = vec![0usize; config.classes];
        for &l in &split.data.labels {
            if (l as usize) < config.classes {
                per_class[l as usize] += 1;
            }
        }
        println!("{:15} {:5} images, {:5} with a shape, labels {:?}", split.name, split.data.len(), shaped, per_class);
    }

    // coarse preview of the first training image's brightness
    let img = bench.splits[0].data.image(0);
    let side = config.image_side;
    let ramp = [' ', '.', ':', '*', '#'];
    for y in 0..side {
        let row: String = (0..side)
            .map(|x| {
                let v = (0..3).map(|c| img[(c * side + y) * side + x]).sum::<f32>() / 3.0;
                ramp[((v * ramp.len() as f32) as usize).min(ramp.len() - 1)]
            })
            .collect();
        println!("  {row}");
    }
    println!("written to {}", root.join("data").display());
}
