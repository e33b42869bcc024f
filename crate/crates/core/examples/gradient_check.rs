//! Compare the analytic gradient of the background hinge with central
//! differences.
//!
//! cargo run --release --example gradient_check

use oodkit::losses::lff_loss_rows;
use oodkit::tensor::Tensor;

fn loss(rows: &[f32], mu: f32) -> f64 {
    let t = Tensor::new(&[2, 3], rows.to_vec()).unwrap();
    f64::from(lff_loss_rows(&t, mu).unwrap().item())
}

fn main() {
    let rows = vec![1.5f32, -0.4, 2.0, 0.1, 0.2, -0.3];
    let mu = 1.0;
    let z = Tensor::parameter(&[2, 3], rows.clone()).unwrap();
    let l = lff_loss_rows(&z, mu).unwrap();
    l.backward().unwrap();
    let analytic = z.grad().unwrap();
    println!("loss {:.6}", l.item());

    let h = 1e-2f32;
    for (i, a) in analytic.iter().enumerate() {
        let (mut up, mut down) = (rows.clone(), rows.clone());
        up[i] += h;
        down[i] -= h;
        let numeric = (loss(&up, mu) - loss(&down, mu)) / (2.0 * f64::from(h));
        println!("dz[{i}]  analytic {a:+.5}  numeric {numeric:+.5}");
    }
    // the second row sits inside the margin, so its gradient is zero
}
