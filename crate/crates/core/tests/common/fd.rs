//! Central finite differences against a 64-bit shadow of every op.
#![allow(dead_code)]

use oodkit::tensor::{self, Tensor};
use rand::Rng;

use super::{dot, rng, values, values_off, widen};

pub const EPS: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

type Graph = Box<dyn Fn(&[Tensor]) -> Tensor>;
type Reference = Box<dyn Fn(&[Vec<f64>]) -> f64>;

/// A scalar function of several inputs, in f32 autograd and in f64.
pub struct FdCase {
    pub inputs: Vec<(Vec<usize>, Vec<f32>)>,
    pub graph: Graph,
    pub reference: Reference,
}

/// Largest norm-wise relative error over the inputs.
pub fn relative_error(case: &FdCase) -> f64 {
    let params: Vec<Tensor> =
        case.inputs.iter().map(|(s, v)| Tensor::parameter(s, v.clone()).unwrap()).collect();
    let loss = (case.graph)(&params);
    loss.backward().unwrap();
    let base: Vec<Vec<f64>> = case.inputs.iter().map(|(_, v)| widen(v)).collect();
    let mut worst = 0.0f64;
    for (i, p) in params.iter().enumerate() {
        let analytic = widen(&p.grad().expect("every input gets a gradient"));
        let mut numeric = vec![0.0; analytic.len()];
        let mut x = base.clone();
        for j in 0..numeric.len() {
            let v = base[i][j];
            x[i][j] = v + EPS;
            let up = (case.reference)(&x);
            x[i][j] = v - EPS;
            let down = (case.reference)(&x);
            x[i][j] = v;
            numeric[j] = (up - down) / (2.0 * EPS);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let scale = super::norm(&numeric).max(super::norm(&analytic)).max(1e-6);
        worst = worst.max(diff / scale);
    }
    worst
}

/// Project a tensor output onto fixed random weights so every op ends in a scalar.
fn project(y: &Tensor, r: &[f32]) -> Tensor {
    let r = Tensor::new(y.shape(), r.to_vec()).unwrap();
    tensor::sum(&tensor::mul(y, &r).unwrap())
}

pub fn conv2d(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (n, cin, cout) = (g.random_range(1..=2), g.random_range(1..=3), g.random_range(1..=3));
    let (h, w) = (g.random_range(3..=6), g.random_range(3..=6));
    let (stride, pad) = (g.random_range(1..=2), g.random_range(0..=1));
    let k = 3;
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let r = values(&mut g, n * cout * oh * ow);
    let rr = widen(&r);
    FdCase {
        inputs: vec![
            (vec![n, cin, h, w], values(&mut g, n * cin * h * w)),
            (vec![cout, cin, k, k], values(&mut g, cout * cin * k * k)),
            (vec![cout], values(&mut g, cout)),
        ],
        graph: Box::new(move |p| project(&tensor::conv2d(&p[0], &p[1], &p[2], stride, pad).unwrap(), &r)),
        reference: Box::new(move |x| dot(&rr, &super::conv2d(&x[0], &x[1], &x[2], n, cin, h, w, cout, k, stride, pad).0)),
    }
}

fn norm_case(seed: u64, fixed: bool) -> FdCase {
    let mut g = rng(seed);
    let (n, c, h, w) = (g.random_range(1..=3), g.random_range(1..=3), g.random_range(2..=3), g.random_range(2..=3));
    let len = n * c * h * w;
    let r = values(&mut g, len);
    let rr = widen(&r);
    let mean = values(&mut g, c);
    let var: Vec<f32> = (0..c).map(|_| g.random_range(0.2f32..2.0)).collect();
    let (m64, v64) = (widen(&mean), widen(&var));
    FdCase {
        inputs: vec![
            (vec![n, c, h, w], values(&mut g, len).into_iter().map(|v| 2.0 * v).collect()),
            (vec![c], values(&mut g, c)),
            (vec![c], values(&mut g, c)),
        ],
        graph: Box::new(move |p| {
            let y = if fixed {
                tensor::batch_norm_fixed(&p[0], &p[1], &p[2], &mean, &var).unwrap()
            } else {
                tensor::batch_norm(&p[0], &p[1], &p[2]).unwrap().0
            };
            project(&y, &r)
        }),
        reference: Box::new(move |x| {
            let stats = fixed.then_some((m64.as_slice(), v64.as_slice()));
            dot(&rr, &super::batch_norm(&x[0], &x[1], &x[2], stats, n, c, h * w))
        }),
    }
}

pub fn batch_norm(seed: u64) -> FdCase {
    norm_case(seed, false)
}

pub fn batch_norm_fixed(seed: u64) -> FdCase {
    norm_case(seed, true)
}

pub fn relu(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let len = g.random_range(1..=40);
    let r = values(&mut g, len);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(vec![len], values_off(&mut g, len, 0.0, 0.01))],
        graph: Box::new(move |p| project(&tensor::relu(&p[0]), &r)),
        reference: Box::new(move |x| x[0].iter().zip(&rr).map(|(v, r)| v.max(0.0) * r).sum()),
    }
}

pub fn add(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let shape = vec![g.random_range(1..=4), g.random_range(1..=6)];
    let len = shape[0] * shape[1];
    let r = values(&mut g, len);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(shape.clone(), values(&mut g, len)), (shape, values(&mut g, len))],
        graph: Box::new(move |p| project(&tensor::add(&p[0], &p[1]).unwrap(), &r)),
        reference: Box::new(move |x| (0..rr.len()).map(|i| (x[0][i] + x[1][i]) * rr[i]).sum()),
    }
}

pub fn mul(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let shape = vec![g.random_range(1..=4), g.random_range(1..=6)];
    let len = shape[0] * shape[1];
    let r = values(&mut g, len);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(shape.clone(), values(&mut g, len)), (shape, values(&mut g, len))],
        graph: Box::new(move |p| project(&tensor::mul(&p[0], &p[1]).unwrap(), &r)),
        reference: Box::new(move |x| (0..rr.len()).map(|i| x[0][i] * x[1][i] * rr[i]).sum()),
    }
}

pub fn scale(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let len = g.random_range(1..=30);
    let factor: f32 = g.random_range(-3.0..3.0);
    let r = values(&mut g, len);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(vec![len], values(&mut g, len))],
        graph: Box::new(move |p| project(&tensor::scale(&p[0], factor), &r)),
        reference: Box::new(move |x| x[0].iter().zip(&rr).map(|(v, r)| v * f64::from(factor) * r).sum()),
    }
}

pub fn sum(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let shape = vec![g.random_range(1..=3), g.random_range(1..=3), g.random_range(1..=5)];
    let len = shape.iter().product();
    FdCase {
        inputs: vec![(shape, values(&mut g, len))],
        graph: Box::new(|p| tensor::sum(&p[0])),
        reference: Box::new(|x| x[0].iter().sum()),
    }
}

pub fn mean(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let len = g.random_range(1..=50);
    FdCase {
        inputs: vec![(vec![len], values(&mut g, len))],
        graph: Box::new(|p| tensor::mean(&p[0])),
        reference: Box::new(|x| x[0].iter().sum::<f64>() / x[0].len() as f64),
    }
}

pub fn global_average_pool(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (n, c, h, w) = (g.random_range(1..=3), g.random_range(1..=4), g.random_range(1..=5), g.random_range(1..=5));
    let r = values(&mut g, n * c);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(vec![n, c, h, w], values(&mut g, n * c * h * w))],
        graph: Box::new(move |p| project(&tensor::global_average_pool(&p[0]).unwrap(), &r)),
        reference: Box::new(move |x| dot(&rr, &super::gap(&x[0], n, c, h * w))),
    }
}

pub fn linear(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (rows, inner, outer) = (g.random_range(1..=5), g.random_range(1..=6), g.random_range(1..=5));
    let r = values(&mut g, rows * outer);
    let rr = widen(&r);
    FdCase {
        inputs: vec![
            (vec![rows, inner], values(&mut g, rows * inner)),
            (vec![outer, inner], values(&mut g, outer * inner)),
            (vec![outer], values(&mut g, outer)),
        ],
        graph: Box::new(move |p| project(&tensor::linear(&p[0], &p[1], &p[2]).unwrap(), &r)),
        reference: Box::new(move |x| dot(&rr, &super::linear(&x[0], &x[1], &x[2], rows, inner, outer))),
    }
}

/// Random picks, repeats allowed.
fn picks(g: &mut impl Rng, n: usize, plane: usize) -> Vec<(usize, usize)> {
    let m = g.random_range(1..=2 * n * plane);
    (0..m).map(|_| (g.random_range(0..n), g.random_range(0..plane))).collect()
}

fn gather(z: &[f64], c: usize, plane: usize, picks: &[(usize, usize)]) -> Vec<Vec<f64>> {
    picks.iter().map(|&(s, j)| (0..c).map(|ch| z[(s * c + ch) * plane + j]).collect()).collect()
}

pub fn select_locations(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (n, c, h, w) = (g.random_range(1..=3), g.random_range(1..=4), g.random_range(1..=4), g.random_range(1..=4));
    let picks = picks(&mut g, n, h * w);
    let r = values(&mut g, picks.len() * c);
    let rr = widen(&r);
    let p2 = picks.clone();
    FdCase {
        inputs: vec![(vec![n, c, h, w], values(&mut g, n * c * h * w))],
        graph: Box::new(move |p| project(&tensor::select_locations(&p[0], &picks).unwrap(), &r)),
        reference: Box::new(move |x| dot(&rr, &gather(&x[0], c, h * w, &p2).concat())),
    }
}

/// Rows whose norms stay well away from zero.
fn rows_off_origin(g: &mut impl Rng, m: usize, c: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(m * c);
    while out.len() < m * c {
        let row: Vec<f32> = (0..c).map(|_| g.random_range(-1.0f32..1.0)).collect();
        if row.iter().map(|v| v * v).sum::<f32>().sqrt() > 0.2 {
            out.extend(row);
        }
    }
    out
}

pub fn row_norms(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (m, c) = (g.random_range(1..=6), g.random_range(1..=6));
    let x = rows_off_origin(&mut g, m, c);
    let r = values(&mut g, m);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(vec![m, c], x)],
        graph: Box::new(move |p| project(&tensor::row_norms(&p[0]).unwrap(), &r)),
        reference: Box::new(move |x| x[0].chunks(c).zip(&rr).map(|(row, r)| super::norm(row) * r).sum()),
    }
}

pub fn hinge(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let len = g.random_range(1..=30);
    let margin: f32 = g.random_range(0.0..1.0);
    let r = values(&mut g, len);
    let rr = widen(&r);
    FdCase {
        inputs: vec![(vec![len], values_off(&mut g, len, margin, 0.01))],
        graph: Box::new(move |p| project(&tensor::hinge(&p[0], margin), &r)),
        reference: Box::new(move |x| x[0].iter().zip(&rr).map(|(v, r)| (v - f64::from(margin)).max(0.0) * r).sum()),
    }
}

pub fn cross_entropy(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (n, k) = (g.random_range(1..=5), g.random_range(2..=6));
    let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..k)).collect();
    let l2 = labels.clone();
    let logits: Vec<f32> = values(&mut g, n * k).into_iter().map(|v| 3.0 * v).collect();
    FdCase {
        inputs: vec![(vec![n, k], logits)],
        graph: Box::new(move |p| tensor::cross_entropy(&p[0], &labels).unwrap()),
        reference: Box::new(move |x| super::cross_entropy(&x[0], &l2, k)),
    }
}

/// Mean hinge on the norms of gathered local vectors, margin kept off every norm.
pub fn background_hinge(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (n, c, h, w) = (g.random_range(1..=2), g.random_range(2..=4), g.random_range(2..=3), g.random_range(2..=3));
    let z = rows_off_origin(&mut g, n * h * w, c);
    let picks = picks(&mut g, n, h * w);
    let zz = widen(&z);
    let norms: Vec<f64> = gather(&zz, c, h * w, &picks).iter().map(|v| super::norm(v)).collect();
    let mu = loop {
        let mu: f64 = g.random_range(0.0..1.2);
        if norms.iter().all(|v| (v - mu).abs() > 0.01) {
            break mu as f32;
        }
    };
    let p2 = picks.clone();
    FdCase {
        inputs: vec![(vec![n, c, h, w], z)],
        graph: Box::new(move |p| {
            let rows = tensor::select_locations(&p[0], &picks).unwrap();
            oodkit::losses::lff_loss_rows(&rows, mu).unwrap()
        }),
        reference: Box::new(move |x| {
            let rows = gather(&x[0], c, h * w, &p2);
            rows.iter().map(|v| (super::norm(v) - f64::from(mu)).max(0.0)).sum::<f64>() / rows.len() as f64
        }),
    }
}

/// Conv, residual add, pooling, head and cross-entropy chained together.
pub fn classifier_chain(seed: u64) -> FdCase {
    let mut g = rng(seed);
    let (n, c, s, k) = (g.random_range(1..=2), g.random_range(1..=3), g.random_range(3..=5), g.random_range(2..=4));
    let labels: Vec<usize> = (0..n).map(|_| g.random_range(0..k)).collect();
    let l2 = labels.clone();
    FdCase {
        inputs: vec![
            (vec![n, c, s, s], values(&mut g, n * c * s * s)),
            (vec![c, c, 3, 3], values(&mut g, c * c * 9)),
            (vec![c], values(&mut g, c)),
            (vec![k, c], values(&mut g, k * c)),
            (vec![k], values(&mut g, k)),
        ],
        graph: Box::new(move |p| {
            let y = tensor::add(&p[0], &tensor::conv2d(&p[0], &p[1], &p[2], 1, 1).unwrap()).unwrap();
            let logits = tensor::linear(&tensor::global_average_pool(&y).unwrap(), &p[3], &p[4]).unwrap();
            tensor::cross_entropy(&logits, &labels).unwrap()
        }),
        reference: Box::new(move |x| {
            let (conv, _, _) = super::conv2d(&x[0], &x[1], &x[2], n, c, s, s, c, 3, 1, 1);
            let y: Vec<f64> = conv.iter().zip(&x[0]).map(|(a, b)| a + b).collect();
            let logits = super::linear(&super::gap(&y, n, c, s * s), &x[3], &x[4], n, c, k);
            super::cross_entropy(&logits, &l2, k)
        }),
    }
}

/// Every checked op with its case generator.
pub type MakeCase = fn(u64) -> FdCase;

pub const OPS: [(&str, MakeCase); 17] = [
    ("conv2d", conv2d),
    ("batch_norm", batch_norm),
    ("batch_norm_fixed", batch_norm_fixed),
    ("relu", relu),
    ("add", add),
    ("mul", mul),
    ("scale", scale),
    ("sum", sum),
    ("mean", mean),
    ("global_average_pool", global_average_pool),
    ("linear", linear),
    ("select_locations", select_locations),
    ("row_norms", row_norms),
    ("hinge", hinge),
    ("cross_entropy", cross_entropy),
    ("background_hinge", background_hinge),
    ("classifier_chain", classifier_chain),
];

/// Worst relative error of one op over `INSTANCES` seeds.
pub fn worst_error(make: fn(u64) -> FdCase) -> f64 {
    (0..INSTANCES).map(|s| relative_error(&make(1000 + s))).fold(0.0, f64::max)
}
