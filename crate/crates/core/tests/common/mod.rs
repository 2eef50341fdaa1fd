#![allow(dead_code)]

use pounet::pou::{Architecture, PartitionNet};
use pounet::{seeded_rng, DenseMatrix, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub fn random_points(rng: &mut Rng, n: usize, d: usize, lo: f64, hi: f64) -> DenseMatrix {
    let data = (0..n * d).map(|_| rng.random_range(lo..hi)).collect();
    DenseMatrix::new(n, d, data).unwrap()
}

pub fn random_matrix(rng: &mut Rng, n: usize, m: usize) -> DenseMatrix {
    let data = (0..n * m).map(|_| StandardNormal.sample(rng)).collect();
    DenseMatrix::new(n, m, data).unwrap()
}

/// Network with every parameter drawn from `N(0, scale²)`.
pub fn random_net(arch: Architecture, scale: f64, rng: &mut Rng) -> PartitionNet {
    let p: Vec<f64> = (0..arch.n_params())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    PartitionNet::from_params(arch, &p).unwrap()
}

pub fn small_architectures(seed: u64) -> Vec<Architecture> {
    let mut rng = seeded_rng(seed);
    (0..5)
        .flat_map(|_| {
            let dim = rng.random_range(1..=3);
            let n_part = rng.random_range(2..=5);
            let width = rng.random_range(2..=6);
            let depth = rng.random_range(1..=3);
            [Architecture::Rbf { dim, n_part }, Architecture::Resnet { dim, width, depth, n_part }]
        })
        .collect()
}

/// Central differences of `f` around `x` with step `h`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|k| {
            p[k] = x[k] + h;
            let up = f(&p);
            p[k] = x[k] - h;
            let down = f(&p);
            p[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = pounet::linalg::norm2(b).max(pounet::linalg::norm2(a));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
