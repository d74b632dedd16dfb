#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tim_core::manifold::Mat;
use tim_core::{FactoredPoint, TangentVector};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_mat(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Mat {
    DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0))
}

pub fn point(seed: u64, k: usize, r: usize) -> FactoredPoint {
    let mut g = rng(seed);
    loop {
        let u = uniform_mat(&mut g, k, r);
        let v = uniform_mat(&mut g, k, r);
        if let Ok(x) = FactoredPoint::new(u, v) {
            return x;
        }
    }
}

pub fn ambient(seed: u64, k: usize, r: usize) -> TangentVector {
    let mut g = rng(seed);
    TangentVector {
        u: uniform_mat(&mut g, k, r),
        v: uniform_mat(&mut g, k, r),
    }
}

/// `X_ij` as an explicit dot product of rows.
pub fn entry(x: &FactoredPoint, i: usize, j: usize) -> f64 {
    (0..x.u().ncols()).map(|c| x.u()[(i, c)] * x.v()[(j, c)]).sum()
}

/// `Tr(A^T B)` by explicit loops.
pub fn frob(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            s += a[(i, j)] * b[(i, j)];
        }
    }
    s
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn tangent_rel(a: &TangentVector, b: &TangentVector) -> f64 {
    let diff = ((&a.u - &b.u).norm_squared() + (&a.v - &b.v).norm_squared()).sqrt();
    let scale = (a.u.norm_squared() + a.v.norm_squared())
        .sqrt()
        .max((b.u.norm_squared() + b.v.norm_squared()).sqrt());
    diff / scale.max(1e-300)
}
