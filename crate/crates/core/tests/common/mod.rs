#![allow(dead_code)]

use nalgebra::DMatrix;
use qrshape::geometry::LandmarkConfiguration;
use qrshape::simulate::seeded_rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    seeded_rng(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn configuration(rng: &mut ChaCha8Rng, n: usize, k: usize) -> LandmarkConfiguration {
    LandmarkConfiguration::new(gaussian_matrix(rng, n, k)).unwrap()
}

/// Random rotation in SO(k) from a sign-fixed QR.
pub fn rotation(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let qr = gaussian_matrix(rng, k, k).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        q.column_mut(0).neg_mut();
    }
    q
}

pub fn random_pd(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let g = gaussian_matrix(rng, k, k);
    &g * g.transpose() + DMatrix::identity(k, k) * 0.5
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
