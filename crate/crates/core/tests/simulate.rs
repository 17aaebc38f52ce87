mod common;

use std::f64::consts::PI;

use common::{gaussian_matrix, rng, rotation};
use nalgebra::DMatrix;
use qrshape::densities::ModelSpec;
use qrshape::generators::GeneratorSpec;
use qrshape::geometry::{angle_domain, ReflectionMode::IncludesReflection};
use qrshape::simulate::*;

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn gaussian_elliptical_trace_moment() {
    let (n, k) = (6, 2);
    let xs = sample_elliptical(
        &DMatrix::zeros(n, k),
        &DMatrix::identity(n, n),
        &DMatrix::identity(k, k),
        &GeneratorSpec::gaussian(),
        20_000,
        1,
    )
    .unwrap();
    let tr: Vec<f64> = xs.iter().map(|x| x.data().norm_squared()).collect();
    let (mean, se) = mean_and_se(&tr);
    assert!((mean - 12.0).abs() < 4.0 * se, "{mean} ± {se}");
}

#[test]
fn kotz_radial_second_moment() {
    let (n, k) = (6, 2);
    let xs = sample_elliptical(
        &DMatrix::zeros(n, k),
        &DMatrix::identity(n, n),
        &DMatrix::identity(k, k),
        &GeneratorSpec::kotz(2.0, 0.5).unwrap(),
        20_000,
        2,
    )
    .unwrap();
    let r2: Vec<f64> = xs.iter().map(|x| x.data().norm_squared()).collect();
    let (mean, se) = mean_and_se(&r2);
    assert!((mean - 14.0).abs() < 4.0 * se, "{mean} ± {se}");
}

#[test]
fn location_and_scale_are_applied() {
    let mut r = rng(3);
    let mu = gaussian_matrix(&mut r, 4, 2);
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, 0.25, 1.0]));
    let theta = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]);
    let count = 20_000;
    let xs = sample_elliptical(&mu, &sigma, &theta, &GeneratorSpec::gaussian(), count, 4).unwrap();
    for i in 0..4 {
        for j in 0..2 {
            let v: Vec<f64> = xs.iter().map(|x| x.data()[(i, j)]).collect();
            let (mean, se) = mean_and_se(&v);
            assert!((mean - mu[(i, j)]).abs() < 4.0 * se);
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
            let target = sigma[(i, i)] * theta[(j, j)];
            assert!((var / target - 1.0).abs() < 0.05, "var {var} vs {target}");
        }
    }
}

#[test]
fn helmertized_draws_follow_the_spec() {
    let mu = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, -0.5, 2.0]);
    let spec = ModelSpec::isotropic(mu.clone(), 0.5, GeneratorSpec::gaussian(), IncludesReflection)
        .unwrap();
    let ys = sample_helmertized(&spec, 20_000, 5).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let v: Vec<f64> = ys.iter().map(|y| y[(i, j)]).collect();
            let (mean, se) = mean_and_se(&v);
            assert!((mean - mu[(i, j)]).abs() < 4.0 * se);
        }
    }
    let configs = sample_configurations(&spec, 10, 5).unwrap();
    for x in &configs {
        let col_sums = x.data().row_sum();
        assert!(col_sums.norm() < 1e-12);
    }
}

#[test]
fn stiefel_draws_are_orthonormal() {
    for (s, m) in [(1, 2), (2, 3), (3, 3), (2, 5)] {
        for h in sample_stiefel_uniform(s, m, 50, 6).unwrap() {
            assert!((&h * h.transpose() - DMatrix::identity(s, s)).norm() < 1e-12);
            if s == m {
                assert!((h.determinant().abs() - 1.0).abs() < 1e-12);
            }
        }
    }
    assert!(sample_stiefel_uniform(3, 2, 1, 0).is_err());
}

#[test]
fn circle_draws_are_uniform() {
    let draws = sample_stiefel_uniform(1, 2, 40_000, 7).unwrap();
    let bins = 20;
    let mut counts = vec![0usize; bins];
    for h in &draws {
        let angle = h[(0, 1)].atan2(h[(0, 0)]) + PI;
        counts[((angle / (2.0 * PI) * bins as f64) as usize).min(bins - 1)] += 1;
    }
    let expected = draws.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = chi_square_sf(stat, (bins - 1) as f64).unwrap();
    assert!(p > 0.001, "χ² = {stat}, p = {p}");
}

#[test]
fn stiefel_moments_match_closed_form() {
    let mut r = rng(8);
    let a = gaussian_matrix(&mut r, 3, 2) * 0.7;
    let volume = ln_stiefel_volume(2, 3).unwrap().exp();
    assert!((volume - 8.0 * PI * PI).abs() < 1e-9);
    for t in 1..=3 {
        let exact = stiefel_moment_closed_form(&a, t, 3).unwrap();
        let mc = mc_stiefel_moment(&a, 2 * t as u32, 3, 300_000, 9 + t as u64).unwrap();
        assert!(mc.z_score(exact) < 4.0, "t={t}: {} vs {exact}", mc.estimate);
        let odd = mc_stiefel_moment(&a, 2 * t as u32 - 1, 3, 300_000, 19 + t as u64).unwrap();
        assert!(odd.z_score(0.0) < 4.0, "odd power {}", 2 * t - 1);
    }
}

#[test]
fn stiefel_law_is_right_invariant() {
    let mut r = rng(10);
    let q = rotation(&mut r, 4);
    let a = gaussian_matrix(&mut r, 4, 2);
    let plain: Vec<f64> = sample_stiefel_uniform(2, 4, 5_000, 11)
        .unwrap()
        .iter()
        .map(|h| (h * &a).trace())
        .collect();
    let rotated: Vec<f64> = sample_stiefel_uniform(2, 4, 5_000, 12)
        .unwrap()
        .iter()
        .map(|h| (h * &q * &a).trace())
        .collect();
    let (_, p) = ks_two_sample(&plain, &rotated).unwrap();
    assert!(p > 0.01, "KS p = {p}");
}

#[test]
fn central_shape_law_is_generator_free() {
    let histogram = |generator: GeneratorSpec, seed| {
        let spec = ModelSpec::isotropic(DMatrix::zeros(2, 2), 1.0, generator, IncludesReflection)
            .unwrap();
        let domain = angle_domain(spec.dimensions(), IncludesReflection);
        let cells = 6;
        let mut counts = vec![0usize; cells * cells];
        for s in sample_shapes(&spec, 30_000, seed).unwrap() {
            let mut flat = 0;
            for (d, &(lo, hi)) in domain.iter().enumerate() {
                let pos = ((s.angles()[d] - lo) / (hi - lo) * cells as f64) as usize;
                flat = flat * cells + pos.min(cells - 1);
            }
            counts[flat] += 1;
        }
        counts
    };
    let gaussian = histogram(GeneratorSpec::gaussian(), 13);
    let kotz = histogram(GeneratorSpec::kotz(2.0, 0.5).unwrap(), 14);
    let (_, _, p) = two_sample_chi_square(&gaussian, &kotz).unwrap();
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn streams_are_reproducible() {
    let spec = ModelSpec::isotropic(
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.3, 0.4]),
        0.2,
        GeneratorSpec::kotz(3.0, 0.5).unwrap(),
        IncludesReflection,
    )
    .unwrap();
    let a = sample_shapes(&spec, 20, 99).unwrap();
    let b = sample_shapes(&spec, 20, 99).unwrap();
    let c = sample_shapes(&spec, 20, 100).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn homogeneity_helpers_detect_differences() {
    let (_, _, p) = two_sample_chi_square(&[100, 100, 100], &[100, 100, 100]).unwrap();
    assert!((p - 1.0).abs() < 1e-12);
    let (_, _, p) = two_sample_chi_square(&[300, 100, 100], &[100, 100, 300]).unwrap();
    assert!(p < 1e-10);
    assert!(two_sample_chi_square(&[1, 2], &[1]).is_err());
    let left: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
    let right: Vec<f64> = left.iter().map(|v| v + 0.3).collect();
    assert!(ks_two_sample(&left, &left).unwrap().1 > 0.99);
    assert!(ks_two_sample(&left, &right).unwrap().1 < 1e-6);
}
