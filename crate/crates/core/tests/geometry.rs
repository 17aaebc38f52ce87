mod common;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6};

use common::*;
use nalgebra::DMatrix;
use qrshape::geometry::*;
use qrshape::ShapeError;

#[test]
fn helmert_rows_for_small_n() {
    let l2 = helmert_submatrix(2).unwrap();
    let s = 0.5f64.sqrt();
    assert!((l2 - DMatrix::from_row_slice(1, 2, &[s, -s])).amax() < 1e-15);

    let l3 = helmert_submatrix(3).unwrap();
    let a = 1.0 / 2f64.sqrt();
    let b = 1.0 / 6f64.sqrt();
    let expected = DMatrix::from_row_slice(2, 3, &[a, -a, 0.0, b, b, -2.0 * b]);
    assert!((l3 - expected).amax() < 1e-15);
}

#[test]
fn helmert_orthonormal_and_centering() {
    for n in 2..12 {
        let l = helmert_submatrix(n).unwrap();
        assert!((&l * l.transpose() - DMatrix::identity(n - 1, n - 1)).amax() < 1e-13);
        assert!((&l * DMatrix::from_element(n, 1, 1.0)).amax() < 1e-13);
    }
    assert!(matches!(helmert_submatrix(1), Err(ShapeError::Dimension(_))));
}

#[test]
fn pd_sqrt_examples() {
    let id = DMatrix::<f64>::identity(3, 3);
    assert!((pd_sqrt(&id).unwrap() - &id).amax() < 1e-14);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
    let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
    assert!((pd_sqrt(&d).unwrap() - expected).amax() < 1e-14);
    let mut rng = rng(1);
    let a = random_pd(&mut rng, 4);
    let s = pd_sqrt(&a).unwrap();
    assert!((&s - s.transpose()).amax() < 1e-12);
    assert!((&s * &s - &a).norm() / a.norm() < 1e-10);
    let not_pd = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    assert!(matches!(pd_sqrt(&not_pd), Err(ShapeError::Domain(_))));
    let not_sym = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 1.0]);
    assert!(matches!(pd_sqrt(&not_sym), Err(ShapeError::Domain(_))));
}

#[test]
fn whitening_examples() {
    let mut rng = rng(2);
    let row = gaussian_matrix(&mut rng, 1, 3);
    let flat = LandmarkConfiguration::new(DMatrix::from_fn(5, 3, |_, j| row[(0, j)])).unwrap();
    assert!(whiten_and_center(&flat, None).unwrap().amax() < 1e-14);

    let x = configuration(&mut rng, 5, 3);
    let l = helmert_submatrix(5).unwrap();
    assert!((whiten_and_center(&x, None).unwrap() - &l * x.data()).amax() < 1e-14);

    let theta = random_pd(&mut rng, 3);
    let c = gaussian_matrix(&mut rng, 1, 3);
    let shifted = LandmarkConfiguration::new(x.data() + DMatrix::from_fn(5, 3, |_, j| c[(0, j)])).unwrap();
    let y1 = whiten_and_center(&x, Some(&theta)).unwrap();
    let y2 = whiten_and_center(&shifted, Some(&theta)).unwrap();
    assert!((y1 - y2).amax() < 1e-12);
}

#[test]
fn qr_examples() {
    let (t, h) = qr_size_and_shape(&DMatrix::identity(2, 2), ReflectionMode::IncludesReflection).unwrap();
    assert!((t.matrix() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
    assert!((h - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);

    let y = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 5.0]);
    let (t, h) = qr_size_and_shape(&y, ReflectionMode::IncludesReflection).unwrap();
    let tm = t.matrix();
    assert!((tm[(0, 0)] - 5.0).abs() < 1e-14);
    assert_eq!(tm[(0, 1)], 0.0);
    assert!((tm * &h - &y).amax() < 1e-12);
    assert!((&h * h.transpose() - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
    assert!((t.centroid_size() - y.norm()).abs() < 1e-12);
}

#[test]
fn qr_reconstruction_and_sign_conventions() {
    let mut rng = rng(3);
    for (n, k) in [(6, 2), (4, 3), (3, 3), (3, 4), (8, 3)] {
        for mode in [ReflectionMode::IncludesReflection, ReflectionMode::ExcludesReflection] {
            let y = gaussian_matrix(&mut rng, n - 1, k);
            let (t, h) = qr_size_and_shape(&y, mode).unwrap();
            let dims = t.dimensions();
            assert!((t.matrix() * &h - &y).amax() < 1e-10 * y.norm());
            assert!((&h * h.transpose() - DMatrix::<f64>::identity(dims.rank, dims.rank)).amax() < 1e-12);
            assert!((t.centroid_size() - y.norm()).abs() < 1e-12 * y.norm());
            for j in dims.positive_diagonals(mode) {
                assert!(t.matrix()[(j, j)] > 0.0);
            }
            if mode == ReflectionMode::ExcludesReflection && n - 1 >= k {
                assert!((h.determinant() - 1.0).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn rank_deficient_configuration_is_degenerate() {
    let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, -1.0, -2.0]);
    assert!(matches!(
        qr_size_and_shape(&y, ReflectionMode::IncludesReflection),
        Err(ShapeError::Degenerate(_))
    ));
}

#[test]
fn dimension_bookkeeping_for_mouse_layout() {
    let d = Dimensions::new(6, 2).unwrap();
    assert_eq!((d.rank, d.big_m, d.angles), (2, 10, 8));
    assert_eq!(d.vech_len(), 9);
    assert!(Dimensions::new(1, 2).is_err());
    assert!(Dimensions::new(3, 0).is_err());
}

#[test]
fn polar_axis_case_and_round_trip() {
    let dims = Dimensions::new(6, 2).unwrap();
    let mut x = vec![0.0; dims.vech_len()];
    x[0] = 1.0;
    let t = SizeAndShape::new(unvech(&x, dims), dims, ReflectionMode::IncludesReflection).unwrap();
    let s = to_polar(&t).unwrap();
    assert_eq!(s.angles().len(), 8);
    assert!((s.size() - 1.0).abs() < 1e-15);
    assert!(s.angles().iter().all(|a| a.abs() < 1e-15));

    let mut rng = rng(4);
    for (n, k) in [(6, 2), (5, 3), (3, 2), (4, 4)] {
        let y = gaussian_matrix(&mut rng, n - 1, k);
        let (t, _) = qr_size_and_shape(&y, ReflectionMode::IncludesReflection).unwrap();
        let s = to_polar(&t).unwrap();
        assert_eq!(s.angles().len(), t.dimensions().angles);
        assert!((s.w().norm() - 1.0).abs() < 1e-12);
        assert!((s.w() * s.size() - t.matrix()).amax() < 1e-10 * t.centroid_size());
        let back = from_polar(&s).unwrap();
        assert!((back.matrix() - t.matrix()).amax() < 1e-10 * t.centroid_size());
    }
}

#[test]
fn zero_size_is_degenerate() {
    let dims = Dimensions::new(3, 2).unwrap();
    let t = SizeAndShape::new(DMatrix::zeros(2, 2), dims, ReflectionMode::IncludesReflection);
    match t {
        Ok(t) => assert!(matches!(to_polar(&t), Err(ShapeError::Degenerate(_)))),
        Err(e) => assert!(matches!(e, ShapeError::Domain(_) | ShapeError::Degenerate(_))),
    }
}

#[test]
fn polar_jacobian_examples() {
    assert_eq!(polar_jacobian(&[0.7]).unwrap(), 1.0);
    assert!((polar_jacobian(&[FRAC_PI_2; 5]).unwrap() - 1.0).abs() < 1e-15);
    let j = polar_jacobian(&[FRAC_PI_4, FRAC_PI_3, FRAC_PI_6]).unwrap();
    assert!((j - 0.5 * 3f64.sqrt() / 2.0).abs() < 1e-12);
    assert!((j - 0.43301).abs() < 1e-5);
    assert!(matches!(polar_jacobian(&[4.0, 0.1]), Err(ShapeError::Domain(_))));
}

#[test]
fn similarity_invariance() {
    let mut rng = rng(5);
    for _ in 0..20 {
        let x = configuration(&mut rng, 6, 3);
        let base = extract_shape(&x, None, ReflectionMode::IncludesReflection).unwrap();
        let c = gaussian_matrix(&mut rng, 1, 3);
        let shifted = x.data() + DMatrix::from_fn(6, 3, |_, j| c[(0, j)]);
        let s = extract_shape(&LandmarkConfiguration::new(shifted).unwrap(), None, ReflectionMode::IncludesReflection).unwrap();
        assert!((s.w() - base.w()).amax() < 1e-10);

        let scaled = LandmarkConfiguration::new(x.data() * -3.5).unwrap();
        let s = extract_shape(&scaled, None, ReflectionMode::IncludesReflection).unwrap();
        assert!((s.w() - base.w()).amax() < 1e-10);
        assert!((s.size() - 3.5 * base.size()).abs() < 1e-10 * s.size());

        let r = rotation(&mut rng, 3);
        let y = whiten_and_center(&x, None).unwrap();
        for mode in [ReflectionMode::IncludesReflection, ReflectionMode::ExcludesReflection] {
            let (t0, _) = qr_size_and_shape(&y, mode).unwrap();
            let (t1, _) = qr_size_and_shape(&(&y * &r), mode).unwrap();
            assert!((t0.matrix() - t1.matrix()).amax() < 1e-8);
        }
        // a reflection flips t_KK only when reflections are kept apart
        let mut flip = DMatrix::<f64>::identity(3, 3);
        flip[(2, 2)] = -1.0;
        let reflected = &y * &r * flip;
        let (t0, _) = qr_size_and_shape(&y, ReflectionMode::ExcludesReflection).unwrap();
        let (t1, _) = qr_size_and_shape(&reflected, ReflectionMode::ExcludesReflection).unwrap();
        assert!((t0.matrix()[(2, 2)] + t1.matrix()[(2, 2)]).abs() < 1e-8);
        let (i0, _) = qr_size_and_shape(&y, ReflectionMode::IncludesReflection).unwrap();
        let (i1, _) = qr_size_and_shape(&reflected, ReflectionMode::IncludesReflection).unwrap();
        assert!((i0.matrix() - i1.matrix()).amax() < 1e-8);
    }
}

#[test]
fn numerical_jacobian_matches_polar_jacobian() {
    let dims = Dimensions::new(4, 2).unwrap();
    let mut rng = rng(6);
    let y = gaussian_matrix(&mut rng, 3, 2);
    let (t, _) = qr_size_and_shape(&y, ReflectionMode::IncludesReflection).unwrap();
    let s = to_polar(&t).unwrap();
    let u = s.angles().to_vec();
    let m = u.len();
    let h = 1e-6;
    let mut jac = DMatrix::zeros(dims.vech_len(), m);
    for i in 0..m {
        let mut up = u.clone();
        let mut dn = u.clone();
        up[i] += h;
        dn[i] -= h;
        let wp = ShapeCoordinates::from_angles(&up, 1.0, dims, ReflectionMode::IncludesReflection).unwrap().vech_w();
        let wm = ShapeCoordinates::from_angles(&dn, 1.0, dims, ReflectionMode::IncludesReflection).unwrap().vech_w();
        for r in 0..dims.vech_len() {
            jac[(r, i)] = (wp[r] - wm[r]) / (2.0 * h);
        }
    }
    let gram = jac.transpose() * &jac;
    let numeric = gram.determinant().sqrt();
    assert!(rel(numeric, polar_jacobian(&u).unwrap()) < 1e-6);
}

#[test]
fn angle_domains_follow_sign_constraints() {
    let d = Dimensions::new(6, 2).unwrap();
    let inc = angle_domain(d, ReflectionMode::IncludesReflection);
    let exc = angle_domain(d, ReflectionMode::ExcludesReflection);
    assert_eq!(inc.len(), 8);
    assert_eq!(inc[0], (0.0, FRAC_PI_2));
    // angle 5 sets t_22, the entry a reflection flips
    assert_eq!(inc[5], (0.0, FRAC_PI_2));
    assert_eq!(exc[5], (0.0, std::f64::consts::PI));
    assert_eq!(inc[4], exc[4]);
}
