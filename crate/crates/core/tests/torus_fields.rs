use aflow_core::algebra::{metric_power, PointForm};
use aflow_core::torus::{l2_inner, l2_inner_fourier, FormField, MatrixField, TorusGrid};
use aflow_core::CMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn max_diff(a: &FormField, b: &FormField) -> f64 {
    assert_eq!(a.bidegree(), b.bidegree());
    a.coeffs()
        .iter()
        .zip(b.coeffs())
        .flat_map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v).norm()))
        .fold(0.0, f64::max)
}

/// Smooth pseudo-random field built from a few Fourier modes.
fn trig_field(grid: &TorusGrid, p: usize, q: usize, seed: u64) -> FormField {
    let zero = FormField::zeros(grid, p, q).unwrap();
    let ncoef = zero.coeffs().len();
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let params: Vec<[f64; 6]> = (0..ncoef)
        .map(|_| [next(), next(), next(), next(), next(), next()])
        .collect();
    let act = grid.active().to_vec();
    FormField::from_fn(grid, p, q, |x| {
        let coeffs = params
            .iter()
            .map(|w| {
                let phase: f64 = act
                    .iter()
                    .enumerate()
                    .map(|(a, &ci)| 2.0 * PI * (1 + a % 2) as f64 * x[ci] * w[a % 3].signum())
                    .sum();
                c(w[3] * phase.cos() + w[4], w[5] * phase.sin())
            })
            .collect();
        PointForm::from_coeffs(grid.n(), p, q, coeffs).unwrap()
    })
    .unwrap()
}

fn varying_metric(grid: &TorusGrid) -> MatrixField {
    MatrixField::from_fn(grid, |x| {
        let n = grid.n();
        let a = CMatrix::from_fn(n, n, |r, k| {
            let t = 2.0 * PI * (x[0] + 2.0 * x[1]);
            c(0.2 * ((r + 2 * k) as f64 + t).sin(), 0.15 * ((2 * r + k) as f64 - t).cos())
        });
        CMatrix::identity(n, n) + &a * a.adjoint()
    })
    .unwrap()
}

#[test]
fn del_of_sine_example() {
    let g = TorusGrid::new(3, 16, &[0, 1]).unwrap();
    let f = FormField::from_fn(&g, 0, 1, |x| {
        PointForm::dzbar(3, 1).unwrap().scale(c((2.0 * PI * x[0]).sin(), 0.0))
    })
    .unwrap();
    let expected = FormField::from_fn(&g, 1, 1, |x| {
        PointForm::basis_element(3, &[0], &[1])
            .unwrap()
            .scale(c(PI * (2.0 * PI * x[0]).cos(), 0.0))
    })
    .unwrap();
    assert!(max_diff(&f.del().unwrap(), &expected) < 1e-12);
}

#[test]
fn i_ddbar_of_cosine_example() {
    let g = TorusGrid::new(3, 16, &[0, 1]).unwrap();
    let f = FormField::scalar_fn(&g, |x| (2.0 * PI * x[0]).cos());
    let expected = FormField::from_fn(&g, 1, 1, |x| {
        PointForm::basis_element(3, &[0], &[0])
            .unwrap()
            .scale(c(0.0, -PI * PI * (2.0 * PI * x[0]).cos()))
    })
    .unwrap();
    let got = f.i_ddbar().unwrap();
    assert!(max_diff(&got, &expected) < 1e-11);
    assert!(got.reality_defect() < 1e-12);
}

#[test]
fn flat_metric_has_norm_three() {
    let g = TorusGrid::new(3, 8, &[0, 1]).unwrap();
    let chi = FormField::constant(&g, &PointForm::hermitian(&CMatrix::identity(3, 3)).unwrap()).unwrap();
    let v = l2_inner(&chi, &chi, &MatrixField::identity(&g)).unwrap();
    assert!((v - c(3.0, 0.0)).norm() < 1e-13);
}

#[test]
fn ck_norm_of_sine() {
    let g = TorusGrid::new(3, 32, &[0, 1]).unwrap();
    for eps in [1e-3, 0.5, 2.0] {
        let f = FormField::scalar_fn(&g, |x| eps * (2.0 * PI * x[0]).sin());
        assert!((f.ck_norm(0).unwrap() - eps).abs() < 1e-13 * eps.max(1.0));
        assert!((f.ck_norm(1).unwrap() - 2.0 * PI * eps).abs() < 1e-12 * eps.max(1.0));
    }
}

#[test]
fn exterior_derivative_squares_to_zero() {
    let g = TorusGrid::new(3, 8, &[0, 1, 2]).unwrap();
    for (p, q) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
        let f = trig_field(&g, p, q, (7 * p + q) as u64);
        let dd = f.del().unwrap().del().unwrap();
        let bb = f.delbar().unwrap().delbar().unwrap();
        let mixed = &f.del().unwrap().delbar().unwrap() + &f.delbar().unwrap().del().unwrap();
        let scale = f.sup_norm();
        assert!(dd.sup_norm() < 1e-10 * scale, "del del ({p},{q})");
        assert!(bb.sup_norm() < 1e-10 * scale, "delbar delbar ({p},{q})");
        assert!(mixed.sup_norm() < 1e-10 * scale, "anticommutator ({p},{q})");
    }
}

#[test]
fn parseval_with_constant_metric() {
    let g = TorusGrid::new(3, 8, &[0, 1, 3]).unwrap();
    let a = CMatrix::from_fn(3, 3, |r, k| c(0.1 * (r + k) as f64, 0.05 * (r as f64 - k as f64)));
    let m = CMatrix::identity(3, 3) * c(1.5, 0.0) + &a * a.adjoint();
    let f1 = trig_field(&g, 1, 2, 3);
    let f2 = trig_field(&g, 1, 2, 4);
    let direct = l2_inner(&f1, &f2, &MatrixField::constant(&g, &m).unwrap()).unwrap();
    let spectral = l2_inner_fourier(&f1, &f2, &m).unwrap();
    assert!((direct - spectral).norm() < 1e-12 * direct.norm().max(1.0));
}

#[test]
fn codifferential_is_adjoint_of_del() {
    let g = TorusGrid::new(3, 8, &[0, 1, 2]).unwrap();
    let metric = varying_metric(&g);
    for (p, q) in [(0, 0), (1, 1), (1, 2)] {
        let a = trig_field(&g, p, q, 11 + p as u64);
        let b = trig_field(&g, p + 1, q, 23 + q as u64);
        let lhs = l2_inner(&a.del().unwrap(), &b, &metric).unwrap();
        let rhs = l2_inner(&a, &b.codifferential(&metric).unwrap(), &metric).unwrap();
        assert!(
            (lhs - rhs).norm() < 1e-10 * lhs.norm().max(1.0),
            "({p},{q}): {lhs} vs {rhs}"
        );
    }
}

#[test]
fn codifferential_of_power_is_zero_for_flat_metric() {
    let g = TorusGrid::new(3, 8, &[0, 1]).unwrap();
    let phi = FormField::constant(&g, &metric_power(&CMatrix::identity(3, 3), 2).unwrap()).unwrap();
    let cd = phi.codifferential(&MatrixField::identity(&g)).unwrap();
    assert!(cd.sup_norm() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn i_ddbar_preserves_reality(seed in 0u64..10_000, amp in 0.1f64..10.0) {
        let g = TorusGrid::new(3, 8, &[0, 1, 2, 3]).unwrap();
        let f = FormField::scalar_fn(&g, |x| {
            amp * ((2.0 * PI * (x[0] + x[2])).cos() + (seed % 7) as f64 * (2.0 * PI * (x[1] - 2.0 * x[3])).sin())
        });
        let r = f.i_ddbar().unwrap();
        prop_assert!(r.reality_defect() < 1e-10 * amp.max(1.0) * 40.0);
    }

    #[test]
    fn parseval_holds(seed in 0u64..10_000) {
        let g = TorusGrid::new(3, 8, &[0, 1]).unwrap();
        let f = trig_field(&g, 1, 1, seed);
        let direct = l2_inner(&f, &f, &MatrixField::identity(&g)).unwrap();
        let spectral = l2_inner_fourier(&f, &f, &CMatrix::identity(3, 3)).unwrap();
        prop_assert!((direct - spectral).norm() < 1e-12 * direct.norm().max(1.0));
    }
}
