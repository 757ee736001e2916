use aflow_core::algebra::CMatrix;
use aflow_core::diagnostics::{defect_report, energy};
use aflow_core::flow::*;
use aflow_core::torus::{MatrixField, TorusGrid};
use num_complex::Complex64;
use proptest::prelude::*;

fn grid() -> TorusGrid {
    TorusGrid::new(3, 16, &[0, 1]).unwrap()
}

fn spec(family: Family, amplitude: f64, seed: u64) -> PerturbationSpec {
    PerturbationSpec {
        family,
        amplitude,
        seed,
        max_mode: 2,
    }
}

#[test]
fn flat_state_is_stationary_in_both_formulations() {
    let g = grid();
    let op = FlowOperator::new(&g).unwrap();
    for f in [Formulation::Anomaly, Formulation::Rescaled] {
        let s = FlowState::flat(&g, f);
        assert!(op.rhs(&s).unwrap().form.sup_norm() < 1e-14);
        let next = op.step(&s, 0.01).unwrap();
        assert!(next.density.max_abs_diff(&s.density) < 1e-15);
        assert!((next.t - 0.01).abs() < 1e-15);
    }
}

#[test]
fn constant_states_are_stationary() {
    let g = grid();
    let op = FlowOperator::new(&g).unwrap();
    let mut m = CMatrix::identity(3, 3) * Complex64::new(1.5, 0.0);
    m[(0, 1)] = Complex64::new(0.2, 0.1);
    m[(1, 0)] = Complex64::new(0.2, -0.1);
    let s = FlowState::new(MatrixField::constant(&g, &m).unwrap(), Formulation::Rescaled);
    assert!(op.rhs(&s).unwrap().form.sup_norm() < 1e-14);
}

#[test]
fn metrics_of_a_scaled_flat_state() {
    // S = c·I at n = 3: G̃ = √c·I, |Ω|_ω̃ = c^{−3/4}, |Ω|_ω = |Ω|_ω̃⁴
    let g = grid();
    let c: f64 = 2.0;
    let s = FlowState::new(MatrixField::identity(&g).scale(c), Formulation::Anomaly);
    let m = metric_from_density(&s).unwrap();
    let nt = c.powf(-0.75);
    for pt in [0, 100] {
        assert!((m.gtilde.at(pt) - CMatrix::identity(3, 3) * Complex64::new(c.sqrt(), 0.0)).norm() < 1e-14);
        assert!((m.norm_tilde[pt] - nt).abs() < 1e-14);
        assert!((m.omega_norm[pt] - nt.powi(4)).abs() < 1e-14);
        // G = |Ω|_ω^{−1/2} G̃ and r = |Ω|_ω^{−2}
        let expect = CMatrix::identity(3, 3) * Complex64::new(nt.powi(4).powf(-0.5) * c.sqrt(), 0.0);
        assert!((m.g.at(pt) - expect).norm() < 1e-13);
        assert!((m.r[pt] - nt.powi(-8)).abs() < 1e-12);
    }
}

#[test]
fn balanced_family_is_closed_and_generic_is_not() {
    let g = grid();
    let b = make_initial_data(&g, &spec(Family::Balanced, 0.05, 3), Formulation::Rescaled).unwrap();
    assert!(defect_report(&b, 4).unwrap().balanced < 1e-12);
    let c = make_initial_data(&g, &spec(Family::Conformal, 0.05, 3), Formulation::Rescaled).unwrap();
    let rc = defect_report(&c, 4).unwrap();
    assert!(rc.balanced < 1e-12);
    // ω₀ is a non-constant conformal multiple of the Kähler η
    assert!(rc.kahler > 1e-4);
    let x = make_initial_data(&g, &spec(Family::Generic, 0.05, 3), Formulation::Rescaled).unwrap();
    assert!(defect_report(&x, 4).unwrap().balanced > 1e-4);
}

#[test]
fn initial_data_is_deterministic_and_seed_sensitive() {
    let g = grid();
    let a = make_initial_data(&g, &spec(Family::Generic, 0.1, 9), Formulation::Rescaled).unwrap();
    let b = make_initial_data(&g, &spec(Family::Generic, 0.1, 9), Formulation::Rescaled).unwrap();
    let c = make_initial_data(&g, &spec(Family::Generic, 0.1, 10), Formulation::Rescaled).unwrap();
    assert_eq!(a.density.data(), b.density.data());
    assert!(a.density.max_abs_diff(&c.density) > 1e-3);
}

#[test]
fn too_large_amplitude_is_rejected() {
    let g = grid();
    let err = make_initial_data(&g, &spec(Family::Generic, 50.0, 1), Formulation::Rescaled).unwrap_err();
    assert!(matches!(err, aflow_core::FlowError::NotPositive { .. }));
}

#[test]
fn formulations_agree_pointwise() {
    let g = grid();
    let sp = spec(Family::Generic, 0.2, 4);
    let a = make_initial_data(&g, &sp, Formulation::Anomaly).unwrap();
    let b = make_initial_data(&g, &sp, Formulation::Rescaled).unwrap();
    let op = FlowOperator::new(&g).unwrap();
    let ea = op.rhs(&a).unwrap().form;
    let eb = op.rhs(&b).unwrap().form;
    assert!((&ea - &eb).sup_norm() < 1e-13 * eb.sup_norm().max(1.0));
}

#[test]
fn energy_decreases_along_a_short_balanced_run() {
    let g = grid();
    let s = make_initial_data(&g, &spec(Family::Balanced, 0.05, 2), Formulation::Rescaled).unwrap();
    let cfg = FlowConfig {
        t_max: 0.2,
        ..FlowConfig::default()
    };
    let out = run(&cfg, &s, &mut ()).unwrap();
    assert_eq!(out.status, RunStatus::TMax);
    let e = out.record.energies();
    assert!(e.last().unwrap() < &e[0]);
    assert!((out.state.t - 0.2).abs() < 1e-12);
    assert!((energy(&out.state).unwrap() - e.last().unwrap()).abs() < 1e-12 * e[0]);
}

#[test]
fn stationary_run_counts_as_converged() {
    let g = grid();
    let out = run(&FlowConfig::default(), &FlowState::flat(&g, Formulation::Rescaled), &mut ()).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    assert_eq!(out.steps, 0);
}

#[test]
fn invalid_config_is_rejected() {
    let g = grid();
    let cfg = FlowConfig {
        cfl: 1.5,
        ..FlowConfig::default()
    };
    assert!(run(&cfg, &FlowState::flat(&g, Formulation::Rescaled), &mut ()).is_err());
}

#[test]
fn oversized_step_fails_and_observer_sees_every_row() {
    let g = grid();
    let s = make_initial_data(&g, &spec(Family::Generic, 0.3, 5), Formulation::Rescaled).unwrap();
    let op = FlowOperator::new(&g).unwrap();
    // far beyond the stability bound the state leaves the positive cone
    let r = op.advance(&s, 2.0, 0.5);
    assert!(r.is_err());

    struct Counter(usize);
    impl Observer for Counter {
        fn sample(&mut self, _row: &aflow_core::RunRow, _state: &FlowState) -> aflow_core::Result<()> {
            self.0 += 1;
            Ok(())
        }
    }
    let mut c = Counter(0);
    let cfg = FlowConfig {
        t_max: 0.05,
        ..FlowConfig::default()
    };
    let out = run(&cfg, &s, &mut c).unwrap();
    assert_eq!(c.0, out.record.rows.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn rhs_is_real_closed_and_hermitian(seed in 0u64..1000, amp in 0.01f64..0.3, fam in 0usize..3) {
        let g = TorusGrid::new(3, 8, &[0, 1]).unwrap();
        let family = [Family::Balanced, Family::Generic, Family::Conformal][fam];
        let s = make_initial_data(&g, &spec(family, amp, seed), Formulation::Rescaled).unwrap();
        let op = FlowOperator::new(&g).unwrap();
        let rhs = op.rhs(&s).unwrap();
        prop_assert!(rhs.form.reality_defect() < 1e-12);
        let (a, b) = rhs.form.exterior_derivative().unwrap();
        prop_assert!(a.sup_norm().max(b.sup_norm()) < 1e-11);
        prop_assert!(rhs.rate.hermitian_defect() < 1e-13);
        let next = op.step(&s, 1e-3).unwrap();
        prop_assert!(next.density.hermitian_defect() < 1e-13);
    }
}
