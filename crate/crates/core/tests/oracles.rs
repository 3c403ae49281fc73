//! Closed-form references checked through the public API.

use nalgebra::DMatrix;

use nonauto_core::dichotomy::{autonomous_dichotomy, check_hyperbolic};
use nonauto_core::evofam::{euler_polygon, oracle_solve, refine_to_tolerance, PerturbationFamily};
use nonauto_core::examples::{compare_heat_resolvents, Domain, GridSpec};
use nonauto_core::metrics::{default_lambdas, yosida_distance};
use nonauto_core::semigroup::{expm, fit_growth_bound, GrowthBound};
use nonauto_core::{NormKind, Operator};

const K: NormKind = NormKind::Induced2;

fn diag(v: &[f64]) -> Operator {
    Operator::diag(v, K).unwrap()
}

#[test]
fn commuting_diagonal_family_matches_exponential_of_integral() {
    // A = diag(-1, -2), B(t) = sin(t) diag(0.5, 0.3): U(1,0) = exp(diag(-1 + 0.5 c, -2 + 0.3 c)), c = 1 - cos 1
    let a = diag(&[-1.0, -2.0]);
    let fam = PerturbationFamily::sinusoid(diag(&[0.5, 0.3]), 1.0, 0.0, (0.0, 1.0)).unwrap();
    let c = 1.0 - 1f64.cos();
    let exact = [(-1.0 + 0.5 * c).exp(), (-2.0 + 0.3 * c).exp()];
    let mut prev = f64::INFINITY;
    for level in [6, 8, 10, 12] {
        let u = euler_polygon(&a, &fam, level).unwrap().full();
        let err = (u.get(0, 0) - exact[0]).abs().max((u.get(1, 1) - exact[1]).abs());
        assert!(err < prev, "error must shrink with the level");
        prev = err;
    }
    assert!(prev < 1e-3);
}

#[test]
fn constant_perturbation_is_exact_at_every_level() {
    let a = Operator::from_rows(&[&[-1.0, 0.4], &[0.0, -0.5]], K).unwrap();
    let b0 = Operator::from_rows(&[&[0.1, 0.0], &[0.3, -0.2]], K).unwrap();
    let exact = expm(&a.try_add(&b0).unwrap(), 1.0).unwrap();
    let fam = PerturbationFamily::constant(b0, (0.0, 1.0)).unwrap();
    for level in [0, 3, 6] {
        let u = euler_polygon(&a, &fam, level).unwrap().full();
        assert!(u.try_sub(&exact).unwrap().norm() < 1e-12);
    }
}

#[test]
fn refinement_agrees_with_rk4_oracle() {
    let a = Operator::from_rows(&[&[-1.0, 0.5], &[-0.5, -1.0]], K).unwrap();
    let b0 = Operator::from_rows(&[&[0.2, 0.1], &[0.0, 0.3]], K).unwrap();
    let fam = PerturbationFamily::sinusoid(b0, 2.0, 0.3, (0.0, 1.0)).unwrap();
    let gb = fit_growth_bound(&a, 5.0, 0.0, 64).unwrap();
    let r = refine_to_tolerance(&a, &fam, &gb, 1e-5, 20).unwrap();
    let rk = oracle_solve(&a, &fam, 1.0, 0.0, 4096).unwrap();
    assert!(r.approx.full().try_sub(&rk).unwrap().norm() < 5e-5);
}

#[test]
fn yosida_distance_of_bounded_generators_is_their_distance() {
    let a = Operator::from_rows(&[&[-1.0, 2.0], &[0.0, -3.0]], K).unwrap();
    let b = Operator::from_rows(&[&[-0.5, 1.0], &[0.5, -2.0]], K).unwrap();
    let d = yosida_distance(&a, &b, &default_lambdas(0.0)).unwrap();
    let exact = a.try_sub(&b).unwrap().norm();
    assert!((d.value - exact).abs() <= 1e-4 * exact);
}

#[test]
fn saddle_dichotomy_constants() {
    let rep = autonomous_dichotomy(&diag(&[-1.0, 1.0])).unwrap();
    assert!(rep.hyperbolic);
    assert_eq!(rep.stable_rank, 1);
    assert!((rep.spectral_gap - 1.0).abs() < 1e-12);
    let p = rep.projector.entries();
    assert!((p - DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])).amax() < 1e-12);

    // a rotation sits on the unit circle
    let rot = Operator::from_rows(&[&[0.0, -1.0], &[1.0, 0.0]], K).unwrap();
    assert!(!check_hyperbolic(&rot).unwrap().hyperbolic);
}

#[test]
fn heat_green_matrix_has_mass_one_over_mu() {
    for mu in [1.0, 4.0] {
        let g = GridSpec::new(40.0 / f64::sqrt(mu), 512, Domain::Line).unwrap();
        let cmp = compare_heat_resolvents(&g, mu).unwrap();
        assert!(cmp.green_norm_times_mu <= 1.0 + 1e-3);
        assert!(cmp.green_norm_times_mu >= 0.99);
        assert!(cmp.interior_error < 1e-2);
    }
}

#[test]
fn contraction_growth_bound_is_tight() {
    let a = Operator::from_rows(&[&[-1.0, 0.0], &[0.0, -2.0]], K).unwrap();
    let gb = fit_growth_bound(&a, 5.0, 0.0, 64).unwrap();
    assert!((gb.m - 1.0).abs() < 1e-5);
    assert!((gb.omega0 + 1.0).abs() < 1e-12);
    assert!(
        GrowthBound::given(1.0, -1.0)
            .unwrap()
            .worst_ratio(&a, &[0.0, 0.5, 1.0, 2.0])
            .unwrap()
            <= 1.0 + 1e-12
    );
}
