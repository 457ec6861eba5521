use std::sync::Arc;

use singular_hjb::*;

#[test]
fn section4_assumptions_hold() {
    let spec = builtin_section4::<f64>();
    let rep = validate_problem(&spec, 10_000, 3).unwrap();
    assert!(rep.passed.all(), "{rep:?}");
    // |d/dx (x + xv)| <= 3 and |d/dv| <= 2 on the box, so the difference quotient is at most 3
    assert!(rep.lipschitz_estimates.b <= 3.0 + 1e-9, "{}", rep.lipschitz_estimates.b);
    assert_eq!(rep.k_min, 1.0);
}

#[test]
fn zero_cost_fails_positivity() {
    let spec = builtin_section4_with::<f64>(1.0, 0.0);
    let rep = validate_problem(&spec, 200, 3).unwrap();
    assert!(rep.passed.a1 && rep.passed.a2);
    assert!(!rep.passed.a3);
}

#[test]
fn builtins_pass_on_ten_thousand_samples() {
    let specs = [
        builtin_section4::<f64>(),
        builtin_wang(0.0, 0.0, 1.0, 0.0).unwrap(),
        builtin_wang(1.0, 2.0, 0.5, 0.3).unwrap(),
        builtin_linear_fk(1.0, 1.0, 1.0).unwrap(),
    ];
    for spec in &specs {
        let rep = validate_problem(spec, 10_000, 9).unwrap();
        assert!(rep.passed.all(), "{}: {rep:?}", spec.name);
    }
}

#[test]
fn validation_is_deterministic_in_the_seed() {
    let spec = builtin_section4::<f64>();
    let a = validate_problem(&spec, 1_000, 42).unwrap();
    let b = validate_problem(&spec, 1_000, 42).unwrap();
    assert_eq!(a, b);
}

#[test]
fn section4_maps() {
    let spec = builtin_section4::<f64>();
    assert!(spec.controls.contains(&[-1.0], 0.0) && spec.controls.contains(&[2.0], 0.0));
    assert!(!spec.controls.contains(&[0.5], 1e-12));
    assert_eq!(spec.phi(&[1.0]), 1.0);
    assert_eq!(spec.f(0.2, &[0.3], 0.0, &[2.0], &[-1.0]), 2.0);
    let grid = spec.control_grid();
    for anchor in [-1.0, 0.0, 1.0, 2.0] {
        assert!(grid.iter().any(|v| v[0] == anchor), "missing anchor {anchor}");
    }
}

#[test]
fn section4_generator_is_linear_in_z() {
    let spec = builtin_section4::<f64>();
    for &(x, y, z, v) in &[(0.5, 1.0, 0.7, -1.0), (-1.2, 0.0, -2.0, 1.5), (1.9, -3.0, 0.1, 2.0)] {
        let base = spec.f(0.1, &[x], y, &[z], &[v]);
        for alpha in [-2.0, 0.0, 0.5, 3.0] {
            assert_eq!(spec.f(0.1, &[x], y, &[alpha * z], &[v]), alpha * base);
        }
    }
}

#[test]
fn wang_maps() {
    let spec = builtin_wang::<f64>(0.0, 0.0, 1.0, 0.0).unwrap();
    assert_eq!(spec.phi(&[5.0]), 0.0);
    assert_eq!((spec.g(0, 0), spec.cost[0]), (1.0, 1.0));
    let spec = builtin_wang::<f64>(1.0, 2.0, 1.0, 0.0).unwrap();
    let mut b = [0.0];
    spec.b(0.0, &[3.0], &[], &mut b);
    assert_eq!(b[0], 5.0);
    assert!(matches!(builtin_wang::<f64>(0.0, 0.0, 0.0, 0.0), Err(Error::Config(_))));
}

#[test]
fn linear_fk_values() {
    assert_eq!(linear_fk_exact(0.0, 1.0, 0.0, 1.0), 1.0);
    assert_eq!(linear_fk_exact(1.0, 1.0, 0.0, 0.0), 1.0);
    // u_x = 1, so u_x G + K = 2
    let spec = builtin_linear_fk::<f64>(1.0, 1.0, 1.0).unwrap();
    assert_eq!(spec.g(0, 0) + spec.cost[0], 2.0);
    assert!(builtin_linear_fk::<f64>(1.0, 1.0, 0.0).is_err());
}

#[test]
fn structure_errors_name_the_field() {
    let mut spec = builtin_section4::<f64>();
    spec.cost = vec![1.0, 1.0];
    match spec.check_structure() {
        Err(Error::Dimension { field, .. }) => assert_eq!(field, "K"),
        other => panic!("unexpected {other:?}"),
    }
    let spec = builtin_section4::<f64>().with_terminal(Arc::new(|_| f64::NAN));
    assert!(matches!(spec.probe(), Err(Error::Evaluation { .. })));
}

#[test]
fn single_precision_instance() {
    let spec = builtin_section4::<f32>();
    let rep = validate_problem(&spec, 2_000, 1).unwrap();
    assert!(rep.passed.all());
    assert_eq!(spec.f(0.0, &[1.0], 0.0, &[2.0], &[-1.0]), 2.0f32);
}
