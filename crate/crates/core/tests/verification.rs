use std::sync::Arc;

use singular_hjb::report::{cross_check_csv, cross_check_report, KvReport};
use singular_hjb::verification::{loglog_slope, surface_gap};
use singular_hjb::*;

fn oracle_for(spec: &ProblemSpec<f64>, dx: f64) -> ValueSurface<f64> {
    let cfg = DpOracleConfig::auto(spec, -2.0, 2.0, dx, spec.control_grid()).unwrap();
    dp_oracle(spec, &cfg).unwrap()
}

#[test]
fn oracle_wang_is_zero() {
    let spec = builtin_wang::<f64>(0.0, 0.0, 1.0, 0.0).unwrap();
    let o = oracle_for(&spec, 0.05);
    assert!(o.values.iter().all(|v| *v == 0.0));
}

#[test]
fn oracle_linear_fk_on_201_nodes() {
    let c = 1.0;
    let spec = builtin_linear_fk::<f64>(c, 1.0, 1.0).unwrap();
    let o = oracle_for(&spec, 0.02);
    assert_eq!(o.nodes(), 201);
    let err = o.max_interior_error(|t, x| linear_fk_exact(c, 1.0, t, x[0]));
    assert!(err <= 1e-2, "{err}");
}

#[test]
fn oracle_section4_against_closed_form() {
    let spec = builtin_section4::<f64>();
    let o = oracle_for(&spec, 0.05);
    let err = o.max_interior_error(|t, x| closed_form_section4(t, x[0], 1.0));
    assert!(err <= 5e-2, "{err}");
}

#[test]
fn oracle_exact_discrete_properties() {
    let spec = builtin_linear_fk::<f64>(0.5, 1.0, 1.0).unwrap();
    let o = oracle_for(&spec, 0.05);
    let last = o.tgrid.steps;
    for (j, x) in o.sgrid.points().iter().enumerate() {
        assert_eq!(o.value(last, j), spec.phi(x));
    }
    let phi = spec.terminal.clone();
    let raised = spec.clone().with_terminal(Arc::new(move |x| phi(x) + 0.1 + 0.2 * x[0] * x[0]));
    let hi = oracle_for(&raised, 0.05);
    assert!(hi.values.iter().zip(&o.values).all(|(a, b)| a >= b));

    let steep = spec.clone().with_terminal(Arc::new(|x: &[f64]| -3.0 * x[0]));
    let s = oracle_for(&steep, 0.05);
    let unit = jump_inequality_check(&s, &steep, &[vec![0.05]]);
    assert!(unit.max_violation <= 1e-12, "{unit:?}");
}

#[test]
fn oracle_rejects_unsupported_problems() {
    let spec = builtin_section4::<f64>();
    let cfg = DpOracleConfig::auto(&spec, -2.0, 2.0, 0.001, spec.control_grid()).unwrap();
    assert!(matches!(dp_oracle(&spec, &cfg), Err(Error::Config(_))));

    let two = ProblemSpec::new(
        "two",
        Dims { n: 2, d: 1, k: 0, m: 1 },
        1.0,
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(1.0)),
        Arc::new(|_, _, _, _, _| 0.0),
        Arc::new(|x: &[f64]| x[0]),
        vec![1.0, 0.0],
        vec![1.0],
        ControlSet::singleton(),
        vec![(-1.0, 1.0), (-1.0, 1.0)],
    );
    let cfg = DpOracleConfig {
        tgrid: TimeGrid::new(0.0, 1.0, 10).unwrap(),
        sgrid: SpaceGrid::uniform_1d(-1.0, 1.0, 0.1).unwrap(),
        controls: ControlSet::singleton().grid(),
        jumps: vec![],
    };
    assert!(matches!(dp_oracle(&two, &cfg), Err(Error::Config(_))));
}

#[test]
fn cross_check_linear_fk() {
    let c = 1.0;
    let spec = builtin_linear_fk::<f64>(c, 1.0, 1.0).unwrap();
    let pde = solve_default(&spec, 0.05, 20, &HjbOptions::default()).unwrap();
    let oracle = oracle_for(&spec, 0.05);
    let mc = McConfig { paths: 20_000, ..McConfig::default() };
    let pts = vec![(0.0, vec![0.5])];
    let r = cross_check_surfaces(&spec, &pts, &pde, 1e-3, &oracle, 1e-2, &mc).unwrap();
    assert!(r.passed, "{r:?}");
    let row = &r.rows[0];
    for v in [row.pde, row.oracle, row.mc] {
        assert!((v - 1.5).abs() <= 2e-2, "{row:?}");
    }
    let swapped = cross_check_surfaces(&spec, &pts, &oracle, 1e-2, &pde, 1e-3, &mc).unwrap();
    assert_eq!(swapped.passed, r.passed);
}

#[test]
fn cross_check_section4() {
    let spec = builtin_section4::<f64>();
    let pde = solve_default(&spec, 0.04, 50, &HjbOptions::default()).unwrap();
    let cfg = DpOracleConfig::auto(&spec, -2.0, 2.0, 0.05, spec.control_grid()).unwrap();
    let mc = McConfig { paths: 20_000, steps_per_unit: 100, ..McConfig::default() };
    let pts = vec![(0.0, vec![1.0]), (0.0, vec![-1.0])];
    let r = cross_check(&spec, &pts, &pde, 2e-2, &cfg, 5e-2, &mc).unwrap();
    assert!(r.passed, "{r:?}");
    assert!((r.rows[0].pde - (-1.0f64).exp()).abs() <= 2e-2);
    assert!((r.rows[1].pde + 1.0f64.exp()).abs() <= 2e-2);

    let oracle = dp_oracle(&spec, &cfg).unwrap();
    let swapped = cross_check_surfaces(&spec, &pts, &oracle, 5e-2, &pde, 2e-2, &mc).unwrap();
    assert_eq!(swapped.passed, r.passed);
    assert!(surface_gap(&oracle, &pde, &[0.0, 0.5]) <= 5e-2);

    let kv = cross_check_report(&r);
    assert_eq!(KvReport::parse(&kv.render()).unwrap(), kv);
    assert_eq!(kv.get("cross_check"), Some("pass"));
    let csv = cross_check_csv(&r);
    assert_eq!(csv.lines().next(), Some("t,x_1,pde,oracle,mc,mc_se,passed"));
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn cross_check_rejects_points_outside_the_grids() {
    let spec = builtin_linear_fk::<f64>(1.0, 1.0, 1.0).unwrap();
    let pde = solve_default(&spec, 0.1, 10, &HjbOptions::default()).unwrap();
    let r = cross_check_surfaces(&spec, &[(0.0, vec![3.0])], &pde, 1e-3, &pde, 1e-3, &McConfig::default());
    assert!(matches!(r, Err(Error::Contract(_))));
}

#[test]
fn battery_on_frozen_dynamics() {
    let spec = ProblemSpec::new(
        "frozen",
        Dims { n: 1, d: 1, k: 0, m: 1 },
        1.0,
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
        Arc::new(|_, _, _, _, _| 0.0),
        Arc::new(|x: &[f64]| x[0]),
        vec![1.0],
        vec![1.0],
        ControlSet::singleton(),
        vec![(-2.0, 2.0)],
    );
    let mut cfg = BatteryConfig::new(vec![1.0], vec![]);
    cfg.mc.paths = 500;
    let r = estimate_battery(&spec, &cfg).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!(r.stability_constant, 0.0);
    assert!(r.frozen_gap.iter().all(|(_, e)| *e == 0.0));
    // x² / (1 + x²) over {0.5, 1, 2}
    assert!((r.growth_spread - 4.0).abs() < 1e-9);
}

#[test]
fn battery_stability_on_section4() {
    let spec = builtin_section4::<f64>();
    let mut cfg = BatteryConfig::new(vec![1.0], vec![-0.5]);
    cfg.mc.paths = 5_000;
    cfg.windows = vec![0.2, 0.1, 0.05];
    let r = estimate_battery(&spec, &cfg).unwrap();
    assert!(r.stability_constant.is_finite() && r.stability_monotone, "{r:?}");
    assert!(r.growth_ok, "{r:?}");
}

#[test]
fn slope_of_exact_power_laws() {
    let pairs: Vec<(f64, f64)> = [0.2f64, 0.1, 0.05].iter().map(|&d| (d, 0.7 * d * d.sqrt())).collect();
    assert!((loglog_slope(&pairs) - 1.5).abs() < 1e-12);
}
