use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singular_hjb::*;

fn grid(t0: f64, t1: f64, steps: usize) -> TimeGrid<f64> {
    TimeGrid::new(t0, t1, steps).unwrap()
}

fn unit_policy() -> RegularControlPolicy<f64> {
    RegularControlPolicy::Constant(vec![])
}

fn opts() -> BsdeOptions {
    BsdeOptions::default()
}

#[test]
fn martingale_terminal() {
    let spec = builtin_linear_fk::<f64>(0.0, 1.0, 1.0).unwrap();
    let sol = cost_functional(&spec, &grid(0.0, 1.0, 25), &[0.4], &unit_policy(), &SingularControl::none(1, 25), 20_000, 1, &opts()).unwrap();
    assert!((sol.y0 - 0.4).abs() <= 3.0 * sol.std_error, "{} ± {}", sol.y0, sol.std_error);
}

#[test]
fn constant_generator_integrates() {
    let c = 1.0;
    let spec = builtin_linear_fk::<f64>(c, 1.0, 1.0).unwrap();
    let t0 = 0.25;
    let sol = cost_functional(&spec, &grid(t0, 1.0, 30), &[0.5], &unit_policy(), &SingularControl::none(1, 30), 20_000, 2, &opts()).unwrap();
    let exact = linear_fk_exact(c, 1.0, t0, 0.5);
    assert!((sol.y0 - exact).abs() <= 3.0 * sol.std_error, "{} vs {exact}", sol.y0);
}

#[test]
fn terminal_values_are_kept_exactly() {
    let spec = builtin_section4::<f64>();
    let steps = 20;
    let b = simulate_forward(&spec, &grid(0.0, 1.0, steps), &[1.0], &RegularControlPolicy::Constant(vec![2.0]), &SingularControl::none(1, steps), 500, 3)
        .unwrap();
    let sol = solve_bsde(&spec, &b, &opts()).unwrap();
    for (p, x) in b.terminal_states().enumerate() {
        assert_eq!(sol.y_at(p, steps), spec.phi(x));
    }
    let mean = sol.pathwise.iter().sum::<f64>() / sol.pathwise.len() as f64;
    assert!((mean - sol.y0).abs() < 1e-10);
}

#[test]
fn linear_in_the_terminal_vector() {
    let spec = builtin_section4::<f64>();
    let steps = 20;
    let b = simulate_forward(&spec, &grid(0.0, 1.0, steps), &[0.8], &RegularControlPolicy::Constant(vec![-0.5]), &SingularControl::none(1, steps), 2_000, 4)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let vecs: Vec<Vec<f64>> = (0..3).map(|_| (0..b.paths).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
    let sum: Vec<f64> = (0..b.paths).map(|p| vecs.iter().map(|v| v[p]).sum()).collect();
    let whole = solve_bsde_terminal_values(&spec, &b, &sum, &opts()).unwrap();
    let parts: Vec<BsdeSolution<f64>> = vecs.iter().map(|v| solve_bsde_terminal_values(&spec, &b, v, &opts()).unwrap()).collect();
    let scale = whole.y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (k, y) in whole.y.iter().enumerate() {
        let s: f64 = parts.iter().map(|p| p.y[k]).sum();
        assert!((y - s).abs() <= 1e-10 * scale, "entry {k}: {y} vs {s}");
    }
}

#[test]
fn section4_fixed_control_matches_the_oracle() {
    // v = -1: no drift, volatility -X, generator z; the oracle restricted to that control
    let spec = builtin_section4::<f64>();
    let steps = 50;
    let sol = cost_functional(&spec, &grid(0.0, 1.0, steps), &[1.0], &RegularControlPolicy::Constant(vec![-1.0]), &SingularControl::none(1, steps), 20_000, 6, &opts())
        .unwrap();
    let only = ControlGrid::from_points(&spec.controls, &[vec![-1.0]]).unwrap();
    let cfg = DpOracleConfig::auto(&spec, -2.0, 2.0, 0.02, only).unwrap();
    let oracle = dp_oracle(&spec, &cfg).unwrap();
    let u = oracle.value_at(0.0, &[1.0]).unwrap();
    assert!((sol.y0 - u).abs() <= 5e-2, "bsde {} vs oracle {u}", sol.y0);
}

#[test]
fn deterministic_flow_cost() {
    let spec = builtin_section4::<f64>();
    let steps = 200;
    let sol = cost_functional(&spec, &grid(0.0, 1.0, steps), &[1.0], &RegularControlPolicy::Constant(vec![0.0]), &SingularControl::none(1, steps), 1_000, 7, &opts())
        .unwrap();
    let euler = (1.0 + 1.0 / steps as f64).powi(steps as i32);
    assert!((sol.y0 - euler).abs() < 1e-9);
    assert!(sol.std_error < 1e-12);
    assert!((sol.y0 - 1f64.exp()).abs() <= 1f64.exp() / steps as f64);
}

#[test]
fn zero_cost_is_zero() {
    let spec = builtin_wang::<f64>(0.3, 0.1, 1.0, 0.0).unwrap();
    let sol = cost_functional(&spec, &grid(0.0, 1.0, 20), &[0.2], &unit_policy(), &SingularControl::none(1, 20), 2_000, 8, &opts()).unwrap();
    assert_eq!(sol.y0, 0.0);
}

#[test]
fn jump_cost_is_added() {
    let (c, x0, steps) = (0.5, 0.3, 20);
    let xi = SingularControl::Path(SingularControlPath::single_jump(1, steps, 5, vec![1.0]));
    // no push: only K Δξ = 1 is added
    let spec = builtin_linear_fk::<f64>(c, 0.0, 1.0).unwrap();
    let sol = cost_functional(&spec, &grid(0.0, 1.0, steps), &[x0], &unit_policy(), &xi, 20_000, 9, &opts()).unwrap();
    let exact = linear_fk_exact(c, 1.0, 0.0, x0) + 1.0;
    assert!((sol.y0 - exact).abs() <= 3.0 * sol.std_error, "{} vs {exact}", sol.y0);
    // unit push as well: the terminal state moves by G Δξ = 1 too
    let spec = builtin_linear_fk::<f64>(c, 1.0, 1.0).unwrap();
    let sol = cost_functional(&spec, &grid(0.0, 1.0, steps), &[x0], &unit_policy(), &xi, 20_000, 9, &opts()).unwrap();
    assert!((sol.y0 - (exact + 1.0)).abs() <= 3.0 * sol.std_error);
}

#[test]
fn semigroup_of_zero_is_zero() {
    let spec = builtin_linear_fk::<f64>(0.0, 1.0, 1.0).unwrap();
    let mc = McConfig { paths: 2_000, ..McConfig::default() };
    let est = backward_semigroup(&spec, 0.2, 0.6, &[0.1], &unit_policy(), &SingularControl::none(1, mc.steps_for(0.4)), &|_| 0.0, &mc).unwrap();
    assert_eq!(est.value, 0.0);
}

#[test]
fn semigroup_to_horizon_is_the_cost() {
    let c = 1.0;
    let spec = builtin_linear_fk::<f64>(c, 1.0, 1.0).unwrap();
    let mc = McConfig { paths: 20_000, ..McConfig::default() };
    let t = 0.3;
    let phi = spec.terminal.clone();
    let est = backward_semigroup(&spec, t, 1.0, &[0.5], &unit_policy(), &SingularControl::none(1, mc.steps_for(0.7)), &*phi, &mc).unwrap();
    let exact = linear_fk_exact(c, 1.0, t, 0.5);
    assert!((est.value - exact).abs() <= 3.0 * est.std_error);
    assert!(backward_semigroup(&spec, 0.5, 0.5, &[0.0], &unit_policy(), &SingularControl::none(1, 1), &*phi, &mc).is_err());
}

#[test]
fn semigroup_composes() {
    // G_{t,t2}[η] against G_{t,t1}[x ↦ G_{t1,t2}[η](x)], the inner map read off the regression at t1
    let c = 0.5;
    let spec = builtin_linear_fk::<f64>(c, 1.0, 1.0).unwrap();
    let (t, t1, t2, x0) = (0.0, 0.4, 0.8, 0.3);
    let eta = |x: &[f64]| x[0] * x[0];
    let steps = 40;
    let split = 20;
    let g = grid(t, t2, steps);
    let b = simulate_forward(&spec, &g, &[x0], &unit_policy(), &SingularControl::none(1, steps), 20_000, 10).unwrap();
    let direct = solve_bsde_with_terminal(&spec, &b, &eta, &opts()).unwrap();
    assert!((g.node(split) - t1).abs() < 1e-12);
    let inner = Arc::new(direct.clone());
    let sp = spec.clone();
    let inner_map = move |x: &[f64]| inner.value_function(&sp, split, x, &[]);
    let mc = McConfig { paths: 20_000, steps_per_unit: 50, seed: 11, bsde: opts() };
    let outer = backward_semigroup(&spec, t, t1, &[x0], &unit_policy(), &SingularControl::none(1, mc.steps_for(t1 - t)), &inner_map, &mc).unwrap();
    let combined = 3.0 * (direct.std_error.powi(2) + outer.std_error.powi(2)).sqrt();
    assert!((direct.y0 - outer.value).abs() <= combined, "{} vs {}", direct.y0, outer.value);
    // E[X²] = x0² + (t2 - t), plus c (t2 - t)
    let exact = x0 * x0 + (1.0 + c) * (t2 - t);
    assert!((direct.y0 - exact).abs() <= 3.0 * direct.std_error);
}

#[test]
fn comparison_examples() {
    let spec = builtin_section4::<f64>();
    let steps = 20;
    let b = simulate_forward(&spec, &grid(0.0, 1.0, steps), &[0.6], &RegularControlPolicy::Constant(vec![1.5]), &SingularControl::none(1, steps), 4_000, 12)
        .unwrap();

    let same = comparison_check(&spec, &spec, &b, &opts()).unwrap();
    assert!(same.passed);
    assert_eq!(same.y1, same.y2);

    let f = spec.generator.clone();
    let plus_one = spec.clone().with_generator(Arc::new(move |t, x, y, z, v| f(t, x, y, z, v) + 1.0));
    let r = comparison_check(&plus_one, &spec, &b, &opts()).unwrap();
    assert!(r.passed);
    assert!((r.y1 - r.y2 - 1.0).abs() <= 3.0 * r.std_error + 1e-9, "{r:?}");

    let phi = spec.terminal.clone();
    let raised = spec.clone().with_terminal(Arc::new(move |x| phi(x) + 1.0));
    let r = comparison_check(&raised, &spec, &b, &opts()).unwrap();
    assert!(r.passed);
    assert!((r.y1 - r.y2 - 1.0).abs() <= 3.0 * r.std_error + 1e-9, "{r:?}");

    // reversed order violates the precondition
    assert!(matches!(comparison_check(&spec, &raised, &b, &opts()), Err(Error::Contract(_))));
}

#[test]
fn seeds_agree_within_their_errors() {
    let spec = builtin_linear_fk::<f64>(1.0, 1.0, 1.0).unwrap();
    let steps = 20;
    let mut ys = Vec::new();
    let mut ses = Vec::new();
    for seed in 100..110 {
        let sol = cost_functional(&spec, &grid(0.0, 1.0, steps), &[0.0], &unit_policy(), &SingularControl::none(1, steps), 2_000, seed, &opts()).unwrap();
        ys.push(sol.y0);
        ses.push(sol.std_error);
    }
    let n = ys.len() as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = ses.iter().sum::<f64>() / n;
    assert!(sd <= 1.5 * se, "sd {sd} vs se {se}");
}

#[test]
fn picard_pass_agrees_when_generator_ignores_y() {
    let spec = builtin_section4::<f64>();
    let steps = 20;
    let b = simulate_forward(&spec, &grid(0.0, 1.0, steps), &[1.0], &RegularControlPolicy::Constant(vec![-1.0]), &SingularControl::none(1, steps), 2_000, 13)
        .unwrap();
    let plain = solve_bsde(&spec, &b, &opts()).unwrap();
    let picard = solve_bsde(&spec, &b, &BsdeOptions { picard: 2, ..opts() }).unwrap();
    assert_eq!(plain.y, picard.y);
}
