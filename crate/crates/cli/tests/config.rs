use std::collections::BTreeSet;

use proptest::prelude::*;
use shjb_cli::config::{lex, CheckKind, Dt, REQUIRED_KEYS};
use shjb_cli::{merge_pairs, parse_config, CliError, Command, Problem, RunConfig};

#[test]
fn empty_input_lists_required_keys() {
    let err = parse_config("").unwrap_err();
    let msg = err.to_string();
    for k in REQUIRED_KEYS {
        assert!(msg.contains(k), "{msg}");
    }
    assert!(matches!(parse_config("# only a comment\n\n"), Err(CliError::Missing(_))));
    assert!(parse_config("command = solve\n").unwrap_err().to_string().contains("problem"));
}

#[test]
fn minimal_solve_config_gets_defaults() {
    let c = parse_config("command = solve\nproblem = section4\n").unwrap();
    assert_eq!(c, RunConfig::new(Command::Solve, Problem::Section4 { g: 1.0, k: 1.0 }));
    assert_eq!(c.dx, 0.02);
    assert_eq!(c.dt, Dt::Auto);
    assert_eq!(c.steps(), 100);
    assert_eq!((c.lo, c.hi, c.horizon), (-2.0, 2.0, 1.0));
    assert_eq!(c.checks, [CheckKind::Jump, CheckKind::Viscosity].into_iter().collect::<BTreeSet<_>>());
    assert_eq!(c.out_dir, None);
}

#[test]
fn negative_dx_names_key_and_bound() {
    let err = parse_config("command = solve\nproblem = section4\ndx = -0.01\n").unwrap_err();
    assert_eq!(err.key(), Some("dx"));
    let msg = err.to_string();
    assert!(msg.contains("dx") && msg.contains("(0, 1]") && msg.contains("-0.01"), "{msg}");
}

#[test]
fn strict_keys() {
    let base = "command = solve\nproblem = section4\n";
    let err = parse_config(&format!("{base}dxx = 0.1\n")).unwrap_err();
    assert!(matches!(&err, CliError::Unknown(k) if k == "dxx"), "{err}");
    let err = parse_config(&format!("{base}dx = 0.1\ndx = 0.2\n")).unwrap_err();
    assert!(matches!(&err, CliError::Duplicate(k) if k == "dx"), "{err}");
    let err = parse_config(&format!("{base}sigma0 = 2\n")).unwrap_err();
    assert_eq!(err.key(), Some("sigma0"));
    let err = parse_config(&format!("{base}just words\n")).unwrap_err();
    assert!(matches!(err, CliError::Syntax { line: 3, .. }), "{err}");
    assert_eq!(parse_config("command = run\nproblem = section4\n").unwrap_err().key(), Some("command"));
    assert_eq!(parse_config("command = solve\nproblem = heat\n").unwrap_err().key(), Some("problem"));
}

#[test]
fn typed_values_and_bounds() {
    let base = "command = check\nproblem = wang\n";
    let cases = [
        ("paths = 1", "paths"),
        ("paths = many", "paths"),
        ("sigma0 = 0", "sigma0"),
        ("cfl = 1.5", "cfl"),
        ("hi = -3", "hi"),
        ("x0 = 5", "x0"),
        ("point = 0.5", "point"),
        ("point = 2,0", "point"),
        ("dt = 0", "dt"),
        ("horizon = inf", "horizon"),
        ("mu = NaN", "mu"),
        ("checks = jump,nope", "checks"),
        ("boundary = periodic", "boundary"),
        ("dx = 1.5", "dx"),
        ("all = yes", "all"),
    ];
    for (line, key) in cases {
        let err = parse_config(&format!("{base}{line}\n")).unwrap_err();
        assert_eq!(err.key(), Some(key), "{line}: {err}");
    }
    let c = parse_config(&format!("{base}a = -0.5\nmu = 0.3\ndt = 0.05\nchecks = dpp, jump\npoint = 0.25, -1\n")).unwrap();
    assert_eq!(c.problem, Problem::Wang { a: -0.5, b0: 0.0, sigma0: 1.0, mu: 0.3 });
    assert_eq!(c.steps(), 20);
    assert_eq!(c.checks, [CheckKind::Dpp, CheckKind::Jump].into_iter().collect::<BTreeSet<_>>());
    assert_eq!(c.point, (0.25, -1.0));
    let all = parse_config(&format!("{base}checks = none\nall = true\n")).unwrap();
    assert_eq!(all.checks.len(), CheckKind::ALL.len());
    assert!(parse_config(&format!("{base}checks = none\n")).unwrap().checks.is_empty());
}

#[test]
fn overrides_replace_file_values() {
    let file = lex("command = solve\nproblem = section4\ndx = 0.05 # coarse\n").unwrap();
    let merged = merge_pairs(file, vec![("dx".into(), "0.1".into()), ("command".into(), "check".into()), ("seed".into(), "9".into())]);
    let c = shjb_cli::config::from_pairs(&merged).unwrap();
    assert_eq!((c.dx, c.command, c.seed), (0.1, Command::Check, 9));
}

fn problem() -> impl Strategy<Value = Problem> {
    let p = -10.0f64..10.0;
    prop_oneof![
        (p.clone().prop_filter("g != 0", |g| *g != 0.0), 1e-3f64..5.0).prop_map(|(g, k)| Problem::Section4 { g, k }),
        (p.clone(), p.clone(), 1e-3f64..5.0, p.clone()).prop_map(|(a, b0, sigma0, mu)| Problem::Wang { a, b0, sigma0, mu }),
        (p.clone(), p, 1e-3f64..5.0).prop_map(|(c, g0, k0)| Problem::LinearFk { c, g0, k0 }),
    ]
}

fn config() -> impl Strategy<Value = RunConfig> {
    (
        (0usize..5, problem(), 0.1f64..10.0, -5.0f64..-0.5, 0.5f64..5.0, 0.01f64..0.1),
        (prop::option::of(0.01f64..0.1), 0.05f64..1.0, any::<bool>(), 2usize..100_000, any::<u64>(), 0usize..=8),
        (1usize..500, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0, prop::collection::btree_set(0usize..6, 0..6)),
        (0.01f64..1.0, 0usize..1000, 0usize..64, prop::option::of("[a-z][a-z0-9_/.-]{0,20}")),
    )
        .prop_map(|((cmd, problem, horizon, lo, hi, dx), (dt, cfl, reflect, paths, seed, degree), (mc_steps, fx, ft, fp, checks), (oracle_dx, csv_paths, threads, out))| {
            let mut c = RunConfig::new(Command::ALL[cmd], problem);
            c.horizon = horizon;
            c.lo = lo;
            c.hi = hi;
            c.dx = dx;
            c.dt = dt.map_or(Dt::Auto, |d| Dt::Fixed(d * horizon));
            c.cfl = cfl;
            c.boundary = if reflect { "reflect" } else { "extrapolate" }.into();
            c.paths = paths;
            c.seed = seed;
            c.degree = degree;
            c.mc_steps = mc_steps;
            c.x0 = lo + (hi - lo) * (0.01 + 0.98 * fx);
            c.point = (horizon * ft, lo + (hi - lo) * (0.01 + 0.98 * fp));
            c.checks = checks.into_iter().map(|i| CheckKind::ALL[i]).collect();
            c.oracle_dx = oracle_dx;
            c.csv_paths = csv_paths;
            c.threads = threads;
            c.out_dir = out.map(Into::into);
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn render_parse_round_trip(c in config()) {
        let text = c.render();
        let back = parse_config(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&back, &c);
        prop_assert_eq!(back.render(), text);
    }
}
