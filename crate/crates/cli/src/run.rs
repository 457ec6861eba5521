//! Pipelines behind the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use singular_hjb::hjb::checks::DEFAULT_RESIDUAL_TOL;
use singular_hjb::hjb::io::{format_scalar, scheme_metadata, write_mask_csv, write_surface_csv};
use singular_hjb::hjb::region::default_inaction_tol;
use singular_hjb::report::{self, KvReport};
use singular_hjb::verification::surface_gap;
use singular_hjb::{
    builtin_linear_fk, builtin_section4_with, builtin_wang, candidates_from_surface, closed_form_section4, cost_functional, cross_check_surfaces,
    dp_oracle, dpp_residual, estimate_battery, extract_inaction_region, jump_inequality_check, linear_fk_exact, simulate_forward, solve_hjb_vi,
    verification_check, viscosity_residual_check, BatteryConfig, BoundaryMode, BsdeOptions, DpOracleConfig, DppFamily, HjbOptions, McConfig,
    ProblemSpec, SpaceGrid, TimeGrid, ValueSurface, VerificationTolerances,
};

use crate::config::{CheckKind, Command, Problem, RunConfig};
use crate::error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SHJB_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "shjb-out";

/// Tolerance on interpolated jump sizes and on the closed-form comparison of `example`.
pub const JUMP_TOL: f64 = 2e-2;
pub const EXAMPLE_TOL: f64 = 2e-2;
pub const DPP_INTERP_TOL: f64 = 2e-2;
pub const CROSS_TOL_PDE: f64 = 2e-2;
pub const CROSS_TOL_ORACLE: f64 = 5e-2;
pub const ORACLE_GAP_TOL: f64 = 5e-2;
/// Window of the dynamic-programming check.
pub const DPP_DELTA: f64 = 0.1;
const JUMP_SAMPLES: [f64; 5] = [0.1, 0.5, 1.0, 0.0537, 0.333];

#[derive(Debug)]
pub struct Outcome {
    /// Every selected check passed.
    pub passed: bool,
    pub report: KvReport,
    /// Lines meant for standard output.
    pub stdout: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            2
        }
    }
}

/// Output directory: the config value, else `$SHJB_OUT_DIR`, else `shjb-out`.
pub fn resolve_out_dir(cfg: &RunConfig) -> PathBuf {
    if let Some(d) = &cfg.out_dir {
        return d.clone();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(DEFAULT_OUT_DIR),
    }
}

pub fn build_spec(cfg: &RunConfig) -> Result<ProblemSpec<f64>, CliError> {
    let spec = match cfg.problem {
        Problem::Section4 { g, k } => builtin_section4_with(g, k),
        Problem::Wang { a, b0, sigma0, mu } => builtin_wang(a, b0, sigma0, mu)?,
        Problem::LinearFk { c, g0, k0 } => builtin_linear_fk(c, g0, k0)?,
    };
    Ok(spec.with_horizon(cfg.horizon).with_domain(vec![(cfg.lo, cfg.hi)]))
}

/// Exact value when the builtin has one for these parameters.
pub fn exact_value(cfg: &RunConfig) -> Option<Box<dyn Fn(f64, f64) -> f64>> {
    let horizon = cfg.horizon;
    match cfg.problem {
        // the unconstrained solution has slope in [e^{-T}, e^{T}]; it solves the
        // inequality only if no push direction lowers it
        Problem::Section4 { g, k } => {
            let ok = g * (-horizon).exp() + k >= 0.0 && g * horizon.exp() + k >= 0.0;
            ok.then(|| Box::new(move |t, x| closed_form_section4(t, x, horizon)) as Box<dyn Fn(f64, f64) -> f64>)
        }
        Problem::Wang { .. } => Some(Box::new(|_, _| 0.0)),
        Problem::LinearFk { c, g0, k0 } => (g0 + k0 >= 0.0).then(|| Box::new(move |t, x| linear_fk_exact(c, horizon, t, x)) as Box<dyn Fn(f64, f64) -> f64>),
    }
}

fn mc_config(cfg: &RunConfig) -> McConfig {
    McConfig {
        paths: cfg.paths,
        steps_per_unit: cfg.mc_steps,
        seed: cfg.seed,
        bsde: BsdeOptions { degree: cfg.degree, ..BsdeOptions::default() },
    }
}

pub fn solve(cfg: &RunConfig, spec: &ProblemSpec<f64>) -> Result<ValueSurface<f64>, CliError> {
    let tgrid = TimeGrid::new(0.0, cfg.horizon, cfg.steps())?;
    let sgrid = SpaceGrid::uniform_1d(cfg.lo, cfg.hi, cfg.dx)?;
    let opts = HjbOptions { cfl: cfg.cfl, boundary: BoundaryMode::parse(&cfg.boundary)?, ..HjbOptions::default() };
    Ok(solve_hjb_vi(spec, &tgrid, &sgrid, &spec.control_grid(), &opts)?)
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        Ok(Self { dir, files: Vec::new() })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn surface(&mut self, name: &str, s: &ValueSurface<f64>) -> Result<(), CliError> {
        let mut buf = Vec::new();
        write_surface_csv(s, &mut buf)?;
        self.write(name, &buf)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { context: path.display().to_string(), source }
}

/// Executes the configured pipeline and writes its artifacts.
pub fn run(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let spec = build_spec(cfg)?;
    let mut w = Writer::new(resolve_out_dir(cfg))?;
    let mut r = KvReport::new();
    r.push("command", cfg.command.name());
    r.push("problem", cfg.problem.name());
    let mut stdout = Vec::new();

    if cfg.command == Command::Oracle {
        let passed = oracle(cfg, &spec, &mut w, &mut r)?;
        r.flag("overall", passed);
        w.write("report.txt", r.render().as_bytes())?;
        stdout.push(format!("oracle gap: {}", r.get("oracle_gap").unwrap_or("?")));
        return Ok(Outcome { passed, report: r, stdout, files: w.files });
    }

    let surface = solve(cfg, &spec)?;
    for (k, v) in scheme_metadata(&surface) {
        r.push(k, v);
    }
    w.surface("surface.csv", &surface)?;
    let mask = extract_inaction_region(&surface, &spec, None);
    let mut buf = Vec::new();
    write_mask_csv(&surface, &mask, &mut buf)?;
    w.write("inaction.csv", &buf)?;
    let interior = surface.interior_nodes();
    let (inaction, action) = mask.counts(&interior);
    r.push("inaction_interior_nodes", inaction);
    r.push("action_interior_nodes", action);
    r.scalar("inaction_tol", mask.tol);

    let last = surface.tgrid.steps;
    let terminal_exact = surface.sgrid.points().iter().enumerate().all(|(j, x)| surface.value(last, j) == spec.phi(x));
    r.flag("terminal_exact", terminal_exact);
    let mut passed = terminal_exact;
    let u0 = surface.value_at(0.0, &[cfg.x0]).expect("x0 validated inside the grid");
    r.scalar("value_at_x0", u0);
    if let Some(exact) = exact_value(cfg) {
        r.scalar("max_interior_error", surface.max_interior_error(|t, x| exact(t, x[0])));
    }

    match cfg.command {
        Command::Solve | Command::Oracle => {}
        Command::Example => {
            let (t, x) = cfg.point;
            let solved = surface.value_at(t, &[x]).expect("point validated inside the grid");
            r.scalar("example_solved", solved);
            match exact_value(cfg) {
                Some(exact) => {
                    let cf = exact(t, x);
                    let err = (solved - cf).abs();
                    r.scalar("example_closed_form", cf);
                    r.scalar("example_abs_error", err);
                    let ok = err <= EXAMPLE_TOL;
                    r.flag("example", ok);
                    passed &= ok;
                    stdout.push(format!("closed_form: {cf:.5}"));
                }
                None => stdout.push("closed_form: n/a".into()),
            }
            stdout.push(format!("solved: {solved:.5}"));
        }
        Command::Simulate => passed &= simulate(cfg, &spec, &surface, &mut w, &mut r)?,
        Command::Check => {
            for kind in &cfg.checks {
                passed &= check(*kind, cfg, &spec, &surface, &mut w, &mut r)?;
            }
        }
    }
    r.flag("overall", passed);
    w.write("report.txt", r.render().as_bytes())?;
    if stdout.is_empty() {
        stdout.push(format!("value_at_x0: {}", format_scalar(u0)));
    }
    stdout.push(format!("overall: {}", if passed { "pass" } else { "fail" }));
    Ok(Outcome { passed, report: r, stdout, files: w.files })
}

fn simulate(cfg: &RunConfig, spec: &ProblemSpec<f64>, surface: &ValueSurface<f64>, w: &mut Writer, r: &mut KvReport) -> Result<bool, CliError> {
    let tol = default_inaction_tol(spec, &surface.sgrid);
    let (policy, xi) = candidates_from_surface(spec, surface, tol);
    let mc = mc_config(cfg);
    let grid = TimeGrid::new(0.0, cfg.horizon, mc.steps_for(cfg.horizon))?;
    let x0 = [cfg.x0];
    let sol = cost_functional(spec, &grid, &x0, &policy, &xi, mc.paths, mc.seed, &mc.bsde)?;
    // same seed: the written paths are the leading paths of the Monte Carlo bundle
    let shown = simulate_forward(spec, &grid, &x0, &policy, &xi, cfg.csv_paths, mc.seed)?;
    let mut buf = Vec::new();
    shown.write_csv(&mut buf)?;
    w.write("paths.csv", &buf)?;
    let u = surface.value_at(0.0, &x0).expect("x0 inside the grid");
    let gap = (sol.y0 - u).abs();
    let tol = 3.0 * sol.std_error + CROSS_TOL_PDE;
    r.scalar("simulate_cost", sol.y0);
    r.scalar("simulate_cost_se", sol.std_error);
    r.scalar("simulate_surface_value", u);
    r.scalar("simulate_gap", gap);
    r.scalar("simulate_tol", tol);
    r.flag("simulate", gap <= tol);
    Ok(gap <= tol)
}

fn check(
    kind: CheckKind,
    cfg: &RunConfig,
    spec: &ProblemSpec<f64>,
    surface: &ValueSurface<f64>,
    w: &mut Writer,
    r: &mut KvReport,
) -> Result<bool, CliError> {
    let mc = mc_config(cfg);
    let x0 = vec![cfg.x0];
    let ok = match kind {
        CheckKind::Jump => {
            let g = spec.g(0, 0);
            if g == 0.0 {
                r.push("jump", "skipped (no push)");
                return Ok(true);
            }
            let unit = jump_inequality_check(surface, spec, &[vec![surface.sgrid.dx(0) / g.abs()]]);
            r.extend(report::jump_report("jump_unit", &unit, 0.0));
            let samples: Vec<Vec<f64>> = JUMP_SAMPLES.iter().map(|h| vec![*h]).collect();
            let any = jump_inequality_check(surface, spec, &samples);
            r.extend(report::jump_report("jump", &any, JUMP_TOL));
            unit.max_violation <= 0.0 && any.max_violation <= JUMP_TOL
        }
        CheckKind::Viscosity => {
            let points = viscosity_points(surface);
            let v = viscosity_residual_check(surface, spec, &points, DEFAULT_RESIDUAL_TOL)?;
            r.extend(report::viscosity_report(&v));
            v.passed
        }
        CheckKind::Dpp => {
            let delta_steps = ((DPP_DELTA / surface.tgrid.dt()).round() as usize).clamp(1, surface.tgrid.steps);
            let d = dpp_residual(spec, surface, 0, delta_steps, &x0, &dpp_family(spec), &mc, DPP_INTERP_TOL)?;
            r.extend(report::dpp_report("dpp", &d));
            d.passed
        }
        CheckKind::Verification => {
            let (policy, xi) = candidates_from_surface(spec, surface, default_inaction_tol(spec, &surface.sgrid));
            let tols = VerificationTolerances::for_surface(spec, surface);
            let v = verification_check(spec, surface, &policy, &xi, 0, &x0, &mc, &tols)?;
            r.extend(report::verification_report(&v));
            v.passed
        }
        CheckKind::Cross => {
            let ocfg = DpOracleConfig::auto(spec, cfg.lo, cfg.hi, cfg.oracle_dx, spec.control_grid())?;
            let oracle = dp_oracle(spec, &ocfg)?;
            let c = cross_check_surfaces(spec, &[(0.0, x0.clone())], surface, CROSS_TOL_PDE, &oracle, CROSS_TOL_ORACLE, &mc)?;
            w.write("cross_check.csv", report::cross_check_csv(&c).as_bytes())?;
            r.extend(report::cross_check_report(&c));
            c.passed
        }
        CheckKind::Battery => {
            let base: Vec<f64> = spec
                .controls
                .boxes
                .first()
                .map(|b| b.lo.iter().zip(&b.hi).map(|(l, h)| 0.5 * (l + h)).collect())
                .unwrap_or_default();
            let mut bc = BatteryConfig::new(x0.clone(), base);
            bc.mc = mc;
            let b = estimate_battery(spec, &bc)?;
            r.extend(report::battery_report(&b));
            b.passed
        }
    };
    Ok(ok)
}

/// Interior nodes at least two cells from the faces, on a coarse lattice of
/// times and states.
fn viscosity_points(surface: &ValueSurface<f64>) -> Vec<(usize, usize)> {
    let steps = surface.tgrid.steps;
    let nodes = surface.nodes();
    let margin = surface.margin()[0].max(2);
    let inner: Vec<usize> = (margin..nodes.saturating_sub(margin)).collect();
    let stride = (inner.len() / 8).max(1);
    let mut pts = Vec::new();
    for i in [0, steps / 4, steps / 2, 3 * steps / 4] {
        for &j in inner.iter().step_by(stride) {
            pts.push((i, j));
        }
    }
    pts.dedup();
    pts
}

/// Constant controls at the anchors (or the whole grid when there are none)
/// and jumps of 0.1 and 0.5 per push column.
fn dpp_family(spec: &ProblemSpec<f64>) -> DppFamily<f64> {
    let controls: Vec<Vec<f64>> = if spec.controls.anchors.is_empty() {
        spec.control_grid().iter().map(<[f64]>::to_vec).collect()
    } else {
        spec.controls.anchors.clone()
    };
    let m = spec.dims.m;
    let jumps = if (0..m).all(|j| (0..spec.dims.n).all(|i| spec.g(i, j) == 0.0)) {
        Vec::new()
    } else {
        [0.1, 0.5].iter().map(|h| vec![*h; m]).collect()
    };
    DppFamily { controls, jumps }
}

fn oracle(cfg: &RunConfig, spec: &ProblemSpec<f64>, w: &mut Writer, r: &mut KvReport) -> Result<bool, CliError> {
    let ocfg = DpOracleConfig::auto(spec, cfg.lo, cfg.hi, cfg.oracle_dx, spec.control_grid())?;
    let o = dp_oracle(spec, &ocfg)?;
    w.surface("oracle.csv", &o)?;
    let pde = solve(cfg, spec)?;
    let times: Vec<f64> = (0..=4).map(|i| cfg.horizon * i as f64 / 4.0).collect();
    let gap = surface_gap(&o, &pde, &times);
    r.push("oracle_time_steps", ocfg.tgrid.steps);
    r.push("oracle_space_nodes", ocfg.sgrid.len());
    r.scalar("oracle_value_at_x0", o.value_at(0.0, &[cfg.x0]).unwrap_or(f64::NAN));
    r.scalar("pde_value_at_x0", pde.value_at(0.0, &[cfg.x0]).unwrap_or(f64::NAN));
    r.scalar("oracle_gap", gap);
    r.scalar("oracle_gap_tol", ORACLE_GAP_TOL);
    r.flag("oracle", gap <= ORACLE_GAP_TOL);
    Ok(gap <= ORACLE_GAP_TOL)
}
