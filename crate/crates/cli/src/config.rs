//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment. Keys are strict: unknown keys,
//! keys that do not apply to the selected problem and repeated keys are all
//! rejected. [`RunConfig::render`] writes every field, so
//! `parse_config(&c.render()) == Ok(c)`.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::CliError;

pub const REQUIRED_KEYS: [&str; 2] = ["command", "problem"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Simulate,
    Check,
    Example,
    Oracle,
}

impl Command {
    pub const ALL: [Command; 5] = [Command::Solve, Command::Simulate, Command::Check, Command::Example, Command::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Self::Solve => "solve",
            Self::Simulate => "simulate",
            Self::Check => "check",
            Self::Example => "example",
            Self::Oracle => "oracle",
        }
    }
}

impl FromStr for Command {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| "expected one of solve|simulate|check|example|oracle".into())
    }
}

/// Builtin problems and their numeric parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Problem {
    /// Push `g`, cost `k`.
    Section4 { g: f64, k: f64 },
    /// Drift `a x + b0`, volatility `sigma0`, generator `mu z`.
    Wang { a: f64, b0: f64, sigma0: f64, mu: f64 },
    /// Running cost `c`, push `g0`, cost `k0`.
    LinearFk { c: f64, g0: f64, k0: f64 },
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Section4 { .. } => "section4",
            Self::Wang { .. } => "wang",
            Self::LinearFk { .. } => "linear-fk",
        }
    }

    fn default_for(name: &str) -> Option<Self> {
        match name {
            "section4" => Some(Self::Section4 { g: 1.0, k: 1.0 }),
            "wang" => Some(Self::Wang { a: 0.0, b0: 0.0, sigma0: 1.0, mu: 0.0 }),
            "linear-fk" => Some(Self::LinearFk { c: 0.5, g0: 1.0, k0: 1.0 }),
            _ => None,
        }
    }

    pub fn param_keys(&self) -> &'static [&'static str] {
        match self {
            Self::Section4 { .. } => &["g", "k"],
            Self::Wang { .. } => &["a", "b0", "sigma0", "mu"],
            Self::LinearFk { .. } => &["c", "g0", "k0"],
        }
    }

    fn params(&self) -> Vec<f64> {
        match *self {
            Self::Section4 { g, k } => vec![g, k],
            Self::Wang { a, b0, sigma0, mu } => vec![a, b0, sigma0, mu],
            Self::LinearFk { c, g0, k0 } => vec![c, g0, k0],
        }
    }

    fn set(&mut self, key: &str, v: f64) {
        match (self, key) {
            (Self::Section4 { g, .. }, "g") => *g = v,
            (Self::Section4 { k, .. }, "k") => *k = v,
            (Self::Wang { a, .. }, "a") => *a = v,
            (Self::Wang { b0, .. }, "b0") => *b0 = v,
            (Self::Wang { sigma0, .. }, "sigma0") => *sigma0 = v,
            (Self::Wang { mu, .. }, "mu") => *mu = v,
            (Self::LinearFk { c, .. }, "c") => *c = v,
            (Self::LinearFk { g0, .. }, "g0") => *g0 = v,
            (Self::LinearFk { k0, .. }, "k0") => *k0 = v,
            _ => unreachable!("key checked against param_keys"),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        match *self {
            Self::Section4 { g, k } => {
                nonzero("g", g)?;
                positive("k", k)
            }
            Self::Wang { sigma0, .. } => positive("sigma0", sigma0),
            Self::LinearFk { k0, .. } => positive("k0", k0),
        }
    }
}

/// Check selection of the `check` command.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CheckKind {
    Jump,
    Viscosity,
    Dpp,
    Verification,
    Cross,
    Battery,
}

impl CheckKind {
    pub const ALL: [CheckKind; 6] = [Self::Jump, Self::Viscosity, Self::Dpp, Self::Verification, Self::Cross, Self::Battery];

    pub fn name(self) -> &'static str {
        match self {
            Self::Jump => "jump",
            Self::Viscosity => "viscosity",
            Self::Dpp => "dpp",
            Self::Verification => "verification",
            Self::Cross => "cross",
            Self::Battery => "battery",
        }
    }
}

/// Output time grid: `auto` uses [`AUTO_STEPS`] steps over the horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dt {
    Auto,
    Fixed(f64),
}

pub const AUTO_STEPS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub problem: Problem,
    pub horizon: f64,
    pub lo: f64,
    pub hi: f64,
    pub dx: f64,
    pub dt: Dt,
    pub cfl: f64,
    /// `extrapolate` or `reflect`.
    pub boundary: String,
    pub paths: usize,
    pub seed: u64,
    pub degree: usize,
    /// Euler steps per unit time in Monte Carlo runs.
    pub mc_steps: usize,
    pub x0: f64,
    /// `(t, x)` evaluated by `example`.
    pub point: (f64, f64),
    pub checks: BTreeSet<CheckKind>,
    pub oracle_dx: f64,
    /// Paths written to `paths.csv` by `simulate`.
    pub csv_paths: usize,
    /// Worker threads; 0 uses all cores.
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Documented defaults for everything but the two required keys.
    pub fn new(command: Command, problem: Problem) -> Self {
        Self {
            command,
            problem,
            horizon: 1.0,
            lo: -2.0,
            hi: 2.0,
            dx: 0.02,
            dt: Dt::Auto,
            cfl: 0.9,
            boundary: "extrapolate".into(),
            paths: 20_000,
            seed: 1,
            degree: 3,
            mc_steps: 50,
            x0: 1.0,
            point: (0.0, 1.0),
            checks: [CheckKind::Jump, CheckKind::Viscosity].into_iter().collect(),
            oracle_dx: 0.05,
            csv_paths: 100,
            threads: 0,
            out_dir: None,
        }
    }

    /// Output time steps.
    pub fn steps(&self) -> usize {
        match self.dt {
            Dt::Auto => AUTO_STEPS,
            Dt::Fixed(dt) => ((self.horizon / dt).round() as usize).max(1),
        }
    }

    pub fn render(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    fn pairs(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("command".into(), self.command.name().into()),
            ("problem".into(), self.problem.name().into()),
        ];
        for (k, v) in self.problem.param_keys().iter().zip(self.problem.params()) {
            kv.push((k.to_string(), num(v)));
        }
        let checks: Vec<&str> = self.checks.iter().map(|c| c.name()).collect();
        kv.extend([
            ("horizon".into(), num(self.horizon)),
            ("lo".into(), num(self.lo)),
            ("hi".into(), num(self.hi)),
            ("dx".into(), num(self.dx)),
            ("dt".into(), match self.dt {
                Dt::Auto => "auto".into(),
                Dt::Fixed(v) => num(v),
            }),
            ("cfl".into(), num(self.cfl)),
            ("boundary".into(), self.boundary.clone()),
            ("paths".into(), self.paths.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("degree".into(), self.degree.to_string()),
            ("mc_steps".into(), self.mc_steps.to_string()),
            ("x0".into(), num(self.x0)),
            ("point".into(), format!("{},{}", num(self.point.0), num(self.point.1))),
            ("checks".into(), if checks.is_empty() { "none".into() } else { checks.join(",") }),
            ("oracle_dx".into(), num(self.oracle_dx)),
            ("csv_paths".into(), self.csv_paths.to_string()),
            ("threads".into(), self.threads.to_string()),
        ]);
        if let Some(dir) = &self.out_dir {
            kv.push(("out_dir".into(), dir.display().to_string()));
        }
        kv
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

/// Shortest decimal that parses back to the same `f64`.
fn num(v: f64) -> String {
    format!("{v:?}")
}

const GENERAL_KEYS: [&str; 19] = [
    "horizon", "lo", "hi", "dx", "dt", "cfl", "boundary", "paths", "seed", "degree", "mc_steps", "x0", "point", "checks",
    "oracle_dx", "csv_paths", "threads", "out_dir", "all",
];

/// Splits text into `(key, value)` pairs, rejecting malformed lines and repeats.
pub fn lex(text: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CliError::Syntax { line: no + 1, text: raw.to_string() })?;
        let (k, v) = (k.trim(), v.trim());
        if pairs.iter().any(|(seen, _)| seen == k) {
            return Err(CliError::Duplicate(k.to_string()));
        }
        pairs.push((k.to_string(), v.to_string()));
    }
    Ok(pairs)
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    from_pairs(&lex(text)?)
}

/// Typed validation of raw pairs. `all = true` selects every check.
pub fn from_pairs(pairs: &[(String, String)]) -> Result<RunConfig, CliError> {
    let get = |k: &str| pairs.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| get(k).is_none()).collect();
    if !missing.is_empty() {
        return Err(CliError::Missing(missing.join(", ")));
    }
    let command: Command = typed("command", get("command").unwrap())?;
    let pname = get("problem").unwrap();
    let mut problem = Problem::default_for(pname)
        .ok_or_else(|| CliError::invalid("problem", pname, "expected one of section4|wang|linear-fk"))?;
    for (k, v) in pairs {
        let known = REQUIRED_KEYS.contains(&k.as_str()) || GENERAL_KEYS.contains(&k.as_str());
        if known {
            continue;
        }
        if problem.param_keys().contains(&k.as_str()) {
            problem.set(k, finite(k, typed(k, v)?)?);
        } else if ["g", "k", "a", "b0", "sigma0", "mu", "c", "g0", "k0"].contains(&k.as_str()) {
            return Err(CliError::invalid(k, v, &format!("not a parameter of problem {}", problem.name())));
        } else {
            return Err(CliError::Unknown(k.clone()));
        }
    }
    problem.validate()?;

    let mut c = RunConfig::new(command, problem);
    let f = |k: &str, slot: &mut f64| -> Result<(), CliError> {
        if let Some(v) = get(k) {
            *slot = finite(k, typed(k, v)?)?;
        }
        Ok(())
    };
    f("horizon", &mut c.horizon)?;
    f("lo", &mut c.lo)?;
    f("hi", &mut c.hi)?;
    f("dx", &mut c.dx)?;
    f("cfl", &mut c.cfl)?;
    f("x0", &mut c.x0)?;
    f("oracle_dx", &mut c.oracle_dx)?;
    if let Some(v) = get("dt") {
        c.dt = if v == "auto" { Dt::Auto } else { Dt::Fixed(finite("dt", typed("dt", v)?)?) };
    }
    if let Some(v) = get("boundary") {
        if !["extrapolate", "reflect"].contains(&v) {
            return Err(CliError::invalid("boundary", v, "expected extrapolate|reflect"));
        }
        c.boundary = v.to_string();
    }
    let u = |k: &str, slot: &mut usize| -> Result<(), CliError> {
        if let Some(v) = get(k) {
            *slot = typed(k, v)?;
        }
        Ok(())
    };
    u("paths", &mut c.paths)?;
    u("degree", &mut c.degree)?;
    u("mc_steps", &mut c.mc_steps)?;
    u("csv_paths", &mut c.csv_paths)?;
    u("threads", &mut c.threads)?;
    if let Some(v) = get("seed") {
        c.seed = typed("seed", v)?;
    }
    if let Some(v) = get("point") {
        let (t, x) = v.split_once(',').ok_or_else(|| CliError::invalid("point", v, "expected t,x"))?;
        c.point = (finite("point", typed("point", t.trim())?)?, finite("point", typed("point", x.trim())?)?);
    }
    if let Some(v) = get("checks") {
        c.checks = parse_checks(v)?;
    }
    if let Some(v) = get("all") {
        if typed::<bool>("all", v)? {
            c.checks = CheckKind::ALL.into_iter().collect();
        }
    }
    if let Some(v) = get("out_dir") {
        if v.is_empty() {
            return Err(CliError::invalid("out_dir", v, "must not be empty"));
        }
        c.out_dir = Some(PathBuf::from(v));
    }
    validate(&c)?;
    Ok(c)
}

fn parse_checks(v: &str) -> Result<BTreeSet<CheckKind>, CliError> {
    match v {
        "none" => return Ok(BTreeSet::new()),
        "all" => return Ok(CheckKind::ALL.into_iter().collect()),
        _ => {}
    }
    let mut out = BTreeSet::new();
    for name in v.split(',').map(str::trim) {
        let kind = CheckKind::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| CliError::invalid("checks", name, "expected all|none or a list of jump,viscosity,dpp,verification,cross,battery"))?;
        out.insert(kind);
    }
    Ok(out)
}

/// Documented bounds of every numeric field.
fn validate(c: &RunConfig) -> Result<(), CliError> {
    let bound = |key: &str, ok: bool, value: String, range: &str| {
        if ok {
            Ok(())
        } else {
            Err(CliError::invalid(key, &value, &format!("must lie in {range}")))
        }
    };
    bound("horizon", c.horizon > 0.0 && c.horizon <= 100.0, num(c.horizon), "(0, 100]")?;
    bound("hi", c.hi > c.lo, num(c.hi), "(lo, inf)")?;
    bound("dx", c.dx > 0.0 && c.dx <= 1.0, num(c.dx), "(0, 1]")?;
    bound("dx", (c.hi - c.lo) / c.dx >= 4.0, num(c.dx), "(0, (hi - lo) / 4]")?;
    if let Dt::Fixed(dt) = c.dt {
        bound("dt", dt > 0.0 && dt <= c.horizon, num(dt), "(0, horizon] or auto")?;
    }
    bound("cfl", c.cfl > 0.0 && c.cfl <= 1.0, num(c.cfl), "(0, 1]")?;
    bound("paths", (2..=10_000_000).contains(&c.paths), c.paths.to_string(), "[2, 10000000]")?;
    bound("degree", c.degree <= 8, c.degree.to_string(), "[0, 8]")?;
    bound("mc_steps", (1..=100_000).contains(&c.mc_steps), c.mc_steps.to_string(), "[1, 100000]")?;
    bound("x0", c.x0 > c.lo && c.x0 < c.hi, num(c.x0), "(lo, hi)")?;
    bound("point", c.point.0 >= 0.0 && c.point.0 <= c.horizon && c.point.1 > c.lo && c.point.1 < c.hi, format!("{},{}", num(c.point.0), num(c.point.1)), "[0, horizon] x (lo, hi)")?;
    bound("oracle_dx", c.oracle_dx > 0.0 && c.oracle_dx <= 1.0, num(c.oracle_dx), "(0, 1]")?;
    bound("csv_paths", c.csv_paths <= 100_000, c.csv_paths.to_string(), "[0, 100000]")?;
    bound("threads", c.threads <= 1024, c.threads.to_string(), "[0, 1024]")?;
    Ok(())
}

fn typed<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::invalid(key, v, &format!("expected {}", std::any::type_name::<T>())))
}

fn finite(key: &str, v: f64) -> Result<f64, CliError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::invalid(key, &num(v), "must be finite"))
    }
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 {
        Ok(())
    } else {
        Err(CliError::invalid(key, &num(v), "must be positive"))
    }
}

fn nonzero(key: &str, v: f64) -> Result<(), CliError> {
    if v != 0.0 {
        Ok(())
    } else {
        Err(CliError::invalid(key, &num(v), "must be nonzero"))
    }
}
