use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use shjb_cli::config::{from_pairs, lex};
use shjb_cli::{merge_pairs, run, CliError, RunConfig};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Solve,
    Simulate,
    Check,
    Example,
    Oracle,
}

/// Singular stochastic control solver: HJB variational inequality, Monte Carlo
/// cross-checks and structural tests on builtin problems.
///
/// Every flag mirrors a config-file key of the same name (dashes become
/// underscores); flags override the file. Artifacts go to --out-dir, else
/// $SHJB_OUT_DIR, else ./shjb-out. Exit status: 0 all checks pass, 2 a check
/// failed, 1 configuration or runtime error.
#[derive(Debug, Parser)]
#[command(name = "shjb", version)]
struct Cli {
    /// Pipeline to run (overrides `command` in the config file).
    #[arg(value_enum)]
    command: Option<Sub>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// section4 | wang | linear-fk
    #[arg(long)]
    problem: Option<String>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Run every check.
    #[arg(long)]
    all: bool,
    #[arg(long, allow_hyphen_values = true)]
    g: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    k: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    b0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    sigma0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mu: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    c: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    g0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    k0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    horizon: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<String>,
    /// Space step, in (0, 1] (default 0.02).
    #[arg(long, allow_hyphen_values = true)]
    dx: Option<String>,
    /// Output time step or `auto` (100 steps).
    #[arg(long, allow_hyphen_values = true)]
    dt: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    cfl: Option<String>,
    /// extrapolate | reflect
    #[arg(long)]
    boundary: Option<String>,
    /// Monte Carlo paths.
    #[arg(long, allow_hyphen_values = true)]
    paths: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    seed: Option<String>,
    /// Regression basis degree.
    #[arg(long, allow_hyphen_values = true)]
    degree: Option<String>,
    /// Euler steps per unit time.
    #[arg(long, allow_hyphen_values = true)]
    mc_steps: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    /// `t,x` for `example`.
    #[arg(long, allow_hyphen_values = true)]
    point: Option<String>,
    /// all | none | comma list of jump,viscosity,dpp,verification,cross,battery
    #[arg(long)]
    checks: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    oracle_dx: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    csv_paths: Option<String>,
    /// Worker threads (0 = all cores); results do not depend on it.
    #[arg(long, allow_hyphen_values = true)]
    threads: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Cli {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut kv = Vec::new();
        if let Some(c) = self.command {
            let name = c.to_possible_value().expect("no skipped variants").get_name().to_string();
            kv.push(("command".to_string(), name));
        }
        let flags = [
            ("problem", &self.problem),
            ("g", &self.g),
            ("k", &self.k),
            ("a", &self.a),
            ("b0", &self.b0),
            ("sigma0", &self.sigma0),
            ("mu", &self.mu),
            ("c", &self.c),
            ("g0", &self.g0),
            ("k0", &self.k0),
            ("horizon", &self.horizon),
            ("lo", &self.lo),
            ("hi", &self.hi),
            ("dx", &self.dx),
            ("dt", &self.dt),
            ("cfl", &self.cfl),
            ("boundary", &self.boundary),
            ("paths", &self.paths),
            ("seed", &self.seed),
            ("degree", &self.degree),
            ("mc_steps", &self.mc_steps),
            ("x0", &self.x0),
            ("point", &self.point),
            ("checks", &self.checks),
            ("oracle_dx", &self.oracle_dx),
            ("csv_paths", &self.csv_paths),
            ("threads", &self.threads),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                kv.push((k.to_string(), v.clone()));
            }
        }
        if let Some(d) = &self.out_dir {
            kv.push(("out_dir".to_string(), d.display().to_string()));
        }
        if self.all {
            kv.push(("all".to_string(), "true".to_string()));
        }
        kv
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let base = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::Io { context: path.display().to_string(), source: e })?;
            lex(&text)?
        }
        None => Vec::new(),
    };
    from_pairs(&merge_pairs(base, cli.overrides()))
}

fn execute(cfg: &RunConfig) -> Result<i32, CliError> {
    let outcome = run(cfg)?;
    for line in &outcome.stdout {
        println!("{line}");
    }
    Ok(outcome.exit_code())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if cli.print_config {
        print!("{}", cfg.render());
        return ExitCode::SUCCESS;
    }
    let result = if cfg.threads > 0 {
        match rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build() {
            Ok(pool) => pool.install(|| execute(&cfg)),
            Err(e) => {
                eprintln!("error: thread pool: {e}");
                return ExitCode::from(1);
            }
        }
    } else {
        execute(&cfg)
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
