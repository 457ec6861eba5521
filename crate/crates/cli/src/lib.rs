//! Command-line front end for the singular-control solver: builtin problems,
//! flat key-value configuration and CSV/text artifacts.

pub mod config;
pub mod error;
pub mod run;

pub use config::{parse_config, CheckKind, Command, Dt, Problem, RunConfig};
pub use error::CliError;
pub use run::{run, Outcome};

/// Applies `overrides` on top of `base`, replacing keys already present.
pub fn merge_pairs(mut base: Vec<(String, String)>, overrides: Vec<(String, String)>) -> Vec<(String, String)> {
    for (k, v) in overrides {
        match base.iter_mut().find(|(key, _)| *key == k) {
            Some(slot) => slot.1 = v,
            None => base.push((k, v)),
        }
    }
    base
}
