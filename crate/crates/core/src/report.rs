//! `key: value` text reports.

use std::fmt::Write as _;

use crate::bsde::ComparisonResult;
use crate::hjb::checks::{Condition, DppResult, VerificationReport, ViscosityReport};
use crate::hjb::io::format_scalar;
use crate::hjb::region::JumpCheck;
use crate::scalar::Scalar;
use crate::verification::{BatteryReport, CrossCheckReport};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvReport {
    pub entries: Vec<(String, String)>,
}

impl KvReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.push((key.into(), value.to_string()));
    }

    pub fn scalar<S: Scalar>(&mut self, key: impl Into<String>, value: S) {
        self.push(key, format_scalar(value));
    }

    pub fn flag(&mut self, key: impl Into<String>, ok: bool) {
        self.push(key, if ok { "pass" } else { "fail" });
    }

    pub fn extend(&mut self, other: KvReport) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k}: {v}");
        }
        out
    }

    /// Parses `key: value` lines; blank lines are skipped.
    pub fn parse(text: &str) -> Option<Self> {
        let mut r = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(": ")?;
            r.push(k, v);
        }
        Some(r)
    }
}

fn condition<S: Scalar>(r: &mut KvReport, name: &str, c: &Condition<S>) {
    r.flag(name, c.passed);
    r.scalar(format!("{name}_measured"), c.measured);
    r.scalar(format!("{name}_tol"), c.tol);
}

pub fn jump_report<S: Scalar>(prefix: &str, c: &JumpCheck<S>, tol: S) -> KvReport {
    let mut r = KvReport::new();
    r.scalar(format!("{prefix}_max_violation"), c.max_violation);
    r.scalar(format!("{prefix}_tol"), tol);
    r.push(format!("{prefix}_evaluated"), c.evaluated);
    r.flag(prefix, c.max_violation <= tol);
    r
}

pub fn viscosity_report<S: Scalar>(v: &ViscosityReport<S>) -> KvReport {
    let mut r = KvReport::new();
    r.scalar("viscosity_max_residual", v.max_abs_residual);
    r.scalar("viscosity_tol", v.tol);
    r.push("viscosity_points", v.rows.len());
    r.flag("viscosity", v.passed);
    r
}

pub fn dpp_report<S: Scalar>(prefix: &str, d: &DppResult<S>) -> KvReport {
    let mut r = KvReport::new();
    r.scalar(format!("{prefix}_u"), d.u);
    r.scalar(format!("{prefix}_residual"), d.residual);
    r.scalar(format!("{prefix}_tol"), d.tolerance);
    r.scalar(format!("{prefix}_inf_side_excess"), d.inf_side_excess);
    let best = &d.members[d.argmin];
    r.push(format!("{prefix}_argmin_control"), format!("{:?}", best.control));
    r.push(format!("{prefix}_argmin_jump"), format!("{:?}", best.jump));
    r.flag(prefix, d.passed);
    r
}

pub fn verification_report<S: Scalar>(v: &VerificationReport<S>) -> KvReport {
    let mut r = KvReport::new();
    condition(&mut r, "verification_v11", &v.v11);
    condition(&mut r, "verification_v22", &v.v22);
    condition(&mut r, "verification_v33", &v.v33);
    condition(&mut r, "verification_v44", &v.v44);
    condition(&mut r, "verification_v55", &v.v55);
    r.scalar("verification_value", v.value);
    r.scalar("verification_cost", v.cost);
    r.scalar("verification_cost_se", v.cost_std_error);
    r.push("verification_jumps_applied", v.jumps_applied);
    r.push("verification_out_of_grid", v.out_of_grid);
    r.flag("verification", v.passed);
    r
}

pub fn comparison_report<S: Scalar>(c: &ComparisonResult<S>) -> KvReport {
    let mut r = KvReport::new();
    r.scalar("comparison_y1", c.y1);
    r.scalar("comparison_y2", c.y2);
    r.scalar("comparison_se", c.std_error);
    r.flag("comparison", c.passed);
    r
}

pub fn battery_report<S: Scalar>(b: &BatteryReport<S>) -> KvReport {
    let mut r = KvReport::new();
    for (d, e) in &b.stability {
        r.scalar(format!("stability_delta_{d}"), *e);
    }
    r.scalar("stability_constant", b.stability_constant);
    r.flag("stability_monotone", b.stability_monotone);
    for g in &b.growth {
        r.scalar(format!("growth_state_ratio_x{:?}", g.x), g.state_ratio);
    }
    r.scalar("growth_spread", b.growth_spread);
    r.scalar("growth_bound", b.growth_bound);
    r.flag("growth", b.growth_ok);
    for (d, e) in &b.frozen_gap {
        r.scalar(format!("frozen_gap_delta_{d}"), *e);
    }
    r.scalar("frozen_slope", b.frozen_slope);
    r.flag("frozen", b.frozen_ok);
    r.flag("battery", b.passed);
    r
}

pub fn cross_check_report<S: Scalar>(c: &CrossCheckReport<S>) -> KvReport {
    let mut r = KvReport::new();
    for (i, row) in c.rows.iter().enumerate() {
        r.scalar(format!("cross_{i}_pde"), row.pde);
        r.scalar(format!("cross_{i}_oracle"), row.oracle);
        r.scalar(format!("cross_{i}_mc"), row.mc);
        r.scalar(format!("cross_{i}_mc_se"), row.mc_std_error);
        r.flag(format!("cross_{i}"), row.passed);
    }
    r.flag("cross_check", c.passed);
    r
}

/// Per-point rows `t,x_1[,x_2],pde,oracle,mc,mc_se,passed`.
pub fn cross_check_csv<S: Scalar>(c: &CrossCheckReport<S>) -> String {
    let n = c.rows.first().map_or(1, |r| r.x.len());
    let mut out = String::from("t");
    for i in 1..=n {
        let _ = write!(out, ",x_{i}");
    }
    out.push_str(",pde,oracle,mc,mc_se,passed\n");
    for row in &c.rows {
        let _ = write!(out, "{}", format_scalar(row.t));
        for &x in &row.x {
            let _ = write!(out, ",{}", format_scalar(x));
        }
        let _ = writeln!(
            out,
            ",{},{},{},{},{}",
            format_scalar(row.pde),
            format_scalar(row.oracle),
            format_scalar(row.mc),
            format_scalar(row.mc_std_error),
            u8::from(row.passed)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut r = KvReport::new();
        r.push("a", 1);
        r.scalar("b", 0.1f64);
        r.flag("c", true);
        let back = KvReport::parse(&r.render()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.get("c"), Some("pass"));
    }
}
