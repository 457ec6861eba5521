//! Text dumps of surfaces and masks. Floats are written with enough digits to
//! round-trip exactly.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::hjb::region::InactionMask;
use crate::hjb::ValueSurface;
use crate::scalar::Scalar;

fn header(n: usize, last: &str) -> String {
    let mut h = String::from("t");
    for i in 1..=n {
        h.push_str(&format!(",x_{i}"));
    }
    h.push(',');
    h.push_str(last);
    h
}

pub fn format_scalar<S: Scalar>(x: S) -> String {
    format!("{:.*e}", S::round_trip_digits() - 1, x)
}

pub fn parse_scalar<S: Scalar>(s: &str) -> Result<S> {
    S::from_str_radix(s.trim(), 10).map_err(|_| Error::Parse(format!("not a number: '{s}'")))
}

/// Writes `t,x_1[,x_2],u`, one row per (time node, space node).
pub fn write_surface_csv<S: Scalar, W: Write>(surface: &ValueSurface<S>, mut w: W) -> Result<()> {
    let n = surface.sgrid.dim();
    writeln!(w, "{}", header(n, "u"))?;
    let pts = surface.sgrid.points();
    for (i, t) in surface.tgrid.nodes().enumerate() {
        let ts = format_scalar(t);
        for (j, p) in pts.iter().enumerate() {
            write!(w, "{ts}")?;
            for &x in p {
                write!(w, ",{}", format_scalar(x))?;
            }
            writeln!(w, ",{}", format_scalar(surface.value(i, j)))?;
        }
    }
    Ok(())
}

/// Reads a surface written by [`write_surface_csv`]. Grids are rebuilt from the
/// distinct coordinates; scheme metadata is not stored in the file.
pub fn read_surface_csv<S: Scalar, R: BufRead>(r: R) -> Result<ValueSurface<S>> {
    let mut lines = r.lines();
    let head = lines.next().ok_or_else(|| Error::Parse("empty surface file".into()))??;
    let cols: Vec<&str> = head.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "t" || cols[cols.len() - 1] != "u" {
        return Err(Error::Parse(format!("unexpected header '{head}'")));
    }
    let n = cols.len() - 2;
    if n > 2 {
        return Err(Error::Parse("surfaces have at most 2 space dimensions".into()));
    }
    let mut times: Vec<S> = Vec::new();
    let mut axes: Vec<Vec<S>> = vec![Vec::new(); n];
    let mut values = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != n + 2 {
            return Err(Error::Parse(format!("line {}: expected {} fields", ln + 2, n + 2)));
        }
        let t: S = parse_scalar(f[0])?;
        if times.last() != Some(&t) {
            times.push(t);
        }
        if times.len() == 1 {
            for k in 0..n {
                let x: S = parse_scalar(f[1 + k])?;
                if !axes[k].contains(&x) {
                    axes[k].push(x);
                }
            }
        }
        values.push(parse_scalar(f[n + 1])?);
    }
    if times.len() < 2 {
        return Err(Error::Parse("surface needs at least two time slices".into()));
    }
    let tgrid = TimeGrid::new(times[0], times[times.len() - 1], times.len() - 1)?;
    let sgrid = SpaceGrid::new(
        axes.iter().map(|a| a[0]).collect(),
        axes.iter().map(|a| a[a.len() - 1]).collect(),
        axes.iter().map(|a| a.len()).collect(),
    )?;
    ValueSurface::from_values(tgrid, sgrid, values)
}

/// Writes `t,x_1[,x_2],inaction` (0/1) for nodes where the mask is defined.
pub fn write_mask_csv<S: Scalar, W: Write>(surface: &ValueSurface<S>, mask: &InactionMask<S>, mut w: W) -> Result<()> {
    let n = surface.sgrid.dim();
    writeln!(w, "{}", header(n, "inaction"))?;
    let pts = surface.sgrid.points();
    for (i, t) in surface.tgrid.nodes().enumerate() {
        for (j, p) in pts.iter().enumerate() {
            if let Some(flag) = mask.get(i, j) {
                write!(w, "{}", format_scalar(t))?;
                for &x in p {
                    write!(w, ",{}", format_scalar(x))?;
                }
                writeln!(w, ",{}", u8::from(flag))?;
            }
        }
    }
    Ok(())
}

/// Scheme metadata as `key: value` lines.
pub fn scheme_metadata<S: Scalar>(surface: &ValueSurface<S>) -> Vec<(String, String)> {
    let m = &surface.meta;
    let mut kv = vec![
        ("time_steps".to_string(), surface.tgrid.steps.to_string()),
        ("space_nodes".to_string(), format!("{:?}", surface.sgrid.nodes)),
        ("substep_dt".to_string(), format_scalar(m.dt)),
        ("substeps".to_string(), m.substeps.to_string()),
        ("cfl".to_string(), format_scalar(m.cfl)),
        ("control_grid_size".to_string(), m.control_count.to_string()),
        ("boundary".to_string(), m.boundary.name().to_string()),
        ("margin_nodes".to_string(), format!("{:?}", surface.margin())),
    ];
    for d in 0..surface.sgrid.dim() {
        kv.push((format!("dx_{}", d + 1), format_scalar(surface.sgrid.dx(d))));
    }
    kv
}
