//! Inaction region and the jump inequality `u(t,x) <= u(t, x + Gh) + K·h`.

use crate::grid::SpaceGrid;
use crate::hjb::ValueSurface;
use crate::model::ProblemSpec;
use crate::scalar::{lit, Scalar};

/// Per node: `Some(true)` inaction, `Some(false)` action, `None` where no push
/// stays inside the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct InactionMask<S> {
    /// `(steps+1) × nodes`, aligned with the surface values.
    pub mask: Vec<Option<bool>>,
    /// Smallest normalized push margin per node (`+inf` where undefined).
    pub margin: Vec<S>,
    pub nodes: usize,
    pub tol: S,
}

impl<S: Scalar> InactionMask<S> {
    #[inline]
    pub fn get(&self, t_index: usize, node: usize) -> Option<bool> {
        self.mask[t_index * self.nodes + node]
    }

    /// `(inaction, action)` counts over the given nodes on every slice.
    pub fn counts(&self, nodes: &[usize]) -> (usize, usize) {
        let slices = self.mask.len() / self.nodes;
        let mut c = (0, 0);
        for i in 0..slices {
            for &j in nodes {
                match self.get(i, j) {
                    Some(true) => c.0 += 1,
                    Some(false) => c.1 += 1,
                    None => {}
                }
            }
        }
        c
    }
}

/// Default classification tolerance `2·dx·max K`.
pub fn default_inaction_tol<S: Scalar>(spec: &ProblemSpec<S>, grid: &SpaceGrid<S>) -> S {
    let dx = (0..grid.dim()).map(|d| grid.dx(d)).fold(S::zero(), S::max);
    lit::<S>(2.0) * dx * spec.k_max()
}

/// Push `G_col · r·h_unit` for `r = 1, 2, ...` where `h_unit` moves one cell
/// along the dominant axis of the column.
fn column_unit<S: Scalar>(spec: &ProblemSpec<S>, grid: &SpaceGrid<S>, col: usize) -> Option<S> {
    let g = spec.g_column(col);
    let scale = (0..grid.dim()).map(|k| g[k].abs() / grid.dx(k)).fold(S::zero(), S::max);
    if scale == S::zero() {
        None
    } else {
        Some(S::one() / scale)
    }
}

/// Classifies each node by the normalized margin
/// `min_h [u(t, x+Gh) + K·h - u(t,x)] / |h|` over in-grid pushes along single
/// columns, compared against `tol`.
pub fn extract_inaction_region<S: Scalar>(surface: &ValueSurface<S>, spec: &ProblemSpec<S>, tol: Option<S>) -> InactionMask<S> {
    let grid = &surface.sgrid;
    let tol = tol.unwrap_or_else(|| default_inaction_tol(spec, grid));
    let nodes = surface.nodes();
    let slices = surface.tgrid.steps + 1;
    let n = grid.dim();
    let units: Vec<(usize, S)> = (0..spec.dims.m).filter_map(|c| column_unit(spec, grid, c).map(|h| (c, h))).collect();
    let mut mask = vec![None; slices * nodes];
    let mut margin = vec![S::infinity(); slices * nodes];
    let mut x = vec![S::zero(); n];
    let mut y = vec![S::zero(); n];
    for i in 0..slices {
        let u = surface.slice(i);
        for j in 0..nodes {
            grid.point(j, &mut x);
            let mut best = S::infinity();
            let mut any = false;
            for &(col, unit) in &units {
                let gcol = spec.g_column(col);
                for r in 1.. {
                    let h = unit * S::from_usize_lossy(r);
                    for k in 0..n {
                        y[k] = x[k] + gcol[k] * h;
                    }
                    let Some(val) = grid.interpolate(u, &y) else { break };
                    any = true;
                    best = best.min((val + spec.cost[col] * h - u[j]) / h);
                }
            }
            if any {
                mask[i * nodes + j] = Some(best > tol);
                margin[i * nodes + j] = best;
            }
        }
    }
    InactionMask { mask, margin, nodes, tol }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JumpCheck<S> {
    /// `max [u(t,x) - u(t,x+Gh) - K·h]` over evaluated (slice, node, h).
    pub max_violation: S,
    /// `(t_index, node, sample)` of the maximum.
    pub argmax: Option<(usize, usize, usize)>,
    pub evaluated: usize,
}

/// Evaluates the jump inequality on every slice except the terminal one (which
/// is `Φ` itself) for each sample `h`. Grid-aligned pushes read the target node
/// directly; others interpolate.
pub fn jump_inequality_check<S: Scalar>(surface: &ValueSurface<S>, spec: &ProblemSpec<S>, h_samples: &[Vec<S>]) -> JumpCheck<S> {
    let grid = &surface.sgrid;
    let n = grid.dim();
    let m = spec.dims.m;
    let nodes = surface.nodes();
    let mut out = JumpCheck { max_violation: S::neg_infinity(), argmax: None, evaluated: 0 };
    let mut x = vec![S::zero(); n];
    let mut y = vec![S::zero(); n];
    for (si, h) in h_samples.iter().enumerate() {
        assert_eq!(h.len(), m, "jump sample must have m entries");
        let mut cost = S::zero();
        for c in 0..m {
            cost += spec.cost[c] * h[c];
        }
        let mut disp = vec![S::zero(); n];
        for (k, dk) in disp.iter_mut().enumerate() {
            for c in 0..m {
                *dk += spec.g(k, c) * h[c];
            }
        }
        // integer node offsets when the displacement is grid-aligned
        let offsets: Option<Vec<isize>> = (0..n)
            .map(|k| {
                let s = disp[k] / grid.dx(k);
                let r = s.round();
                if (s - r).abs() < lit(1e-9) {
                    r.to_isize()
                } else {
                    None
                }
            })
            .collect();
        for i in 0..surface.tgrid.steps {
            let u = surface.slice(i);
            for j in 0..nodes {
                let target = match &offsets {
                    Some(off) => {
                        let idx = grid.unflatten(j);
                        let mut t = [0usize; 2];
                        let mut inside = true;
                        for k in 0..n {
                            let p = idx[k] as isize + off[k];
                            if p < 0 || p >= grid.nodes[k] as isize {
                                inside = false;
                                break;
                            }
                            t[k] = p as usize;
                        }
                        if !inside {
                            continue;
                        }
                        u[grid.flatten(&t[..n])]
                    }
                    None => {
                        grid.point(j, &mut x);
                        for k in 0..n {
                            y[k] = x[k] + disp[k];
                        }
                        match grid.interpolate(u, &y) {
                            Some(v) => v,
                            None => continue,
                        }
                    }
                };
                let viol = u[j] - (target + cost);
                out.evaluated += 1;
                if viol > out.max_violation {
                    out.max_violation = viol;
                    out.argmax = Some((i, j, si));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TimeGrid;
    use crate::model::builtin_linear_fk;

    fn surface(f: impl Fn(f64) -> f64) -> ValueSurface<f64> {
        let tg = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let sg = SpaceGrid::uniform_1d(-1.0, 1.0, 0.05).unwrap();
        ValueSurface::from_fn(tg, sg, |_, x| f(x[0]))
    }

    #[test]
    fn tight_constraint_is_action() {
        let spec = builtin_linear_fk::<f64>(0.0, 1.0, 1.0).unwrap();
        let m = extract_inaction_region(&surface(|x| -x), &spec, None);
        let interior: Vec<usize> = (1..40).collect();
        let (ina, act) = m.counts(&interior);
        assert_eq!(ina, 0);
        assert!(act > 0);
        // last node has no in-grid push
        assert_eq!(m.get(0, 40), None);
    }

    #[test]
    fn slack_convex_is_inaction() {
        let spec = builtin_linear_fk::<f64>(0.0, 1.0, 1.0).unwrap();
        let m = extract_inaction_region(&surface(|x| 0.25 * x * x), &spec, None);
        let (ina, act) = m.counts(&(0..40).collect::<Vec<_>>());
        assert_eq!(act, 0);
        assert_eq!(ina, 3 * 40);
    }

    #[test]
    fn zero_push_contributes_zero() {
        let spec = builtin_linear_fk::<f64>(0.0, 1.0, 1.0).unwrap();
        let c = jump_inequality_check(&surface(|x| (3.0 * x).sin()), &spec, &[vec![0.0]]);
        assert_eq!(c.max_violation, 0.0);
    }
}
