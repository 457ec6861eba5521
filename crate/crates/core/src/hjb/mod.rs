//! Explicit monotone scheme for the gradient-constrained HJB variational inequality
//!
//! ```text
//! min( Du·G + K ,  u_t + min_v [ ½Tr(σσᵀD²u) + ⟨Du, b⟩ + f(t, x, u, Duσ, v) ] ) = 0,   u(T) = Φ
//! ```
//!
//! Each output step is split into CFL-limited sub-steps; every sub-step is a
//! PDE phase followed by a constraint phase.

pub mod checks;
pub mod io;
pub mod region;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{SpaceGrid, TimeGrid};
use crate::model::{ControlGrid, Dims, ProblemSpec};
use crate::scalar::{lit, Scalar};

/// Ghost values used for the one-sided stencils at the faces of the box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum BoundaryMode {
    /// Linear extrapolation: zero second difference, one-sided slope. Exact for
    /// solutions that are affine near the faces.
    #[default]
    Extrapolate,
    /// Mirror the first interior node (zero Neumann). Always monotone.
    Reflect,
}

impl BoundaryMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Extrapolate => "extrapolate",
            Self::Reflect => "reflect",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "extrapolate" => Ok(Self::Extrapolate),
            "reflect" => Ok(Self::Reflect),
            other => Err(Error::Config(format!("unknown boundary mode '{other}' (extrapolate|reflect)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HjbOptions<S> {
    pub cfl: S,
    /// Upper bound on the total number of sub-steps.
    pub max_substeps: usize,
    pub boundary: BoundaryMode,
    /// Fraction of nodes per side excluded from error metrics.
    pub margin_fraction: S,
    /// Convergence threshold of the general constraint relaxation.
    pub relax_tol: S,
}

impl<S: Scalar> Default for HjbOptions<S> {
    fn default() -> Self {
        Self {
            cfl: lit(0.9),
            max_substeps: 5_000_000,
            boundary: BoundaryMode::Extrapolate,
            margin_fraction: lit(0.1),
            relax_tol: lit(1e-12),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeMeta<S> {
    /// Smallest sub-step actually used.
    pub dt: S,
    pub substeps: usize,
    pub cfl: S,
    pub control_count: usize,
    pub boundary: BoundaryMode,
    pub margin_fraction: S,
    /// Largest number of relaxation passes in one constraint phase (1 for sweeps).
    pub relax_passes: usize,
}

impl<S: Scalar> SchemeMeta<S> {
    pub fn unspecified() -> Self {
        Self {
            dt: S::nan(),
            substeps: 0,
            cfl: S::nan(),
            control_count: 0,
            boundary: BoundaryMode::Extrapolate,
            margin_fraction: lit(0.1),
            relax_passes: 0,
        }
    }
}

/// Discrete value function on `tgrid × sgrid`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSurface<S> {
    pub tgrid: TimeGrid<S>,
    pub sgrid: SpaceGrid<S>,
    /// `(steps+1) × nodes`, time-major.
    pub values: Vec<S>,
    pub meta: SchemeMeta<S>,
}

impl<S: Scalar> ValueSurface<S> {
    pub fn from_values(tgrid: TimeGrid<S>, sgrid: SpaceGrid<S>, values: Vec<S>) -> Result<Self> {
        if values.len() != (tgrid.steps + 1) * sgrid.len() {
            return Err(Error::Dimension {
                field: "values".into(),
                detail: format!("expected {} entries, got {}", (tgrid.steps + 1) * sgrid.len(), values.len()),
            });
        }
        Ok(Self { tgrid, sgrid, values, meta: SchemeMeta::unspecified() })
    }

    /// Surface sampled from a function of `(t, x)`.
    pub fn from_fn(tgrid: TimeGrid<S>, sgrid: SpaceGrid<S>, f: impl Fn(S, &[S]) -> S) -> Self {
        let pts = sgrid.points();
        let mut values = Vec::with_capacity((tgrid.steps + 1) * pts.len());
        for t in tgrid.nodes() {
            values.extend(pts.iter().map(|x| f(t, x)));
        }
        Self { tgrid, sgrid, values, meta: SchemeMeta::unspecified() }
    }

    #[inline]
    pub fn nodes(&self) -> usize {
        self.sgrid.len()
    }

    #[inline]
    pub fn slice(&self, t_index: usize) -> &[S] {
        let n = self.nodes();
        &self.values[t_index * n..(t_index + 1) * n]
    }

    #[inline]
    pub fn value(&self, t_index: usize, node: usize) -> S {
        self.values[t_index * self.nodes() + node]
    }

    /// Interpolated value on time slice `t_index`.
    pub fn at(&self, t_index: usize, x: &[S]) -> Option<S> {
        self.sgrid.interpolate(self.slice(t_index), x)
    }

    /// Value at arbitrary `(t, x)`, linear in time between slices.
    pub fn value_at(&self, t: S, x: &[S]) -> Option<S> {
        let g = &self.tgrid;
        if t < g.t0 - lit(1e-12) || t > g.t1 + lit(1e-12) {
            return None;
        }
        if let Some(i) = g.index_of(t) {
            return self.at(i, x);
        }
        let pos = ((t - g.t0) / g.dt()).max(S::zero());
        let i = pos.floor().to_usize()?.min(g.steps - 1);
        let w = pos - S::from_usize_lossy(i);
        Some(self.at(i, x)? * (S::one() - w) + self.at(i + 1, x)? * w)
    }

    /// Nodes excluded on each side of every dimension.
    pub fn margin(&self) -> Vec<usize> {
        (0..self.sgrid.dim()).map(|d| self.sgrid.margin_nodes(d, self.meta.margin_fraction)).collect()
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        let margin = self.margin();
        (0..self.nodes()).filter(|&j| self.sgrid.is_interior(j, &margin)).collect()
    }

    /// Max interior error against a reference over every time slice.
    pub fn max_interior_error(&self, reference: impl Fn(S, &[S]) -> S) -> S {
        let interior = self.interior_nodes();
        let mut x = vec![S::zero(); self.sgrid.dim()];
        let mut worst = S::zero();
        for (i, t) in self.tgrid.nodes().enumerate() {
            for &j in &interior {
                self.sgrid.point(j, &mut x);
                worst = worst.max((self.value(i, j) - reference(t, &x)).abs());
            }
        }
        worst
    }
}

/// Per-node, per-control coefficients: `a = ½σσᵀ` (upper triangle), `b`, `σ`.
struct CoefTable<S> {
    stride: usize,
    data: Vec<S>,
    n: usize,
    d: usize,
}

impl<S: Scalar> CoefTable<S> {
    fn layout(n: usize, d: usize) -> usize {
        // a11, a12, a22 | b (n) | sigma (n*d)
        3 + n + n * d
    }

    fn build(spec: &ProblemSpec<S>, sgrid: &SpaceGrid<S>, controls: &ControlGrid<S>, t: S) -> Result<Self> {
        let Dims { n, d, .. } = spec.dims;
        let stride = Self::layout(n, d);
        let nc = controls.len();
        let mut data = vec![S::zero(); sgrid.len() * nc * stride];
        data.par_chunks_mut(nc * stride).enumerate().try_for_each(|(j, block)| {
            let mut x = vec![S::zero(); n];
            sgrid.point(j, &mut x);
            let mut sig = vec![S::zero(); n * d];
            let mut drift = vec![S::zero(); n];
            for (c, cell) in block.chunks_mut(stride).enumerate() {
                let v = controls.point(c);
                spec.b(t, &x, v, &mut drift);
                spec.sigma(t, &x, v, &mut sig);
                if drift.iter().chain(&sig).any(|q| !q.is_finite()) {
                    return Err(Error::Evaluation { what: "b/sigma".into(), point: format!("t={t}, x={x:?}, v={v:?}") });
                }
                let half = lit::<S>(0.5);
                let aij = |a: usize, b: usize| (0..d).map(|q| sig[a * d + q] * sig[b * d + q]).sum::<S>() * half;
                cell[0] = aij(0, 0);
                if n == 2 {
                    cell[1] = aij(0, 1);
                    cell[2] = aij(1, 1);
                }
                cell[3..3 + n].copy_from_slice(&drift);
                cell[3 + n..].copy_from_slice(&sig);
            }
            Ok(())
        })?;
        Ok(Self { stride, data, n, d })
    }

    #[inline]
    fn cell(&self, node: usize, control: usize, nc: usize) -> &[S] {
        let o = (node * nc + control) * self.stride;
        &self.data[o..o + self.stride]
    }
}

/// Ghost-aware neighbour values of node `j` along dimension `dim`: `(down, up)`.
#[inline]
fn neighbours<S: Scalar>(grid: &SpaceGrid<S>, u: &[S], j: usize, idx: &[usize; 2], dim: usize, mode: BoundaryMode) -> (S, S) {
    let stride = grid.stride(dim);
    let last = grid.nodes[dim] - 1;
    let i = idx[dim];
    let c = u[j];
    let two = lit::<S>(2.0);
    let up = if i < last {
        u[j + stride]
    } else {
        match mode {
            BoundaryMode::Extrapolate => two * c - u[j - stride],
            BoundaryMode::Reflect => u[j - stride],
        }
    };
    let dn = if i > 0 {
        u[j - stride]
    } else {
        match mode {
            BoundaryMode::Extrapolate => two * c - u[j + stride],
            BoundaryMode::Reflect => u[j + stride],
        }
    };
    (dn, up)
}

struct Scratch<S> {
    x: Vec<S>,
    z: Vec<S>,
}

/// Upper bound on `Σ_d (2a_dd/dx_d² + |b̃_d|/dx_d)` where `b̃ = b + σ ∂f/∂z` is the
/// effective drift seen by the upwind differences.
fn rate_bound<S: Scalar>(spec: &ProblemSpec<S>, sgrid: &SpaceGrid<S>, controls: &ControlGrid<S>, table: &CoefTable<S>, t: S, u: &[S]) -> S {
    let n = table.n;
    let d = table.d;
    let nc = controls.len();
    (0..sgrid.len())
        .into_par_iter()
        .map(|j| {
            let mut x = vec![S::zero(); n];
            sgrid.point(j, &mut x);
            let mut z = vec![S::zero(); d];
            let mut dfdz = vec![S::zero(); d];
            let mut worst = S::zero();
            for c in 0..nc {
                let cell = table.cell(j, c, nc);
                let v = controls.point(c);
                for q in 0..d {
                    z.iter_mut().for_each(|e| *e = S::zero());
                    z[q] = S::one();
                    let fp = spec.f(t, &x, u[j], &z, v);
                    z[q] = -S::one();
                    let fm = spec.f(t, &x, u[j], &z, v);
                    dfdz[q] = (fp - fm) * lit(0.5);
                }
                let mut r = S::zero();
                for k in 0..n {
                    let akk = if k == 0 { cell[0] } else { cell[2] };
                    let h = sgrid.dx(k);
                    let sig = &cell[3 + n + k * d..3 + n + (k + 1) * d];
                    let bt = cell[3 + k] + sig.iter().zip(&dfdz).map(|(&s, &g)| s * g).sum::<S>();
                    r += lit::<S>(2.0) * akk / (h * h) + bt.abs() / h;
                }
                worst = worst.max(r);
            }
            worst
        })
        .reduce(S::zero, S::max)
}

fn check_cross_dominance<S: Scalar>(sgrid: &SpaceGrid<S>, table: &CoefTable<S>, nc: usize) -> Result<()> {
    if table.n != 2 {
        return Ok(());
    }
    let (hx, hy) = (sgrid.dx(0), sgrid.dx(1));
    for j in 0..sgrid.len() {
        for c in 0..nc {
            let cell = table.cell(j, c, nc);
            let cross = cell[1].abs() / (hx * hy);
            if cell[0] / (hx * hx) - cross < -lit::<S>(1e-12) || cell[2] / (hy * hy) - cross < -lit::<S>(1e-12) {
                return Err(Error::Config(format!(
                    "diffusion is not diagonally dominant on this grid at node {j}; adjust dx so that a11/dx² and a22/dy² exceed |a12|/(dx dy)"
                )));
            }
        }
    }
    Ok(())
}

/// Fast path of the PDE phase for `n = d = 1`: writes `u + h·min_v[...]` for
/// nodes `first..first + out.len()`.
#[allow(clippy::too_many_arguments)]
fn pde_block_1d<S: Scalar>(
    spec: &ProblemSpec<S>,
    xs: &[S],
    dx: S,
    controls: &ControlGrid<S>,
    table: &CoefTable<S>,
    mode: BoundaryMode,
    t: S,
    h: S,
    u: &[S],
    first: usize,
    out: &mut [S],
) {
    let nc = controls.len();
    let last = u.len() - 1;
    let two = lit::<S>(2.0);
    let inv = S::one() / dx;
    let inv2 = inv * inv;
    for (o, slot) in out.iter_mut().enumerate() {
        let j = first + o;
        let c = u[j];
        let up = if j < last {
            u[j + 1]
        } else {
            match mode {
                BoundaryMode::Extrapolate => two * c - u[j - 1],
                BoundaryMode::Reflect => u[j - 1],
            }
        };
        let dn = if j > 0 {
            u[j - 1]
        } else {
            match mode {
                BoundaryMode::Extrapolate => two * c - u[j + 1],
                BoundaryMode::Reflect => u[j + 1],
            }
        };
        let pf = (up - c) * inv;
        let pb = (c - dn) * inv;
        let d2 = (up - two * c + dn) * inv2;
        let x = &xs[j..j + 1];
        let cells = &table.data[j * nc * 5..(j + 1) * nc * 5];
        let mut best = S::infinity();
        for (ci, cell) in cells.chunks_exact(5).enumerate() {
            let v = controls.point(ci);
            let (a, b, sig) = (cell[0], cell[3], cell[4]);
            let hf = b * pf + spec.f(t, x, c, &[pf * sig], v);
            let hb = b * pb + spec.f(t, x, c, &[pb * sig], v);
            let hsel = if (hf - hb) * (pf - pb) >= S::zero() { hf } else { hb };
            let r = a * d2 + hsel;
            if r < best {
                best = r;
            }
        }
        *slot = c + h * best;
    }
}

/// `min_v [ ½Tr(σσᵀD²u) + ⟨Du, b⟩ + f ]` at node `j` of slice `u` (time `t`).
#[allow(clippy::too_many_arguments)]
#[inline]
fn hamiltonian_rate<S: Scalar>(
    spec: &ProblemSpec<S>,
    sgrid: &SpaceGrid<S>,
    controls: &ControlGrid<S>,
    table: &CoefTable<S>,
    mode: BoundaryMode,
    t: S,
    u: &[S],
    j: usize,
    s: &mut Scratch<S>,
) -> S {
    let n = table.n;
    let d = table.d;
    let nc = controls.len();
    let idx = sgrid.unflatten(j);
    let Scratch { x, z } = s;
    sgrid.point(j, x);
    let x: &[S] = x;
    let c = u[j];
    let two = lit::<S>(2.0);
    let mut pf = [S::zero(); 2];
    let mut pb = [S::zero(); 2];
    let mut d2 = [S::zero(); 2];
    for k in 0..n {
        let (dn, up) = neighbours(sgrid, u, j, &idx, k, mode);
        let h = sgrid.dx(k);
        pf[k] = (up - c) / h;
        pb[k] = (c - dn) / h;
        d2[k] = (up - two * c + dn) / (h * h);
    }
    // 7-point cross stencils (only away from the faces)
    let mut cross = [S::zero(); 2];
    let has_cross = n == 2 && (0..2).all(|k| idx[k] > 0 && idx[k] + 1 < sgrid.nodes[k]);
    if has_cross {
        let sx = 1;
        let sy = sgrid.stride(1);
        let hxy = two * sgrid.dx(0) * sgrid.dx(1);
        let ring = u[j + sx] + u[j - sx] + u[j + sy] + u[j - sy];
        cross[0] = (two * c + u[j + sx + sy] + u[j - sx - sy] - ring) / hxy;
        cross[1] = -(two * c + u[j + sx - sy] + u[j - sx + sy] - ring) / hxy;
    }

    let mut best = S::infinity();
    for ci in 0..nc {
        let cell = table.cell(j, ci, nc);
        let v = controls.point(ci);
        let b = &cell[3..3 + n];
        let sig = &cell[3 + n..];
        let mut diff = cell[0] * d2[0];
        if n == 2 {
            diff += cell[2] * d2[1];
            if has_cross {
                let a12 = cell[1];
                diff += two * a12 * if a12 >= S::zero() { cross[0] } else { cross[1] };
            }
        }
        let eval = |p: &[S], z: &mut [S]| -> S {
            let mut acc = S::zero();
            for k in 0..n {
                acc += b[k] * p[k];
            }
            for q in 0..d {
                let mut zq = S::zero();
                for k in 0..n {
                    zq += p[k] * sig[k * d + q];
                }
                z[q] = zq;
            }
            acc + spec.f(t, x, c, z, v)
        };
        let h = if n == 1 {
            let hf = eval(&pf[..1], z);
            let hb = eval(&pb[..1], z);
            if (hf - hb) * (pf[0] - pb[0]) >= S::zero() {
                hf
            } else {
                hb
            }
        } else {
            // upwind each dimension with the others centred, then evaluate once
            let mut chosen = [S::zero(); 2];
            for k in 0..n {
                let mut p = [(pf[0] + pb[0]) * lit(0.5), (pf[1] + pb[1]) * lit(0.5)];
                p[k] = pf[k];
                let hf = eval(&p, z);
                p[k] = pb[k];
                let hb = eval(&p, z);
                chosen[k] = if (hf - hb) * (pf[k] - pb[k]) >= S::zero() { pf[k] } else { pb[k] };
            }
            eval(&chosen[..n], z)
        };
        let r = diff + h;
        if r < best {
            best = r;
        }
    }
    best
}

/// Sub-step size and count that cover `span` under the CFL bound.
fn substeps_for<S: Scalar>(span: S, rate: S, cfl: S) -> (usize, S) {
    if !(rate > S::zero()) {
        return (1, span);
    }
    let dt_max = cfl / rate;
    let k = (span / dt_max).ceil().to_usize().unwrap_or(usize::MAX).max(1);
    (k, span / S::from_usize_lossy(k))
}

/// Unit push cost `K·(dx/|G|)` used by the 1-D sweep. The jump check uses the
/// same expression so grid-aligned violations cancel exactly.
pub fn unit_push<S: Scalar>(spec: &ProblemSpec<S>, sgrid: &SpaceGrid<S>, col: usize) -> Option<(isize, S, S)> {
    let g = spec.g(0, col);
    if g == S::zero() {
        return None;
    }
    let h = sgrid.dx(0) / g.abs();
    Some((if g > S::zero() { 1 } else { -1 }, h, spec.cost[col] * h))
}

/// Constraint phase: `u ← min(u, u(x + Gh) + K·h)` until no push lowers `u`.
/// Returns the number of relaxation passes.
pub fn constraint_phase<S: Scalar>(spec: &ProblemSpec<S>, sgrid: &SpaceGrid<S>, u: &mut [S], relax_tol: S) -> Result<usize> {
    let Dims { n, m, .. } = spec.dims;
    if n == 1 && m == 1 {
        let Some((dir, _, cost)) = unit_push(spec, sgrid, 0) else {
            return Ok(0);
        };
        let len = u.len();
        if dir > 0 {
            for j in (0..len - 1).rev() {
                let cand = u[j + 1] + cost;
                if cand < u[j] {
                    u[j] = cand;
                }
            }
        } else {
            for j in 1..len {
                let cand = u[j - 1] + cost;
                if cand < u[j] {
                    u[j] = cand;
                }
            }
        }
        return Ok(1);
    }
    // general pointwise relaxation with unit pushes along each column
    let pushes: Vec<(Vec<S>, S)> = (0..m)
        .filter_map(|col| {
            let gcol = spec.g_column(col);
            let scale = (0..n).map(|k| gcol[k].abs() / sgrid.dx(k)).fold(S::zero(), S::max);
            if scale == S::zero() {
                return None;
            }
            let h = S::one() / scale;
            Some((gcol.iter().map(|&g| g * h).collect(), spec.cost[col] * h))
        })
        .collect();
    if pushes.is_empty() {
        return Ok(0);
    }
    let max_passes = 4 * u.len() + 16;
    let mut prev = u.to_vec();
    for pass in 1..=max_passes {
        let changed = u
            .par_iter_mut()
            .enumerate()
            .map(|(j, uj)| {
                let mut x = vec![S::zero(); n];
                sgrid.point(j, &mut x);
                let mut best = prev[j];
                for (disp, cost) in &pushes {
                    let y: Vec<S> = x.iter().zip(disp).map(|(&a, &b)| a + b).collect();
                    if let Some(val) = sgrid.interpolate(&prev, &y) {
                        let cand = val + *cost;
                        if cand < best {
                            best = cand;
                        }
                    }
                }
                let delta = prev[j] - best;
                *uj = best;
                delta
            })
            .reduce(S::zero, S::max);
        if changed <= relax_tol {
            return Ok(pass);
        }
        prev.copy_from_slice(u);
    }
    Err(Error::Numeric("constraint relaxation did not converge".into()))
}

/// Solves the variational inequality backward from `u(T) = Φ` and returns
/// the surface on the nodes of `tgrid`.
pub fn solve_hjb_vi<S: Scalar>(
    spec: &ProblemSpec<S>,
    tgrid: &TimeGrid<S>,
    sgrid: &SpaceGrid<S>,
    controls: &ControlGrid<S>,
    opts: &HjbOptions<S>,
) -> Result<ValueSurface<S>> {
    spec.check_structure()?;
    let Dims { n, .. } = spec.dims;
    if sgrid.dim() != n {
        return Err(Error::Dimension { field: "grid".into(), detail: format!("space grid has {} dims, problem has n = {n}", sgrid.dim()) });
    }
    if controls.dim() != spec.dims.k || controls.is_empty() {
        return Err(Error::Dimension { field: "controls".into(), detail: format!("control grid of dimension {} for k = {}", controls.dim(), spec.dims.k) });
    }
    if !(opts.cfl > S::zero() && opts.cfl <= S::one()) {
        return Err(Error::Config(format!("cfl must lie in (0, 1], got {}", opts.cfl)));
    }
    let nodes = sgrid.len();
    let points = sgrid.points();
    let mut values = vec![S::zero(); (tgrid.steps + 1) * nodes];
    let mut u: Vec<S> = points.iter().map(|x| spec.phi(x)).collect();
    if let Some(j) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation { what: "Phi".into(), point: format!("{:?}", points[j]) });
    }
    values[tgrid.steps * nodes..].copy_from_slice(&u);

    let mut table = CoefTable::build(spec, sgrid, controls, tgrid.t1)?;
    check_cross_dominance(sgrid, &table, controls.len())?;
    let mut next = vec![S::zero(); nodes];
    let mut total = 0usize;
    let mut dt_min = S::infinity();
    let mut relax_passes = 0usize;
    let parallel = rayon::current_num_threads() > 1 && nodes * controls.len() >= 1 << 14;
    let fast_1d = n == 1 && spec.dims.d == 1;
    let xs: Vec<S> = if fast_1d { points.iter().map(|p| p[0]).collect() } else { Vec::new() };
    const BLOCK: usize = 64;

    for i in (0..tgrid.steps).rev() {
        let t_hi = tgrid.node(i + 1);
        let t_lo = tgrid.node(i);
        let rate = rate_bound(spec, sgrid, controls, &table, t_hi, &u);
        let (k, h) = substeps_for(t_hi - t_lo, rate, opts.cfl);
        if total.saturating_add(k.saturating_mul(i + 1)) > opts.max_substeps {
            return Err(Error::Config(format!(
                "CFL needs about {} sub-steps (budget {}); increase dx or max_substeps",
                k.saturating_mul(tgrid.steps),
                opts.max_substeps
            )));
        }
        dt_min = dt_min.min(h);
        for s in 0..k {
            let t = t_hi - h * S::from_usize_lossy(s);
            if !spec.autonomous && s > 0 {
                table = CoefTable::build(spec, sgrid, controls, t)?;
            }
            if fast_1d {
                let dx = sgrid.dx(0);
                if parallel {
                    next.par_chunks_mut(BLOCK).enumerate().for_each(|(b, out)| {
                        pde_block_1d(spec, &xs, dx, controls, &table, opts.boundary, t, h, &u, b * BLOCK, out)
                    });
                } else {
                    pde_block_1d(spec, &xs, dx, controls, &table, opts.boundary, t, h, &u, 0, &mut next);
                }
            } else {
                let step = |(j, out): (usize, &mut S), sc: &mut Scratch<S>| {
                    *out = u[j] + h * hamiltonian_rate(spec, sgrid, controls, &table, opts.boundary, t, &u, j, sc);
                };
                let mk = || Scratch { x: vec![S::zero(); n], z: vec![S::zero(); spec.dims.d] };
                if parallel {
                    next.par_iter_mut().enumerate().for_each_init(mk, |sc, item| step(item, sc));
                } else {
                    let mut sc = mk();
                    next.iter_mut().enumerate().for_each(|item| step(item, &mut sc));
                }
            }
            if let Some(j) = next.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!("non-finite value at node {j} (x = {:?}), t = {t}", points[j])));
            }
            relax_passes = relax_passes.max(constraint_phase(spec, sgrid, &mut next, opts.relax_tol)?);
            std::mem::swap(&mut u, &mut next);
        }
        total += k;
        if !spec.autonomous {
            table = CoefTable::build(spec, sgrid, controls, t_lo)?;
        }
        values[i * nodes..(i + 1) * nodes].copy_from_slice(&u);
    }

    Ok(ValueSurface {
        tgrid: *tgrid,
        sgrid: sgrid.clone(),
        values,
        meta: SchemeMeta {
            dt: dt_min,
            substeps: total,
            cfl: opts.cfl,
            control_count: controls.len(),
            boundary: opts.boundary,
            margin_fraction: opts.margin_fraction,
            relax_passes,
        },
    })
}

/// Convenience: default grids from the problem's domain (`dx` per dimension, 100 output steps).
pub fn solve_default<S: Scalar>(spec: &ProblemSpec<S>, dx: S, steps: usize, opts: &HjbOptions<S>) -> Result<ValueSurface<S>> {
    let tgrid = TimeGrid::new(S::zero(), spec.horizon, steps)?;
    let n = spec.dims.n;
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    let mut nodes = Vec::with_capacity(n);
    for &(a, b) in &spec.domain {
        let cells = ((b - a) / dx).round().to_usize().unwrap_or(0);
        lo.push(a);
        hi.push(b);
        nodes.push(cells + 1);
    }
    let sgrid = SpaceGrid::new(lo, hi, nodes)?;
    solve_hjb_vi(spec, &tgrid, &sgrid, &spec.control_grid(), opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_linear_fk, builtin_wang};

    #[test]
    fn wang_zero_problem_stays_zero() {
        let spec = builtin_wang::<f64>(0.0, 0.0, 1.0, 0.0).unwrap();
        let s = solve_default(&spec, 0.05, 20, &HjbOptions::default()).unwrap();
        assert!(s.values.iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn linear_fk_is_exact_for_affine_data() {
        let spec = builtin_linear_fk::<f64>(1.0, 1.0, 1.0).unwrap();
        let s = solve_default(&spec, 0.05, 10, &HjbOptions::default()).unwrap();
        let err = s.max_interior_error(|t, x| x[0] + (1.0 - t));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn terminal_slice_is_phi_bit_for_bit() {
        let spec = builtin_linear_fk::<f64>(0.3, 1.0, 1.0).unwrap();
        let s = solve_default(&spec, 0.1, 5, &HjbOptions::default()).unwrap();
        for (j, x) in s.sgrid.points().iter().enumerate() {
            assert_eq!(s.value(5, j), spec.phi(x));
        }
    }

    #[test]
    fn sweep_is_idempotent() {
        let spec = builtin_linear_fk::<f64>(0.0, 1.0, 0.5).unwrap();
        let grid = SpaceGrid::uniform_1d(-1.0, 1.0, 0.1).unwrap();
        let mut u: Vec<f64> = grid.points().iter().map(|x: &Vec<f64>| -3.0 * x[0] + (7.0 * x[0]).sin()).collect();
        constraint_phase(&spec, &grid, &mut u, 1e-12).unwrap();
        let once = u.clone();
        constraint_phase(&spec, &grid, &mut u, 1e-12).unwrap();
        assert_eq!(u, once);
    }

    #[test]
    fn budget_exhaustion_is_a_config_error() {
        let spec = builtin_linear_fk::<f64>(0.0, 1.0, 1.0).unwrap();
        let opts = HjbOptions { max_substeps: 10, ..HjbOptions::default() };
        assert!(matches!(solve_default(&spec, 0.01, 10, &opts), Err(Error::Config(_))));
    }
}
