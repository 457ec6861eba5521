//! Problem data for recursive singular control: the forward dynamics, the
//! backward generator, singular push/cost matrices and the regular control set.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::{lit, norm2, Scalar};

/// `b(t, x, v, out)` writes the n-vector drift into `out`.
pub type DriftFn<S> = Arc<dyn Fn(S, &[S], &[S], &mut [S]) + Send + Sync>;
/// `sigma(t, x, v, out)` writes the n×d diffusion matrix, row-major, into `out`.
pub type DiffusionFn<S> = Arc<dyn Fn(S, &[S], &[S], &mut [S]) + Send + Sync>;
/// `f(t, x, y, z, v)`; `z` is the d-row of the martingale integrand.
pub type GeneratorFn<S> = Arc<dyn Fn(S, &[S], S, &[S], &[S]) -> S + Send + Sync>;
pub type TerminalFn<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dims {
    /// State dimension.
    pub n: usize,
    /// Brownian dimension.
    pub d: usize,
    /// Regular-control dimension.
    pub k: usize,
    /// Singular-control dimension.
    pub m: usize,
}

/// Axis-aligned box in control space.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBox<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
}

impl<S: Scalar> ControlBox<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>) -> Self {
        Self { lo, hi }
    }

    pub fn interval(lo: S, hi: S) -> Self {
        Self { lo: vec![lo], hi: vec![hi] }
    }

    pub fn contains(&self, v: &[S], tol: S) -> bool {
        v.len() == self.lo.len()
            && v
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&lo, &hi))| x >= lo - tol && x <= hi + tol)
    }
}

/// Compact regular-control set: a finite union of boxes, discretized per axis
/// with `points_per_unit` nodes per unit length (endpoints always included).
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSet<S> {
    pub boxes: Vec<ControlBox<S>>,
    pub points_per_unit: usize,
    /// Points that must appear in every discretization.
    pub anchors: Vec<Vec<S>>,
}

pub const DEFAULT_POINTS_PER_UNIT: usize = 41;

impl<S: Scalar> ControlSet<S> {
    pub fn new(boxes: Vec<ControlBox<S>>) -> Self {
        Self { boxes, points_per_unit: DEFAULT_POINTS_PER_UNIT, anchors: Vec::new() }
    }

    /// The zero-dimensional control set (no regular control).
    pub fn singleton() -> Self {
        Self::new(vec![ControlBox::new(Vec::new(), Vec::new())])
    }

    pub fn with_points_per_unit(mut self, ppu: usize) -> Self {
        self.points_per_unit = ppu;
        self
    }

    pub fn with_anchors(mut self, anchors: Vec<Vec<S>>) -> Self {
        self.anchors = anchors;
        self
    }

    pub fn dim(&self) -> usize {
        self.boxes.first().map_or(0, |b| b.lo.len())
    }

    pub fn contains(&self, v: &[S], tol: S) -> bool {
        self.boxes.iter().any(|b| b.contains(v, tol))
    }

    fn check(&self, k: usize) -> Result<()> {
        if self.boxes.is_empty() {
            return Err(Error::Dimension { field: "U".into(), detail: "control set is empty".into() });
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if b.lo.len() != k || b.hi.len() != k {
                return Err(Error::Dimension {
                    field: "U".into(),
                    detail: format!("box {i} has dimension {}/{}, expected {k}", b.lo.len(), b.hi.len()),
                });
            }
            for (&lo, &hi) in b.lo.iter().zip(&b.hi) {
                if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                    return Err(Error::Dimension {
                        field: "U".into(),
                        detail: format!("box {i} is unbounded or inverted"),
                    });
                }
            }
        }
        if self.points_per_unit < 2 {
            return Err(Error::Config("control points_per_unit must be >= 2".into()));
        }
        Ok(())
    }

    /// Tensor discretization of every box, deduplicated, plus the anchors.
    pub fn grid(&self) -> ControlGrid<S> {
        let k = self.dim();
        let mut grid = ControlGrid { k, count: 0, points: Vec::new() };
        let ppu = lit::<S>((self.points_per_unit.max(2) - 1) as f64);
        for b in &self.boxes {
            let axes: Vec<Vec<S>> = b
                .lo
                .iter()
                .zip(&b.hi)
                .map(|(&lo, &hi)| {
                    let len = hi - lo;
                    if len <= S::zero() {
                        return vec![lo];
                    }
                    let cells = (len * ppu).ceil().to_usize().unwrap_or(1).max(1);
                    let h = len / S::from_usize_lossy(cells);
                    (0..=cells)
                        .map(|i| if i == cells { hi } else { lo + h * S::from_usize_lossy(i) })
                        .collect()
                })
                .collect();
            let count: usize = axes.iter().map(Vec::len).product();
            let mut point = vec![S::zero(); k];
            for mut idx in 0..count {
                for (a, axis) in axes.iter().enumerate() {
                    point[a] = axis[idx % axis.len()];
                    idx /= axis.len();
                }
                grid.push_unique(&point);
            }
        }
        for a in &self.anchors {
            if a.len() == k && self.contains(a, lit(1e-12)) {
                grid.push_unique(a);
            }
        }
        grid
    }
}

/// Finite list of points of U over which the Hamiltonian is minimized.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlGrid<S> {
    k: usize,
    count: usize,
    points: Vec<S>,
}

impl<S: Scalar> ControlGrid<S> {
    /// Builds a grid from explicit points, rejecting any point outside `set`.
    pub fn from_points(set: &ControlSet<S>, points: &[Vec<S>]) -> Result<Self> {
        let k = set.dim();
        let mut grid = ControlGrid { k, count: 0, points: Vec::new() };
        for p in points {
            if p.len() != k {
                return Err(Error::Dimension { field: "control point".into(), detail: format!("{p:?}") });
            }
            if !set.contains(p, lit(1e-12)) {
                return Err(Error::Contract(format!("control point {p:?} outside U")));
            }
            grid.push_unique(p);
        }
        if grid.is_empty() {
            return Err(Error::Config("control grid must contain at least one point".into()));
        }
        Ok(grid)
    }

    fn push_unique(&mut self, p: &[S]) {
        let tol = lit::<S>(1e-12);
        let dup = self.iter().any(|q| q.iter().zip(p).all(|(&a, &b)| (a - b).abs() <= tol));
        if !dup {
            self.points.extend_from_slice(p);
            self.count += 1;
        }
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.points[i * self.k..(i + 1) * self.k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[S]> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Index of the grid point nearest to `v` (Euclidean).
    pub fn nearest(&self, v: &[S]) -> usize {
        let mut best = (0, S::infinity());
        for (i, p) in self.iter().enumerate() {
            let d: S = p.iter().zip(v).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }
}

/// The full control problem.
#[derive(Clone)]
pub struct ProblemSpec<S> {
    pub name: String,
    pub dims: Dims,
    /// Horizon T.
    pub horizon: S,
    pub drift: DriftFn<S>,
    pub diffusion: DiffusionFn<S>,
    pub generator: GeneratorFn<S>,
    pub terminal: TerminalFn<S>,
    /// G, n×m row-major.
    pub push: Vec<S>,
    /// K, length m; every entry must be strictly positive.
    pub cost: Vec<S>,
    pub controls: ControlSet<S>,
    /// Default state box, used for sampling assumptions and as the solver domain.
    pub domain: Vec<(S, S)>,
    /// Drift and diffusion do not depend on time (lets solvers cache coefficients).
    pub autonomous: bool,
}

impl<S: Scalar> fmt::Debug for ProblemSpec<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("dims", &self.dims)
            .field("horizon", &self.horizon)
            .field("push", &self.push)
            .field("cost", &self.cost)
            .field("controls", &self.controls)
            .field("domain", &self.domain)
            .finish_non_exhaustive()
    }
}

impl<S: Scalar> ProblemSpec<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        dims: Dims,
        horizon: S,
        drift: DriftFn<S>,
        diffusion: DiffusionFn<S>,
        generator: GeneratorFn<S>,
        terminal: TerminalFn<S>,
        push: Vec<S>,
        cost: Vec<S>,
        controls: ControlSet<S>,
        domain: Vec<(S, S)>,
    ) -> Self {
        Self {
            name: name.into(),
            dims,
            horizon,
            drift,
            diffusion,
            generator,
            terminal,
            push,
            cost,
            controls,
            domain,
            autonomous: false,
        }
    }

    pub fn autonomous(mut self, yes: bool) -> Self {
        self.autonomous = yes;
        self
    }

    pub fn with_terminal(mut self, terminal: TerminalFn<S>) -> Self {
        self.terminal = terminal;
        self
    }

    pub fn with_generator(mut self, generator: GeneratorFn<S>) -> Self {
        self.generator = generator;
        self
    }

    pub fn with_horizon(mut self, horizon: S) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_controls(mut self, controls: ControlSet<S>) -> Self {
        self.controls = controls;
        self
    }

    pub fn with_domain(mut self, domain: Vec<(S, S)>) -> Self {
        self.domain = domain;
        self
    }

    #[inline]
    pub fn b(&self, t: S, x: &[S], v: &[S], out: &mut [S]) {
        (self.drift)(t, x, v, out)
    }

    #[inline]
    pub fn sigma(&self, t: S, x: &[S], v: &[S], out: &mut [S]) {
        (self.diffusion)(t, x, v, out)
    }

    #[inline]
    pub fn f(&self, t: S, x: &[S], y: S, z: &[S], v: &[S]) -> S {
        (self.generator)(t, x, y, z, v)
    }

    #[inline]
    pub fn phi(&self, x: &[S]) -> S {
        (self.terminal)(x)
    }

    /// Entry (i, j) of G.
    #[inline]
    pub fn g(&self, i: usize, j: usize) -> S {
        self.push[i * self.dims.m + j]
    }

    /// Column j of G.
    pub fn g_column(&self, j: usize) -> Vec<S> {
        (0..self.dims.n).map(|i| self.g(i, j)).collect()
    }

    pub fn k_min(&self) -> S {
        self.cost.iter().copied().fold(S::infinity(), S::min)
    }

    pub fn k_max(&self) -> S {
        self.cost.iter().copied().fold(S::neg_infinity(), S::max)
    }

    pub fn control_grid(&self) -> ControlGrid<S> {
        self.controls.grid()
    }

    /// Structural well-formedness: dimensions of G, K, U, domain and horizon.
    pub fn check_structure(&self) -> Result<()> {
        let Dims { n, d, k, m } = self.dims;
        let dim_err = |field: &str, detail: String| Err(Error::Dimension { field: field.into(), detail });
        if n == 0 {
            return dim_err("n", "state dimension must be positive".into());
        }
        if d == 0 {
            return dim_err("d", "Brownian dimension must be positive".into());
        }
        if self.push.len() != n * m {
            return dim_err("G", format!("expected {n}x{m} = {} entries, got {}", n * m, self.push.len()));
        }
        if self.cost.len() != m {
            return dim_err("K", format!("expected {m} entries, got {}", self.cost.len()));
        }
        if self.domain.len() != n {
            return dim_err("domain", format!("expected {n} intervals, got {}", self.domain.len()));
        }
        if self.domain.iter().any(|&(lo, hi)| !(lo < hi)) {
            return dim_err("domain", "every interval needs lo < hi".into());
        }
        if !(self.horizon > S::zero() && self.horizon.is_finite()) {
            return dim_err("T", format!("horizon must be positive, got {}", self.horizon));
        }
        self.controls.check(k)?;
        if self.controls.dim() != k {
            return dim_err("U", format!("control set has dimension {}, expected {k}", self.controls.dim()));
        }
        Ok(())
    }

    /// Evaluates b and σ once at a domain point to catch non-finite output.
    pub fn probe(&self) -> Result<()> {
        self.check_structure()?;
        let Dims { n, d, k, .. } = self.dims;
        let x: Vec<S> = self.domain.iter().map(|&(lo, hi)| (lo + hi) / lit(2.0)).collect();
        let grid = self.control_grid();
        let v = grid.point(0).to_vec();
        debug_assert_eq!(v.len(), k);
        let mut bo = vec![S::zero(); n];
        let mut so = vec![S::zero(); n * d];
        self.b(S::zero(), &x, &v, &mut bo);
        self.sigma(S::zero(), &x, &v, &mut so);
        let z = vec![S::zero(); d];
        let fy = self.f(S::zero(), &x, S::zero(), &z, &v);
        let ph = self.phi(&x);
        if bo.iter().chain(&so).chain([&fy, &ph]).any(|u| !u.is_finite()) {
            return Err(Error::Evaluation { what: "problem maps".into(), point: format!("t=0, x={x:?}, v={v:?}") });
        }
        Ok(())
    }
}

/// Sampled difference-quotient maxima.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimates<S> {
    pub b: S,
    pub sigma: S,
    pub f: S,
    pub phi: S,
}

/// Sampled maxima of |b|/(1+|x|), |σ|/(1+|x|) and |f(·,·,0,0,·)|+|Φ| over (1+|x|).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthEstimates<S> {
    pub b: S,
    pub sigma: S,
    pub f_phi: S,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AssumptionFlags {
    pub a1: bool,
    pub a2: bool,
    pub a3: bool,
}

impl AssumptionFlags {
    pub fn all(&self) -> bool {
        self.a1 && self.a2 && self.a3
    }
}

/// Empirical spot-check of the standing Lipschitz/growth/positivity assumptions.
/// Sampling cannot prove a global bound; the numbers are lower estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport<S> {
    pub lipschitz_estimates: LipschitzEstimates<S>,
    pub growth_estimates: GrowthEstimates<S>,
    pub k_min: S,
    pub passed: AssumptionFlags,
    pub samples: usize,
}

fn uniform<S: Scalar>(rng: &mut ChaCha8Rng, lo: S, hi: S) -> S {
    lo + (hi - lo) * lit(rng.gen::<f64>())
}

fn sample_control<S: Scalar>(rng: &mut ChaCha8Rng, set: &ControlSet<S>, out: &mut [S]) {
    let b = &set.boxes[rng.gen_range(0..set.boxes.len())];
    for (o, (&lo, &hi)) in out.iter_mut().zip(b.lo.iter().zip(&b.hi)) {
        *o = uniform(rng, lo, hi);
    }
}

fn diff_norm<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&p, &q)| (p - q) * (p - q)).sum::<S>().sqrt()
}

fn finite_or<S: Scalar>(vals: &[S], what: &str, point: impl FnOnce() -> String) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation { what: what.into(), point: point() })
    }
}

/// Samples `sample_count` random `(t, x, x', y, y', z, z', v, v')` draws over the
/// problem's domain box and reports difference-quotient and growth maxima.
/// Half of the pairs are near-diagonal (`x'` a small perturbation of `x`) so that
/// local slopes are probed as well as global ones.
pub fn validate_problem<S: Scalar>(spec: &ProblemSpec<S>, sample_count: usize, rng_seed: u64) -> Result<AssumptionReport<S>> {
    spec.check_structure()?;
    if sample_count == 0 {
        return Err(Error::Config("sample_count must be positive".into()));
    }
    let Dims { n, d, k, .. } = spec.dims;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let radius = spec
        .domain
        .iter()
        .fold(S::one(), |r, &(lo, hi)| r.max(lo.abs()).max(hi.abs()));

    let (mut x1, mut x2) = (vec![S::zero(); n], vec![S::zero(); n]);
    let (mut v1, mut v2) = (vec![S::zero(); k], vec![S::zero(); k]);
    let (mut z1, mut z2) = (vec![S::zero(); d], vec![S::zero(); d]);
    let (mut b1, mut b2) = (vec![S::zero(); n], vec![S::zero(); n]);
    let (mut s1, mut s2) = (vec![S::zero(); n * d], vec![S::zero(); n * d]);
    let zero_z = vec![S::zero(); d];

    let mut lip = LipschitzEstimates { b: S::zero(), sigma: S::zero(), f: S::zero(), phi: S::zero() };
    let mut growth = GrowthEstimates { b: S::zero(), sigma: S::zero(), f_phi: S::zero() };
    let tiny = lit::<S>(1e-300_f64.max(f64::from(f32::MIN_POSITIVE)));

    for s in 0..sample_count {
        let t = uniform(&mut rng, S::zero(), spec.horizon);
        let near = s % 2 == 1;
        for i in 0..n {
            let (lo, hi) = spec.domain[i];
            x1[i] = uniform(&mut rng, lo, hi);
            x2[i] = if near {
                let eps = (hi - lo) * lit(1e-3);
                (x1[i] + uniform(&mut rng, -eps, eps)).max(lo).min(hi)
            } else {
                uniform(&mut rng, lo, hi)
            };
        }
        sample_control(&mut rng, &spec.controls, &mut v1);
        if near {
            v2.copy_from_slice(&v1);
        } else {
            sample_control(&mut rng, &spec.controls, &mut v2);
        }
        let y1 = uniform(&mut rng, -radius, radius);
        let y2 = if near { y1 } else { uniform(&mut rng, -radius, radius) };
        for j in 0..d {
            z1[j] = uniform(&mut rng, -radius, radius);
            z2[j] = if near { z1[j] } else { uniform(&mut rng, -radius, radius) };
        }

        spec.b(t, &x1, &v1, &mut b1);
        spec.b(t, &x2, &v2, &mut b2);
        spec.sigma(t, &x1, &v1, &mut s1);
        spec.sigma(t, &x2, &v2, &mut s2);
        let f1 = spec.f(t, &x1, y1, &z1, &v1);
        let f2 = spec.f(t, &x2, y2, &z2, &v2);
        let f0 = spec.f(t, &x1, S::zero(), &zero_z, &v1);
        let p1 = spec.phi(&x1);
        let p2 = spec.phi(&x2);
        let at = || format!("t={t}, x={x1:?}, x'={x2:?}, v={v1:?}, v'={v2:?}");
        finite_or(&b1, "b", at)?;
        finite_or(&b2, "b", at)?;
        finite_or(&s1, "sigma", at)?;
        finite_or(&s2, "sigma", at)?;
        finite_or(&[f1, f2, f0], "f", at)?;
        finite_or(&[p1, p2], "Phi", at)?;

        let dx = diff_norm(&x1, &x2);
        let dv = diff_norm(&v1, &v2);
        let dy = (y1 - y2).abs();
        let dz = diff_norm(&z1, &z2);
        let bx = dx + dv;
        if bx > tiny {
            lip.b = lip.b.max(diff_norm(&b1, &b2) / bx);
            lip.sigma = lip.sigma.max(diff_norm(&s1, &s2) / bx);
        }
        let fx = dx + dv + dy + dz;
        if fx > tiny {
            lip.f = lip.f.max((f1 - f2).abs() / fx);
        }
        if dx > tiny {
            lip.phi = lip.phi.max((p1 - p2).abs() / dx);
        }
        let scale = S::one() + norm2(&x1);
        growth.b = growth.b.max(norm2(&b1) / scale);
        growth.sigma = growth.sigma.max(norm2(&s1) / scale);
        growth.f_phi = growth.f_phi.max((f0.abs() + p1.abs()) / scale);
    }

    let k_min = spec.k_min();
    let fin = |xs: &[S]| xs.iter().all(|x| x.is_finite());
    let passed = AssumptionFlags {
        a1: fin(&[lip.b, lip.sigma, growth.b, growth.sigma]),
        a2: fin(&[lip.f, lip.phi, growth.f_phi]),
        a3: k_min > S::zero(),
    };
    Ok(AssumptionReport { lipschitz_estimates: lip, growth_estimates: growth, k_min, passed, samples: sample_count })
}

fn scalar_push<S: Scalar>(g: S, k: S) -> (Vec<S>, Vec<S>) {
    (vec![g], vec![k])
}

/// One-dimensional example with disconnected control set `U = [-1,0] ∪ [1,2]`:
/// `dX = (X + Xv) ds + Xv dW + G dξ`, generator `f = -z v`, terminal `Φ(x) = x`,
/// horizon 1, default `G = K = 1`.
pub fn builtin_section4<S: Scalar>() -> ProblemSpec<S> {
    builtin_section4_with(S::one(), S::one())
}

pub fn builtin_section4_with<S: Scalar>(g: S, k: S) -> ProblemSpec<S> {
    let (push, cost) = scalar_push(g, k);
    let controls = ControlSet::new(vec![
        ControlBox::interval(-S::one(), S::zero()),
        ControlBox::interval(S::one(), lit(2.0)),
    ])
    .with_anchors(vec![vec![-S::one()], vec![S::zero()], vec![S::one()], vec![lit(2.0)]]);
    ProblemSpec::new(
        "section4",
        Dims { n: 1, d: 1, k: 1, m: 1 },
        S::one(),
        Arc::new(|_t, x, v, out| out[0] = x[0] + x[0] * v[0]),
        Arc::new(|_t, x, v, out| out[0] = x[0] * v[0]),
        Arc::new(|_t, _x, _y, z, v| -z[0] * v[0]),
        Arc::new(|x| x[0]),
        push,
        cost,
        controls,
        vec![(lit(-2.0), lit(2.0))],
    )
    .autonomous(true)
}

/// Singular-control model with affine drift `a x + b0`, constant volatility `σ0`,
/// generator `μ z`, zero terminal cost and unit push/cost. No regular control.
pub fn builtin_wang<S: Scalar>(a: S, b0: S, sigma0: S, mu: S) -> Result<ProblemSpec<S>> {
    if !(sigma0 > S::zero()) {
        return Err(Error::Config(format!("sigma0 must be positive, got {sigma0}")));
    }
    let (push, cost) = scalar_push(S::one(), S::one());
    Ok(ProblemSpec::new(
        "wang",
        Dims { n: 1, d: 1, k: 0, m: 1 },
        S::one(),
        Arc::new(move |_t, x, _v, out| out[0] = a * x[0] + b0),
        Arc::new(move |_t, _x, _v, out| out[0] = sigma0),
        Arc::new(move |_t, _x, _y, z, _v| mu * z[0]),
        Arc::new(|_x| S::zero()),
        push,
        cost,
        ControlSet::singleton(),
        vec![(lit(-2.0), lit(2.0))],
    )
    .autonomous(true))
}

/// Feynman–Kac sanity problem: `b = 0`, `σ = 1`, `f ≡ c`, `Φ(x) = x`, push `G0`,
/// cost `K0`. Its value is `x + c (T - t)` whenever `G0 + K0 >= 0`.
pub fn builtin_linear_fk<S: Scalar>(c: S, g0: S, k0: S) -> Result<ProblemSpec<S>> {
    if !(k0 > S::zero()) {
        return Err(Error::Config(format!("K0 must be positive, got {k0}")));
    }
    let (push, cost) = scalar_push(g0, k0);
    Ok(ProblemSpec::new(
        "linear-fk",
        Dims { n: 1, d: 1, k: 0, m: 1 },
        S::one(),
        Arc::new(|_t, _x, _v, out| out[0] = S::zero()),
        Arc::new(|_t, _x, _v, out| out[0] = S::one()),
        Arc::new(move |_t, _x, _y, _z, _v| c),
        Arc::new(|x| x[0]),
        push,
        cost,
        ControlSet::singleton(),
        vec![(lit(-2.0), lit(2.0))],
    )
    .autonomous(true))
}

/// Exact value of [`builtin_linear_fk`] when the gradient constraint is slack.
pub fn linear_fk_exact<S: Scalar>(c: S, horizon: S, t: S, x: S) -> S {
    x + c * (horizon - t)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section4_defaults() {
        let spec = builtin_section4::<f64>();
        spec.check_structure().unwrap();
        assert_eq!(spec.phi(&[1.0]), 1.0);
        assert_eq!(spec.f(0.3, &[0.5], 7.0, &[2.0], &[-1.0]), 2.0);
        assert!(spec.controls.contains(&[-0.5], 0.0));
        assert!(spec.controls.contains(&[1.5], 0.0));
        assert!(!spec.controls.contains(&[0.5], 0.0));
        let grid = spec.control_grid();
        assert_eq!(grid.len(), 82);
        for anchor in [-1.0, 0.0, 1.0, 2.0] {
            assert!(grid.iter().any(|p| p[0] == anchor), "missing {anchor}");
        }
    }

    #[test]
    fn section4_generator_is_linear_in_z() {
        let spec = builtin_section4::<f64>();
        for &alpha in &[-3.0, -1.0, 0.0, 0.5, 2.0] {
            for &z in &[-1.5, 0.3, 2.0] {
                for &v in &[-1.0, -0.25, 1.0, 2.0] {
                    let lhs = spec.f(0.1, &[0.7], 0.2, &[alpha * z], &[v]);
                    let rhs = alpha * spec.f(0.1, &[0.7], 0.2, &[z], &[v]);
                    assert!((lhs - rhs).abs() <= 1e-14 * (1.0 + rhs.abs()));
                }
            }
        }
    }

    #[test]
    fn wang_and_linear_fk_parameters() {
        let w = builtin_wang::<f64>(0.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(w.phi(&[5.0]), 0.0);
        assert_eq!((w.g(0, 0), w.cost[0]), (1.0, 1.0));
        let w = builtin_wang::<f64>(1.0, 2.0, 1.0, 0.0).unwrap();
        let mut out = [0.0];
        w.b(0.0, &[3.0], &[], &mut out);
        assert_eq!(out[0], 5.0);
        assert!(builtin_wang::<f64>(0.0, 0.0, 0.0, 0.0).is_err());
        assert!(builtin_wang::<f64>(0.0, 0.0, -1.0, 0.0).is_err());

        assert!(builtin_linear_fk::<f64>(1.0, 1.0, 0.0).is_err());
        let fk = builtin_linear_fk::<f64>(1.0, 1.0, 1.0).unwrap();
        assert_eq!(linear_fk_exact(0.0, 1.0, 0.0, 1.0), 1.0);
        assert_eq!(linear_fk_exact(1.0, 1.0, 0.0, 0.0), 1.0);
        // u_x = 1, so u_x G + K = 2
        assert_eq!(1.0 * fk.g(0, 0) + fk.cost[0], 2.0);
        assert_eq!(fk.control_grid().len(), 1);
        assert!(fk.control_grid().point(0).is_empty());
    }

    #[test]
    fn k_zero_fails_a3_only() {
        let mut spec = builtin_section4::<f64>();
        spec.cost = vec![0.0];
        let rep = validate_problem(&spec, 500, 1).unwrap();
        assert!(!rep.passed.a3);
        assert!(rep.passed.a1 && rep.passed.a2);
        let rep = validate_problem(&builtin_section4::<f64>(), 500, 1).unwrap();
        assert!(rep.passed.a3);
    }

    #[test]
    fn structural_errors_name_the_field() {
        let mut spec = builtin_section4::<f64>();
        spec.push = vec![1.0, 2.0];
        match validate_problem(&spec, 10, 0) {
            Err(Error::Dimension { field, .. }) => assert_eq!(field, "G"),
            other => panic!("{other:?}"),
        }
        let mut spec = builtin_section4::<f64>();
        spec.cost = vec![];
        assert!(matches!(spec.check_structure(), Err(Error::Dimension { field, .. }) if field == "K"));
        let mut spec = builtin_section4::<f64>();
        spec.controls = ControlSet::new(vec![]);
        assert!(matches!(spec.check_structure(), Err(Error::Dimension { field, .. }) if field == "U"));
    }

    #[test]
    fn non_finite_output_is_reported() {
        let spec = builtin_section4::<f64>().with_terminal(Arc::new(|x| 1.0 / (x[0] - x[0])));
        assert!(matches!(validate_problem(&spec, 10, 0), Err(Error::Evaluation { what, .. }) if what == "Phi"));
    }

    #[test]
    fn validation_is_deterministic() {
        let spec = builtin_section4::<f64>();
        assert_eq!(validate_problem(&spec, 300, 9).unwrap(), validate_problem(&spec, 300, 9).unwrap());
    }

    #[test]
    fn control_grid_rejects_outside_points() {
        let spec = builtin_section4::<f64>();
        assert!(ControlGrid::from_points(&spec.controls, &[vec![0.5]]).is_err());
        let g = ControlGrid::from_points(&spec.controls, &[vec![-1.0], vec![-1.0], vec![2.0]]).unwrap();
        assert_eq!(g.len(), 2);
    }

    #[test]
    fn f32_builtin_evaluates() {
        let spec = builtin_section4::<f32>();
        assert_eq!(spec.f(0.0, &[1.0], 0.0, &[2.0], &[-1.0]), 2.0f32);
        assert_eq!(spec.control_grid().len(), 82);
    }
}
