//! Euler–Maruyama simulation of the controlled forward SDE with singular pushes,
//! plus path-level consistency checks (Itô residual, moment scaling).
//!
//! Jump convention: a singular increment at node `i` is applied to the left
//! limit `X_i` before the drift and diffusion of interval `i`, so the stored
//! `X_i` is the pre-jump state and `X_i + G Δξ_i` is the right limit.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{Dims, ProblemSpec};
use crate::scalar::{lit, mean_and_stderr, Scalar};

/// Feedback map `(t, x, out)` writing a k-vector (regular) or m-vector (singular).
pub type FeedbackFn<S> = Arc<dyn Fn(S, &[S], &mut [S]) + Send + Sync>;

pub const CONTROL_TOL: f64 = 1e-12;

#[derive(Clone)]
pub enum RegularControlPolicy<S> {
    Constant(Vec<S>),
    /// `v = policy(t, X_{t+})`, evaluated after any singular push at the node.
    Feedback(FeedbackFn<S>),
    /// Either `N*k` values shared by every path or `M*N*k` per-path values.
    OpenLoop(Vec<S>),
}

impl<S: Scalar> RegularControlPolicy<S> {
    pub fn feedback(f: impl Fn(S, &[S], &mut [S]) + Send + Sync + 'static) -> Self {
        Self::Feedback(Arc::new(f))
    }
}

/// Deterministic nondecreasing singular control on a time grid: absolutely
/// continuous rates per step plus sorted jumps at nodes. `ξ_{t0} = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularControlPath<S> {
    pub m: usize,
    /// `steps × m` nonnegative rates, `dξ = rate · dt` on each interval.
    pub rates: Vec<S>,
    /// `(node, Δξ)` with `node < steps`, sorted by node.
    pub jumps: Vec<(usize, Vec<S>)>,
}

impl<S: Scalar> SingularControlPath<S> {
    pub fn zero(m: usize, steps: usize) -> Self {
        Self { m, rates: vec![S::zero(); steps * m], jumps: Vec::new() }
    }

    pub fn single_jump(m: usize, steps: usize, node: usize, size: Vec<S>) -> Self {
        Self { m, rates: vec![S::zero(); steps * m], jumps: vec![(node, size)] }
    }

    pub fn steps(&self) -> usize {
        if self.m == 0 {
            0
        } else {
            self.rates.len() / self.m
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.rates.len() != steps * self.m {
            return Err(Error::Dimension {
                field: "xi.rates".into(),
                detail: format!("expected {} entries, got {}", steps * self.m, self.rates.len()),
            });
        }
        if let Some(r) = self.rates.iter().find(|r| !(**r >= S::zero())) {
            return Err(Error::Contract(format!("singular control rate {r} is negative")));
        }
        let mut last = None;
        for (node, dxi) in &self.jumps {
            if *node >= steps {
                return Err(Error::Contract(format!("jump at node {node} outside [0, {steps})")));
            }
            if dxi.len() != self.m {
                return Err(Error::Dimension { field: "xi.jumps".into(), detail: format!("jump size {dxi:?}") });
            }
            if dxi.iter().any(|h| !(*h >= S::zero())) {
                return Err(Error::Contract(format!("jump {dxi:?} at node {node} is not nonnegative")));
            }
            if last.is_some_and(|l| l >= *node) {
                return Err(Error::Contract("jumps must be sorted by strictly increasing node".into()));
            }
            last = Some(*node);
        }
        Ok(())
    }

    /// Increment `Δξ_i = rate_i dt + jump_i`.
    pub fn increment(&self, step: usize, dt: S, out: &mut [S]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.rates[step * self.m + j] * dt;
        }
        if let Ok(pos) = self.jumps.binary_search_by_key(&step, |(n, _)| *n) {
            for (o, &h) in out.iter_mut().zip(&self.jumps[pos].1) {
                *o += h;
            }
        }
    }

    /// Left-continuous cumulative value `ξ_{t_i}` (increments of nodes `< i`).
    pub fn cumulative(&self, node: usize, dt: S) -> Vec<S> {
        let mut acc = vec![S::zero(); self.m];
        let mut inc = vec![S::zero(); self.m];
        for i in 0..node.min(self.steps()) {
            self.increment(i, dt, &mut inc);
            for (a, &h) in acc.iter_mut().zip(&inc) {
                *a += h;
            }
        }
        acc
    }
}

#[derive(Clone)]
pub enum SingularControl<S> {
    Path(SingularControlPath<S>),
    /// Jump `Δξ = rule(t_i, X_i)` applied at every node from the pre-jump state.
    Feedback(FeedbackFn<S>),
}

impl<S: Scalar> SingularControl<S> {
    pub fn none(m: usize, steps: usize) -> Self {
        Self::Path(SingularControlPath::zero(m, steps))
    }
}

/// Monte Carlo ensemble of forward paths.
#[derive(Clone, Debug)]
pub struct PathBundle<S> {
    pub dims: Dims,
    pub grid: TimeGrid<S>,
    pub paths: usize,
    pub x0: Vec<S>,
    /// `paths × (steps+1) × n`, pre-jump states.
    pub states: Vec<S>,
    /// `paths × steps × d` Brownian increments.
    pub dw: Vec<S>,
    /// `paths × steps × k` applied regular controls.
    pub controls: Vec<S>,
    /// `paths × steps × m` singular increments.
    pub xi: Vec<S>,
    /// `G`, row-major n×m, copied from the problem.
    pub push: Vec<S>,
    pub seed: u64,
}

impl<S: Scalar> PathBundle<S> {
    #[inline]
    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    #[inline]
    pub fn state(&self, path: usize, step: usize) -> &[S] {
        let n = self.dims.n;
        let o = (path * (self.steps() + 1) + step) * n;
        &self.states[o..o + n]
    }

    #[inline]
    pub fn dw(&self, path: usize, step: usize) -> &[S] {
        let d = self.dims.d;
        let o = (path * self.steps() + step) * d;
        &self.dw[o..o + d]
    }

    #[inline]
    pub fn control(&self, path: usize, step: usize) -> &[S] {
        let k = self.dims.k;
        let o = (path * self.steps() + step) * k;
        &self.controls[o..o + k]
    }

    #[inline]
    pub fn xi_increment(&self, path: usize, step: usize) -> &[S] {
        let m = self.dims.m;
        let o = (path * self.steps() + step) * m;
        &self.xi[o..o + m]
    }

    /// Right limit `X_i + G Δξ_i` at node `step` (equals `X_N` at the terminal node).
    pub fn post_jump_state(&self, path: usize, step: usize, out: &mut [S]) {
        out.copy_from_slice(self.state(path, step));
        if step < self.steps() {
            apply_push(&self.push, self.dims.m, self.xi_increment(path, step), out);
        }
    }

    pub fn terminal_states(&self) -> impl Iterator<Item = &[S]> + '_ {
        (0..self.paths).map(move |p| self.state(p, self.steps()))
    }

    /// Writes `path,step,t,x_1..x_n` rows (17 significant digits for f64).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.dims.n;
        let mut header = String::from("path,step,t");
        for i in 1..=n {
            header.push_str(&format!(",x_{i}"));
        }
        writeln!(w, "{header}")?;
        let prec = S::round_trip_digits() - 1;
        for p in 0..self.paths {
            for s in 0..=self.steps() {
                write!(w, "{p},{s},{:.*e}", prec, self.grid.node(s))?;
                for &x in self.state(p, s) {
                    write!(w, ",{:.*e}", prec, x)?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn apply_push<S: Scalar>(push: &[S], m: usize, dxi: &[S], x: &mut [S]) {
    for (i, xi) in x.iter_mut().enumerate() {
        for j in 0..m {
            *xi += push[i * m + j] * dxi[j];
        }
    }
}

/// Per-path RNG: one ChaCha stream per path index, so path `j` is unchanged when
/// the ensemble size changes or paths are simulated on different workers.
pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

#[inline]
pub(crate) fn normal<S: Scalar>(rng: &mut ChaCha8Rng) -> S {
    let z: f64 = StandardNormal.sample(rng);
    lit(z)
}

struct PathData<S> {
    states: Vec<S>,
    dw: Vec<S>,
    controls: Vec<S>,
    xi: Vec<S>,
}

/// Euler–Maruyama: `X_{i+1} = X_i^+ + b(t_i, X_i^+, v_i) dt + σ(t_i, X_i^+, v_i) ΔW_i`
/// with `X_i^+ = X_i + G Δξ_i`.
pub fn simulate_forward<S: Scalar>(
    spec: &ProblemSpec<S>,
    grid: &TimeGrid<S>,
    x0: &[S],
    policy: &RegularControlPolicy<S>,
    xi: &SingularControl<S>,
    paths: usize,
    seed: u64,
) -> Result<PathBundle<S>> {
    spec.check_structure()?;
    let Dims { n, d, k, m } = spec.dims;
    let steps = grid.steps;
    if x0.len() != n {
        return Err(Error::Dimension { field: "x0".into(), detail: format!("expected {n} entries, got {}", x0.len()) });
    }
    if paths == 0 {
        return Err(Error::Config("path count M must be >= 1".into()));
    }
    let ctol = lit::<S>(CONTROL_TOL);
    match policy {
        RegularControlPolicy::Constant(v) => {
            if v.len() != k {
                return Err(Error::Dimension { field: "policy".into(), detail: format!("{v:?}") });
            }
            if !spec.controls.contains(v, ctol) {
                return Err(Error::Contract(format!("constant control {v:?} outside U")));
            }
        }
        RegularControlPolicy::OpenLoop(vals) => {
            if vals.len() != steps * k && vals.len() != paths * steps * k {
                return Err(Error::Dimension {
                    field: "policy".into(),
                    detail: format!("open-loop controls need {} or {} values", steps * k, paths * steps * k),
                });
            }
        }
        RegularControlPolicy::Feedback(_) => {}
    }
    if let SingularControl::Path(p) = xi {
        if p.m != m {
            return Err(Error::Dimension { field: "xi".into(), detail: format!("expected m = {m}, got {}", p.m) });
        }
        p.validate(steps)?;
    }
    let dt = grid.dt();
    let sqdt = dt.sqrt();

    let simulate_path = |path: usize| -> Result<PathData<S>> {
        let mut rng = path_rng(seed, path);
        let mut data = PathData {
            states: Vec::with_capacity((steps + 1) * n),
            dw: Vec::with_capacity(steps * d),
            controls: Vec::with_capacity(steps * k),
            xi: Vec::with_capacity(steps * m),
        };
        let mut x = x0.to_vec();
        let mut v = vec![S::zero(); k];
        let mut dxi = vec![S::zero(); m];
        let mut drift = vec![S::zero(); n];
        let mut vol = vec![S::zero(); n * d];
        let mut dw = vec![S::zero(); d];
        data.states.extend_from_slice(&x);
        for i in 0..steps {
            let t = grid.node(i);
            match xi {
                SingularControl::Path(p) => p.increment(i, dt, &mut dxi),
                SingularControl::Feedback(rule) => {
                    rule(t, &x, &mut dxi);
                    if dxi.iter().any(|h| !(*h >= S::zero())) {
                        return Err(Error::Contract(format!(
                            "singular rule produced {dxi:?} at path {path}, step {i}"
                        )));
                    }
                }
            }
            apply_push(&spec.push, m, &dxi, &mut x);
            match policy {
                RegularControlPolicy::Constant(c) => v.copy_from_slice(c),
                RegularControlPolicy::Feedback(f) => {
                    f(t, &x, &mut v);
                    if !spec.controls.contains(&v, ctol) {
                        return Err(Error::Contract(format!(
                            "policy value {v:?} outside U at path {path}, step {i}"
                        )));
                    }
                }
                RegularControlPolicy::OpenLoop(vals) => {
                    let o = if vals.len() == steps * k { i * k } else { (path * steps + i) * k };
                    v.copy_from_slice(&vals[o..o + k]);
                    if !spec.controls.contains(&v, ctol) {
                        return Err(Error::Contract(format!(
                            "open-loop value {v:?} outside U at path {path}, step {i}"
                        )));
                    }
                }
            }
            spec.b(t, &x, &v, &mut drift);
            spec.sigma(t, &x, &v, &mut vol);
            for w in dw.iter_mut() {
                *w = normal::<S>(&mut rng) * sqdt;
            }
            for a in 0..n {
                let mut acc = x[a] + drift[a] * dt;
                for b in 0..d {
                    acc += vol[a * d + b] * dw[b];
                }
                x[a] = acc;
            }
            if x.iter().any(|u| !u.is_finite()) {
                return Err(Error::Numeric(format!("non-finite state at path {path}, step {}", i + 1)));
            }
            data.states.extend_from_slice(&x);
            data.dw.extend_from_slice(&dw);
            data.controls.extend_from_slice(&v);
            data.xi.extend_from_slice(&dxi);
        }
        Ok(data)
    };

    let per_path: Vec<PathData<S>> = (0..paths)
        .into_par_iter()
        .with_min_len(256)
        .map(simulate_path)
        .collect::<Result<_>>()?;

    let mut bundle = PathBundle {
        dims: spec.dims,
        grid: *grid,
        paths,
        x0: x0.to_vec(),
        states: Vec::with_capacity(paths * (steps + 1) * n),
        dw: Vec::with_capacity(paths * steps * d),
        controls: Vec::with_capacity(paths * steps * k),
        xi: Vec::with_capacity(paths * steps * m),
        push: spec.push.clone(),
        seed,
    };
    for p in per_path {
        bundle.states.extend(p.states);
        bundle.dw.extend(p.dw);
        bundle.controls.extend(p.controls);
        bundle.xi.extend(p.xi);
    }
    Ok(bundle)
}

/// Smooth test function with its derivatives.
#[derive(Clone)]
pub struct TestFunction<S> {
    pub value: Arc<dyn Fn(S, &[S]) -> S + Send + Sync>,
    pub dt: Arc<dyn Fn(S, &[S]) -> S + Send + Sync>,
    /// Gradient, length n.
    pub grad: Arc<dyn Fn(S, &[S], &mut [S]) + Send + Sync>,
    /// Hessian, n×n row-major.
    pub hess: Arc<dyn Fn(S, &[S], &mut [S]) + Send + Sync>,
}

impl<S: Scalar> TestFunction<S> {
    pub fn constant(c: S) -> Self {
        Self {
            value: Arc::new(move |_, _| c),
            dt: Arc::new(|_, _| S::zero()),
            grad: Arc::new(|_, _, g| g.iter_mut().for_each(|x| *x = S::zero())),
            hess: Arc::new(|_, _, h| h.iter_mut().for_each(|x| *x = S::zero())),
        }
    }

    /// `ψ(t, x) = Σ_i x_i^p` for integer `p >= 1`.
    pub fn power_sum(p: i32) -> Self {
        let pf = S::from_i32(p).unwrap();
        Self {
            value: Arc::new(move |_, x| x.iter().map(|&u| u.powi(p)).sum()),
            dt: Arc::new(|_, _| S::zero()),
            grad: Arc::new(move |_, x, g| {
                for (gi, &u) in g.iter_mut().zip(x) {
                    *gi = pf * u.powi(p - 1);
                }
            }),
            hess: Arc::new(move |_, x, h| {
                let n = x.len();
                h.iter_mut().for_each(|e| *e = S::zero());
                if p >= 2 {
                    for i in 0..n {
                        h[i * n + i] = pf * (pf - S::one()) * x[i].powi(p - 2);
                    }
                }
            }),
        }
    }
}

/// Generator `ψ_t + ½ Tr(σσᵀ D²ψ) + ⟨Dψ, b⟩` at a point.
pub(crate) struct GeneratorScratch<S> {
    pub grad: Vec<S>,
    pub hess: Vec<S>,
    pub drift: Vec<S>,
    pub vol: Vec<S>,
}

impl<S: Scalar> GeneratorScratch<S> {
    pub fn new(dims: Dims) -> Self {
        Self {
            grad: vec![S::zero(); dims.n],
            hess: vec![S::zero(); dims.n * dims.n],
            drift: vec![S::zero(); dims.n],
            vol: vec![S::zero(); dims.n * dims.d],
        }
    }

    pub fn generator(&mut self, spec: &ProblemSpec<S>, psi: &TestFunction<S>, t: S, x: &[S], v: &[S]) -> S {
        let Dims { n, d, .. } = spec.dims;
        (psi.grad)(t, x, &mut self.grad);
        (psi.hess)(t, x, &mut self.hess);
        spec.b(t, x, v, &mut self.drift);
        spec.sigma(t, x, v, &mut self.vol);
        let mut acc = (psi.dt)(t, x);
        for i in 0..n {
            acc += self.grad[i] * self.drift[i];
            for j in 0..n {
                let mut a = S::zero();
                for q in 0..d {
                    a += self.vol[i * d + q] * self.vol[j * d + q];
                }
                acc += lit::<S>(0.5) * a * self.hess[i * n + j];
            }
        }
        acc
    }
}

/// Both sides of the expectation identity for `E[ψ(T, X_T)]` and their difference.
#[derive(Clone, Debug, PartialEq)]
pub struct ItoResidual<S> {
    /// `E[ψ(T, X_T)]`.
    pub lhs: S,
    /// `ψ(t0, x0)` plus expected time integral, singular integral and jump corrections.
    pub rhs: S,
    pub time_integral: S,
    pub singular_integral: S,
    pub jump_correction: S,
    /// Mean per-path difference, with the discrete stochastic integral
    /// `Σ Dψ σ ΔW` (zero mean) subtracted as a control variate.
    pub residual: S,
    pub std_error: S,
}

impl<S: Scalar> ItoResidual<S> {
    pub fn within(&self, n_se: S) -> bool {
        self.residual.abs() <= n_se * self.std_error
    }
}

pub fn ito_residual<S: Scalar>(spec: &ProblemSpec<S>, bundle: &PathBundle<S>, psi: &TestFunction<S>) -> Result<ItoResidual<S>> {
    let Dims { n, d, m, .. } = spec.dims;
    let steps = bundle.steps();
    let dt = bundle.grid.dt();
    let t0 = bundle.grid.t0;
    let psi0 = (psi.value)(t0, &bundle.x0);

    struct Row<S> {
        lhs: S,
        time: S,
        sing: S,
        jump: S,
        mart: S,
    }
    let rows: Vec<Row<S>> = (0..bundle.paths)
        .into_par_iter()
        .with_min_len(256)
        .map(|p| {
            let mut scratch = GeneratorScratch::new(spec.dims);
            let mut xp = vec![S::zero(); n];
            let mut gpre = vec![S::zero(); n];
            let mut row = Row { lhs: S::zero(), time: S::zero(), sing: S::zero(), jump: S::zero(), mart: S::zero() };
            for i in 0..steps {
                let t = bundle.grid.node(i);
                let x = bundle.state(p, i);
                let dxi = bundle.xi_increment(p, i);
                if dxi.iter().any(|h| *h != S::zero()) {
                    bundle.post_jump_state(p, i, &mut xp);
                    (psi.grad)(t, x, &mut gpre);
                    let mut lin = S::zero();
                    for a in 0..n {
                        for j in 0..m {
                            lin += gpre[a] * spec.g(a, j) * dxi[j];
                        }
                    }
                    row.sing += lin;
                    row.jump += (psi.value)(t, &xp) - (psi.value)(t, x) - lin;
                } else {
                    xp.copy_from_slice(x);
                }
                let v = bundle.control(p, i);
                row.time += scratch.generator(spec, psi, t, &xp, v) * dt;
                let dw = bundle.dw(p, i);
                for a in 0..n {
                    for q in 0..d {
                        row.mart += scratch.grad[a] * scratch.vol[a * d + q] * dw[q];
                    }
                }
            }
            row.lhs = (psi.value)(bundle.grid.t1, bundle.state(p, steps));
            row
        })
        .collect();

    let vals = |f: &dyn Fn(&Row<S>) -> S| rows.iter().map(f).collect::<Vec<S>>();
    let diffs = vals(&|r| r.lhs - (psi0 + r.time + r.sing + r.jump + r.mart));
    if diffs.iter().any(|x| !x.is_finite()) {
        return Err(Error::Evaluation { what: "test function".into(), point: "along simulated paths".into() });
    }
    let mean = |xs: Vec<S>| mean_and_stderr(&xs).0;
    let (residual, std_error) = mean_and_stderr(&diffs);
    let time_integral = mean(vals(&|r| r.time));
    let singular_integral = mean(vals(&|r| r.sing));
    let jump_correction = mean(vals(&|r| r.jump));
    Ok(ItoResidual {
        lhs: mean(vals(&|r| r.lhs)),
        rhs: psi0 + time_integral + singular_integral + jump_correction,
        time_integral,
        singular_integral,
        jump_correction,
        residual,
        std_error,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentRow<S> {
    pub x0: Vec<S>,
    /// `E[sup_s |X_s|²]`.
    pub sup_second_moment: S,
    /// `E[sup|X|²] / (1 + |x0|²)`.
    pub ratio: S,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentScaling<S> {
    pub rows: Vec<MomentRow<S>>,
    /// Smallest `C` with `E[sup|X|²] <= C (1 + |x|²)` over the list.
    pub c_hat: S,
    /// `(i, j, E[sup|X^{x_i} - X^{x_j}|²] / |x_i - x_j|²)` with common random numbers.
    pub pairwise: Vec<(usize, usize, S)>,
}

impl<S: Scalar> MomentScaling<S> {
    /// Spread `max ratio / min ratio` of the normalized moments.
    pub fn ratio_spread(&self) -> S {
        let max = self.rows.iter().map(|r| r.ratio).fold(S::zero(), S::max);
        let min = self.rows.iter().map(|r| r.ratio).fold(S::infinity(), S::min);
        max / min
    }
}

#[allow(clippy::too_many_arguments)]
pub fn moment_scaling<S: Scalar>(
    spec: &ProblemSpec<S>,
    grid: &TimeGrid<S>,
    x0_list: &[Vec<S>],
    policy: &RegularControlPolicy<S>,
    xi: &SingularControl<S>,
    paths: usize,
    seed: u64,
) -> Result<MomentScaling<S>> {
    if x0_list.len() < 3 {
        return Err(Error::Config("moment scaling needs at least 3 initial states".into()));
    }
    let bundles = x0_list
        .iter()
        .map(|x0| simulate_forward(spec, grid, x0, policy, xi, paths, seed))
        .collect::<Result<Vec<_>>>()?;
    let n = spec.dims.n;
    let steps = grid.steps;
    let sq = |a: &[S]| a.iter().map(|&u| u * u).sum::<S>();
    let rows: Vec<MomentRow<S>> = bundles
        .iter()
        .zip(x0_list)
        .map(|(b, x0)| {
            let sup: Vec<S> = (0..paths)
                .map(|p| (0..=steps).map(|s| sq(b.state(p, s))).fold(S::zero(), S::max))
                .collect();
            let m = mean_and_stderr(&sup).0;
            MomentRow { x0: x0.clone(), sup_second_moment: m, ratio: m / (S::one() + sq(x0)) }
        })
        .collect();
    let c_hat = rows.iter().map(|r| r.ratio).fold(S::zero(), S::max);
    let mut pairwise = Vec::new();
    let mut diff = vec![S::zero(); n];
    for i in 0..bundles.len() {
        for j in i + 1..bundles.len() {
            let denom: S = x0_list[i].iter().zip(&x0_list[j]).map(|(&a, &b)| (a - b) * (a - b)).sum();
            if denom == S::zero() {
                continue;
            }
            let sup: Vec<S> = (0..paths)
                .map(|p| {
                    (0..=steps)
                        .map(|s| {
                            for (dd, (&a, &b)) in diff.iter_mut().zip(bundles[i].state(p, s).iter().zip(bundles[j].state(p, s))) {
                                *dd = a - b;
                            }
                            sq(&diff)
                        })
                        .fold(S::zero(), S::max)
                })
                .collect();
            pairwise.push((i, j, mean_and_stderr(&sup).0 / denom));
        }
    }
    Ok(MomentScaling { rows, c_hat, pairwise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_linear_fk, builtin_section4, ControlSet};

    fn zero_dynamics() -> ProblemSpec<f64> {
        builtin_linear_fk::<f64>(0.0, 1.0, 1.0)
            .unwrap()
            .with_controls(ControlSet::singleton())
            .with_generator(Arc::new(|_, _, _, _, _| 0.0))
    }

    fn still(spec: ProblemSpec<f64>) -> ProblemSpec<f64> {
        let mut s = spec;
        s.diffusion = Arc::new(|_, _, _, out| out[0] = 0.0);
        s
    }

    #[test]
    fn zero_dynamics_stay_put() {
        let spec = still(zero_dynamics());
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let b = simulate_forward(&spec, &grid, &[0.7], &RegularControlPolicy::Constant(vec![]), &SingularControl::none(1, 10), 5, 3).unwrap();
        assert!(b.states.iter().all(|&x| x == 0.7));
    }

    #[test]
    fn single_jump_pushes_by_exact_amount() {
        let spec = still(zero_dynamics());
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let xi = SingularControl::Path(SingularControlPath::single_jump(1, 10, 3, vec![2.0]));
        let b = simulate_forward(&spec, &grid, &[0.5], &RegularControlPolicy::Constant(vec![]), &xi, 2, 3).unwrap();
        for p in 0..2 {
            assert_eq!(b.state(p, 3)[0], 0.5);
            assert_eq!(b.state(p, 4)[0], 2.5);
            assert_eq!(b.state(p, 10)[0], 2.5);
            let mut xp = [0.0];
            b.post_jump_state(p, 3, &mut xp);
            assert_eq!(xp[0], 2.5);
        }
    }

    #[test]
    fn bundles_are_reproducible_and_prefix_stable() {
        let spec = builtin_section4::<f64>();
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let pol = RegularControlPolicy::Constant(vec![-1.0]);
        let xi = SingularControl::none(1, 20);
        let a = simulate_forward(&spec, &grid, &[1.0], &pol, &xi, 300, 42).unwrap();
        let b = simulate_forward(&spec, &grid, &[1.0], &pol, &xi, 300, 42).unwrap();
        assert_eq!(a.states, b.states);
        assert_eq!(a.dw, b.dw);
        let c = simulate_forward(&spec, &grid, &[1.0], &pol, &xi, 700, 42).unwrap();
        assert_eq!(&c.states[..a.states.len()], &a.states[..]);
        let d = simulate_forward(&spec, &grid, &[1.0], &pol, &xi, 300, 43).unwrap();
        assert_ne!(a.states, d.states);
    }

    #[test]
    fn control_outside_u_is_a_contract_error() {
        let spec = builtin_section4::<f64>();
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let xi = SingularControl::none(1, 4);
        let r = simulate_forward(&spec, &grid, &[1.0], &RegularControlPolicy::Constant(vec![0.5]), &xi, 2, 0);
        assert!(matches!(r, Err(Error::Contract(_))));
        let fb = RegularControlPolicy::feedback(|_, x: &[f64], v: &mut [f64]| v[0] = if x[0] > 0.0 { 0.5 } else { 0.0 });
        let r = simulate_forward(&spec, &grid, &[1.0], &fb, &xi, 2, 0);
        assert!(matches!(r, Err(Error::Contract(_))));
        let bad = SingularControl::Path(SingularControlPath::single_jump(1, 4, 1, vec![-1.0]));
        let r = simulate_forward(&spec, &grid, &[1.0], &RegularControlPolicy::Constant(vec![0.0]), &bad, 2, 0);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn cumulative_xi_is_nondecreasing_from_zero() {
        let mut p = SingularControlPath::single_jump(1, 8, 2, vec![0.5]);
        p.rates = vec![0.0, 1.0, 0.0, 2.0, 0.0, 0.0, 0.5, 0.0];
        p.validate(8).unwrap();
        let dt = 0.125f64;
        assert_eq!(p.cumulative(0, dt), vec![0.0]);
        let mut prev = 0.0f64;
        for i in 0..=8 {
            let c = p.cumulative(i, dt)[0];
            assert!(c >= prev);
            prev = c;
        }
        assert!((prev - (0.5 + 3.5 * dt)).abs() < 1e-15);
    }

    #[test]
    fn constant_test_function_has_zero_residual() {
        let spec = builtin_section4::<f64>();
        let grid = TimeGrid::new(0.0, 1.0, 16).unwrap();
        let xi = SingularControl::Path(SingularControlPath::single_jump(1, 16, 5, vec![0.3]));
        let b = simulate_forward(&spec, &grid, &[1.0], &RegularControlPolicy::Constant(vec![2.0]), &xi, 200, 1).unwrap();
        let r = ito_residual(&spec, &b, &TestFunction::constant(3.5)).unwrap();
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.std_error, 0.0);
    }

    #[test]
    fn path_csv_has_documented_header() {
        let spec = still(zero_dynamics());
        let grid = TimeGrid::new(0.0, 1.0, 2).unwrap();
        let b = simulate_forward(&spec, &grid, &[0.25], &RegularControlPolicy::Constant(vec![]), &SingularControl::none(1, 2), 1, 0).unwrap();
        let mut out = Vec::new();
        b.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("path,step,t,x_1"));
        assert_eq!(text.lines().count(), 4);
        let last: Vec<&str> = text.lines().last().unwrap().split(',').collect();
        assert_eq!(last[3].parse::<f64>().unwrap(), 0.25);
    }
}
