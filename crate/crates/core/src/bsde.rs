//! Least-squares Monte Carlo solver for the controlled BSDE
//! `-dY = f(s, X, Y, Z, v) ds + K dξ - Z dW`, `Y_T = Φ(X_T)`.
//!
//! Conditional expectations at node `i` are regressions on the right limit
//! `X_i^+`. The backward step is
//! `Y_i = Ŷ_i + f(t_i, X_i^+, Ŷ_i, Z_i, v_i) dt + K·Δξ_i` with
//! `Ŷ_i = E[Y_{i+1} | X_i^+]`, `Z_i = E[(Y_{i+1} - Ȳ_{i+1}) ΔW_i | X_i^+] / dt`, `Ȳ_{i+1}` the mean over paths.

use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::model::{Dims, ProblemSpec};
use crate::regression::{PolyFit, DEFAULT_DEGREE, DEFAULT_RIDGE};
use crate::scalar::{lit, mean_and_stderr, Scalar};
use crate::sde::{simulate_forward, PathBundle, RegularControlPolicy, SingularControl};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BsdeOptions {
    /// Total polynomial degree of the regression basis.
    pub degree: usize,
    pub ridge: f64,
    /// Fixed-point passes on `y` inside the generator; 0 is the explicit scheme.
    pub picard: usize,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        Self { degree: DEFAULT_DEGREE, ridge: DEFAULT_RIDGE, picard: 0 }
    }
}

/// Monte Carlo settings shared by the path-based checks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McConfig {
    pub paths: usize,
    /// Euler steps per unit of time (at least one step per window).
    pub steps_per_unit: usize,
    pub seed: u64,
    pub bsde: BsdeOptions,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { paths: 20_000, steps_per_unit: 50, seed: 0x5eed, bsde: BsdeOptions::default() }
    }
}

impl McConfig {
    /// Number of Euler steps covering a window of length `span`.
    pub fn steps_for<S: Scalar>(&self, span: S) -> usize {
        (span * S::from_usize_lossy(self.steps_per_unit)).round().to_usize().unwrap_or(1).max(1)
    }
}

/// Regression fits for one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFit {
    pub y: PolyFit,
    /// One fit per Brownian component.
    pub z: Vec<PolyFit>,
}

#[derive(Clone, Debug)]
pub struct BsdeSolution<S> {
    pub y0: S,
    pub z0: Vec<S>,
    /// Standard error of `y0`: sample deviation of the pathwise sums over `√M`.
    pub std_error: S,
    /// `paths × (steps+1)` values `Y_i` along each path.
    pub y: Vec<S>,
    /// `Φ(X_N) + Σ_i (f_i dt + K·Δξ_i)` per path; its mean equals `y0`.
    pub pathwise: Vec<S>,
    pub fits: Vec<StepFit>,
    pub ridge_fallback: bool,
    pub grid: TimeGrid<S>,
}

impl<S: Scalar> BsdeSolution<S> {
    pub fn y_at(&self, path: usize, step: usize) -> S {
        self.y[path * (self.grid.steps + 1) + step]
    }

    /// Regression estimates `(Ŷ_i, Z_i)` at a right-limit state `x`.
    pub fn continuation(&self, step: usize, x: &[S]) -> (S, Vec<S>) {
        let xf: Vec<f64> = x.iter().map(|v| v.to_f64_lossy()).collect();
        let fit = &self.fits[step];
        (lit(fit.y.predict(&xf)), fit.z.iter().map(|z| lit(z.predict(&xf))).collect())
    }

    /// `Y_i` as a function of the state when no singular increment is applied at node `i`.
    pub fn value_function(&self, spec: &ProblemSpec<S>, step: usize, x: &[S], v: &[S]) -> S {
        if step == self.grid.steps {
            return spec.phi(x);
        }
        let (yh, z) = self.continuation(step, x);
        yh + spec.f(self.grid.node(step), x, yh, &z, v) * self.grid.dt()
    }
}

/// Solves the BSDE along `bundle` with terminal condition `Φ(X_N)`.
pub fn solve_bsde<S: Scalar>(spec: &ProblemSpec<S>, bundle: &PathBundle<S>, opts: &BsdeOptions) -> Result<BsdeSolution<S>> {
    let phi = spec.terminal.clone();
    solve_bsde_with_terminal(spec, bundle, &*phi, opts)
}

/// Terminal condition given as a map of the terminal state.
pub fn solve_bsde_with_terminal<S: Scalar>(
    spec: &ProblemSpec<S>,
    bundle: &PathBundle<S>,
    terminal: &(dyn Fn(&[S]) -> S + Send + Sync),
    opts: &BsdeOptions,
) -> Result<BsdeSolution<S>> {
    let values: Vec<S> = bundle.terminal_states().map(terminal).collect();
    solve_bsde_terminal_values(spec, bundle, &values, opts)
}

/// Terminal condition given as one value per path.
pub fn solve_bsde_terminal_values<S: Scalar>(
    spec: &ProblemSpec<S>,
    bundle: &PathBundle<S>,
    terminal: &[S],
    opts: &BsdeOptions,
) -> Result<BsdeSolution<S>> {
    if bundle.dims != spec.dims {
        return Err(Error::Dimension { field: "bundle".into(), detail: "path bundle does not match the problem dimensions".into() });
    }
    let Dims { n, d, m, .. } = spec.dims;
    let steps = bundle.steps();
    let paths = bundle.paths;
    let dt = bundle.grid.dt();
    let dtf = dt.to_f64_lossy();

    let mut y = vec![S::zero(); paths * (steps + 1)];
    if terminal.len() != paths {
        return Err(Error::Dimension { field: "terminal".into(), detail: format!("{} values for {paths} paths", terminal.len()) });
    }
    let mut pathwise = terminal.to_vec();
    for (p, s) in pathwise.iter().enumerate() {
        if !s.is_finite() {
            return Err(Error::Evaluation { what: "terminal".into(), point: format!("{:?}", bundle.state(p, steps)) });
        }
        y[p * (steps + 1) + steps] = *s;
    }
    let mut fits: Vec<StepFit> = Vec::with_capacity(steps);
    let mut fallback = false;
    let mut next: Vec<f64> = pathwise.iter().map(|v| v.to_f64_lossy()).collect();
    let mut xplus = vec![0.0f64; paths * n];
    let mut target = vec![0.0f64; paths];

    for i in (0..steps).rev() {
        let t = bundle.grid.node(i);
        xplus.par_chunks_mut(n).enumerate().for_each(|(p, out)| {
            let mut tmp = vec![S::zero(); n];
            bundle.post_jump_state(p, i, &mut tmp);
            for (o, v) in out.iter_mut().zip(&tmp) {
                *o = v.to_f64_lossy();
            }
        });
        let yfit = PolyFit::fit(&xplus, n, &next, opts.degree, opts.ridge)?;
        // centring Y_{i+1} makes Z exactly invariant to constant shifts
        let ybar = next.iter().sum::<f64>() / paths as f64;
        let mut zfits = Vec::with_capacity(d);
        for q in 0..d {
            target.par_iter_mut().enumerate().for_each(|(p, tg)| {
                *tg = (next[p] - ybar) * bundle.dw(p, i)[q].to_f64_lossy() / dtf;
            });
            zfits.push(PolyFit::fit(&xplus, n, &target, opts.degree, opts.ridge)?);
        }
        fallback |= yfit.ridge_fallback || zfits.iter().any(|z| z.ridge_fallback);

        let step = StepFit { y: yfit, z: zfits };
        let results: Vec<(S, S)> = (0..paths)
            .into_par_iter()
            .with_min_len(1024)
            .map(|p| {
                let xf = &xplus[p * n..(p + 1) * n];
                let xs: Vec<S> = xf.iter().map(|&v| lit(v)).collect();
                let yh: S = lit(step.y.predict(xf));
                let z: Vec<S> = step.z.iter().map(|f| lit(f.predict(xf))).collect();
                let v = bundle.control(p, i);
                let mut yc = yh;
                let mut drive = spec.f(t, &xs, yc, &z, v);
                for _ in 0..opts.picard {
                    yc = yh + drive * dt;
                    drive = spec.f(t, &xs, yc, &z, v);
                }
                let dxi = bundle.xi_increment(p, i);
                let mut push_cost = S::zero();
                for j in 0..m {
                    push_cost += spec.cost[j] * dxi[j];
                }
                let inc = drive * dt + push_cost;
                (yh + inc, inc)
            })
            .collect();
        for (p, (yi, inc)) in results.into_iter().enumerate() {
            if !yi.is_finite() {
                return Err(Error::Numeric(format!("non-finite Y at path {p}, step {i}")));
            }
            y[p * (steps + 1) + i] = yi;
            next[p] = yi.to_f64_lossy();
            pathwise[p] += inc;
        }
        fits.push(step);
    }
    fits.reverse();

    let y0 = mean_and_stderr(&(0..paths).map(|p| y[p * (steps + 1)]).collect::<Vec<S>>()).0;
    let (_, std_error) = mean_and_stderr(&pathwise);
    let z0 = if steps > 0 {
        let x0: Vec<f64> = {
            let mut tmp = vec![S::zero(); n];
            bundle.post_jump_state(0, 0, &mut tmp);
            tmp.iter().map(|v| v.to_f64_lossy()).collect()
        };
        fits[0].z.iter().map(|z| lit(z.predict(&x0))).collect()
    } else {
        vec![S::zero(); d]
    };
    Ok(BsdeSolution { y0, z0, std_error, y, pathwise, fits, ridge_fallback: fallback, grid: bundle.grid })
}

/// Simulates `paths` forward paths and solves the BSDE: the Monte Carlo
/// estimate of the cost `J(t0, x0; v, ξ)`.
#[allow(clippy::too_many_arguments)]
pub fn cost_functional<S: Scalar>(
    spec: &ProblemSpec<S>,
    grid: &TimeGrid<S>,
    x0: &[S],
    policy: &RegularControlPolicy<S>,
    xi: &SingularControl<S>,
    paths: usize,
    seed: u64,
    opts: &BsdeOptions,
) -> Result<BsdeSolution<S>> {
    let bundle = simulate_forward(spec, grid, x0, policy, xi, paths, seed)?;
    solve_bsde(spec, &bundle, opts)
}

/// Backward semigroup `G_{t, t+δ}[η]` at `x`: the BSDE on `[t, t+δ]` with terminal `η`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemigroupEstimate<S> {
    pub value: S,
    pub std_error: S,
}

/// `G_{t,t1}[η]` started from `x` at `t`, with `mc.steps_for(t1 - t)` Euler steps.
#[allow(clippy::too_many_arguments)]
pub fn backward_semigroup<S: Scalar>(
    spec: &ProblemSpec<S>,
    t: S,
    t1: S,
    x: &[S],
    policy: &RegularControlPolicy<S>,
    xi: &SingularControl<S>,
    eta: &(dyn Fn(&[S]) -> S + Send + Sync),
    mc: &McConfig,
) -> Result<SemigroupEstimate<S>> {
    if !(t < t1) || t1 > spec.horizon + lit(1e-12) {
        return Err(Error::Config(format!("backward semigroup needs t < t1 <= T, got [{t}, {t1}]")));
    }
    let grid = TimeGrid::new(t, t1, mc.steps_for(t1 - t))?;
    let bundle = simulate_forward(spec, &grid, x, policy, xi, mc.paths, mc.seed)?;
    let sol = solve_bsde_with_terminal(spec, &bundle, eta, &mc.bsde)?;
    Ok(SemigroupEstimate { value: sol.y0, std_error: sol.std_error })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonResult<S> {
    pub y1: S,
    pub y2: S,
    /// Standard error of `y1 - y2` from the pathwise differences.
    pub std_error: S,
    /// `y1 - y2 >= -3 SE`.
    pub passed: bool,
}

/// Compares two problems sharing forward dynamics on a common path bundle.
/// `spec1` should dominate `spec2` (larger generator and terminal cost).
pub fn comparison_check<S: Scalar>(
    spec1: &ProblemSpec<S>,
    spec2: &ProblemSpec<S>,
    bundle: &PathBundle<S>,
    opts: &BsdeOptions,
) -> Result<ComparisonResult<S>> {
    if spec1.dims != spec2.dims {
        return Err(Error::Dimension { field: "spec2".into(), detail: "problems differ in dimensions".into() });
    }
    let s2 = solve_bsde(spec2, bundle, opts)?;
    check_domination(spec1, spec2, bundle, &s2)?;
    let s1 = solve_bsde(spec1, bundle, opts)?;
    let diffs: Vec<S> = s1.pathwise.iter().zip(&s2.pathwise).map(|(a, b)| *a - *b).collect();
    let (_, se) = mean_and_stderr(&diffs);
    let passed = s1.y0 - s2.y0 >= -lit::<S>(3.0) * se;
    Ok(ComparisonResult { y1: s1.y0, y2: s2.y0, std_error: se, passed })
}

/// Precondition of [`comparison_check`] on sampled arguments: terminal values
/// per path and generators along the first paths at the second solution's `(Y, Z)`.
fn check_domination<S: Scalar>(spec1: &ProblemSpec<S>, spec2: &ProblemSpec<S>, bundle: &PathBundle<S>, s2: &BsdeSolution<S>) -> Result<()> {
    let tol = lit::<S>(1e-12);
    for (p, x) in bundle.terminal_states().enumerate() {
        let (a, b) = (spec1.phi(x), spec2.phi(x));
        if a < b - tol {
            return Err(Error::Contract(format!("terminal values not ordered on path {p}: {a} < {b}")));
        }
    }
    let n = spec1.dims.n;
    let mut xp = vec![S::zero(); n];
    for p in 0..bundle.paths.min(64) {
        for i in 0..bundle.steps() {
            bundle.post_jump_state(p, i, &mut xp);
            let t = bundle.grid.node(i);
            let (yh, z) = s2.continuation(i, &xp);
            let v = bundle.control(p, i);
            let (a, b) = (spec1.f(t, &xp, yh, &z, v), spec2.f(t, &xp, yh, &z, v));
            if a < b - tol {
                return Err(Error::Contract(format!("generators not ordered on path {p}, step {i}: {a} < {b}")));
            }
        }
    }
    Ok(())
}

/// Convenience wrapper: generator `f` replaced by `f + extra`.
pub fn shifted_generator<S: Scalar>(spec: &ProblemSpec<S>, extra: Arc<dyn Fn(S, &[S], S, &[S], &[S]) -> S + Send + Sync>) -> ProblemSpec<S> {
    let base = spec.generator.clone();
    spec.clone().with_generator(Arc::new(move |t, x, y, z, v| base(t, x, y, z, v) + extra(t, x, y, z, v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_linear_fk, builtin_section4};
    use crate::sde::SingularControlPath;

    #[test]
    fn linear_fk_value_and_telescoping_mean() {
        let spec = builtin_linear_fk::<f64>(0.5, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let sol = cost_functional(&spec, &grid, &[0.3], &RegularControlPolicy::Constant(vec![]), &SingularControl::none(1, 20), 20_000, 7, &BsdeOptions::default()).unwrap();
        let mean_sum = sol.pathwise.iter().sum::<f64>() / sol.pathwise.len() as f64;
        assert!((mean_sum - sol.y0).abs() < 1e-10, "{mean_sum} vs {}", sol.y0);
        assert!((sol.y0 - 0.8).abs() < 4.0 * sol.std_error + 1e-3);
        assert!((sol.z0[0] - 1.0).abs() < 0.05, "z0 = {:?}", sol.z0);
    }

    #[test]
    fn deterministic_fixed_control_is_exact_up_to_euler_bias() {
        // v = 0 freezes the noise: dX = X ds, Y = X_T
        let spec = builtin_section4::<f64>();
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let sol = cost_functional(&spec, &grid, &[0.5], &RegularControlPolicy::Constant(vec![0.0]), &SingularControl::none(1, 200), 50, 1, &BsdeOptions::default()).unwrap();
        assert!(sol.std_error < 1e-14);
        let euler = 0.5 * (1.0f64 + 1.0 / 200.0).powi(200);
        assert!((sol.y0 - euler).abs() < 1e-12);
    }

    #[test]
    fn jump_cost_enters_linearly() {
        let spec = builtin_linear_fk::<f64>(0.0, 1.0, 2.0).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let pol = RegularControlPolicy::Constant(vec![]);
        let xi = SingularControl::Path(SingularControlPath::single_jump(1, 10, 4, vec![0.25]));
        let sol = cost_functional(&spec, &grid, &[0.0], &pol, &xi, 10_000, 3, &BsdeOptions::default()).unwrap();
        // E[X_T] + K h = 0.25 + 0.5
        assert!((sol.y0 - 0.75).abs() < 4.0 * sol.std_error, "{} ± {}", sol.y0, sol.std_error);
    }
}
