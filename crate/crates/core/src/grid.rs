//! Uniform time and space grids.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<S> {
    pub t0: S,
    pub t1: S,
    pub steps: usize,
}

impl<S: Scalar> TimeGrid<S> {
    pub fn new(t0: S, t1: S, steps: usize) -> Result<Self> {
        if !(t0 < t1) || !t0.is_finite() || !t1.is_finite() {
            return Err(Error::Config(format!("time grid needs t0 < T, got [{t0}, {t1}]")));
        }
        if steps == 0 {
            return Err(Error::Config("time grid needs at least one step".into()));
        }
        Ok(Self { t0, t1, steps })
    }

    #[inline]
    pub fn dt(&self) -> S {
        (self.t1 - self.t0) / S::from_usize_lossy(self.steps)
    }

    /// Node time; the last node is `t1` exactly.
    #[inline]
    pub fn node(&self, i: usize) -> S {
        if i == self.steps {
            self.t1
        } else {
            self.t0 + self.dt() * S::from_usize_lossy(i)
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = S> + '_ {
        (0..=self.steps).map(move |i| self.node(i))
    }

    /// Index of the node closest to `t`, if `t` lies within half a step of a node.
    pub fn index_of(&self, t: S) -> Option<usize> {
        let pos = (t - self.t0) / self.dt();
        let i = pos.round();
        if i < S::zero() || i > S::from_usize_lossy(self.steps) {
            return None;
        }
        let i = i.to_usize()?;
        if (self.node(i) - t).abs() <= self.dt() * S::lit(1e-6) {
            Some(i)
        } else {
            None
        }
    }
}

/// Tensor grid on a box in `n <= 2` dimensions. Node ordering is row-major
/// with dimension 0 varying fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceGrid<S> {
    pub lo: Vec<S>,
    pub hi: Vec<S>,
    pub nodes: Vec<usize>,
}

impl<S: Scalar> SpaceGrid<S> {
    pub fn new(lo: Vec<S>, hi: Vec<S>, nodes: Vec<usize>) -> Result<Self> {
        let n = lo.len();
        if n == 0 || n > 2 || hi.len() != n || nodes.len() != n {
            return Err(Error::Config(format!("space grid supports 1 or 2 dimensions, got {n}")));
        }
        for i in 0..n {
            if !(lo[i] < hi[i]) {
                return Err(Error::Config(format!("space grid dimension {i}: x_min must be < x_max")));
            }
            if nodes[i] < 3 {
                return Err(Error::Config(format!("space grid dimension {i}: need at least 3 nodes")));
            }
        }
        Ok(Self { lo, hi, nodes })
    }

    /// One-dimensional grid `[lo, hi]` with spacing as close to `dx` as divides the interval.
    pub fn uniform_1d(lo: S, hi: S, dx: S) -> Result<Self> {
        if !(dx > S::zero()) {
            return Err(Error::Config(format!("dx must be positive, got {dx}")));
        }
        let cells = ((hi - lo) / dx).round().to_usize().unwrap_or(0);
        Self::new(vec![lo], vec![hi], vec![cells + 1])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn dx(&self, dim: usize) -> S {
        (self.hi[dim] - self.lo[dim]) / S::from_usize_lossy(self.nodes[dim] - 1)
    }

    #[inline]
    pub fn coord(&self, dim: usize, i: usize) -> S {
        if i + 1 == self.nodes[dim] {
            self.hi[dim]
        } else {
            self.lo[dim] + self.dx(dim) * S::from_usize_lossy(i)
        }
    }

    /// Multi-index of a flat node index.
    #[inline]
    pub fn unflatten(&self, mut flat: usize) -> [usize; 2] {
        let mut idx = [0usize; 2];
        for (d, &n) in self.nodes.iter().enumerate() {
            idx[d] = flat % n;
            flat /= n;
        }
        idx
    }

    #[inline]
    pub fn flatten(&self, idx: &[usize]) -> usize {
        let mut flat = 0;
        let mut stride = 1;
        for (d, &n) in self.nodes.iter().enumerate() {
            flat += idx[d] * stride;
            stride *= n;
        }
        flat
    }

    #[inline]
    pub fn stride(&self, dim: usize) -> usize {
        self.nodes[..dim].iter().product()
    }

    pub fn point(&self, flat: usize, out: &mut [S]) {
        let idx = self.unflatten(flat);
        for d in 0..self.dim() {
            out[d] = self.coord(d, idx[d]);
        }
    }

    pub fn points(&self) -> Vec<Vec<S>> {
        (0..self.len())
            .map(|f| {
                let mut p = vec![S::zero(); self.dim()];
                self.point(f, &mut p);
                p
            })
            .collect()
    }

    pub fn contains(&self, x: &[S]) -> bool {
        let tol = S::lit(1e-12);
        (0..self.dim()).all(|d| x[d] >= self.lo[d] - tol && x[d] <= self.hi[d] + tol)
    }

    /// Number of nodes excluded on each side of dimension `dim` by a margin fraction.
    pub fn margin_nodes(&self, dim: usize, fraction: S) -> usize {
        (S::from_usize_lossy(self.nodes[dim] - 1) * fraction).ceil().to_usize().unwrap_or(0)
    }

    /// True if the node lies at least `margin` nodes away from every face.
    pub fn is_interior(&self, flat: usize, margin: &[usize]) -> bool {
        let idx = self.unflatten(flat);
        (0..self.dim()).all(|d| idx[d] >= margin[d] && idx[d] + margin[d] < self.nodes[d])
    }

    /// Multilinear interpolation of nodal `values` at `x`; `None` outside the box.
    pub fn interpolate(&self, values: &[S], x: &[S]) -> Option<S> {
        if !self.contains(x) {
            return None;
        }
        let n = self.dim();
        let mut base = [0usize; 2];
        let mut w = [S::zero(); 2];
        for d in 0..n {
            let pos = ((x[d] - self.lo[d]) / self.dx(d)).max(S::zero());
            let cells = self.nodes[d] - 1;
            let mut i = pos.floor().to_usize().unwrap_or(0).min(cells - 1);
            let mut frac = pos - S::from_usize_lossy(i);
            if frac > S::one() {
                frac = S::one();
            }
            // snap to nodes so grid-aligned queries return exact nodal values
            if frac <= S::lit(1e-12) {
                frac = S::zero();
            } else if frac >= S::one() - S::lit(1e-12) {
                i += 1;
                frac = S::zero();
                if i == cells {
                    i -= 1;
                    frac = S::one();
                }
            }
            base[d] = i;
            w[d] = frac;
        }
        let mut acc = S::zero();
        for corner in 0..(1usize << n) {
            let mut weight = S::one();
            let mut idx = [0usize; 2];
            for d in 0..n {
                let up = (corner >> d) & 1 == 1;
                idx[d] = base[d] + usize::from(up);
                let wd = if up { w[d] } else { S::one() - w[d] };
                if wd == S::zero() {
                    weight = S::zero();
                    break;
                }
                weight *= wd;
            }
            if weight != S::zero() {
                acc += weight * values[self.flatten(&idx[..n])];
            }
        }
        Some(acc)
    }
}
