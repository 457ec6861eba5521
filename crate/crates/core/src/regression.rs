//! Least-squares regression on a standardized polynomial basis, used for the
//! conditional expectations of the backward scheme.
//!
//! Fitting is done in `f64` whatever the scalar type; the normal equations are
//! small (basis size at most a few dozen) and f32 accumulation over 1e5 rows is
//! not accurate enough.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Fitted regression `y ≈ Σ c_k ψ_k((x - mean) / scale)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyFit {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Dimensions with non-degenerate spread; the others are not in the basis.
    pub active: Vec<usize>,
    /// Exponents over `active`, first entry is the intercept.
    pub exponents: Vec<Vec<u32>>,
    pub coef: Vec<f64>,
    /// Set when Cholesky needed a larger ridge than requested.
    pub ridge_fallback: bool,
}

fn exponents(dim: usize, degree: usize) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == dim {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur.push(e);
            rec(dim, left - e, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree as u32, &mut Vec::new(), &mut out);
    out.sort_by_key(|e| (e.iter().sum::<u32>(), std::cmp::Reverse(e.clone())));
    out
}

/// Number of basis functions of total degree `<= degree` in `dim` variables.
pub fn basis_size(dim: usize, degree: usize) -> usize {
    exponents(dim, degree).len()
}

impl PolyFit {
    /// Fits rows `xs` (`rows × n`, row-major) to `ys`. The degree is lowered
    /// when there are fewer rows than twice the basis size.
    pub fn fit(xs: &[f64], n: usize, ys: &[f64], degree: usize, ridge: f64) -> Result<Self> {
        let rows = ys.len();
        if rows == 0 || xs.len() != rows * n {
            return Err(Error::Dimension { field: "regression".into(), detail: format!("{} inputs for {rows} targets", xs.len()) });
        }
        let mut mean = vec![0.0; n];
        let mut scale = vec![1.0; n];
        let mut active = Vec::new();
        for d in 0..n {
            let m = (0..rows).map(|r| xs[r * n + d]).sum::<f64>() / rows as f64;
            let var = (0..rows).map(|r| (xs[r * n + d] - m).powi(2)).sum::<f64>() / rows as f64;
            mean[d] = m;
            let sd = var.sqrt();
            if sd > 1e-12 * (1.0 + m.abs()) {
                scale[d] = sd;
                active.push(d);
            }
        }
        let mut deg = if active.is_empty() { 0 } else { degree };
        while deg > 0 && basis_size(active.len(), deg) * 2 > rows {
            deg -= 1;
        }
        let exps = exponents(active.len(), deg);
        let p = exps.len();
        let mut fit = Self { mean, scale, active, exponents: exps, coef: vec![0.0; p], ridge_fallback: false };

        let (gram, rhs) = (0..rows)
            .into_par_iter()
            .with_min_len(4096)
            .fold(
                || (vec![0.0; p * p], vec![0.0; p], vec![0.0; p]),
                |(mut g, mut b, mut phi), r| {
                    fit.basis(&xs[r * n..(r + 1) * n], &mut phi);
                    for a in 0..p {
                        b[a] += phi[a] * ys[r];
                        for c in 0..=a {
                            g[a * p + c] += phi[a] * phi[c];
                        }
                    }
                    (g, b, phi)
                },
            )
            .map(|(g, b, _)| (g, b))
            .reduce(
                || (vec![0.0; p * p], vec![0.0; p]),
                |(mut g1, mut b1), (g2, b2)| {
                    g1.iter_mut().zip(&g2).for_each(|(a, b)| *a += b);
                    b1.iter_mut().zip(&b2).for_each(|(a, b)| *a += b);
                    (g1, b1)
                },
            );
        let inv = 1.0 / rows as f64;
        let mut lam = ridge;
        for attempt in 0..8 {
            let mut a = vec![0.0; p * p];
            for i in 0..p {
                for j in 0..=i {
                    a[i * p + j] = gram[i * p + j] * inv;
                }
                if i > 0 {
                    a[i * p + i] += lam;
                }
            }
            if let Some(l) = cholesky(&mut a, p) {
                let b: Vec<f64> = rhs.iter().map(|v| v * inv).collect();
                fit.coef = cholesky_solve(l, p, &b);
                fit.ridge_fallback = attempt > 0;
                if fit.coef.iter().all(|c| c.is_finite()) {
                    return Ok(fit);
                }
            }
            lam = if lam > 0.0 { lam * 100.0 } else { 1e-10 };
        }
        Err(Error::Numeric("regression normal equations are singular".into()))
    }

    /// Constant fit (used where every row has the same input).
    pub fn constant(n: usize, value: f64) -> Self {
        Self {
            mean: vec![0.0; n],
            scale: vec![1.0; n],
            active: Vec::new(),
            exponents: vec![Vec::new()],
            coef: vec![value],
            ridge_fallback: false,
        }
    }

    fn basis(&self, x: &[f64], out: &mut [f64]) {
        let mut z = [0.0f64; 8];
        let mut zs = Vec::new();
        let zr: &mut [f64] = if self.active.len() <= 8 {
            &mut z[..self.active.len()]
        } else {
            zs.resize(self.active.len(), 0.0);
            &mut zs
        };
        for (k, &d) in self.active.iter().enumerate() {
            zr[k] = (x[d] - self.mean[d]) / self.scale[d];
        }
        for (o, e) in out.iter_mut().zip(&self.exponents) {
            *o = e.iter().zip(zr.iter()).map(|(&p, &v)| v.powi(p as i32)).product();
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut phi = vec![0.0; self.coef.len()];
        self.basis(x, &mut phi);
        phi.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }

    pub fn len(&self) -> usize {
        self.coef.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coef.is_empty()
    }
}

/// In-place lower Cholesky factor of a symmetric matrix given by its lower triangle.
fn cholesky(a: &mut [f64], p: usize) -> Option<&[f64]> {
    for j in 0..p {
        let mut s = a[j * p + j];
        for k in 0..j {
            s -= a[j * p + k] * a[j * p + k];
        }
        if !(s > 0.0) || !s.is_finite() {
            return None;
        }
        let d = s.sqrt();
        a[j * p + j] = d;
        for i in j + 1..p {
            let mut s = a[i * p + j];
            for k in 0..j {
                s -= a[i * p + k] * a[j * p + k];
            }
            a[i * p + j] = s / d;
        }
    }
    Some(a)
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes() {
        assert_eq!(basis_size(1, 3), 4);
        assert_eq!(basis_size(2, 2), 6);
        assert_eq!(basis_size(0, 3), 1);
        assert_eq!(exponents(2, 1)[0], vec![0, 0]);
    }

    #[test]
    fn recovers_cubic() {
        let xs: Vec<f64> = (0..200).map(|i| -2.0 + 4.0 * i as f64 / 199.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x * x * x).collect();
        let fit = PolyFit::fit(&xs, 1, &ys, 3, 0.0).unwrap();
        for &x in &[-1.7, 0.0, 0.3, 1.9] {
            assert!((fit.predict(&[x]) - (1.0 - 2.0 * x + 0.5 * x * x * x)).abs() < 1e-9);
        }
    }

    #[test]
    fn residuals_have_zero_mean_with_ridge() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 7919) % 500) as f64 / 100.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
        let fit = PolyFit::fit(&xs, 1, &ys, 3, 1e-3).unwrap();
        let mean_res: f64 = xs.iter().zip(&ys).map(|(x, y)| y - fit.predict(&[*x])).sum::<f64>() / 500.0;
        assert!(mean_res.abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_give_the_mean() {
        let xs = vec![1.5; 10];
        let ys: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let fit = PolyFit::fit(&xs, 1, &ys, 3, 1e-8).unwrap();
        assert_eq!(fit.len(), 1);
        assert!((fit.predict(&[1.5]) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_with_one_frozen_coordinate() {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..100 {
            let a = i as f64 / 10.0;
            xs.extend_from_slice(&[a, 2.0]);
            ys.push(2.0 * a + 1.0);
        }
        let fit = PolyFit::fit(&xs, 2, &ys, 2, 0.0).unwrap();
        assert_eq!(fit.active, vec![0]);
        assert!((fit.predict(&[3.3, 2.0]) - 7.6).abs() < 1e-9);
    }
}
