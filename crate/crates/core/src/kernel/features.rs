//! Finite-dimensional feature maps with product-over-time structure.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{factorial, normal_moment, shifted_normal_moment};
use crate::path::Path;
use crate::rng::stream_rng;

/// A one-dimensional basis function applied to a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "degree", rename_all = "snake_case")]
pub enum Basis1d {
    /// `x^k`
    Monomial(u32),
    /// Probabilists' Hermite polynomial `He_k(x)`.
    Hermite(u32),
}

impl Basis1d {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Basis1d::Monomial(k) => x.powi(k as i32),
            Basis1d::Hermite(k) => hermite(k, x),
        }
    }

    /// `E[b(Z)]`, `Z ~ N(0, 1)`.
    pub fn gaussian_mean(&self) -> f64 {
        match *self {
            Basis1d::Monomial(k) => normal_moment(k),
            Basis1d::Hermite(k) => {
                if k == 0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `E[b(Z)^2]`.
    pub fn gaussian_second_moment(&self) -> f64 {
        match *self {
            Basis1d::Monomial(k) => normal_moment(2 * k),
            Basis1d::Hermite(k) => factorial(k),
        }
    }

    /// `E[b(m + sZ)]`.
    pub fn shifted_gaussian_mean(&self, m: f64, s: f64) -> f64 {
        match *self {
            Basis1d::Monomial(k) => shifted_normal_moment(m, s, k),
            Basis1d::Hermite(k) => {
                // He_k = sum_j c_j x^j, expanded from the recurrence.
                hermite_coefficients(k)
                    .iter()
                    .enumerate()
                    .map(|(j, c)| c * shifted_normal_moment(m, s, j as u32))
                    .sum()
            }
        }
    }

    pub fn degree(&self) -> u32 {
        match *self {
            Basis1d::Monomial(k) | Basis1d::Hermite(k) => k,
        }
    }
}

fn hermite(k: u32, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

fn hermite_coefficients(k: u32) -> Vec<f64> {
    let mut prev = vec![1.0];
    if k == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for j in 1..k as usize {
        let mut next = vec![0.0; j + 2];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= j as f64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

/// `phi_i(x) = coeff * prod_{t, j} b_{t,j}(x_{t,j})`, one basis function per
/// coordinate of the `d x T` path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductFeature {
    pub coeff: f64,
    pub factors: Vec<Basis1d>,
}

impl ProductFeature {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.coeff
            * self
                .factors
                .iter()
                .zip(x)
                .map(|(b, v)| b.eval(*v))
                .product::<f64>()
    }

    /// Per-step factor `phi_{i,t}` (without the scalar coefficient).
    pub fn step_eval(&self, dim: usize, t: usize, xt: &[f64]) -> f64 {
        self.factors[t * dim..(t + 1) * dim]
            .iter()
            .zip(xt)
            .map(|(b, v)| b.eval(*v))
            .product()
    }

    /// `gamma_{i,t} = E[phi_{i,t}(X_t)]` under the standard normal.
    pub fn step_mean(&self, dim: usize, t: usize) -> f64 {
        self.factors[t * dim..(t + 1) * dim]
            .iter()
            .map(Basis1d::gaussian_mean)
            .product()
    }

    /// `||phi_{i,t}||^2_{2, mu_t}`.
    pub fn step_norm_sq(&self, dim: usize, t: usize) -> f64 {
        self.factors[t * dim..(t + 1) * dim]
            .iter()
            .map(Basis1d::gaussian_second_moment)
            .product()
    }

    pub fn total_degree(&self) -> u32 {
        self.factors.iter().map(Basis1d::degree).sum()
    }
}

/// A feature map `phi = (phi_1, ..., phi_m)` whose features factor over time
/// steps, giving the kernel `k(x, y) = phi(x)^T phi(y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMapSpec {
    dim: usize,
    steps: usize,
    features: Vec<ProductFeature>,
}

impl FeatureMapSpec {
    /// Build and validate a feature map. Linear independence is checked by
    /// the rank of the empirical Gram matrix on a fixed probe sample.
    pub fn new(dim: usize, steps: usize, features: Vec<ProductFeature>) -> Result<Self> {
        let spec = Self::new_unchecked(dim, steps, features)?;
        spec.check_independence()?;
        Ok(spec)
    }

    pub(crate) fn new_unchecked(
        dim: usize,
        steps: usize,
        features: Vec<ProductFeature>,
    ) -> Result<Self> {
        if dim == 0 || steps == 0 {
            return Err(Error::input("feature map needs d >= 1 and T >= 1"));
        }
        if features.is_empty() {
            return Err(Error::input("feature map needs at least one feature"));
        }
        for (i, f) in features.iter().enumerate() {
            if f.factors.len() != dim * steps {
                return Err(Error::input(format!(
                    "feature {i} has {} factors, expected {}",
                    f.factors.len(),
                    dim * steps
                )));
            }
            if !f.coeff.is_finite() || f.coeff == 0.0 {
                return Err(Error::input(format!(
                    "feature {i} has coefficient {}",
                    f.coeff
                )));
            }
        }
        Ok(Self {
            dim,
            steps,
            features,
        })
    }

    /// All monomials `prod x_j^{k_j}` with total degree at most `max_degree`,
    /// in graded lexicographic order starting with the constant.
    pub fn monomials(dim: usize, steps: usize, max_degree: u32) -> Result<Self> {
        let n = dim * steps;
        let mut feats = Vec::new();
        for deg in 0..=max_degree {
            for exps in compositions(n, deg) {
                feats.push(ProductFeature {
                    coeff: 1.0,
                    factors: exps.into_iter().map(Basis1d::Monomial).collect(),
                });
            }
        }
        Self::new(dim, steps, feats)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[ProductFeature] {
        &self.features
    }

    pub fn feature_vector(&self, x: &Path) -> Result<Vec<f64>> {
        x.check_shape(self.dim, self.steps)?;
        Ok(self.features.iter().map(|f| f.eval(x.as_slice())).collect())
    }

    /// `E[phi(X) | F_t]` for the first `t` columns realized (`prefix.len() == d t`).
    pub fn cond_expect_features(&self, prefix: &[f64], t: usize) -> Result<Vec<f64>> {
        if t > self.steps {
            return Err(Error::input(format!(
                "time index {t} outside 0..={}",
                self.steps
            )));
        }
        if prefix.len() != t * self.dim {
            return Err(Error::input(format!(
                "prefix has length {} but t = {t} needs {}",
                prefix.len(),
                t * self.dim
            )));
        }
        Ok(self
            .features
            .iter()
            .map(|f| {
                let realized: f64 = (0..t)
                    .map(|s| f.step_eval(self.dim, s, &prefix[s * self.dim..(s + 1) * self.dim]))
                    .product();
                let future: f64 = (t..self.steps).map(|s| f.step_mean(self.dim, s)).product();
                f.coeff * realized * future
            })
            .collect())
    }

    /// `||kappa||^2_{2,mu} = sum_i ||phi_i||^2`, in closed form.
    pub fn kappa_norm_sq(&self) -> f64 {
        self.features.iter().map(|f| self.feature_norm_sq(f)).sum()
    }

    pub(crate) fn feature_norm_sq(&self, f: &ProductFeature) -> f64 {
        f.coeff
            * f.coeff
            * (0..self.steps)
                .map(|t| f.step_norm_sq(self.dim, t))
                .product::<f64>()
    }

    fn check_independence(&self) -> Result<()> {
        let m = self.features.len();
        let probes = (10 * m).max(200);
        let mut v = DMatrix::<f64>::zeros(probes, m);
        let mut buf = vec![0.0; self.dim * self.steps];
        for r in 0..probes {
            let mut rng = stream_rng(0x5eed_f00d, r as u64);
            for b in buf.iter_mut() {
                *b = StandardNormal.sample(&mut rng);
            }
            for (c, f) in self.features.iter().enumerate() {
                v[(r, c)] = f.eval(&buf);
            }
        }
        // Scale columns so the rank test is insensitive to feature magnitude.
        for c in 0..m {
            let norm = v.column(c).norm();
            if norm == 0.0 {
                return Err(Error::input(format!(
                    "feature {c} vanishes on the probe sample"
                )));
            }
            v.column_mut(c).scale_mut(1.0 / norm);
        }
        let gram = v.transpose() * &v;
        let eig = gram.symmetric_eigenvalues();
        let max = eig.iter().cloned().fold(0.0_f64, f64::max);
        let rank = eig.iter().filter(|&&e| e > 1e-10 * max).count();
        if rank < m {
            return Err(Error::input(format!(
                "features are linearly dependent: probe Gram rank {rank} < {m}"
            )));
        }
        Ok(())
    }
}

/// All vectors of `n` nonnegative integers summing to `total`, in
/// lexicographically decreasing order of the leading entry.
pub(crate) fn compositions(n: usize, total: u32) -> Vec<Vec<u32>> {
    if n == 0 {
        return if total == 0 { vec![vec![]] } else { vec![] };
    }
    let mut out = Vec::new();
    for first in (0..=total).rev() {
        for mut rest in compositions(n - 1, total - first) {
            let mut v = Vec::with_capacity(n);
            v.push(first);
            v.append(&mut rest);
            out.push(v);
        }
    }
    out
}
