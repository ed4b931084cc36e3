//! Kernels with product-over-time structure and closed-form one-step
//! Gaussian expectations.
//!
//! Every kernel here can be written as
//! `k(x, y) = sum_i prod_t k_{i,t}(x_t, y_t)` with factors whose expectation
//! `U_{i,t}(y) = E[k_{i,t}(X_t, y)]` under a standard normal `X_t` is known in
//! closed form. That makes `E[k(X, y) | F_t]` available in closed form:
//! realized steps enter through `k_{i,s}`, future steps through `U_{i,s}`.

mod features;

pub use features::{Basis1d, FeatureMapSpec, ProductFeature};

use serde::{Deserialize, Serialize};

use crate::error::{checked_exp, Error, Result};
use crate::path::Path;
use crate::sampling::log_rn_weight;

/// `k(x, y) = exp(-alpha |x - y|^2 + beta x^T y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussExpParams {
    pub alpha: f64,
    pub beta: f64,
    pub dim: usize,
    pub steps: usize,
}

impl GaussExpParams {
    pub fn new(alpha: f64, beta: f64, dim: usize, steps: usize) -> Result<Self> {
        let p = Self {
            alpha,
            beta,
            dim,
            steps,
        };
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::input(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(0.0..0.5).contains(&self.beta) {
            return Err(Error::input(format!(
                "beta must lie in [0, 1/2), got {}",
                self.beta
            )));
        }
        if self.alpha == 0.0 && self.beta == 0.0 {
            return Err(Error::input(
                "(alpha, beta) = (0, 0) gives a constant kernel",
            ));
        }
        if self.dim == 0 || self.steps == 0 {
            return Err(Error::input("d and T must be positive"));
        }
        Ok(())
    }

    /// `log U_1(y)` for the one-step factor.
    fn log_u(&self, y: &[f64]) -> f64 {
        let (a, b) = (self.alpha, self.beta);
        let ny: f64 = y.iter().map(|v| v * v).sum();
        -0.5 * self.dim as f64 * (1.0 + 2.0 * a).ln()
            + (b * b + 4.0 * a * b - 2.0 * a) / (4.0 * a + 2.0) * ny
    }

    fn log_factor(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut dist = 0.0;
        let mut dot = 0.0;
        for (u, v) in x.iter().zip(y) {
            dist += (u - v) * (u - v);
            dot += u * v;
        }
        -self.alpha * dist + self.beta * dot
    }
}

/// `k(x, y) = exp(-alpha |x - y|^2) (1 + x^T y)^beta` with integer degree
/// `beta`, expanded into explicit multinomial features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussPolyParams {
    pub alpha: f64,
    pub degree: u32,
    pub dim: usize,
    pub steps: usize,
    #[serde(skip)]
    expansion: Option<FeatureMapSpec>,
}

/// Largest polynomial degree with an explicit feature expansion.
pub const MAX_POLY_DEGREE: u32 = 4;
/// Largest `d * T` with an explicit feature expansion.
pub const MAX_POLY_COORDS: usize = 8;

impl GaussPolyParams {
    pub fn new(alpha: f64, degree: u32, dim: usize, steps: usize) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::input(format!("alpha must be >= 0, got {alpha}")));
        }
        if dim == 0 || steps == 0 {
            return Err(Error::input("d and T must be positive"));
        }
        if degree > MAX_POLY_DEGREE || dim * steps > MAX_POLY_COORDS {
            return Err(Error::capability(format!(
                "polynomial expansion supports degree <= {MAX_POLY_DEGREE} and dT <= \
                 {MAX_POLY_COORDS}; got degree {degree}, dT = {}",
                dim * steps
            )));
        }
        let expansion = Some(poly_expansion(degree, dim, steps)?);
        Ok(Self {
            alpha,
            degree,
            dim,
            steps,
            expansion,
        })
    }

    /// Multinomial features `phi` with `(1 + x^T y)^beta = phi(x)^T phi(y)`.
    pub fn expansion(&self) -> &FeatureMapSpec {
        self.expansion
            .as_ref()
            .expect("expansion is built on construction and on deserialization")
    }

    fn rebuild(&mut self) -> Result<()> {
        if self.expansion.is_none() {
            *self = Self::new(self.alpha, self.degree, self.dim, self.steps)?;
        }
        Ok(())
    }
}

fn poly_expansion(degree: u32, dim: usize, steps: usize) -> Result<FeatureMapSpec> {
    let n = dim * steps;
    let beta_fact = crate::numeric::factorial(degree);
    let feats = features::compositions(n + 1, degree)
        .into_iter()
        .map(|k| {
            let denom: f64 = k.iter().map(|&e| crate::numeric::factorial(e)).product();
            ProductFeature {
                coeff: (beta_fact / denom).sqrt(),
                factors: k[1..].iter().map(|&e| Basis1d::Monomial(e)).collect(),
            }
        })
        .collect();
    FeatureMapSpec::new_unchecked(dim, steps, feats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    GaussExp(GaussExpParams),
    GaussPoly(GaussPolyParams),
    FeatureMap(FeatureMapSpec),
}

/// Whether the tilted kernel satisfies the moment conditions used by the
/// error bounds: finite fourth moment of the tilted diagonal, and a bounded
/// tilted diagonal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TiltConditions {
    pub fourth_moment: bool,
    pub bounded: bool,
}

/// A kernel together with the Gaussian measure-change tilt `gamma < 1/2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub gamma: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, gamma: f64) -> Result<Self> {
        if !(gamma < 0.5) || !gamma.is_finite() {
            return Err(Error::input(format!("gamma must be < 1/2, got {gamma}")));
        }
        let mut family = family;
        match &mut family {
            KernelFamily::GaussExp(p) => p.validate()?,
            KernelFamily::GaussPoly(p) => p.rebuild()?,
            KernelFamily::FeatureMap(_) => {}
        }
        Ok(Self { family, gamma })
    }

    pub fn gauss_exp(alpha: f64, beta: f64, dim: usize, steps: usize, gamma: f64) -> Result<Self> {
        Self::new(
            KernelFamily::GaussExp(GaussExpParams::new(alpha, beta, dim, steps)?),
            gamma,
        )
    }

    pub fn gauss_poly(
        alpha: f64,
        degree: u32,
        dim: usize,
        steps: usize,
        gamma: f64,
    ) -> Result<Self> {
        Self::new(
            KernelFamily::GaussPoly(GaussPolyParams::new(alpha, degree, dim, steps)?),
            gamma,
        )
    }

    pub fn feature_map(spec: FeatureMapSpec, gamma: f64) -> Result<Self> {
        Self::new(KernelFamily::FeatureMap(spec), gamma)
    }

    /// Re-derive cached state after deserialization.
    pub fn restore(self) -> Result<Self> {
        Self::new(self.family, self.gamma)
    }

    pub fn dim(&self) -> usize {
        match &self.family {
            KernelFamily::GaussExp(p) => p.dim,
            KernelFamily::GaussPoly(p) => p.dim,
            KernelFamily::FeatureMap(f) => f.dim(),
        }
    }

    pub fn steps(&self) -> usize {
        match &self.family {
            KernelFamily::GaussExp(p) => p.steps,
            KernelFamily::GaussPoly(p) => p.steps,
            KernelFamily::FeatureMap(f) => f.steps(),
        }
    }

    /// Number of product terms `m` in the factorization.
    pub fn num_terms(&self) -> usize {
        match &self.family {
            KernelFamily::GaussExp(_) => 1,
            KernelFamily::GaussPoly(p) => p.expansion().len(),
            KernelFamily::FeatureMap(f) => f.len(),
        }
    }

    pub fn tilt_conditions(&self) -> TiltConditions {
        match &self.family {
            KernelFamily::GaussExp(p) => TiltConditions {
                fourth_moment: p.beta < self.gamma + 0.25,
                bounded: p.beta <= self.gamma,
            },
            _ => TiltConditions {
                fourth_moment: true,
                bounded: self.gamma > 0.0,
            },
        }
    }

    fn check(&self, x: &Path) -> Result<()> {
        x.check_shape(self.dim(), self.steps())
    }

    /// `k(x, y)`.
    pub fn eval(&self, x: &Path, y: &Path) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        if x.bitwise_eq(y) {
            return self.diag(x);
        }
        self.eval_slices(x.as_slice(), y.as_slice())
    }

    pub(crate) fn eval_slices(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        match &self.family {
            KernelFamily::GaussExp(p) => checked_exp(p.log_factor(x, y), "kernel"),
            KernelFamily::GaussPoly(p) => {
                let (dist, dot) = dist_dot(x, y);
                Ok((-p.alpha * dist).exp() * (1.0 + dot).powi(p.degree as i32))
            }
            KernelFamily::FeatureMap(f) => {
                Ok(f.features().iter().map(|g| g.eval(x) * g.eval(y)).sum())
            }
        }
    }

    /// `k(x, x)`, computed without forming `x - x`.
    pub fn diag(&self, x: &Path) -> Result<f64> {
        self.check(x)?;
        let nx = x.norm_sq();
        match &self.family {
            KernelFamily::GaussExp(p) => checked_exp(p.beta * nx, "kernel diagonal"),
            KernelFamily::GaussPoly(p) => Ok((1.0 + nx).powi(p.degree as i32)),
            KernelFamily::FeatureMap(f) => Ok(f
                .features()
                .iter()
                .map(|g| {
                    let v = g.eval(x.as_slice());
                    v * v
                })
                .sum()),
        }
    }

    /// `kappa(x) = sqrt(k(x, x))`.
    pub fn kappa(&self, x: &Path) -> Result<f64> {
        Ok(self.diag(x)?.sqrt())
    }

    /// `k~(x, y) = k(x, y) / sqrt(w(x) w(y))` for the Gaussian tilt `w`.
    pub fn eval_tilted(&self, x: &Path, y: &Path) -> Result<f64> {
        self.check(x)?;
        self.check(y)?;
        let g = self.gamma;
        match &self.family {
            KernelFamily::GaussExp(p) => {
                let (dist, dot) = if x.bitwise_eq(y) {
                    (0.0, x.norm_sq())
                } else {
                    dist_dot(x.as_slice(), y.as_slice())
                };
                let dt = (p.dim * p.steps) as f64;
                let exponent = -0.5 * dt * (1.0 - 2.0 * g).ln() - (p.alpha + 0.5 * g) * dist
                    + (p.beta - g) * dot;
                checked_exp(exponent, "tilted kernel")
            }
            _ => {
                let k = self.eval(x, y)?;
                let scale = checked_exp(
                    -0.5 * (log_rn_weight(g, x) + log_rn_weight(g, y)),
                    "tilted kernel",
                )?;
                Ok(k * scale)
            }
        }
    }

    /// `kappa~(x) = kappa(x) / sqrt(w(x))`.
    pub fn kappa_tilted(&self, x: &Path) -> Result<f64> {
        Ok(self.eval_tilted(x, x)?.sqrt())
    }

    /// `U_{i,t}(y) = E[k_{i,t}(X_t, y)]` for the zero-based step `t` and a
    /// per-step point `y` in `R^d`.
    pub fn u_factor(&self, i: usize, t: usize, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(Error::input(format!(
                "per-step point has length {} but d = {}",
                y.len(),
                self.dim()
            )));
        }
        if t >= self.steps() {
            return Err(Error::input(format!(
                "step {t} outside 0..{}",
                self.steps()
            )));
        }
        if i >= self.num_terms() {
            return Err(Error::input(format!(
                "term {i} outside 0..{}",
                self.num_terms()
            )));
        }
        match &self.family {
            KernelFamily::GaussExp(p) => checked_exp(p.log_u(y), "U factor"),
            KernelFamily::GaussPoly(p) => {
                let (log_env, poly) = expansion_u(p.alpha, p.expansion(), i, t, y);
                Ok(checked_exp(log_env, "U factor")? * poly)
            }
            KernelFamily::FeatureMap(f) => {
                let (log_env, poly) = expansion_u(0.0, f, i, t, y);
                Ok(log_env.exp() * poly)
            }
        }
    }

    /// `E[k(X, y) | F_t]` where the first `t` columns of `X` are `prefix`.
    pub fn cond_expect(&self, prefix: &[f64], y: &Path, t: usize) -> Result<f64> {
        self.check(y)?;
        let (d, steps) = (self.dim(), self.steps());
        if t > steps {
            return Err(Error::input(format!("time index {t} outside 0..={steps}")));
        }
        if prefix.len() != t * d {
            return Err(Error::input(format!(
                "prefix has length {} but t = {t} needs {}",
                prefix.len(),
                t * d
            )));
        }
        if t == steps {
            let x = Path::new(d, steps, prefix.to_vec())?;
            return self.eval(&x, y);
        }
        let ys = y.as_slice();
        match &self.family {
            KernelFamily::GaussExp(p) => {
                let mut e = 0.0;
                for s in 0..t {
                    e += p.log_factor(&prefix[s * d..(s + 1) * d], &ys[s * d..(s + 1) * d]);
                }
                for s in t..steps {
                    e += p.log_u(&ys[s * d..(s + 1) * d]);
                }
                checked_exp(e, "conditional expectation")
            }
            KernelFamily::GaussPoly(p) => expansion_cond(p.alpha, p.expansion(), prefix, ys, t),
            KernelFamily::FeatureMap(f) => expansion_cond(0.0, f, prefix, ys, t),
        }
    }

    /// `E[k(X, y) | F_t]` for every `t = 0..=T` along the realized path `x`.
    pub fn cond_expect_series(&self, x: &Path, y: &Path) -> Result<Vec<f64>> {
        self.check(x)?;
        self.check(y)?;
        let (d, steps) = (self.dim(), self.steps());
        match &self.family {
            KernelFamily::GaussExp(p) => {
                let (xs, ys) = (x.as_slice(), y.as_slice());
                let mut out = Vec::with_capacity(steps + 1);
                let mut future: f64 = (0..steps).map(|s| p.log_u(&ys[s * d..(s + 1) * d])).sum();
                let mut past = 0.0;
                out.push(checked_exp(future, "conditional expectation")?);
                for s in 0..steps {
                    let (xs_s, ys_s) = (&xs[s * d..(s + 1) * d], &ys[s * d..(s + 1) * d]);
                    past += p.log_factor(xs_s, ys_s);
                    future -= p.log_u(ys_s);
                    if s + 1 == steps {
                        out.push(self.eval(x, y)?);
                    } else {
                        out.push(checked_exp(past + future, "conditional expectation")?);
                    }
                }
                Ok(out)
            }
            _ => (0..=steps)
                .map(|t| self.cond_expect(x.prefix(t), y, t))
                .collect(),
        }
    }

    /// Fast path used by the estimators: `log E[k(X, y) | F_t]` pieces for
    /// the Gaussian-exponentiated kernel, or `None` for other families.
    pub(crate) fn gauss_exp_params(&self) -> Option<&GaussExpParams> {
        match &self.family {
            KernelFamily::GaussExp(p) => Some(p),
            _ => None,
        }
    }

    pub(crate) fn log_u_step(p: &GaussExpParams, y: &[f64]) -> f64 {
        p.log_u(y)
    }

    pub(crate) fn log_factor_step(p: &GaussExpParams, x: &[f64], y: &[f64]) -> f64 {
        p.log_factor(x, y)
    }
}

fn dist_dot(x: &[f64], y: &[f64]) -> (f64, f64) {
    let mut dist = 0.0;
    let mut dot = 0.0;
    for (u, v) in x.iter().zip(y) {
        dist += (u - v) * (u - v);
        dot += u * v;
    }
    (dist, dot)
}

/// Per-step polynomial factor `p_{i,t}`: the step monomial, carrying the
/// feature's scalar coefficient on the first step.
fn step_poly(f: &ProductFeature, dim: usize, t: usize, x: &[f64]) -> f64 {
    let c = if t == 0 { f.coeff } else { 1.0 };
    c * f.step_eval(dim, t, x)
}

/// `E[p_{i,t}(m + s Z)]` with `m = 2 alpha y / (1 + 2 alpha)` and
/// `s = (1 + 2 alpha)^{-1/2}`.
fn step_poly_shifted_mean(f: &ProductFeature, dim: usize, t: usize, alpha: f64, y: &[f64]) -> f64 {
    let c = if t == 0 { f.coeff } else { 1.0 };
    let shift = 2.0 * alpha / (1.0 + 2.0 * alpha);
    let s = 1.0 / (1.0 + 2.0 * alpha).sqrt();
    c * f.factors[t * dim..(t + 1) * dim]
        .iter()
        .zip(y)
        .map(|(b, v)| b.shifted_gaussian_mean(shift * v, s))
        .product::<f64>()
}

/// Log Gaussian envelope and polynomial part of `U_{i,t}(y)` for kernels
/// `exp(-alpha |x - y|^2) phi(x)^T phi(y)`.
fn expansion_u(alpha: f64, f: &FeatureMapSpec, i: usize, t: usize, y: &[f64]) -> (f64, f64) {
    let d = f.dim();
    let feat = &f.features()[i];
    let ny: f64 = y.iter().map(|v| v * v).sum();
    let log_env = -alpha / (1.0 + 2.0 * alpha) * ny - 0.5 * d as f64 * (1.0 + 2.0 * alpha).ln();
    let poly = step_poly(feat, d, t, y) * step_poly_shifted_mean(feat, d, t, alpha, y);
    (log_env, poly)
}

fn expansion_cond(
    alpha: f64,
    f: &FeatureMapSpec,
    prefix: &[f64],
    ys: &[f64],
    t: usize,
) -> Result<f64> {
    let (d, steps) = (f.dim(), f.steps());
    let mut log_env = 0.0;
    for s in 0..t {
        let (x_s, y_s) = (&prefix[s * d..(s + 1) * d], &ys[s * d..(s + 1) * d]);
        log_env -= alpha * dist_dot(x_s, y_s).0;
    }
    for s in t..steps {
        let y_s = &ys[s * d..(s + 1) * d];
        let ny: f64 = y_s.iter().map(|v| v * v).sum();
        log_env += -alpha / (1.0 + 2.0 * alpha) * ny - 0.5 * d as f64 * (1.0 + 2.0 * alpha).ln();
    }
    let poly: f64 = f
        .features()
        .iter()
        .map(|feat| {
            let mut acc = 1.0;
            for s in 0..t {
                let (x_s, y_s) = (&prefix[s * d..(s + 1) * d], &ys[s * d..(s + 1) * d]);
                acc *= step_poly(feat, d, s, x_s) * step_poly(feat, d, s, y_s);
            }
            for s in t..steps {
                let y_s = &ys[s * d..(s + 1) * d];
                acc *= step_poly(feat, d, s, y_s) * step_poly_shifted_mean(feat, d, s, alpha, y_s);
            }
            acc
        })
        .sum();
    Ok(checked_exp(log_env, "conditional expectation")? * poly)
}

#[cfg(test)]
mod tests;
