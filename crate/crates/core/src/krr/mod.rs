//! Kernel ridge regression on importance-weighted samples.
//!
//! With training paths `X_j` drawn from a sampling measure with
//! Radon-Nikodym weights `w_j`, the dual problem is
//!
//! ```text
//! ((1/n) K~ + lambda) g = f~,   K~_ij = k(X_i, X_j) / sqrt(w_i w_j),   f~_i = f(X_i) / sqrt(w_i)
//! ```
//!
//! and the fitted function is `f_X(x) = (1/n) sum_j k(x, X_j) g_j / sqrt(w_j)`.
//! The sorted variant collapses bitwise-identical paths into one center with
//! multiplicity `|I_j|`; the primal variant solves the `m x m` normal
//! equations of a finite feature map instead.

pub(crate) mod solve;

pub use solve::MIN_RCOND;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{FeatureMapSpec, KernelSpec};
use crate::path::Path;
use crate::sampling::{SamplingDesign, TrainingSet};
use solve::factor_regularized;

/// Largest number of distinct centers accepted by the dense dual solver.
pub const MAX_DUAL_CENTERS: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Coefficients {
    Dual {
        centers: Vec<Path>,
        /// Solution of the (sorted or unsorted) linear system.
        solution: Vec<f64>,
        multiplicities: Vec<usize>,
        /// `1 / sqrt(w)` at each center.
        inv_sqrt_weights: Vec<f64>,
        sorted: bool,
    },
    Primal {
        features: FeatureMapSpec,
        h: Vec<f64>,
    },
}

/// A fitted estimator. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimator {
    pub kernel: KernelSpec,
    pub design: SamplingDesign,
    pub lambda: f64,
    /// Training sample size `n` (counting duplicates).
    pub n: usize,
    pub coefficients: Coefficients,
    /// SHA-256 of the training CSV.
    pub training_hash: Option<String>,
    #[serde(skip)]
    effective: Vec<f64>,
}

impl Estimator {
    fn build(
        kernel: KernelSpec,
        design: SamplingDesign,
        lambda: f64,
        n: usize,
        coefficients: Coefficients,
    ) -> Result<Self> {
        let mut est = Self {
            kernel,
            design,
            lambda,
            n,
            coefficients,
            training_hash: None,
            effective: Vec::new(),
        };
        est.finish()?;
        Ok(est)
    }

    fn finish(&mut self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::input(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        let (d, steps) = (self.kernel.dim(), self.kernel.steps());
        self.effective = match &self.coefficients {
            Coefficients::Dual {
                centers,
                solution,
                multiplicities,
                inv_sqrt_weights,
                ..
            } => {
                let m = centers.len();
                if solution.len() != m || multiplicities.len() != m || inv_sqrt_weights.len() != m {
                    return Err(Error::data(
                        "dual coefficient arrays have inconsistent lengths",
                    ));
                }
                for c in centers {
                    c.check_shape(d, steps)?;
                }
                let n = self.n as f64;
                solution
                    .iter()
                    .zip(multiplicities)
                    .zip(inv_sqrt_weights)
                    .map(|((g, &mult), s)| (mult as f64).sqrt() * g * s / n)
                    .collect()
            }
            Coefficients::Primal { features, h } => {
                if h.len() != features.len() {
                    return Err(Error::data(
                        "primal coefficients do not match the feature map",
                    ));
                }
                h.clone()
            }
        };
        if let Some(i) = self.effective.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("coefficient {i} is not finite")));
        }
        Ok(())
    }

    pub fn is_dual(&self) -> bool {
        matches!(self.coefficients, Coefficients::Dual { .. })
    }

    /// Coefficients `c_j` such that `f_X(x) = sum_j c_j k(x, X_j)` (dual) or
    /// `f_X(x) = sum_i c_i phi_i(x)` (primal).
    pub fn effective_coefficients(&self) -> &[f64] {
        &self.effective
    }

    /// Centers of the dual representation (empty for primal estimators).
    pub fn centers(&self) -> &[Path] {
        match &self.coefficients {
            Coefficients::Dual { centers, .. } => centers,
            Coefficients::Primal { .. } => &[],
        }
    }

    /// The raw system solution (`g~`, `g-bar` or `h`).
    pub fn solution(&self) -> &[f64] {
        match &self.coefficients {
            Coefficients::Dual { solution, .. } => solution,
            Coefficients::Primal { h, .. } => h,
        }
    }

    /// `f_X(x)` in the nominal representation.
    pub fn predict(&self, x: &Path) -> Result<f64> {
        x.check_shape(self.kernel.dim(), self.kernel.steps())?;
        match &self.coefficients {
            Coefficients::Dual { centers, .. } => {
                let terms = centers
                    .iter()
                    .zip(&self.effective)
                    .map(|(c, a)| Ok(a * self.kernel.eval(x, c)?))
                    .collect::<Result<Vec<_>>>()?;
                Ok(crate::numeric::pairwise_sum(&terms))
            }
            Coefficients::Primal { features, .. } => {
                let phi = features.feature_vector(x)?;
                Ok(dot(&phi, &self.effective))
            }
        }
    }

    pub fn predict_many(&self, xs: &[Path]) -> Result<Vec<f64>> {
        xs.par_iter().map(|x| self.predict(x)).collect()
    }

    pub fn with_training_hash(mut self, hash: String) -> Self {
        self.training_hash = Some(hash);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut est: Estimator = serde_json::from_str(s)?;
        est.kernel = est.kernel.restore()?;
        est.finish()?;
        Ok(est)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Whether `K~` can use the kernel's closed-form tilt rather than dividing by
/// the stored weights.
fn closed_form_tilt(ts: &TrainingSet, kernel: &KernelSpec) -> Result<bool> {
    match &ts.design {
        SamplingDesign::Tilted(m) => {
            if m.gamma != kernel.gamma {
                return Err(Error::input(format!(
                    "kernel tilt gamma = {} does not match the sampling measure gamma = {}",
                    kernel.gamma, m.gamma
                )));
            }
            Ok(true)
        }
        SamplingDesign::Mixture { .. } => Ok(false),
    }
}

fn check_kernel_shape(ts: &TrainingSet, kernel: &KernelSpec) -> Result<()> {
    if ts.dim() != kernel.dim() || ts.steps() != kernel.steps() {
        return Err(Error::input(format!(
            "training paths are {}x{} but the kernel expects {}x{}",
            ts.dim(),
            ts.steps(),
            kernel.dim(),
            kernel.steps()
        )));
    }
    Ok(())
}

/// Group bitwise-identical paths. Returns representative indices and the
/// group of every path, in order of first appearance.
fn group_duplicates(paths: &[Path]) -> (Vec<usize>, Vec<usize>) {
    use std::collections::HashMap;
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut reps = Vec::new();
    let mut group = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let key: Vec<u64> = p.as_slice().iter().map(|v| v.to_bits()).collect();
        let g = *index.entry(key).or_insert_with(|| {
            reps.push(i);
            reps.len() - 1
        });
        group.push(g);
    }
    (reps, group)
}

/// The assembled dual system `(1/n) K-bar` and right-hand side, reusable
/// across several `lambda`.
pub struct DualSystem {
    kernel: KernelSpec,
    design: SamplingDesign,
    n: usize,
    sorted: bool,
    centers: Vec<Path>,
    multiplicities: Vec<usize>,
    inv_sqrt_weights: Vec<f64>,
    /// `(1/n) K-bar`.
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    training_hash: String,
}

impl DualSystem {
    /// Assemble the unsorted (`sorted = false`) or sorted system.
    pub fn assemble(ts: &TrainingSet, kernel: &KernelSpec, sorted: bool) -> Result<Self> {
        check_kernel_shape(ts, kernel)?;
        let closed = closed_form_tilt(ts, kernel)?;
        let n = ts.len();
        let ft = ts.tilted_values();
        let (reps, group) = if sorted {
            group_duplicates(&ts.paths)
        } else {
            ((0..n).collect(), (0..n).collect())
        };
        let m = reps.len();
        if m > MAX_DUAL_CENTERS {
            return Err(Error::capability(format!(
                "dual fit with {m} distinct centers exceeds the dense limit of \
                 {MAX_DUAL_CENTERS}; use a primal (feature-map) fit"
            )));
        }
        let mut multiplicities = vec![0usize; m];
        let mut rhs = DVector::zeros(m);
        for (i, &g) in group.iter().enumerate() {
            multiplicities[g] += 1;
            rhs[g] += ft[i];
        }
        for g in 0..m {
            rhs[g] /= (multiplicities[g] as f64).sqrt();
        }
        let centers: Vec<Path> = reps.iter().map(|&i| ts.paths[i].clone()).collect();
        let inv_sqrt_weights: Vec<f64> = reps.iter().map(|&i| 1.0 / ts.weights[i].sqrt()).collect();
        let sqrt_mult: Vec<f64> = multiplicities.iter().map(|&c| (c as f64).sqrt()).collect();
        let inv_n = 1.0 / n as f64;

        let columns: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|j| {
                (0..m)
                    .map(|i| {
                        let kt = if closed {
                            kernel.eval_tilted(&centers[i], &centers[j])?
                        } else {
                            kernel.eval(&centers[i], &centers[j])?
                                * inv_sqrt_weights[i]
                                * inv_sqrt_weights[j]
                        };
                        Ok(sqrt_mult[i] * kt * sqrt_mult[j] * inv_n)
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<_>>()?;
        let gram = DMatrix::from_iterator(m, m, columns.into_iter().flatten());
        if let Some(pos) = gram.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "kernel matrix entry ({}, {}) is not finite",
                pos % m,
                pos / m
            )));
        }
        Ok(Self {
            kernel: kernel.clone(),
            design: ts.design.clone(),
            n,
            sorted,
            centers,
            multiplicities,
            inv_sqrt_weights,
            gram,
            rhs,
            training_hash: ts.content_hash()?,
        })
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    /// `(1/n) K-bar`.
    pub fn scaled_gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn solve(&self, lambda: f64) -> Result<Estimator> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let solver = factor_regularized(a, lambda, "dual system")?;
        let g = solver.solve(&self.rhs);
        Estimator::build(
            self.kernel.clone(),
            self.design.clone(),
            lambda,
            self.n,
            Coefficients::Dual {
                centers: self.centers.clone(),
                solution: g.iter().copied().collect(),
                multiplicities: self.multiplicities.clone(),
                inv_sqrt_weights: self.inv_sqrt_weights.clone(),
                sorted: self.sorted,
            },
        )
        .map(|e| e.with_training_hash(self.training_hash.clone()))
    }

    /// `||((1/n) K-bar + lambda) g - f-bar|| / ||f-bar||` (absolute when
    /// `f-bar = 0`).
    pub fn residual(&self, solution: &[f64], lambda: f64) -> Result<f64> {
        if solution.len() != self.num_centers() {
            return Err(Error::input("solution length does not match the system"));
        }
        let g = DVector::from_column_slice(solution);
        let r = &self.gram * &g + &g * lambda - &self.rhs;
        Ok(relative(r.norm(), self.rhs.norm()))
    }
}

fn relative(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        num
    }
}

/// Unsorted dual fit: one coefficient per training path.
pub fn fit_dual_unsorted(ts: &TrainingSet, kernel: &KernelSpec, lambda: f64) -> Result<Estimator> {
    DualSystem::assemble(ts, kernel, false)?.solve(lambda)
}

/// Sorted dual fit: duplicates (bitwise-equal paths) collapse into one
/// center with multiplicity.
pub fn fit_dual_sorted(ts: &TrainingSet, kernel: &KernelSpec, lambda: f64) -> Result<Estimator> {
    DualSystem::assemble(ts, kernel, true)?.solve(lambda)
}

/// The primal normal equations `((1/n) V~^T V~ + lambda) h = (1/n) V~^T f~`.
pub struct PrimalSystem {
    kernel: KernelSpec,
    features: FeatureMapSpec,
    design: SamplingDesign,
    n: usize,
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
    training_hash: String,
}

impl PrimalSystem {
    pub fn assemble(ts: &TrainingSet, features: &FeatureMapSpec) -> Result<Self> {
        let gamma = match &ts.design {
            SamplingDesign::Tilted(m) => m.gamma,
            SamplingDesign::Mixture { .. } => 0.0,
        };
        let kernel = KernelSpec::feature_map(features.clone(), gamma)?;
        check_kernel_shape(ts, &kernel)?;
        let n = ts.len();
        let m = features.len();
        let ft = ts.tilted_values();
        let rows: Vec<Vec<f64>> = ts
            .paths
            .par_iter()
            .zip(&ts.weights)
            .map(|(p, w)| {
                let s = 1.0 / w.sqrt();
                Ok(features
                    .feature_vector(p)?
                    .into_iter()
                    .map(|v| v * s)
                    .collect())
            })
            .collect::<Result<_>>()?;
        let v = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::data("design matrix has non-finite entries"));
        }
        let inv_n = 1.0 / n as f64;
        let gram = v.tr_mul(&v) * inv_n;
        let rhs = v.tr_mul(&DVector::from_vec(ft)) * inv_n;
        Ok(Self {
            kernel,
            features: features.clone(),
            design: ts.design.clone(),
            n,
            gram,
            rhs,
            training_hash: ts.content_hash()?,
        })
    }

    pub fn solve(&self, lambda: f64) -> Result<Estimator> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::input(format!("lambda must be >= 0, got {lambda}")));
        }
        let mut a = self.gram.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += lambda;
        }
        let solver = factor_regularized(a, lambda, "primal normal equations")?;
        let h = solver.solve(&self.rhs);
        Estimator::build(
            self.kernel.clone(),
            self.design.clone(),
            lambda,
            self.n,
            Coefficients::Primal {
                features: self.features.clone(),
                h: h.iter().copied().collect(),
            },
        )
        .map(|e| e.with_training_hash(self.training_hash.clone()))
    }

    pub fn residual(&self, h: &[f64], lambda: f64) -> Result<f64> {
        if h.len() != self.features.len() {
            return Err(Error::input("solution length does not match the system"));
        }
        let h = DVector::from_column_slice(h);
        let r = &self.gram * &h + &h * lambda - &self.rhs;
        Ok(relative(r.norm(), self.rhs.norm()))
    }
}

/// Primal fit for a finite feature map.
pub fn fit_primal(ts: &TrainingSet, features: &FeatureMapSpec, lambda: f64) -> Result<Estimator> {
    PrimalSystem::assemble(ts, features)?.solve(lambda)
}

/// Relative residual of the normal equations of `est` on its training set.
pub fn normal_equation_residual(est: &Estimator, ts: &TrainingSet) -> Result<f64> {
    match &est.coefficients {
        Coefficients::Dual {
            solution, sorted, ..
        } => DualSystem::assemble(ts, &est.kernel, *sorted)?.residual(solution, est.lambda),
        Coefficients::Primal { features, h } => {
            PrimalSystem::assemble(ts, features)?.residual(h, est.lambda)
        }
    }
}

/// Fit every `lambda` on one assembled system.
pub fn regularization_path(
    ts: &TrainingSet,
    kernel: &KernelSpec,
    lambdas: &[f64],
) -> Result<Vec<Estimator>> {
    if lambdas.is_empty() {
        return Err(Error::input("lambda list is empty"));
    }
    let sys = match &kernel.family {
        crate::kernel::KernelFamily::FeatureMap(f) => {
            let p = PrimalSystem::assemble(ts, f)?;
            return lambdas.iter().map(|&l| p.solve(l)).collect();
        }
        _ => DualSystem::assemble(ts, kernel, false)?,
    };
    lambdas.iter().map(|&l| sys.solve(l)).collect()
}

/// Root-mean-square difference of two fitted functions over `points`.
pub fn rms_difference(a: &Estimator, b: &Estimator, points: &[Path]) -> Result<f64> {
    let pa = a.predict_many(points)?;
    let pb = b.predict_many(points)?;
    let sq: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).collect();
    Ok(crate::numeric::mean(&sq).sqrt())
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::input(
            "need at least two (x, y) pairs of equal length",
        ));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::input("log-log slope needs positive values"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let (mx, my) = (crate::numeric::mean(&lx), crate::numeric::mean(&ly));
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests;
