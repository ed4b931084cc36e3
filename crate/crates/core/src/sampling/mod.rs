//! Gaussian white-noise path simulation under the nominal measure and the
//! tilted sampling measure, Radon-Nikodym weights, and training-set assembly.

mod mixture;
mod training;

pub use mixture::MixtureSampler;
pub use training::{build_training_set, CountingFn, PathFunction, SamplingDesign, TrainingSet};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{checked_exp, Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::path::Path;
use crate::rng::stream_rng;

/// The tilted Gaussian sampling measure `N(0, (1 - 2 gamma)^{-1} I_{dT})`.
/// `gamma = 0` is the nominal measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasureSpec {
    pub gamma: f64,
    pub dim: usize,
    pub steps: usize,
    pub seed: u64,
}

impl MeasureSpec {
    pub fn new(gamma: f64, dim: usize, steps: usize, seed: u64) -> Result<Self> {
        if !(gamma < 0.5) || !gamma.is_finite() {
            return Err(Error::input(format!("gamma must be < 1/2, got {gamma}")));
        }
        if dim == 0 || steps == 0 {
            return Err(Error::input("d and T must be positive"));
        }
        Ok(Self {
            gamma,
            dim,
            steps,
            seed,
        })
    }

    /// The nominal (untilted) measure with the same shape.
    pub fn nominal(dim: usize, steps: usize, seed: u64) -> Self {
        Self {
            gamma: 0.0,
            dim,
            steps,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    /// Per-entry marginal variance `1 / (1 - 2 gamma)`.
    pub fn variance(&self) -> f64 {
        1.0 / (1.0 - 2.0 * self.gamma)
    }

    /// Path number `index`, drawn from its own stream.
    pub fn draw_one(&self, index: u64) -> Path {
        let sd = self.variance().sqrt();
        let mut rng = stream_rng(self.seed, index);
        let data = (0..self.dim * self.steps)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                sd * z
            })
            .collect();
        Path::new(self.dim, self.steps, data).expect("shape validated on construction")
    }

    pub fn rn_weight(&self, x: &Path) -> Result<f64> {
        rn_weight(self, x)
    }
}

/// `n` i.i.d. paths from the measure; path `i` uses stream `i`.
pub fn draw_paths(measure: &MeasureSpec, n: usize) -> Result<Vec<Path>> {
    if n == 0 {
        return Err(Error::input("number of paths must be at least 1"));
    }
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| measure.draw_one(i))
        .collect())
}

/// `log w(x) = (dT/2) log(1 - 2 gamma) + gamma |x|^2`.
pub fn log_rn_weight(gamma: f64, x: &Path) -> f64 {
    let dt = (x.dim() * x.steps()) as f64;
    0.5 * dt * (1.0 - 2.0 * gamma).ln() + gamma * x.norm_sq()
}

/// Radon-Nikodym derivative `w = d mu~ / d mu` of the tilted measure.
pub fn rn_weight(measure: &MeasureSpec, x: &Path) -> Result<f64> {
    x.check_shape(measure.dim, measure.steps)?;
    checked_exp(log_rn_weight(measure.gamma, x), "Radon-Nikodym weight")
}

/// The tilt that makes the tilted kernel diagonal constant, when that
/// optimum is itself a Gaussian tilt: `gamma = beta` for the
/// Gaussian-exponentiated kernel, `None` otherwise.
pub fn optimal_gamma(spec: &KernelSpec) -> Option<f64> {
    match &spec.family {
        KernelFamily::GaussExp(p) => Some(p.beta),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{mean, sample_variance};

    #[test]
    fn weight_trivial_values() {
        let m = MeasureSpec::new(0.0, 1, 2, 1).unwrap();
        let x = Path::scalar(&[0.3, -2.0]);
        assert_eq!(rn_weight(&m, &x).unwrap(), 1.0);
        let m = MeasureSpec::new(0.45, 1, 2, 1).unwrap();
        let w = rn_weight(&m, &Path::zeros(1, 2)).unwrap();
        assert!((w - 0.1).abs() < 1e-15);
    }

    #[test]
    fn weight_overflow_is_range_error() {
        let m = MeasureSpec::new(0.45, 1, 1, 1).unwrap();
        let x = Path::scalar(&[50.0]);
        assert!(matches!(rn_weight(&m, &x), Err(Error::Range(_))));
    }

    #[test]
    fn gamma_must_be_below_half() {
        assert!(MeasureSpec::new(0.5, 1, 1, 0).is_err());
        assert!(MeasureSpec::new(-1.0, 1, 1, 0).is_ok());
    }

    #[test]
    fn zero_paths_rejected() {
        let m = MeasureSpec::nominal(1, 2, 0);
        assert!(draw_paths(&m, 0).is_err());
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let m = MeasureSpec::new(0.45, 2, 3, 99).unwrap();
        let a = draw_paths(&m, 50).unwrap();
        let b = draw_paths(&m, 50).unwrap();
        assert!(a.iter().zip(&b).all(|(p, q)| p.bitwise_eq(q)));
        let c = draw_paths(&m.with_seed(100), 50).unwrap();
        assert!(!a[0].bitwise_eq(&c[0]));
    }

    #[test]
    fn sample_variance_matches_tilt() {
        for (gamma, lo, hi) in [(0.0, 0.99, 1.01), (0.45, 9.9, 10.1)] {
            let m = MeasureSpec::new(gamma, 1, 1000, 3).unwrap();
            let entries: Vec<f64> = draw_paths(&m, 1000)
                .unwrap()
                .into_iter()
                .flat_map(Path::into_vec)
                .collect();
            let v = sample_variance(&entries);
            assert!(v > lo && v < hi, "gamma {gamma}: variance {v}");
            assert!(mean(&entries).abs() < 3.0 * (v / entries.len() as f64).sqrt());
        }
    }

    #[test]
    fn optimal_gamma_is_beta() {
        let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
        assert_eq!(optimal_gamma(&k), Some(0.3));
        let k = KernelSpec::gauss_exp(4.0, 0.0, 1, 2, 0.45).unwrap();
        assert_eq!(optimal_gamma(&k), Some(0.0));
        let k = KernelSpec::gauss_poly(1.0, 2, 1, 2, 0.45).unwrap();
        assert_eq!(optimal_gamma(&k), None);
    }
}
