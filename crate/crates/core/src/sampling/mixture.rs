use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use super::training::{PathFunction, SamplingDesign, TrainingSet};
use crate::error::{Error, Result};
use crate::kernel::{Basis1d, FeatureMapSpec};
use crate::path::Path;
use crate::rng::stream_rng;

const GRID_POINTS: usize = 4096;
const GRID_HALF_WIDTH: f64 = 10.0;
const PROBE_DRAWS: u64 = 10_000;

/// Inverse-CDF table for a density proportional to `b(x)^2 * phi(x)` on
/// `[-10, 10]`.
#[derive(Debug, Clone)]
struct InverseCdf {
    grid: Vec<f64>,
    cdf: Vec<f64>,
}

impl InverseCdf {
    fn new(b: Basis1d) -> Result<Self> {
        let h = 2.0 * GRID_HALF_WIDTH / (GRID_POINTS - 1) as f64;
        let grid: Vec<f64> = (0..GRID_POINTS)
            .map(|i| -GRID_HALF_WIDTH + i as f64 * h)
            .collect();
        let dens: Vec<f64> = grid
            .iter()
            .map(|&x| {
                let v = b.eval(x);
                v * v * (-0.5 * x * x).exp()
            })
            .collect();
        let mut cdf = vec![0.0; GRID_POINTS];
        for i in 1..GRID_POINTS {
            cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        }
        let total = cdf[GRID_POINTS - 1];
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::capability(format!(
                "marginal for {b:?} cannot be normalized"
            )));
        }
        cdf.iter_mut().for_each(|c| *c /= total);
        Ok(Self { grid, cdf })
    }

    fn sample(&self, u: f64) -> f64 {
        let j = self
            .cdf
            .partition_point(|&c| c < u)
            .clamp(1, GRID_POINTS - 1);
        let (c0, c1) = (self.cdf[j - 1], self.cdf[j]);
        let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.5 };
        self.grid[j - 1] + frac * (self.grid[j] - self.grid[j - 1])
    }
}

/// The optimal sampling measure of a feature-map kernel: a mixture over
/// features `i` (weights `c_i`) of product measures whose marginals have
/// densities proportional to `phi_{i,t}(x_t)^2` times the standard normal
/// density.
#[derive(Debug, Clone)]
pub struct MixtureSampler {
    spec: FeatureMapSpec,
    component_weights: Vec<f64>,
    cumulative: Vec<f64>,
    kappa_norm_sq: f64,
    tables: BTreeMap<u32, InverseCdf>,
}

impl MixtureSampler {
    pub fn new(spec: FeatureMapSpec) -> Result<Self> {
        let norms: Vec<f64> = spec
            .features()
            .iter()
            .map(|f| {
                let n = (0..spec.steps())
                    .map(|t| f.step_norm_sq(spec.dim(), t))
                    .product::<f64>();
                f.coeff * f.coeff * n
            })
            .collect();
        if let Some(i) = norms.iter().position(|n| !(*n > 0.0 && n.is_finite())) {
            return Err(Error::capability(format!(
                "feature {i} has norm {} and its marginal cannot be normalized",
                norms[i]
            )));
        }
        let total: f64 = norms.iter().sum();
        let component_weights: Vec<f64> = norms.iter().map(|n| n / total).collect();
        let mut cumulative = Vec::with_capacity(norms.len());
        let mut acc = 0.0;
        for c in &component_weights {
            acc += c;
            cumulative.push(acc);
        }
        let mut tables = BTreeMap::new();
        for f in spec.features() {
            for b in &f.factors {
                if let Basis1d::Hermite(k) = *b {
                    if k > 0 && !tables.contains_key(&k) {
                        tables.insert(k, InverseCdf::new(*b)?);
                    }
                }
            }
        }
        let sampler = Self {
            spec,
            component_weights,
            cumulative,
            kappa_norm_sq: total,
            tables,
        };
        sampler.check_nonvanishing()?;
        Ok(sampler)
    }

    fn check_nonvanishing(&self) -> Result<()> {
        let n = self.spec.dim() * self.spec.steps();
        for i in 0..PROBE_DRAWS {
            let mut rng = stream_rng(0xface_feed, i);
            let x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            if self.spec.features().iter().all(|f| f.eval(&x) == 0.0) {
                return Err(Error::input(
                    "feature vector vanishes on a probe draw; optimal weight is not positive",
                ));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &FeatureMapSpec {
        &self.spec
    }

    /// Mixture weights `c_i`.
    pub fn component_weights(&self) -> &[f64] {
        &self.component_weights
    }

    /// `||kappa||^2_{2, mu}`.
    pub fn kappa_norm_sq(&self) -> f64 {
        self.kappa_norm_sq
    }

    /// `w(x) = |phi(x)|^2 / ||kappa||^2_{2, mu}`.
    pub fn weight(&self, x: &Path) -> Result<f64> {
        let phi = self.spec.feature_vector(x)?;
        Ok(phi.iter().map(|v| v * v).sum::<f64>() / self.kappa_norm_sq)
    }

    fn draw_coord<R: Rng>(&self, b: Basis1d, rng: &mut R) -> f64 {
        match b {
            Basis1d::Monomial(0) | Basis1d::Hermite(0) => StandardNormal.sample(rng),
            Basis1d::Monomial(k) => {
                // x^{2k} e^{-x^2/2}: x^2 ~ Gamma(k + 1/2, 2), symmetric sign.
                let g = Gamma::new(k as f64 + 0.5, 2.0).expect("valid gamma parameters");
                let r = g.sample(rng).sqrt();
                if rng.random::<bool>() {
                    r
                } else {
                    -r
                }
            }
            Basis1d::Hermite(k) => self.tables[&k].sample(rng.random::<f64>()),
        }
    }

    /// Path number `index`: choose a component with probability `c_i`, then
    /// draw each coordinate from its marginal.
    pub fn draw_one(&self, seed: u64, index: u64) -> Path {
        let mut rng = stream_rng(seed, index);
        let u: f64 = rng.random();
        let i = self
            .cumulative
            .partition_point(|&c| c < u)
            .min(self.cumulative.len() - 1);
        let feat = &self.spec.features()[i];
        let data = feat
            .factors
            .iter()
            .map(|b| self.draw_coord(*b, &mut rng))
            .collect();
        Path::new(self.spec.dim(), self.spec.steps(), data).expect("shape from spec")
    }

    pub fn draw_paths(&self, seed: u64, n: usize) -> Result<Vec<Path>> {
        if n == 0 {
            return Err(Error::input("number of paths must be at least 1"));
        }
        Ok((0..n as u64)
            .into_par_iter()
            .map(|i| self.draw_one(seed, i))
            .collect())
    }

    pub fn build_training_set<F: PathFunction + ?Sized>(
        &self,
        payoff: &F,
        n: usize,
        seed: u64,
    ) -> Result<TrainingSet> {
        let paths = self.draw_paths(seed, n)?;
        let values: Vec<f64> = paths.par_iter().map(|p| payoff.value(p)).collect();
        let weights = paths
            .iter()
            .map(|p| self.weight(p))
            .collect::<Result<Vec<_>>>()?;
        TrainingSet::new(
            paths,
            values,
            weights,
            SamplingDesign::Mixture {
                dim: self.spec.dim(),
                steps: self.spec.steps(),
                seed,
            },
            payoff.name(),
        )
    }
}
