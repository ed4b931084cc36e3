//! Experiment configuration, read from a sectioned `key = value` (TOML) file:
//!
//! ```toml
//! [market]
//! s0 = 1.0
//! sigma = 0.2
//! r = 0.0
//! steps = 2
//! strike = 1.0
//! barrier = 2.24
//!
//! [experiment]
//! payoffs = ["european_put", "asian_put"]
//! gamma = 0.45
//! n_train = 2000
//! n_val = 500
//! n_test = 5000
//! n_repeats = 10
//! master_seed = 20240601
//! output_dir = "out"
//!
//! [grid]
//! alpha = [0.0, 2.0, 4.0, 6.0]
//! beta = [0.0, 0.15, 0.3, 0.45]
//! lambda = [1e-9, 1e-7, 1e-5, 1e-3]
//!
//! [ground_truth]
//! kind = "quadrature"          # or "monte_carlo" with n_inner and seed
//! nodes = 4001
//!
//! [nested]
//! n_outer = 200
//! n_inner = 10
//! ```
//!
//! Every key is optional; missing keys take the reference values.

use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{BSConfig, GroundTruthSource, PayoffId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            alpha: vec![0.0, 2.0, 4.0, 6.0],
            beta: vec![0.0, 0.15, 0.3, 0.45],
            lambda: vec![1e-9, 1e-7, 1e-5, 1e-3],
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() || self.beta.is_empty() || self.lambda.is_empty() {
            return Err(Error::Config("grid lists must be non-empty".into()));
        }
        if self.alpha.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(Error::Config(
                "grid alpha values must be finite and >= 0".into(),
            ));
        }
        if self.beta.iter().any(|b| !b.is_finite() || *b < 0.0) {
            return Err(Error::Config(
                "grid beta values must be finite and >= 0".into(),
            ));
        }
        if self.lambda.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::Config(
                "grid lambda values must be finite and >= 0".into(),
            ));
        }
        if self.alpha.iter().all(|&a| a == 0.0) && self.beta.iter().all(|&b| b == 0.0) {
            return Err(Error::Config(
                "grid contains only the constant kernel alpha = beta = 0".into(),
            ));
        }
        Ok(())
    }

    /// Number of `(alpha, beta, lambda)` points, excluding `alpha = beta = 0`.
    pub fn len(&self) -> usize {
        let zero_a = self.alpha.iter().filter(|&&a| a == 0.0).count();
        let zero_b = self.beta.iter().filter(|&&b| b == 0.0).count();
        (self.alpha.len() * self.beta.len() - zero_a * zero_b) * self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NestedConfig {
    pub n_outer: usize,
    pub n_inner: usize,
}

impl Default for NestedConfig {
    fn default() -> Self {
        Self {
            n_outer: 200,
            n_inner: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub market: BSConfig,
    pub payoffs: Vec<PayoffId>,
    /// Tilt of the sampling measure and of the kernel.
    pub gamma: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub n_repeats: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub grid: GridConfig,
    pub ground_truth: GroundTruthSource,
    pub nested: NestedConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ExperimentSection {
    payoffs: Vec<PayoffId>,
    gamma: f64,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    n_repeats: usize,
    master_seed: u64,
    output_dir: PathBuf,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let r = ExperimentConfig::reference();
        Self {
            payoffs: r.payoffs,
            gamma: r.gamma,
            n_train: r.n_train,
            n_val: r.n_val,
            n_test: r.n_test,
            n_repeats: r.n_repeats,
            master_seed: r.master_seed,
            output_dir: r.output_dir,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MarketSection {
    s0: f64,
    sigma: f64,
    r: f64,
    steps: usize,
    strike: f64,
    barrier: f64,
}

impl Default for MarketSection {
    fn default() -> Self {
        let m = BSConfig::reference();
        Self {
            s0: m.s0,
            sigma: m.sigma,
            r: m.r,
            steps: m.steps,
            strike: m.strike,
            barrier: m.barrier,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct ConfigFile {
    market: MarketSection,
    experiment: ExperimentSection,
    grid: GridConfig,
    ground_truth: Option<GroundTruthSource>,
    nested: NestedConfig,
}

impl ExperimentConfig {
    /// The Black-Scholes experiment with all six payoffs.
    pub fn reference() -> Self {
        Self {
            market: BSConfig::reference(),
            payoffs: PayoffId::ALL.to_vec(),
            gamma: 0.45,
            n_train: 2000,
            n_val: 500,
            n_test: 5000,
            n_repeats: 10,
            master_seed: 20240601,
            output_dir: PathBuf::from("out"),
            grid: GridConfig::default(),
            ground_truth: GroundTruthSource::Quadrature { nodes: 4001 },
            nested: NestedConfig::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        let m = file.market;
        let e = file.experiment;
        let cfg = Self {
            market: BSConfig::new(m.s0, m.sigma, m.r, m.steps, m.strike, m.barrier)
                .map_err(|err| Error::Config(err.to_string()))?,
            payoffs: e.payoffs,
            gamma: e.gamma,
            n_train: e.n_train,
            n_val: e.n_val,
            n_test: e.n_test,
            n_repeats: e.n_repeats,
            master_seed: e.master_seed,
            output_dir: e.output_dir,
            grid: file.grid,
            ground_truth: file.ground_truth.unwrap_or(Self::reference().ground_truth),
            nested: file.nested,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let file = ConfigFile {
            market: MarketSection {
                s0: self.market.s0,
                sigma: self.market.sigma,
                r: self.market.r,
                steps: self.market.steps,
                strike: self.market.strike,
                barrier: self.market.barrier,
            },
            experiment: ExperimentSection {
                payoffs: self.payoffs.clone(),
                gamma: self.gamma,
                n_train: self.n_train,
                n_val: self.n_val,
                n_test: self.n_test,
                n_repeats: self.n_repeats,
                master_seed: self.master_seed,
                output_dir: self.output_dir.clone(),
            },
            grid: self.grid.clone(),
            ground_truth: Some(self.ground_truth),
            nested: self.nested,
        };
        toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.payoffs.is_empty() {
            return bad("no payoffs selected");
        }
        if !(self.gamma >= 0.0 && self.gamma < 0.5) {
            return bad("gamma must lie in [0, 1/2)");
        }
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 || self.n_repeats == 0 {
            return bad("sample sizes and n_repeats must be positive");
        }
        if self.nested.n_outer == 0 || self.nested.n_inner == 0 {
            return bad("nested n_outer and n_inner must be positive");
        }
        match self.ground_truth {
            GroundTruthSource::MonteCarlo { n_inner: 0, .. } => {
                return bad("ground-truth n_inner must be positive")
            }
            GroundTruthSource::Quadrature { nodes } if nodes < 3 || nodes % 2 == 0 => {
                return bad("quadrature nodes must be odd and >= 3")
            }
            _ => {}
        }
        self.grid.validate()
    }
}
