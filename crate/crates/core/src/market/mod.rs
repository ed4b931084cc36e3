//! Discrete Black-Scholes model, the six path-dependent payoffs, ground-truth
//! value processes, the nested Monte Carlo baseline, and risk/hedging
//! formulas.

mod ground_truth;
mod risk;

pub use ground_truth::{
    ground_truth_mc, ground_truth_quadrature, nested_mc_estimate, read_ground_truth_csv,
    write_ground_truth_csv, GroundTruthRow, GroundTruthSource, NestedMcResult,
};
pub use risk::{hedge_ratio, var_es};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::Path;
use crate::sampling::PathFunction;

/// Discrete Black-Scholes market: `S_t = S_{t-1} exp(sigma X_t - sigma^2/2)`
/// is the discounted price, `e^{rt} S_t` the nominal one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BSConfig {
    pub s0: f64,
    pub sigma: f64,
    pub r: f64,
    pub steps: usize,
    pub strike: f64,
    pub barrier: f64,
}

impl BSConfig {
    pub fn new(
        s0: f64,
        sigma: f64,
        r: f64,
        steps: usize,
        strike: f64,
        barrier: f64,
    ) -> Result<Self> {
        let cfg = Self {
            s0,
            sigma,
            r,
            steps,
            strike,
            barrier,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `T = 2, r = 0, sigma = 0.2, S_0 = A = 1, B = 2.24`.
    pub fn reference() -> Self {
        Self {
            s0: 1.0,
            sigma: 0.2,
            r: 0.0,
            steps: 2,
            strike: 1.0,
            barrier: 2.24,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s0 > 0.0 && self.s0.is_finite()) {
            return Err(Error::input(format!(
                "S0 must be positive, got {}",
                self.s0
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::input(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !self.r.is_finite() {
            return Err(Error::input("r must be finite"));
        }
        if self.steps == 0 {
            return Err(Error::input("T must be at least 1"));
        }
        if !(self.strike > 0.0) {
            return Err(Error::input(format!(
                "strike must be positive, got {}",
                self.strike
            )));
        }
        if !(self.barrier > self.strike) {
            return Err(Error::input(format!(
                "barrier {} must exceed strike {}",
                self.barrier, self.strike
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayoffId {
    EuropeanPut,
    AsianPut,
    UpAndOutCall,
    EuropeanCall,
    AsianCall,
    LookbackFloat,
}

impl PayoffId {
    pub const ALL: [PayoffId; 6] = [
        PayoffId::EuropeanPut,
        PayoffId::AsianPut,
        PayoffId::UpAndOutCall,
        PayoffId::EuropeanCall,
        PayoffId::AsianCall,
        PayoffId::LookbackFloat,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PayoffId::EuropeanPut => "european_put",
            PayoffId::AsianPut => "asian_put",
            PayoffId::UpAndOutCall => "up_and_out_call",
            PayoffId::EuropeanCall => "european_call",
            PayoffId::AsianCall => "asian_call",
            PayoffId::LookbackFloat => "lookback_float",
        }
    }
}

impl fmt::Display for PayoffId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PayoffId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PayoffId::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| {
                Error::input(format!(
                    "unknown payoff '{s}'; expected one of {}",
                    PayoffId::ALL.map(|p| p.as_str()).join(", ")
                ))
            })
    }
}

/// `(S_0, ..., S_T)` along a one-dimensional path.
pub fn stock_path(cfg: &BSConfig, x: &Path) -> Result<Vec<f64>> {
    x.check_shape(1, cfg.steps)?;
    let mut s = Vec::with_capacity(cfg.steps + 1);
    stock_path_into(cfg, x.as_slice(), &mut s);
    Ok(s)
}

fn stock_path_into(cfg: &BSConfig, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    let drift = -0.5 * cfg.sigma * cfg.sigma;
    let mut s = cfg.s0;
    out.push(s);
    for xi in x {
        s *= (cfg.sigma * xi + drift).exp();
        out.push(s);
    }
}

/// Payoff from a slice of `T` innovations (no shape check).
pub(crate) fn payoff_slice(cfg: &BSConfig, id: PayoffId, x: &[f64]) -> f64 {
    let steps = cfg.steps;
    let tf = steps as f64;
    let disc = (-cfg.r * tf).exp();
    let drift = -0.5 * cfg.sigma * cfg.sigma;
    let mut s = cfg.s0;
    let mut running_max = cfg.s0;
    let mut avg = 0.0;
    for (t, xi) in x.iter().enumerate() {
        s *= (cfg.sigma * xi + drift).exp();
        let nominal = (cfg.r * (t + 1) as f64).exp() * s;
        running_max = running_max.max(nominal);
        avg += nominal;
    }
    avg /= tf;
    let a = cfg.strike;
    match id {
        PayoffId::EuropeanPut => (disc * a - s).max(0.0),
        PayoffId::AsianPut => disc * (a - avg).max(0.0),
        PayoffId::UpAndOutCall => {
            if running_max <= cfg.barrier {
                (s - disc * a).max(0.0)
            } else {
                0.0
            }
        }
        PayoffId::EuropeanCall => (s - disc * a).max(0.0),
        PayoffId::AsianCall => disc * (avg - a).max(0.0),
        PayoffId::LookbackFloat => disc * running_max - s,
    }
}

/// `f(X)` for the payoff `id`.
pub fn payoff(cfg: &BSConfig, id: PayoffId, x: &Path) -> Result<f64> {
    x.check_shape(1, cfg.steps)?;
    Ok(payoff_slice(cfg, id, x.as_slice()))
}

/// A payoff bound to its market, usable wherever a [`PathFunction`] is
/// expected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsPayoff {
    pub cfg: BSConfig,
    pub id: PayoffId,
}

impl BsPayoff {
    pub fn new(cfg: BSConfig, id: PayoffId) -> Self {
        Self { cfg, id }
    }
}

impl PathFunction for BsPayoff {
    fn name(&self) -> String {
        self.id.as_str().to_string()
    }

    fn value(&self, x: &Path) -> f64 {
        if x.dim() != 1 || x.steps() != self.cfg.steps {
            return f64::NAN;
        }
        payoff_slice(&self.cfg, self.id, x.as_slice())
    }
}
