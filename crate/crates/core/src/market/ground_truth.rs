use std::io::{Read, Write};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{payoff_slice, BSConfig, PayoffId};
use crate::error::{Error, Result};
use crate::numeric::{mean, norm_pdf, pairwise_sum};
use crate::rng::{derive_seed, stream_rng};

/// Half-width of the integration interval for the quadrature ground truth.
const QUAD_HALF_WIDTH: f64 = 10.0;
/// Largest tensor-product quadrature accepted.
const MAX_QUAD_POINTS: f64 = 2e8;

/// How ground-truth values `V_t = E[f(X) | F_t]` are computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruthSource {
    /// Plain Monte Carlo over `n_inner` fresh Gaussian tails.
    MonteCarlo { n_inner: usize, seed: u64 },
    /// Composite Simpson rule with `nodes` points per remaining step on
    /// `[-10, 10]`, tensorized over the remaining steps.
    Quadrature { nodes: usize },
}

impl GroundTruthSource {
    /// `V_t` at the realized prefix (`t = prefix.len()`). `V_T` is the
    /// payoff itself.
    pub fn value(&self, cfg: &BSConfig, id: PayoffId, prefix: &[f64]) -> Result<f64> {
        match *self {
            GroundTruthSource::MonteCarlo { n_inner, seed } => {
                ground_truth_mc(cfg, id, prefix, n_inner, seed)
            }
            GroundTruthSource::Quadrature { nodes } => {
                ground_truth_quadrature(cfg, id, prefix, nodes)
            }
        }
    }

    /// Evaluations per value at time `t`, for reporting.
    pub fn budget(&self, steps: usize, t: usize) -> usize {
        if t >= steps {
            return 1;
        }
        match *self {
            GroundTruthSource::MonteCarlo { n_inner, .. } => n_inner,
            GroundTruthSource::Quadrature { nodes } => nodes.pow((steps - t) as u32),
        }
    }
}

fn check_prefix(cfg: &BSConfig, prefix: &[f64]) -> Result<()> {
    if prefix.len() > cfg.steps {
        return Err(Error::input(format!(
            "prefix of length {} exceeds T = {}",
            prefix.len(),
            cfg.steps
        )));
    }
    Ok(())
}

/// Monte Carlo `E[f(X) | X_{1..t} = prefix]` with `n_inner` tails; tail `i`
/// uses stream `i` of `seed`.
pub fn ground_truth_mc(
    cfg: &BSConfig,
    id: PayoffId,
    prefix: &[f64],
    n_inner: usize,
    seed: u64,
) -> Result<f64> {
    check_prefix(cfg, prefix)?;
    if prefix.len() == cfg.steps {
        return Ok(payoff_slice(cfg, id, prefix));
    }
    if n_inner == 0 {
        return Err(Error::input("n_inner must be at least 1"));
    }
    let values: Vec<f64> = (0..n_inner as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let mut x = prefix.to_vec();
            while x.len() < cfg.steps {
                x.push(StandardNormal.sample(&mut rng));
            }
            payoff_slice(cfg, id, &x)
        })
        .collect();
    Ok(mean(&values))
}

/// Composite Simpson nodes and weights for `E[g(Z)]`, `Z ~ N(0, 1)`.
fn simpson_rule(nodes: usize) -> Result<Vec<(f64, f64)>> {
    if nodes < 3 || nodes % 2 == 0 {
        return Err(Error::input(format!(
            "quadrature needs an odd number of nodes >= 3, got {nodes}"
        )));
    }
    let h = 2.0 * QUAD_HALF_WIDTH / (nodes - 1) as f64;
    Ok((0..nodes)
        .map(|i| {
            let z = -QUAD_HALF_WIDTH + i as f64 * h;
            let c = if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (z, c * h / 3.0 * norm_pdf(z))
        })
        .collect())
}

/// Deterministic `E[f(X) | X_{1..t} = prefix]` by tensor-product quadrature.
pub fn ground_truth_quadrature(
    cfg: &BSConfig,
    id: PayoffId,
    prefix: &[f64],
    nodes: usize,
) -> Result<f64> {
    check_prefix(cfg, prefix)?;
    let remaining = cfg.steps - prefix.len();
    if remaining == 0 {
        return Ok(payoff_slice(cfg, id, prefix));
    }
    if (nodes as f64).powi(remaining as i32) > MAX_QUAD_POINTS {
        return Err(Error::capability(format!(
            "quadrature with {nodes}^{remaining} points is too large; use Monte Carlo"
        )));
    }
    let rule = simpson_rule(nodes)?;
    let parts: Vec<f64> = rule
        .par_iter()
        .map(|&(z, w)| {
            let mut x = prefix.to_vec();
            x.push(z);
            w * nested_quadrature(cfg, id, &mut x, &rule)
        })
        .collect();
    Ok(pairwise_sum(&parts))
}

fn nested_quadrature(cfg: &BSConfig, id: PayoffId, x: &mut Vec<f64>, rule: &[(f64, f64)]) -> f64 {
    if x.len() == cfg.steps {
        return payoff_slice(cfg, id, x);
    }
    let parts: Vec<f64> = rule
        .iter()
        .map(|&(z, w)| {
            x.push(z);
            let v = w * nested_quadrature(cfg, id, x, rule);
            x.pop();
            v
        })
        .collect();
    pairwise_sum(&parts)
}

/// One cached ground-truth value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub t: usize,
    /// Realized prefix, `;`-separated (empty at `t = 0`).
    pub x1: String,
    pub value: f64,
    pub n_inner: usize,
    pub seed: u64,
}

impl GroundTruthRow {
    pub fn new(prefix: &[f64], value: f64, n_inner: usize, seed: u64) -> Self {
        Self {
            t: prefix.len(),
            x1: prefix
                .iter()
                .map(|v| format!("{v}"))
                .collect::<Vec<_>>()
                .join(";"),
            value,
            n_inner,
            seed,
        }
    }

    pub fn prefix(&self) -> Result<Vec<f64>> {
        if self.x1.is_empty() {
            return Ok(Vec::new());
        }
        self.x1
            .split(';')
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|e| Error::data(format!("bad prefix value '{s}': {e}")))
            })
            .collect()
    }
}

pub fn write_ground_truth_csv<W: Write>(rows: &[GroundTruthRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth_csv<R: Read>(input: R) -> Result<Vec<GroundTruthRow>> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Output of the naive nested Monte Carlo estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedMcResult {
    pub v0_hat: f64,
    /// `(X_1, V_1-hat)` at each outer point.
    pub outer: Vec<(f64, f64)>,
    pub payoff_evaluations: usize,
}

/// Nested Monte Carlo: `n_outer` draws of `X_1`, each followed by `n_inner`
/// tails. `V_1-hat` is the inner mean at each outer point, `V_0-hat` the
/// grand mean.
pub fn nested_mc_estimate(
    cfg: &BSConfig,
    id: PayoffId,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<NestedMcResult> {
    if n_outer == 0 || n_inner == 0 {
        return Err(Error::input(
            "nested Monte Carlo needs n_outer, n_inner >= 1",
        ));
    }
    if cfg.steps < 2 {
        return Err(Error::input("nested Monte Carlo needs T >= 2"));
    }
    let outer_seed = derive_seed(seed, "nested-outer", 0);
    let outer: Vec<(f64, Vec<f64>)> = (0..n_outer as u64)
        .into_par_iter()
        .map(|i| {
            let x1: f64 = StandardNormal.sample(&mut stream_rng(outer_seed, i));
            let inner_seed = derive_seed(seed, "nested-inner", i);
            let vals = (0..n_inner as u64)
                .map(|j| {
                    let mut rng = stream_rng(inner_seed, j);
                    let mut x = vec![x1];
                    while x.len() < cfg.steps {
                        x.push(StandardNormal.sample(&mut rng));
                    }
                    payoff_slice(cfg, id, &x)
                })
                .collect();
            (x1, vals)
        })
        .collect();
    let all: Vec<f64> = outer.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    Ok(NestedMcResult {
        v0_hat: mean(&all),
        outer: outer.iter().map(|(x1, v)| (*x1, mean(v))).collect(),
        payoff_evaluations: all.len(),
    })
}
