//! Experiment drivers: configuration, hyperparameter grid search, the
//! repeated-error table and the figure data.
//!
//! Seeds are derived from one master seed (see [`crate::rng::derive_seed`]):
//! training sample `r` uses tag `"train"`, the validation sample `"validation"`,
//! the test sample `"test"`, the nested Monte Carlo baseline `"nested"`. The
//! grid search runs on training sample 0 and the validation sample, so one
//! repeat costs exactly `n_train + n_val` payoff evaluations.

mod config;

pub use config::{ExperimentConfig, GridConfig, NestedConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::krr::{DualSystem, Estimator};
use crate::market::{payoff, BsPayoff, PayoffId};
use crate::path::Path;
use crate::rng::derive_seed;
use crate::sampling::{
    build_training_set, draw_paths, CountingFn, MeasureSpec, PathFunction, TrainingSet,
};
use crate::valuation::{
    nested_mc_repeats, relative_l2_error, relative_trajectories, repeat_experiment, training_seed,
    ErrorReport, RepeatSpec, TestSet,
};

/// One evaluated grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    /// Relative `L^2` validation error, or `None` if the fit failed.
    pub error: Option<f64>,
    /// Relative normal-equation residual of the fit.
    pub residual: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub payoff: String,
    /// All points in iteration order (alpha outer, beta middle, lambda inner).
    pub points: Vec<GridPoint>,
    pub best: usize,
    pub payoff_evaluations: usize,
}

impl GridResult {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }

    /// Indices of successful points by increasing error; ties keep
    /// iteration order.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.points.len())
            .filter(|&i| self.points[i].error.is_some())
            .collect();
        idx.sort_by(|&a, &b| {
            self.points[a]
                .error
                .unwrap()
                .total_cmp(&self.points[b].error.unwrap())
        });
        idx
    }

    /// Zero-based rank of the point `(alpha, beta, lambda)`, if present and
    /// successful.
    pub fn rank_of(&self, alpha: f64, beta: f64, lambda: f64) -> Option<usize> {
        self.ranking().iter().position(|&i| {
            let p = &self.points[i];
            p.alpha == alpha && p.beta == beta && p.lambda == lambda
        })
    }

    /// Validation errors along `lambda` at `(alpha, beta)`.
    pub fn lambda_section(&self, alpha: f64, beta: f64) -> Vec<&GridPoint> {
        self.points
            .iter()
            .filter(|p| p.alpha == alpha && p.beta == beta)
            .collect()
    }

    /// Validation errors over `(alpha, beta)` at `lambda`.
    pub fn alpha_beta_section(&self, lambda: f64) -> Vec<&GridPoint> {
        self.points.iter().filter(|p| p.lambda == lambda).collect()
    }
}

/// Nominal validation paths and their payoff values.
pub struct ValidationSet {
    pub paths: Vec<Path>,
    pub values: Vec<f64>,
}

impl ValidationSet {
    pub fn draw(cfg: &ExperimentConfig, id: PayoffId, f: &CountingFn<BsPayoff>) -> Result<Self> {
        let seed = derive_seed(cfg.master_seed, "validation", 0);
        let paths = draw_paths(&MeasureSpec::nominal(1, cfg.market.steps, seed), cfg.n_val)?;
        let values = paths
            .iter()
            .map(|p| {
                let v = f.value(p);
                if v.is_finite() {
                    Ok(v)
                } else {
                    payoff(&cfg.market, id, p)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { paths, values })
    }
}

/// Training sample `r` of the experiment.
pub fn training_set(
    cfg: &ExperimentConfig,
    r: usize,
    f: &CountingFn<BsPayoff>,
) -> Result<TrainingSet> {
    let m = MeasureSpec::new(
        cfg.gamma,
        1,
        cfg.market.steps,
        training_seed(cfg.master_seed, r),
    )?;
    build_training_set(&m, f, cfg.n_train)
}

/// Fit every grid point on one training sample and score it on one
/// validation sample. Each `(alpha, beta)` assembles its kernel matrix once.
pub fn grid_search_on(
    grid: &GridConfig,
    gamma: f64,
    ts: &TrainingSet,
    val: &ValidationSet,
) -> Result<Vec<GridPoint>> {
    grid.validate()?;
    let mut points = Vec::new();
    for &alpha in &grid.alpha {
        for &beta in &grid.beta {
            if alpha == 0.0 && beta == 0.0 {
                continue;
            }
            let sys = KernelSpec::gauss_exp(alpha, beta, ts.dim(), ts.steps(), gamma)
                .and_then(|k| DualSystem::assemble(ts, &k, false));
            let scored: Vec<GridPoint> = grid
                .lambda
                .par_iter()
                .map(|&lambda| {
                    let res = match &sys {
                        Ok(s) => score(s, lambda, val).map_err(|e| e.to_string()),
                        Err(e) => Err(e.to_string()),
                    };
                    GridPoint {
                        alpha,
                        beta,
                        lambda,
                        error: res.as_ref().ok().map(|r| r.0),
                        residual: res.as_ref().ok().map(|r| r.1),
                        failure: res.err(),
                    }
                })
                .collect();
            points.extend(scored);
        }
    }
    Ok(points)
}

fn score(sys: &DualSystem, lambda: f64, val: &ValidationSet) -> Result<(f64, f64)> {
    let est = sys.solve(lambda)?;
    let residual = sys.residual(est.solution(), lambda)?;
    Ok((relative_l2_error(&est, &val.paths, &val.values)?, residual))
}

fn argmin(points: &[GridPoint]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, p) in points.iter().enumerate() {
        if let Some(e) = p.error {
            if best.is_none_or(|b| e < points[b].error.unwrap()) {
                best = Some(i);
            }
        }
    }
    best
}

/// Grid search for payoff `id` on training sample 0 and the validation set.
pub fn grid_search(cfg: &ExperimentConfig, id: PayoffId) -> Result<GridResult> {
    let f = CountingFn::new(BsPayoff::new(cfg.market, id));
    let ts = training_set(cfg, 0, &f)?;
    let val = ValidationSet::draw(cfg, id, &f)?;
    let points = grid_search_on(&cfg.grid, cfg.gamma, &ts, &val)?;
    let best = argmin(&points).ok_or_else(|| Error::Solver {
        message: format!("every grid point failed to fit for {id}"),
        condition: f64::INFINITY,
    })?;
    Ok(GridResult {
        payoff: id.as_str().to_string(),
        points,
        best,
        payoff_evaluations: f.calls(),
    })
}

/// Test set for payoff `id` from the configured ground-truth source.
pub fn test_set(cfg: &ExperimentConfig, id: PayoffId) -> Result<TestSet> {
    TestSet::build(
        &cfg.market,
        id,
        cfg.n_test,
        derive_seed(cfg.master_seed, "test", 0),
        cfg.ground_truth,
    )
}

/// Everything produced for one payoff by [`run_table2`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayoffRun {
    pub grid: GridResult,
    pub kernel: ErrorReport,
    pub nested: ErrorReport,
}

/// Grid search, repeated kernel-estimator errors at the optimum, and the
/// nested Monte Carlo baseline for one payoff.
pub fn run_payoff(cfg: &ExperimentConfig, id: PayoffId, test: &TestSet) -> Result<PayoffRun> {
    let grid = grid_search(cfg, id)?;
    let best = grid.best_point();
    let spec = RepeatSpec {
        cfg: cfg.market,
        id,
        kernel: KernelSpec::gauss_exp(best.alpha, best.beta, 1, cfg.market.steps, cfg.gamma)?,
        lambda: best.lambda,
        n_train: cfg.n_train,
        n_repeats: cfg.n_repeats,
        master_seed: cfg.master_seed,
    };
    let mut kernel = repeat_experiment(&spec, test)?;
    kernel.payoff_evaluations = cfg.n_train + cfg.n_val;
    let nested = nested_mc_repeats(
        &cfg.market,
        id,
        cfg.nested.n_outer,
        cfg.nested.n_inner,
        cfg.n_repeats,
        cfg.master_seed,
        &cfg.ground_truth,
    )?;
    Ok(PayoffRun {
        grid,
        kernel,
        nested,
    })
}

/// [`run_payoff`] for every configured payoff.
pub fn run_table2(cfg: &ExperimentConfig) -> Result<Vec<PayoffRun>> {
    cfg.payoffs
        .iter()
        .map(|&id| run_payoff(cfg, id, &test_set(cfg, id)?))
        .collect()
}

/// Figure data for one payoff: the `(alpha, beta)` section at `lambda*`,
/// the `lambda` section at `(alpha*, beta*)`, and the relative value-process
/// trajectories of the optimal estimator on the test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FigureData {
    pub grid: GridResult,
    pub trajectories: Vec<Vec<f64>>,
}

pub fn run_figures(cfg: &ExperimentConfig, id: PayoffId, test: &TestSet) -> Result<FigureData> {
    let grid = grid_search(cfg, id)?;
    let est = best_estimator(cfg, id, &grid)?;
    let trajectories = relative_trajectories(&est, test)?;
    Ok(FigureData { grid, trajectories })
}

/// Refit the grid optimum on training sample 0.
pub fn best_estimator(
    cfg: &ExperimentConfig,
    id: PayoffId,
    grid: &GridResult,
) -> Result<Estimator> {
    let best = grid.best_point();
    let f = CountingFn::new(BsPayoff::new(cfg.market, id));
    let ts = training_set(cfg, 0, &f)?;
    let k = KernelSpec::gauss_exp(best.alpha, best.beta, 1, cfg.market.steps, cfg.gamma)?;
    crate::krr::fit_dual_unsorted(&ts, &k, best.lambda)
}

/// Noise floor of an `n_inner`-draw Monte Carlo ground truth, in units of
/// `V_0`: entry `t` estimates `E|V_t^MC - V_t| / V_0` from `n_probe` test
/// points (for `t = 0`, from `n_probe` independent root estimates) against
/// the test set's own truth. Entry `T` is zero since `V_T` is the payoff.
pub fn ground_truth_noise_floor(
    cfg: &ExperimentConfig,
    id: PayoffId,
    test: &TestSet,
    n_inner: usize,
    n_probe: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let steps = cfg.market.steps;
    let n_probe = n_probe.min(test.len()).max(1);
    let v0 = test.v0();
    let mut floor = Vec::with_capacity(steps + 1);
    for t in 0..steps {
        let dev = (0..n_probe)
            .map(|i| {
                let s = derive_seed(seed, "noise-floor", (t * n_probe + i) as u64);
                let prefix = test.paths[i].prefix(t);
                let mc = crate::market::ground_truth_mc(&cfg.market, id, prefix, n_inner, s)?;
                Ok((mc - test.truth[i][t]).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        floor.push(crate::numeric::mean(&dev) / v0);
    }
    floor.push(0.0);
    Ok(floor)
}

/// Write grid points as `alpha,beta,lambda,rel_l2_error,residual`.
pub fn write_grid_csv<'a, W: std::io::Write>(
    points: impl IntoIterator<Item = &'a GridPoint>,
    out: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "beta", "lambda", "rel_l2_error", "residual"])?;
    for p in points {
        w.write_record([
            format!("{}", p.alpha),
            format!("{}", p.beta),
            format!("{:e}", p.lambda),
            p.error
                .map(|e| format!("{e}"))
                .unwrap_or_else(|| "nan".into()),
            p.residual
                .map(|e| format!("{e:e}"))
                .unwrap_or_else(|| "nan".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}
