//! Closed-form evaluation of the learned value process
//! `V-hat_t = E[f_X(X) | F_t]` and the error metrics used to judge it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GaussExpParams, KernelSpec};
use crate::krr::{fit_dual_unsorted, Coefficients, Estimator};
use crate::market::{payoff, BSConfig, BsPayoff, GroundTruthSource, PayoffId};
use crate::numeric::{mean, pairwise_sum, sample_std, std_error};
use crate::path::Path;
use crate::rng::derive_seed;
use crate::sampling::{build_training_set, draw_paths, MeasureSpec};

/// `(V-hat_0, ..., V-hat_T)` along one path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueSeries {
    pub path: Path,
    pub values: Vec<f64>,
}

/// Precomputed per-center data for evaluating many value series with one
/// estimator.
pub struct ValueEvaluator<'a> {
    est: &'a Estimator,
    /// `log U(c_{j,s})` per center `j` and step `s` (Gaussian-exponentiated
    /// kernel only), row-major by center.
    log_u: Vec<f64>,
    gauss: Option<&'a GaussExpParams>,
}

impl<'a> ValueEvaluator<'a> {
    pub fn new(est: &'a Estimator) -> Self {
        let gauss = match &est.coefficients {
            Coefficients::Dual { .. } => est.kernel.gauss_exp_params(),
            Coefficients::Primal { .. } => None,
        };
        let mut log_u = Vec::new();
        if let Some(p) = gauss {
            let d = p.dim;
            for c in est.centers() {
                let cs = c.as_slice();
                for s in 0..p.steps {
                    log_u.push(KernelSpec::log_u_step(p, &cs[s * d..(s + 1) * d]));
                }
            }
        }
        Self { est, log_u, gauss }
    }

    pub fn estimator(&self) -> &Estimator {
        self.est
    }

    /// `V-hat_t(x)` for `t = 0..=T`; the last entry is `predict(x)`.
    pub fn evaluate(&self, x: &Path) -> Result<Vec<f64>> {
        let est = self.est;
        let kernel = &est.kernel;
        x.check_shape(kernel.dim(), kernel.steps())?;
        let steps = kernel.steps();
        let mut out = vec![0.0; steps + 1];
        match &est.coefficients {
            Coefficients::Primal { features, .. } => {
                let h = est.effective_coefficients();
                for (t, v) in out.iter_mut().enumerate().take(steps) {
                    let e = features.cond_expect_features(x.prefix(t), t)?;
                    *v = e.iter().zip(h).map(|(a, b)| a * b).sum();
                }
            }
            Coefficients::Dual { centers, .. } => {
                let a = est.effective_coefficients();
                let m = centers.len();
                // terms[t * m + j] = a_j E[k(X, c_j) | F_t]
                let mut terms = vec![0.0; steps * m];
                if let Some(p) = self.gauss {
                    let d = p.dim;
                    let xs = x.as_slice();
                    for (j, c) in centers.iter().enumerate() {
                        let cs = c.as_slice();
                        let lu = &self.log_u[j * steps..(j + 1) * steps];
                        let mut future: f64 = lu.iter().sum();
                        let mut past = 0.0;
                        for t in 0..steps {
                            terms[t * m + j] =
                                a[j] * crate::error::checked_exp(past + future, "value process")?;
                            let (xs_t, cs_t) = (&xs[t * d..(t + 1) * d], &cs[t * d..(t + 1) * d]);
                            past += KernelSpec::log_factor_step(p, xs_t, cs_t);
                            future -= lu[t];
                        }
                    }
                } else {
                    for (j, c) in centers.iter().enumerate() {
                        let s = kernel.cond_expect_series(x, c)?;
                        for t in 0..steps {
                            terms[t * m + j] = a[j] * s[t];
                        }
                    }
                }
                for (t, v) in out.iter_mut().enumerate().take(steps) {
                    *v = pairwise_sum(&terms[t * m..(t + 1) * m]);
                }
            }
        }
        out[steps] = est.predict(x)?;
        if let Some(t) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "value estimate at t = {t} is not finite"
            )));
        }
        Ok(out)
    }

    pub fn evaluate_many(&self, xs: &[Path]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.evaluate(x)).collect()
    }
}

/// `V-hat_t(x)` for every `t`.
pub fn value_series(est: &Estimator, x: &Path) -> Result<ValueSeries> {
    Ok(ValueSeries {
        path: x.clone(),
        values: ValueEvaluator::new(est).evaluate(x)?,
    })
}

/// `||f - f_X||_{2,mu} / ||f||_{2,mu}` on given validation paths and values.
pub fn relative_l2_error(est: &Estimator, paths: &[Path], values: &[f64]) -> Result<f64> {
    if paths.is_empty() || paths.len() != values.len() {
        return Err(Error::input(
            "validation sample must be nonempty with matching values",
        ));
    }
    let pred = est.predict_many(paths)?;
    let sq_err: Vec<f64> = pred
        .iter()
        .zip(values)
        .map(|(p, f)| (p - f) * (p - f))
        .collect();
    let sq_f: Vec<f64> = values.iter().map(|f| f * f).collect();
    let denom = pairwise_sum(&sq_f);
    if !(denom > 0.0) {
        return Err(Error::data(
            "payoff has zero L2 norm on the validation sample",
        ));
    }
    Ok((pairwise_sum(&sq_err) / denom).sqrt())
}

/// Relative payoff error over `n_val` fresh nominal paths drawn with `seed`.
pub fn payoff_l2_error(
    est: &Estimator,
    cfg: &BSConfig,
    id: PayoffId,
    n_val: usize,
    seed: u64,
) -> Result<f64> {
    let paths = draw_paths(&MeasureSpec::nominal(1, cfg.steps, seed), n_val)?;
    let values = paths
        .iter()
        .map(|p| payoff(cfg, id, p))
        .collect::<Result<Vec<_>>>()?;
    relative_l2_error(est, &paths, &values)
}

/// Nominal test paths with ground-truth values `V_0..V_T` along each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub paths: Vec<Path>,
    /// `truth[i][t] = V_t(paths[i])`.
    pub truth: Vec<Vec<f64>>,
    pub source: GroundTruthSource,
}

impl TestSet {
    /// Draw `n_test` nominal paths with `seed` and compute their ground
    /// truth. `V_0` is computed once; `V_T` is the payoff.
    pub fn build(
        cfg: &BSConfig,
        id: PayoffId,
        n_test: usize,
        seed: u64,
        source: GroundTruthSource,
    ) -> Result<Self> {
        let paths = draw_paths(&MeasureSpec::nominal(1, cfg.steps, seed), n_test)?;
        let v0 = source_value(&source, cfg, id, &[], 0)?;
        let truth = paths
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut row = vec![v0];
                for t in 1..=cfg.steps {
                    row.push(source_value(&source, cfg, id, p.prefix(t), i as u64 + 1)?);
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            paths,
            truth,
            source,
        })
    }

    /// Assemble from precomputed values (each row has `T + 1` entries, all
    /// rows share `V_0`).
    pub fn from_parts(
        paths: Vec<Path>,
        truth: Vec<Vec<f64>>,
        source: GroundTruthSource,
    ) -> Result<Self> {
        if paths.is_empty() || paths.len() != truth.len() {
            return Err(Error::input(
                "test set needs matching nonempty paths and truth rows",
            ));
        }
        let steps = paths[0].steps();
        if truth.iter().any(|r| r.len() != steps + 1) {
            return Err(Error::data("ground truth rows must have T + 1 entries"));
        }
        Ok(Self {
            paths,
            truth,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn v0(&self) -> f64 {
        self.truth[0][0]
    }
}

/// Monte Carlo sources get an independent seed per evaluation point.
fn source_value(
    source: &GroundTruthSource,
    cfg: &BSConfig,
    id: PayoffId,
    prefix: &[f64],
    point: u64,
) -> Result<f64> {
    match *source {
        GroundTruthSource::MonteCarlo { n_inner, seed } => GroundTruthSource::MonteCarlo {
            n_inner,
            seed: derive_seed(seed, "ground-truth", point),
        }
        .value(cfg, id, prefix),
        q => q.value(cfg, id, prefix),
    }
}

/// Per-time relative `L^1` errors `mean_i |V_t - V-hat_t| / V_0`.
pub fn relative_l1_errors(truth: &[Vec<f64>], estimates: &[Vec<f64>], v0: f64) -> Result<Vec<f64>> {
    if truth.len() != estimates.len() || truth.is_empty() {
        return Err(Error::input(
            "truth and estimates must be nonempty and aligned",
        ));
    }
    if !(v0 != 0.0 && v0.is_finite()) {
        return Err(Error::data(format!("cannot normalize by V_0 = {v0}")));
    }
    let steps = truth[0].len();
    (0..steps)
        .map(|t| {
            let diffs: Vec<f64> = truth
                .iter()
                .zip(estimates)
                .map(|(a, b)| {
                    if a.len() != steps || b.len() != steps {
                        return Err(Error::data("ground truth missing for some time step"));
                    }
                    Ok((a[t] - b[t]).abs())
                })
                .collect::<Result<_>>()?;
            Ok(mean(&diffs) / v0.abs())
        })
        .collect()
}

/// Relative `L^1` errors of `est` against the test set, per `t`.
pub fn value_process_error(est: &Estimator, test: &TestSet) -> Result<Vec<f64>> {
    let estimates = ValueEvaluator::new(est).evaluate_many(&test.paths)?;
    relative_l1_errors(&test.truth, &estimates, test.v0())
}

/// Relative trajectories `(V_t - V-hat_t) / V_0` for every test path.
pub fn relative_trajectories(est: &Estimator, test: &TestSet) -> Result<Vec<Vec<f64>>> {
    let estimates = ValueEvaluator::new(est).evaluate_many(&test.paths)?;
    let v0 = test.v0();
    Ok(test
        .truth
        .iter()
        .zip(&estimates)
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) / v0).collect())
        .collect())
}

/// Error statistics of one estimator type over repeated training samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub payoff: String,
    pub estimator: String,
    /// `per_repeat[r][t]`: relative `L^1` error (fraction, not percent).
    pub per_repeat: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Relative `L^2` payoff error per repeat (kernel estimator only).
    pub payoff_l2: Vec<f64>,
    /// Payoff evaluations used per repeat.
    pub payoff_evaluations: usize,
}

impl ErrorReport {
    pub fn from_repeats(
        payoff: impl Into<String>,
        estimator: impl Into<String>,
        per_repeat: Vec<Vec<f64>>,
        payoff_l2: Vec<f64>,
        payoff_evaluations: usize,
    ) -> Result<Self> {
        if per_repeat.is_empty() {
            return Err(Error::input("error report needs at least one repeat"));
        }
        let steps = per_repeat[0].len();
        let column = |t: usize| per_repeat.iter().map(|r| r[t]).collect::<Vec<_>>();
        let mean_v = (0..steps).map(|t| mean(&column(t))).collect();
        let std_v = (0..steps).map(|t| sample_std(&column(t))).collect();
        Ok(Self {
            payoff: payoff.into(),
            estimator: estimator.into(),
            per_repeat,
            mean: mean_v,
            std: std_v,
            payoff_l2,
            payoff_evaluations,
        })
    }
}

/// Inputs of the repeated kernel-estimator pipeline.
#[derive(Debug, Clone)]
pub struct RepeatSpec {
    pub cfg: BSConfig,
    pub id: PayoffId,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub n_train: usize,
    pub n_repeats: usize,
    pub master_seed: u64,
}

/// Training seed of repeat `r`.
pub fn training_seed(master: u64, r: usize) -> u64 {
    derive_seed(master, "train", r as u64)
}

/// Fit on `n_repeats` independent training samples and measure the value
/// process errors against `test`.
pub fn repeat_experiment(spec: &RepeatSpec, test: &TestSet) -> Result<ErrorReport> {
    if spec.n_repeats == 0 {
        return Err(Error::input("n_repeats must be at least 1"));
    }
    let f = BsPayoff::new(spec.cfg, spec.id);
    let mut per_repeat = Vec::with_capacity(spec.n_repeats);
    let mut l2 = Vec::with_capacity(spec.n_repeats);
    for r in 0..spec.n_repeats {
        let measure = MeasureSpec::new(
            spec.kernel.gamma,
            1,
            spec.cfg.steps,
            training_seed(spec.master_seed, r),
        )?;
        let ts = build_training_set(&measure, &f, spec.n_train)?;
        let est = fit_dual_unsorted(&ts, &spec.kernel, spec.lambda)?;
        let estimates = ValueEvaluator::new(&est).evaluate_many(&test.paths)?;
        per_repeat.push(relative_l1_errors(&test.truth, &estimates, test.v0())?);
        let finals: Vec<f64> = test.truth.iter().map(|row| *row.last().unwrap()).collect();
        l2.push(relative_l2_error(&est, &test.paths, &finals)?);
    }
    ErrorReport::from_repeats(spec.id.as_str(), "kernel", per_repeat, l2, spec.n_train)
}

/// Nested Monte Carlo baseline: errors at `t = 0` (against `V_0`) and at the
/// outer points for `t = 1` (against ground truth there), per repeat.
pub fn nested_mc_repeats(
    cfg: &BSConfig,
    id: PayoffId,
    n_outer: usize,
    n_inner: usize,
    n_repeats: usize,
    master_seed: u64,
    source: &GroundTruthSource,
) -> Result<ErrorReport> {
    if n_repeats == 0 {
        return Err(Error::input("n_repeats must be at least 1"));
    }
    let v0 = source_value(source, cfg, id, &[], 0)?;
    let mut per_repeat = Vec::with_capacity(n_repeats);
    let mut budget = 0;
    for r in 0..n_repeats {
        let res = crate::market::nested_mc_estimate(
            cfg,
            id,
            n_outer,
            n_inner,
            derive_seed(master_seed, "nested", r as u64),
        )?;
        budget = res.payoff_evaluations;
        let e1 = res
            .outer
            .par_iter()
            .enumerate()
            .map(|(i, (x1, v1_hat))| {
                let point = derive_seed(r as u64, "nested-truth", i as u64);
                Ok((source_value(source, cfg, id, &[*x1], point)? - v1_hat).abs())
            })
            .collect::<Result<Vec<f64>>>()?;
        per_repeat.push(vec![(v0 - res.v0_hat).abs() / v0, mean(&e1) / v0]);
    }
    ErrorReport::from_repeats(id.as_str(), "nested_mc", per_repeat, Vec::new(), budget)
}

/// Write Table 2-shaped rows: `payoff,estimator,t,mean_pct,std_pct`.
pub fn write_table2_csv<W: Write>(reports: &[ErrorReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["payoff", "estimator", "t", "mean_pct", "std_pct"])?;
    for r in reports {
        for t in 0..r.mean.len() {
            w.write_record([
                r.payoff.clone(),
                r.estimator.clone(),
                t.to_string(),
                format!("{}", 100.0 * r.mean[t]),
                format!("{}", 100.0 * r.std[t]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Write trajectory rows: `trajectory_id,t,value`.
pub fn write_trajectories_csv<W: Write>(trajectories: &[Vec<f64>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trajectory_id", "t", "value"])?;
    for (i, row) in trajectories.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            w.write_record([i.to_string(), t.to_string(), format!("{v}")])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean and standard error of `V-hat_{t+1} - V-hat_t` over fresh nominal
/// paths, for each `t < T`. A martingale has zero mean increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheck {
    pub increment_mean: Vec<f64>,
    pub increment_se: Vec<f64>,
    pub n_paths: usize,
}

impl MartingaleCheck {
    /// Largest `|mean| / SE` over the increments.
    pub fn max_z(&self) -> f64 {
        self.increment_mean
            .iter()
            .zip(&self.increment_se)
            .map(|(m, s)| {
                if *s > 0.0 {
                    m.abs() / s
                } else if *m == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn martingale_check(est: &Estimator, n_paths: usize, seed: u64) -> Result<MartingaleCheck> {
    let steps = est.kernel.steps();
    let paths = draw_paths(
        &MeasureSpec::nominal(est.kernel.dim(), steps, seed),
        n_paths,
    )?;
    let series = ValueEvaluator::new(est).evaluate_many(&paths)?;
    let mut m = Vec::with_capacity(steps);
    let mut s = Vec::with_capacity(steps);
    for t in 0..steps {
        let inc: Vec<f64> = series.iter().map(|v| v[t + 1] - v[t]).collect();
        m.push(mean(&inc));
        s.push(std_error(&inc));
    }
    Ok(MartingaleCheck {
        increment_mean: m,
        increment_se: s,
        n_paths,
    })
}

/// Both sides of the Doob-inequality consequence
/// `1/2 ||max_t |V_t - V-hat_t|||_2 <= ||f - f_X||_2`, estimated on the test
/// set with delta-method standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoobCheck {
    pub lhs: f64,
    pub lhs_se: f64,
    pub rhs: f64,
    pub rhs_se: f64,
}

impl DoobCheck {
    pub fn holds(&self, z: f64) -> bool {
        self.lhs <= self.rhs + z * (self.lhs_se.powi(2) + self.rhs_se.powi(2)).sqrt()
    }
}

pub fn doob_check(est: &Estimator, test: &TestSet) -> Result<DoobCheck> {
    let estimates = ValueEvaluator::new(est).evaluate_many(&test.paths)?;
    let max_sq: Vec<f64> = test
        .truth
        .iter()
        .zip(&estimates)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
                .powi(2)
        })
        .collect();
    let terminal_sq: Vec<f64> = test
        .truth
        .iter()
        .zip(&estimates)
        .map(|(a, b)| (a.last().unwrap() - b.last().unwrap()).powi(2))
        .collect();
    let root = |v: &[f64]| {
        let m = mean(v);
        let r = m.sqrt();
        let se = if r > 0.0 {
            std_error(v) / (2.0 * r)
        } else {
            0.0
        };
        (r, se)
    };
    let (l, lse) = root(&max_sq);
    let (r, rse) = root(&terminal_sq);
    Ok(DoobCheck {
        lhs: 0.5 * l,
        lhs_se: 0.5 * lse,
        rhs: r,
        rhs_se: rse,
    })
}
