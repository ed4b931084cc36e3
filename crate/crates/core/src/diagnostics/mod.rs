//! Empirical checks of the sample-error bounds and limit theorems.
//!
//! All population quantities (`f_lambda`, `h_lambda`) are unobservable, so every
//! check compares repeated fits at sample size `n` against one reference fit
//! on an independent sample of size `n_ref >= 4n` at the same `lambda`. Norms
//! are taken in the tilted problem: `L^2` under the sampling measure, `H` the
//! RKHS of the tilted kernel. Sup-norms are maxima over a probe sample and
//! hence lower bounds of the true sup; reports carry this caveat.

use std::path::Path as FsPath;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::krr::{fit_dual_unsorted, Coefficients, Estimator};
use crate::market::{BSConfig, BsPayoff, PayoffId};
use crate::numeric::{mean, norm_cdf, pairwise_sum, sample_variance};
use crate::path::Path;
use crate::rng::derive_seed;
use crate::sampling::{build_training_set, draw_paths, log_rn_weight, MeasureSpec, TrainingSet};

const REFERENCE_NOTE: &str =
    "population f_lambda replaced by a reference fit on an independent sample of size n_ref";
const SUP_NOTE: &str = "sup-norms are maxima over the probe sample (lower bounds of the true sup)";
const TRUNCATION_NOTE: &str =
    "S-truncated bounds use delta = 0.5 and ||(J*J + lambda)^-1|| = 1/lambda; \
     membership in S is not checked, so they are reported, not asserted";

/// Fixed `delta` of the sampling event `S`.
pub const TRUNCATION_DELTA: f64 = 0.5;

/// Inputs shared by all checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSetup {
    pub market: BSConfig,
    pub payoff: PayoffId,
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub n: usize,
    pub n_ref: usize,
    /// Probe sample from the sampling measure for `L^2` and sup estimates.
    pub n_probe: usize,
    /// Size of the probe subset used for the `J*` quadratic form.
    pub n_probe_gram: usize,
    pub master_seed: u64,
}

impl BoundSetup {
    pub fn validate(&self) -> Result<()> {
        if !matches!(self.kernel.family, KernelFamily::GaussExp(_)) {
            return Err(Error::capability(
                "bound diagnostics are implemented for the Gaussian-exponentiated kernel",
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::input("bound diagnostics need lambda > 0"));
        }
        if self.n == 0 || self.n_probe == 0 || self.n_probe_gram == 0 {
            return Err(Error::input("n, n_probe and n_probe_gram must be positive"));
        }
        if self.n_ref < 4 * self.n {
            return Err(Error::input(format!(
                "reference sample size {} must be at least 4n = {}",
                self.n_ref,
                4 * self.n
            )));
        }
        Ok(())
    }

    fn measure(&self, seed: u64) -> Result<MeasureSpec> {
        MeasureSpec::new(
            self.kernel.gamma,
            self.kernel.dim(),
            self.kernel.steps(),
            seed,
        )
    }

    fn payoff_fn(&self) -> BsPayoff {
        BsPayoff::new(self.market, self.payoff)
    }

    /// Training sample of repeat `r`.
    pub fn training_set(&self, r: usize, n: usize) -> Result<TrainingSet> {
        let m = self.measure(derive_seed(self.master_seed, "diag-train", r as u64))?;
        build_training_set(&m, &self.payoff_fn(), n)
    }

    pub fn probe_paths(&self) -> Result<Vec<Path>> {
        draw_paths(
            &self.measure(derive_seed(self.master_seed, "diag-probe", 0))?,
            self.n_probe,
        )
    }
}

/// The estimator in tilted coordinates: `f~_X = sum_j a_j k~(., X_j)`.
#[derive(Debug, Clone)]
pub struct TiltedExpansion {
    pub centers: Vec<Path>,
    pub coeffs: Vec<f64>,
}

impl TiltedExpansion {
    pub fn from_estimator(est: &Estimator) -> Result<Self> {
        match &est.coefficients {
            Coefficients::Dual {
                centers,
                solution,
                multiplicities,
                ..
            } => {
                let n = est.n as f64;
                let coeffs = solution
                    .iter()
                    .zip(multiplicities)
                    .map(|(g, &m)| (m as f64).sqrt() * g / n)
                    .collect();
                Ok(Self {
                    centers: centers.clone(),
                    coeffs,
                })
            }
            Coefficients::Primal { .. } => {
                Err(Error::capability("tilted expansion needs a dual estimator"))
            }
        }
    }

    pub fn eval(&self, kernel: &KernelSpec, z: &Path) -> Result<f64> {
        let terms = self
            .centers
            .iter()
            .zip(&self.coeffs)
            .map(|(c, a)| Ok(a * kernel.eval_tilted(z, c)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(pairwise_sum(&terms))
    }

    /// `sum_ij a_i b_j k~(X_i, Y_j)`.
    pub fn inner(&self, other: &Self, kernel: &KernelSpec) -> Result<f64> {
        let rows = self
            .centers
            .par_iter()
            .zip(self.coeffs.par_iter())
            .map(|(x, a)| {
                let terms = other
                    .centers
                    .iter()
                    .zip(&other.coeffs)
                    .map(|(y, b)| Ok(b * kernel.eval_tilted(x, y)?))
                    .collect::<Result<Vec<_>>>()?;
                Ok(a * pairwise_sum(&terms))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(pairwise_sum(&rows))
    }
}

/// Reference fit with its precomputed squared `H`-norm.
#[derive(Debug, Clone)]
pub struct Reference {
    pub estimator: Estimator,
    pub expansion: TiltedExpansion,
    pub norm_sq: f64,
}

impl Reference {
    pub fn new(estimator: Estimator) -> Result<Self> {
        let expansion = TiltedExpansion::from_estimator(&estimator)?;
        let norm_sq = expansion.inner(&expansion, &estimator.kernel)?;
        Ok(Self {
            estimator,
            expansion,
            norm_sq,
        })
    }

    /// `||h_X - h_ref||_H`.
    pub fn h_distance(&self, other: &TiltedExpansion) -> Result<f64> {
        let k = &self.estimator.kernel;
        let d2 = other.inner(other, k)? - 2.0 * other.inner(&self.expansion, k)? + self.norm_sq;
        Ok(d2.max(0.0).sqrt())
    }
}

/// Large-sample fit standing in for `f_lambda`, on a sample independent of
/// every repeat.
pub fn reference_estimator(setup: &BoundSetup) -> Result<Estimator> {
    setup.validate()?;
    let m = setup.measure(derive_seed(setup.master_seed, "reference", 0))?;
    let ts = build_training_set(&m, &setup.payoff_fn(), setup.n_ref)?;
    let hash = ts.content_hash()?;
    Ok(fit_dual_unsorted(&ts, &setup.kernel, setup.lambda)?.with_training_hash(hash))
}

/// [`reference_estimator`], loaded from `cache` when it holds a fit with the
/// same kernel, `lambda` and `n_ref`, and written there otherwise.
pub fn reference_estimator_cached(setup: &BoundSetup, cache: &FsPath) -> Result<Estimator> {
    if let Ok(s) = std::fs::read_to_string(cache) {
        if let Ok(est) = Estimator::from_json(&s) {
            if est.kernel == setup.kernel && est.lambda == setup.lambda && est.n == setup.n_ref {
                return Ok(est);
            }
        }
    }
    let est = reference_estimator(setup)?;
    std::fs::write(cache, est.to_json()?)?;
    Ok(est)
}

/// Residual statistics of the reference fit over the probe sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    /// `||(f~ - f~_ref) kappa~||_2`.
    pub resid_kappa_l2: f64,
    /// `max |f~ - f~_ref| kappa~` over the probe.
    pub resid_kappa_sup: f64,
    /// `||J*(f~ - f~_ref)||_H^2`, from the probe subset.
    pub jstar_sq: f64,
    pub kappa_l2: f64,
    pub kappa_sup: f64,
    /// `||1 / sqrt(w)||_2`, the tilted norm of the constant function 1.
    pub inv_sqrt_w_l2: f64,
}

fn probe_stats(setup: &BoundSetup, reference: &Reference, probe: &[Path]) -> Result<ResidualStats> {
    let k = &setup.kernel;
    let rows = probe
        .par_iter()
        .map(|z| {
            let s = (-0.5 * log_rn_weight(k.gamma, z)).exp();
            let fz = crate::market::payoff(&setup.market, setup.payoff, z)?;
            let resid = (fz - reference.estimator.predict(z)?) * s;
            Ok((resid, k.eval_tilted(z, z)?, s))
        })
        .collect::<Result<Vec<(f64, f64, f64)>>>()?;
    let sq = |v: Vec<f64>| mean(&v).sqrt();
    let resid_kappa_l2 = sq(rows.iter().map(|(r, kk, _)| r * r * kk).collect());
    let resid_kappa_sup = rows
        .iter()
        .map(|(r, kk, _)| r.abs() * kk.sqrt())
        .fold(0.0, f64::max);
    let kappa_l2 = sq(rows.iter().map(|(_, kk, _)| *kk).collect());
    let kappa_sup = rows.iter().map(|(_, kk, _)| kk.sqrt()).fold(0.0, f64::max);
    let inv_sqrt_w_l2 = sq(rows.iter().map(|(_, _, s)| s * s).collect());

    let m = setup.n_probe_gram.min(probe.len());
    let sub = &probe[..m];
    let r: Vec<f64> = rows[..m].iter().map(|(r, _, _)| *r).collect();
    let quad = sub
        .par_iter()
        .enumerate()
        .map(|(i, zi)| {
            let terms = sub
                .iter()
                .zip(&r)
                .map(|(zj, rj)| Ok(rj * k.eval_tilted(zi, zj)?))
                .collect::<Result<Vec<_>>>()?;
            Ok(r[i] * pairwise_sum(&terms))
        })
        .collect::<Result<Vec<_>>>()?;
    let jstar_sq = (pairwise_sum(&quad) / (m * m) as f64).max(0.0);
    Ok(ResidualStats {
        resid_kappa_l2,
        resid_kappa_sup,
        jstar_sq,
        kappa_l2,
        kappa_sup,
        inv_sqrt_w_l2,
    })
}

/// `(1/lambda) sqrt((A^2 - J) / n)`, the root-mean-squared `H`-error bound.
pub fn mse_bound(resid_kappa_l2: f64, jstar_sq: f64, n: usize, lambda: f64) -> f64 {
    ((resid_kappa_l2 * resid_kappa_l2 - jstar_sq).max(0.0) / n as f64).sqrt() / lambda
}

/// `C_2 = (2 / lambda)^2 ||(f - f_lambda) kappa||_inf^2`.
pub fn concentration_constant(resid_kappa_sup: f64, lambda: f64) -> f64 {
    (2.0 / lambda * resid_kappa_sup).powi(2)
}

/// Bounds on the event `S = {||J_X* J_X - J* J|| <= delta / ||(J*J + lambda)^-1||}`.
///
/// `J*J` is trace class on an infinite-dimensional space, so its spectrum
/// accumulates at zero and `||(J*J + lambda)^-1|| = 1/lambda` exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedBounds {
    pub delta: f64,
    pub inverse_norm: f64,
    /// Root-mean-squared bound on `1_S ||h_X - h_lambda||_H`.
    pub mse_bound: f64,
    /// `C_1 = (2 ||(J*J + lambda)^-1|| / (1 - delta))^2 ||(f - f_lambda) kappa||_inf^2`.
    pub c1: f64,
    /// Lower bound on the probability of `S`; zero when vacuous.
    pub s_probability_lower: f64,
}

impl TruncatedBounds {
    pub fn new(stats: &ResidualStats, n: usize, lambda: f64, delta: f64, drop_jstar: bool) -> Self {
        let inv = 1.0 / lambda;
        let jstar = if drop_jstar { 0.0 } else { stats.jstar_sq };
        let spread = (stats.resid_kappa_l2.powi(2) - jstar).max(0.0) / n as f64;
        let k4 = stats.kappa_sup.powi(4);
        let exponent = delta * delta * n as f64 / (4.0 * k4 * inv * inv);
        Self {
            delta,
            inverse_norm: inv,
            mse_bound: inv / (1.0 - delta) * spread.sqrt(),
            c1: (2.0 * inv / (1.0 - delta) * stats.resid_kappa_sup).powi(2),
            s_probability_lower: (1.0 - 2.0 * (-exponent).exp()).max(0.0),
        }
    }
}

/// `min(1, 2 exp(-tau^2 n / (2 C_2)))`.
pub fn concentration_bound(tau: f64, n: usize, c2: f64) -> f64 {
    (2.0 * (-tau * tau * n as f64 / (2.0 * c2)).exp()).min(1.0)
}

/// Sample errors of one refit against the reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatError {
    pub h_error: f64,
    /// `||f~_X - f~_ref||_2` over the probe sample.
    pub l2_error: f64,
}

/// `||h_X - h_ref||_H` and the tilted `L^2` distance for `n_repeats` refits.
pub fn repeated_errors(
    setup: &BoundSetup,
    reference: &Reference,
    probe: &[Path],
    n_repeats: usize,
) -> Result<Vec<RepeatError>> {
    let k = &setup.kernel;
    let ref_probe = probe
        .par_iter()
        .map(|z| reference.expansion.eval(k, z))
        .collect::<Result<Vec<_>>>()?;
    (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let ts = setup.training_set(r, setup.n)?;
            let est = fit_dual_unsorted(&ts, k, setup.lambda)?;
            let exp = TiltedExpansion::from_estimator(&est)?;
            let h_error = reference.h_distance(&exp)?;
            let d = probe
                .iter()
                .zip(&ref_probe)
                .map(|(z, fr)| Ok((exp.eval(k, z)? - fr).powi(2)))
                .collect::<Result<Vec<_>>>()?;
            Ok(RepeatError {
                h_error,
                l2_error: mean(&d).sqrt(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub setup: BoundSetup,
    pub n_repeats: usize,
    pub stats: ResidualStats,
    pub drop_jstar: bool,
    /// Root-mean-squared `H`-error bound.
    pub mse_bound: f64,
    /// `kappa~_sup * mse_bound`, the implied `L^2` bound.
    pub l2_bound: f64,
    pub c2: f64,
    pub truncated: TruncatedBounds,
    pub empirical_rms_h: f64,
    pub empirical_rms_l2: f64,
    /// Empirical error exceeds the bound.
    pub violated: bool,
    pub notes: Vec<String>,
}

fn rms(v: impl Iterator<Item = f64>) -> f64 {
    let sq: Vec<f64> = v.map(|x| x * x).collect();
    mean(&sq).sqrt()
}

/// Everything the bound checks need: reference fit, probe sample and its
/// residual statistics.
pub struct BoundContext {
    pub setup: BoundSetup,
    pub reference: Reference,
    pub probe: Vec<Path>,
    pub stats: ResidualStats,
}

impl BoundContext {
    pub fn new(setup: &BoundSetup) -> Result<Self> {
        Self::with_reference(setup, reference_estimator(setup)?)
    }

    pub fn with_reference(setup: &BoundSetup, reference: Estimator) -> Result<Self> {
        setup.validate()?;
        if reference.kernel != setup.kernel || reference.lambda != setup.lambda {
            return Err(Error::input("reference fit does not match the setup"));
        }
        let reference = Reference::new(reference)?;
        let probe = setup.probe_paths()?;
        let stats = probe_stats(setup, &reference, &probe)?;
        Ok(Self {
            setup: setup.clone(),
            reference,
            probe,
            stats,
        })
    }

    pub fn repeated_errors(&self, n_repeats: usize) -> Result<Vec<RepeatError>> {
        repeated_errors(&self.setup, &self.reference, &self.probe, n_repeats)
    }

    pub fn mse_bound_check(&self, errors: &[RepeatError], drop_jstar: bool) -> BoundReport {
        let s = &self.setup;
        let jstar = if drop_jstar { 0.0 } else { self.stats.jstar_sq };
        let bound = mse_bound(self.stats.resid_kappa_l2, jstar, s.n, s.lambda);
        let l2_bound = self.stats.kappa_sup * bound;
        let empirical_rms_h = rms(errors.iter().map(|e| e.h_error));
        let empirical_rms_l2 = rms(errors.iter().map(|e| e.l2_error));
        BoundReport {
            setup: s.clone(),
            n_repeats: errors.len(),
            stats: self.stats.clone(),
            drop_jstar,
            mse_bound: bound,
            l2_bound,
            c2: concentration_constant(self.stats.resid_kappa_sup, s.lambda),
            truncated: TruncatedBounds::new(
                &self.stats,
                s.n,
                s.lambda,
                TRUNCATION_DELTA,
                drop_jstar,
            ),
            empirical_rms_h,
            empirical_rms_l2,
            violated: empirical_rms_h > bound || empirical_rms_l2 > l2_bound,
            notes: vec![
                REFERENCE_NOTE.into(),
                SUP_NOTE.into(),
                TRUNCATION_NOTE.into(),
            ],
        }
    }

    pub fn concentration_check(&self, errors: &[RepeatError], taus: &[f64]) -> ConcentrationReport {
        let s = &self.setup;
        let applicable = s.kernel.tilt_conditions().bounded;
        let c2 = concentration_constant(self.stats.resid_kappa_sup, s.lambda);
        let r = errors.len() as f64;
        let points = taus
            .iter()
            .map(|&tau| {
                let freq = errors.iter().filter(|e| e.h_error > tau).count() as f64 / r;
                let bound = concentration_bound(tau, s.n, c2);
                let tolerance = 3.0 * (bound * (1.0 - bound) / r).sqrt();
                ConcentrationPoint {
                    tau,
                    empirical: freq,
                    bound,
                    tolerance,
                    holds: freq <= bound + tolerance,
                }
            })
            .collect::<Vec<_>>();
        let holds = !applicable || points.iter().all(|p| p.holds);
        ConcentrationReport {
            setup: s.clone(),
            n_repeats: errors.len(),
            applicable,
            c2,
            points,
            holds,
            notes: vec![REFERENCE_NOTE.into(), SUP_NOTE.into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationPoint {
    pub tau: f64,
    pub empirical: f64,
    pub bound: f64,
    /// Three binomial standard deviations at the bound.
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub setup: BoundSetup,
    pub n_repeats: usize,
    /// The tilted kernel is bounded (`beta <= gamma`); otherwise the
    /// inequality has no guarantee and the check is reported only.
    pub applicable: bool,
    pub c2: f64,
    pub points: Vec<ConcentrationPoint>,
    pub holds: bool,
    pub notes: Vec<String>,
}

/// Empirical `q`-quantile (nearest rank).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

/// Anderson-Darling statistic for normality with estimated mean and
/// variance, its small-sample adjustment and approximate p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AndersonDarling {
    pub a2: f64,
    pub a2_adjusted: f64,
    pub p_value: f64,
}

/// 1% critical value of the adjusted statistic.
pub const AD_CRITICAL_1PCT: f64 = 1.035;

pub fn anderson_darling(values: &[f64]) -> Result<AndersonDarling> {
    let n = values.len();
    if n < 8 {
        return Err(Error::input("Anderson-Darling needs at least 8 values"));
    }
    let m = mean(values);
    let sd = sample_variance(values).sqrt();
    if !(sd > 0.0) {
        return Err(Error::data("Anderson-Darling on constant data"));
    }
    let mut y: Vec<f64> = values.iter().map(|v| (v - m) / sd).collect();
    y.sort_by(f64::total_cmp);
    let nf = n as f64;
    let terms: Vec<f64> = (0..n)
        .map(|i| {
            let lo = norm_cdf(y[i]).max(1e-300).ln();
            let hi = norm_cdf(-y[n - 1 - i]).max(1e-300).ln();
            (2.0 * i as f64 + 1.0) * (lo + hi)
        })
        .collect();
    let a2 = -nf - pairwise_sum(&terms) / nf;
    let a = a2 * (1.0 + 0.75 / nf + 2.25 / (nf * nf));
    let p_value = if a >= 0.6 {
        (1.2937 - 5.709 * a + 0.0186 * a * a).exp()
    } else if a >= 0.34 {
        (0.9177 - 4.279 * a - 1.38 * a * a).exp()
    } else if a >= 0.2 {
        1.0 - (-8.318 + 42.796 * a - 59.938 * a * a).exp()
    } else {
        1.0 - (-13.436 + 101.14 * a - 223.73 * a * a).exp()
    };
    Ok(AndersonDarling {
        a2,
        a2_adjusted: a,
        p_value: p_value.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub setup: BoundSetup,
    pub n_repeats: usize,
    pub probe_point: Path,
    /// `sqrt(n) (f~_X(z) - f~_ref(z))` per repeat.
    pub statistics: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
    /// Standard error of the mean including the reference fit's own noise,
    /// `sqrt(var (1 / R + n / n_ref))`.
    pub mean_se: f64,
    pub anderson_darling: Option<AndersonDarling>,
    /// `var / kappa~(z)^2`, a lower bound of `||Q||`.
    pub q_proxy: f64,
    pub c2_quarter: f64,
    pub degenerate: bool,
    pub mean_ok: bool,
    pub normal_ok: bool,
    pub notes: Vec<String>,
}

/// Distribution of `sqrt(n) <h_X - h_ref, k~(., z)>_H` over `n_repeats` fits
/// at the probe point `z`.
pub fn clt_experiment(ctx: &BoundContext, n_repeats: usize, z: &Path) -> Result<CltReport> {
    let s = &ctx.setup;
    if !s.kernel.tilt_conditions().fourth_moment {
        return Err(Error::capability(
            "central limit check needs beta < gamma + 1/4",
        ));
    }
    let k = &s.kernel;
    let f_ref = ctx.reference.expansion.eval(k, z)?;
    let statistics = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let ts = s.training_set(r, s.n)?;
            let est = fit_dual_unsorted(&ts, k, s.lambda)?;
            let fx = TiltedExpansion::from_estimator(&est)?.eval(k, z)?;
            Ok((s.n as f64).sqrt() * (fx - f_ref))
        })
        .collect::<Result<Vec<f64>>>()?;
    let degenerate = n_repeats < 8;
    let m = mean(&statistics);
    let variance = if n_repeats > 1 {
        sample_variance(&statistics)
    } else {
        0.0
    };
    let mean_se = (variance * (1.0 / n_repeats as f64 + s.n as f64 / s.n_ref as f64)).sqrt();
    let ad = if degenerate {
        None
    } else {
        anderson_darling(&statistics).ok()
    };
    let kz = k.eval_tilted(z, z)?;
    let c2 = concentration_constant(ctx.stats.resid_kappa_sup, s.lambda);
    Ok(CltReport {
        setup: s.clone(),
        n_repeats,
        probe_point: z.clone(),
        mean: m,
        variance,
        mean_se,
        anderson_darling: ad,
        q_proxy: variance / kz,
        c2_quarter: c2 / 4.0,
        degenerate,
        mean_ok: !degenerate && m.abs() <= 3.0 * mean_se,
        normal_ok: ad.is_some_and(|a| a.a2_adjusted <= AD_CRITICAL_1PCT),
        statistics,
        notes: vec![REFERENCE_NOTE.into()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub setup: BoundSetup,
    pub epsilon: f64,
    pub n_repeats: usize,
    /// `||h_X - h'_X||_H` per repeat.
    pub h_differences: Vec<f64>,
    pub mean_difference: f64,
    /// `(1/lambda) ||kappa~||_2 ||f~ - f~'||_2`.
    pub bound: f64,
    pub holds: bool,
}

/// Fit `f` and `f + epsilon` on identical samples and compare the `H`-norm
/// of the difference with its bound.
pub fn robustness_check(
    ctx: &BoundContext,
    epsilon: f64,
    n_repeats: usize,
) -> Result<RobustnessReport> {
    let s = &ctx.setup;
    let k = &s.kernel;
    let h_differences = (0..n_repeats)
        .into_par_iter()
        .map(|r| {
            let ts = s.training_set(r, s.n)?;
            let shifted: Vec<f64> = ts.payoff_values.iter().map(|v| v + epsilon).collect();
            let ts2 = ts.with_values(shifted, format!("{}+eps", ts.payoff))?;
            let a = TiltedExpansion::from_estimator(&fit_dual_unsorted(&ts, k, s.lambda)?)?;
            let b = TiltedExpansion::from_estimator(&fit_dual_unsorted(&ts2, k, s.lambda)?)?;
            let diff = TiltedExpansion {
                centers: a.centers,
                coeffs: a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| x - y).collect(),
            };
            Ok(diff.inner(&diff, k)?.max(0.0).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_difference = mean(&h_differences);
    let bound = ctx.stats.kappa_l2 * epsilon.abs() * ctx.stats.inv_sqrt_w_l2 / s.lambda;
    Ok(RobustnessReport {
        setup: s.clone(),
        epsilon,
        n_repeats,
        mean_difference,
        bound,
        holds: mean_difference <= bound,
        h_differences,
    })
}

/// Source condition of a regularization-rate toy problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceCondition {
    /// `f = J h`: approximation error of order `sqrt(lambda)`.
    RangeJ,
    /// `f = J J* g`: approximation error of order `lambda`.
    RangeJJStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub condition: SourceCondition,
    pub n: usize,
    pub lambdas: Vec<f64>,
    /// `||f_lambda - f||` in the empirical `L^2` norm.
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Finite-dimensional toy problem for the approximation-error rates.
///
/// A tensor-Hermite feature map on `R^{1 x 2}` with geometrically decaying
/// scales gives an empirical covariance `A = V^T V / n` whose spectrum spans
/// about twelve decades. The target `f = V h0` is built in the eigenbasis
/// `A = U diag(s) U^T`: for `RangeJ`, `(U^T h0)_k^2` is the log-spacing of the
/// spectrum at `s_k` (a discretized scale-free source, so
/// `||f_lambda - f||^2 ~ lambda`); for `RangeJJStar`, `U^T h0 = s`, i.e.
/// `h0 = A 1`. Fits go through [`crate::krr::regularization_path`].
pub fn regularization_rate(
    condition: SourceCondition,
    n: usize,
    lambdas: &[f64],
    seed: u64,
) -> Result<RateReport> {
    use crate::kernel::{Basis1d, FeatureMapSpec, ProductFeature};
    use crate::numeric::factorial;
    use nalgebra::{DMatrix, DVector};

    let mut feats = Vec::new();
    for a in 0..=4u32 {
        for b in 0..=4u32 {
            feats.push((a, b));
        }
    }
    feats.sort_by_key(|&(a, b)| (a + b, a));
    let features: Vec<ProductFeature> = feats
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| ProductFeature {
            coeff: 10f64.powf(-(k as f64) / 4.0) / (factorial(a) * factorial(b)).sqrt(),
            factors: vec![Basis1d::Hermite(a), Basis1d::Hermite(b)],
        })
        .collect();
    let spec = FeatureMapSpec::new(1, 2, features)?;
    let m = spec.len();
    let measure = MeasureSpec::new(0.0, 1, 2, seed)?;
    let paths = draw_paths(&measure, n)?;
    let rows = paths
        .iter()
        .map(|p| spec.feature_vector(p))
        .collect::<Result<Vec<_>>>()?;
    let v = DMatrix::from_fn(n, m, |i, j| rows[i][j]);
    let a = v.transpose() * &v / n as f64;
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let s: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if s[m - 1] <= 0.0 {
        return Err(Error::data("toy feature covariance is singular"));
    }
    let c: Vec<f64> = match condition {
        SourceCondition::RangeJ => (0..m)
            .map(|k| {
                let lo = if k + 1 < m {
                    s[k + 1]
                } else {
                    s[k] * s[k] / s[k - 1]
                };
                let hi = if k > 0 { s[k - 1] } else { s[0] * s[0] / s[1] };
                (0.5 * (hi / lo).ln()).sqrt()
            })
            .collect(),
        SourceCondition::RangeJJStar => s.clone(),
    };
    let mut h0 = DVector::zeros(m);
    for (k, &i) in order.iter().enumerate() {
        h0 += eig.eigenvectors.column(i) * c[k];
    }
    let f = &v * &h0;
    let ts = TrainingSet::new(
        paths.clone(),
        f.iter().copied().collect(),
        vec![1.0; n],
        crate::sampling::SamplingDesign::Tilted(measure),
        "rate-toy",
    )?;
    let kernel = KernelSpec::feature_map(spec, 0.0)?;
    let fits = crate::krr::regularization_path(&ts, &kernel, lambdas)?;
    let errors = fits
        .iter()
        .map(|est| {
            let d = paths
                .iter()
                .zip(f.iter())
                .map(|(p, fi)| Ok((est.predict(p)? - fi).powi(2)))
                .collect::<Result<Vec<_>>>()?;
            Ok(mean(&d).sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let slope = crate::krr::loglog_slope(lambdas, &errors)?;
    Ok(RateReport {
        condition,
        n,
        lambdas: lambdas.to_vec(),
        errors,
        slope,
    })
}
