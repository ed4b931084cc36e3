use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::krr::solve::factor_regularized;

/// Empirical value at risk and expected shortfall of a loss sample. VaR is
/// the order statistic at (one-based) index `ceil(level * N)`; ES is the mean
/// of all losses at or above it.
pub fn var_es(losses: &[f64], level: f64) -> Result<(f64, f64)> {
    if losses.is_empty() {
        return Err(Error::input("loss sample is empty"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::input(format!(
            "level must lie in (0, 1), got {level}"
        )));
    }
    if losses.iter().any(|l| l.is_nan()) {
        return Err(Error::data("loss sample contains NaN"));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let k = ((level * n as f64).ceil() as usize).clamp(1, n);
    let var = sorted[k - 1];
    let tail: Vec<f64> = sorted.iter().copied().filter(|l| *l >= var).collect();
    Ok((var, crate::numeric::mean(&tail)))
}

/// Variance-optimal hedge `psi = E[dG dG^T]^{-1} E[dG dV]` from samples of
/// instrument gains `dG` (vectors) and portfolio value changes `dV`.
pub fn hedge_ratio(delta_g: &[Vec<f64>], delta_v: &[f64]) -> Result<Vec<f64>> {
    let n = delta_g.len();
    if n == 0 || n != delta_v.len() {
        return Err(Error::input(
            "hedge samples must be nonempty and of equal length",
        ));
    }
    let k = delta_g[0].len();
    if k == 0 || delta_g.iter().any(|g| g.len() != k) {
        return Err(Error::input(
            "instrument gain vectors must share a positive length",
        ));
    }
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    for (g, v) in delta_g.iter().zip(delta_v) {
        let g = DVector::from_column_slice(g);
        m += &g * g.transpose();
        b += &g * *v;
    }
    m /= n as f64;
    b /= n as f64;
    let solver = factor_regularized(m, 0.0, "hedge second-moment matrix")?;
    Ok(solver.solve(&b).iter().copied().collect())
}
