use super::*;
use crate::kernel::{Basis1d, ProductFeature};
use crate::sampling::{draw_paths, MeasureSpec};

fn toy_set(gamma: f64, n: usize, seed: u64, f: impl Fn(&Path) -> f64) -> TrainingSet {
    let m = MeasureSpec::new(gamma, 1, 2, seed).unwrap();
    let paths = draw_paths(&m, n).unwrap();
    let vals = paths.iter().map(&f).collect();
    let w = paths.iter().map(|p| m.rn_weight(p).unwrap()).collect();
    TrainingSet::new(paths, vals, w, SamplingDesign::Tilted(m), "toy").unwrap()
}

fn smooth(p: &Path) -> f64 {
    let x = p.as_slice();
    (0.5 * x[0]).sin() + 0.3 * x[1] * x[0] + 1.0
}

#[test]
fn single_point_is_scalar_system() {
    let ts = toy_set(0.3, 1, 1, smooth);
    let k = KernelSpec::gauss_exp(1.0, 0.2, 1, 2, 0.3).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 0.1).unwrap();
    let x = &ts.paths[0];
    let ft = ts.tilted_values()[0];
    let expect = ft / (k.eval_tilted(x, x).unwrap() + 0.1);
    assert!((est.solution()[0] - expect).abs() < 1e-14 * expect.abs());
}

#[test]
fn zero_target_gives_zero_fit() {
    let ts = toy_set(0.45, 20, 2, |_| 0.0);
    let k = KernelSpec::gauss_exp(2.0, 0.3, 1, 2, 0.45).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 1e-3).unwrap();
    assert!(est.solution().iter().all(|g| *g == 0.0));
    assert_eq!(est.predict(&Path::scalar(&[0.3, 0.1])).unwrap(), 0.0);
}

#[test]
fn three_point_system_matches_explicit_inverse() {
    let paths = vec![
        Path::scalar(&[0.1, -0.4]),
        Path::scalar(&[1.2, 0.3]),
        Path::scalar(&[-0.7, 0.9]),
    ];
    let f = vec![1.0, -2.0, 0.5];
    let m = MeasureSpec::nominal(1, 2, 0);
    let ts = TrainingSet::new(
        paths.clone(),
        f.clone(),
        vec![1.0; 3],
        SamplingDesign::Tilted(m),
        "toy",
    )
    .unwrap();
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 2, 0.0).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 0.1).unwrap();
    // Independent oracle: explicit 3x3 inverse by cofactors.
    let mut a = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let d2: f64 = paths[i]
                .as_slice()
                .iter()
                .zip(paths[j].as_slice())
                .map(|(u, v)| (u - v) * (u - v))
                .sum();
            a[i][j] = (-d2).exp() / 3.0 + if i == j { 0.1 } else { 0.0 };
        }
    }
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            inv[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
        }
    }
    for i in 0..3 {
        let g: f64 = (0..3).map(|j| inv[i][j] * f[j]).sum();
        assert!(
            (est.solution()[i] - g).abs() < 1e-12,
            "{} vs {g}",
            est.solution()[i]
        );
    }
}

#[test]
fn untilted_prediction_formula() {
    let ts = toy_set(0.0, 15, 3, smooth);
    let k = KernelSpec::gauss_exp(2.0, 0.1, 1, 2, 0.0).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 1e-4).unwrap();
    let x = Path::scalar(&[0.2, -0.5]);
    let direct: f64 = ts
        .paths
        .iter()
        .zip(est.solution())
        .map(|(c, g)| k.eval(&x, c).unwrap() * g)
        .sum::<f64>()
        / 15.0;
    assert!((est.predict(&x).unwrap() - direct).abs() < 1e-13);
}

#[test]
fn small_lambda_interpolates() {
    let m = MeasureSpec::nominal(1, 1, 0);
    let paths: Vec<Path> = (0..10)
        .map(|i| Path::scalar(&[-2.0 + 0.45 * i as f64]))
        .collect();
    let vals: Vec<f64> = paths.iter().map(|p| p.as_slice()[0].cos()).collect();
    let ts = TrainingSet::new(
        paths.clone(),
        vals.clone(),
        vec![1.0; 10],
        SamplingDesign::Tilted(m),
        "cos",
    )
    .unwrap();
    let k = KernelSpec::gauss_exp(2.0, 0.0, 1, 1, 0.0).unwrap();
    let mut prev = f64::INFINITY;
    for lambda in [1e-2, 1e-4, 1e-6, 1e-8] {
        let est = fit_dual_unsorted(&ts, &k, lambda).unwrap();
        let err = paths
            .iter()
            .zip(&vals)
            .map(|(p, v)| (est.predict(p).unwrap() - v).abs())
            .fold(0.0, f64::max);
        assert!(err < prev);
        prev = err;
    }
    assert!(prev < 1e-5, "{prev}");
}

#[test]
fn fit_is_linear_in_targets() {
    let ts = toy_set(0.45, 40, 4, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let f2: Vec<f64> = ts.paths.iter().map(|p| p.as_slice()[1].max(0.0)).collect();
    let sum: Vec<f64> = ts
        .payoff_values
        .iter()
        .zip(&f2)
        .map(|(a, b)| a + b)
        .collect();
    let e1 = fit_dual_unsorted(&ts, &k, 1e-5).unwrap();
    let e2 = fit_dual_unsorted(&ts.with_values(f2, "b").unwrap(), &k, 1e-5).unwrap();
    let e12 = fit_dual_unsorted(&ts.with_values(sum, "a+b").unwrap(), &k, 1e-5).unwrap();
    for i in 0..10 {
        let x = Path::scalar(&[0.3 * i as f64 - 1.0, 0.7 - 0.2 * i as f64]);
        let lhs = e12.predict(&x).unwrap();
        let rhs = e1.predict(&x).unwrap() + e2.predict(&x).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn sorted_equals_unsorted_without_duplicates() {
    let ts = toy_set(0.45, 60, 5, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let a = fit_dual_unsorted(&ts, &k, 1e-5).unwrap();
    let b = fit_dual_sorted(&ts, &k, 1e-5).unwrap();
    for (x, y) in a.solution().iter().zip(b.solution()) {
        assert!((x - y).abs() < 1e-10 * x.abs().max(1.0));
    }
}

#[test]
fn sorted_handles_duplicates() {
    let mut ts = toy_set(0.3, 30, 6, smooth);
    ts.paths[1] = ts.paths[0].clone();
    ts.payoff_values[1] = ts.payoff_values[0];
    ts.weights[1] = ts.weights[0];
    ts.paths[7] = ts.paths[3].clone();
    ts.payoff_values[7] = ts.payoff_values[3];
    ts.weights[7] = ts.weights[3];
    let k = KernelSpec::gauss_exp(2.0, 0.2, 1, 2, 0.3).unwrap();
    let a = fit_dual_unsorted(&ts, &k, 0.1).unwrap();
    let b = fit_dual_sorted(&ts, &k, 0.1).unwrap();
    assert_eq!(b.centers().len(), 28);
    for p in &ts.paths {
        let (x, y) = (a.predict(p).unwrap(), b.predict(p).unwrap());
        assert!((x - y).abs() < 1e-10 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn two_identical_points_collapse() {
    let m = MeasureSpec::nominal(1, 1, 0);
    let p = Path::scalar(&[0.4]);
    let ts = TrainingSet::new(
        vec![p.clone(), p],
        vec![1.0, 1.0],
        vec![1.0; 2],
        SamplingDesign::Tilted(m),
        "c",
    )
    .unwrap();
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 1, 0.0).unwrap();
    let sys = DualSystem::assemble(&ts, &k, true).unwrap();
    assert_eq!(sys.num_centers(), 1);
    assert_eq!(sys.multiplicities(), &[2]);
}

#[test]
fn constant_feature_least_squares_is_mean() {
    let ts = toy_set(0.0, 50, 7, smooth);
    let spec = FeatureMapSpec::monomials(1, 2, 0).unwrap();
    let est = fit_primal(&ts, &spec, 0.0).unwrap();
    let mean = crate::numeric::mean(&ts.payoff_values);
    assert!((est.solution()[0] - mean).abs() < 1e-12);
}

#[test]
fn primal_matches_gradient_descent() {
    let ts = toy_set(0.2, 80, 8, smooth);
    let spec = FeatureMapSpec::monomials(1, 2, 2).unwrap();
    let lambda = 0.1;
    let est = fit_primal(&ts, &spec, lambda).unwrap();
    // Oracle: gradient descent on (1/n)|V~ h - f~|^2 + lambda |h|^2.
    let n = ts.len() as f64;
    let ft = ts.tilted_values();
    let v: Vec<Vec<f64>> = ts
        .paths
        .iter()
        .zip(&ts.weights)
        .map(|(p, w)| {
            spec.feature_vector(p)
                .unwrap()
                .iter()
                .map(|x| x / w.sqrt())
                .collect()
        })
        .collect();
    let m = spec.len();
    let mut h = vec![0.0; m];
    for _ in 0..200_000 {
        let mut grad = h.iter().map(|x| 2.0 * lambda * x).collect::<Vec<_>>();
        for (row, f) in v.iter().zip(&ft) {
            let r: f64 = row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() - f;
            for j in 0..m {
                grad[j] += 2.0 * r * row[j] / n;
            }
        }
        let gn: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gn < 1e-10 {
            break;
        }
        for j in 0..m {
            h[j] -= 0.05 * grad[j];
        }
    }
    for (a, b) in est.solution().iter().zip(&h) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

#[test]
fn primal_equals_dual_for_feature_maps() {
    let ts = toy_set(0.25, 100, 9, smooth);
    let spec = FeatureMapSpec::monomials(1, 2, 2).unwrap();
    let k = KernelSpec::feature_map(spec.clone(), 0.25).unwrap();
    let p = fit_primal(&ts, &spec, 1e-3).unwrap();
    let d = fit_dual_unsorted(&ts, &k, 1e-3).unwrap();
    for i in 0..20 {
        let x = Path::scalar(&[(i as f64 * 0.37).sin() * 2.0, (i as f64 * 0.91).cos()]);
        let (a, b) = (p.predict(&x).unwrap(), d.predict(&x).unwrap());
        assert!((a - b).abs() < 1e-8 * a.abs().max(1.0), "{a} vs {b}");
    }
}

#[test]
fn fresh_fit_has_tiny_residual() {
    let ts = toy_set(0.45, 200, 10, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 1e-5).unwrap();
    assert!(normal_equation_residual(&est, &ts).unwrap() < 1e-8);
    let spec = FeatureMapSpec::monomials(1, 2, 3).unwrap();
    let est = fit_primal(&ts, &spec, 1e-5).unwrap();
    assert!(normal_equation_residual(&est, &ts).unwrap() < 1e-8);
}

#[test]
fn perturbed_coefficients_raise_residual() {
    let ts = toy_set(0.45, 50, 11, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 1e-3).unwrap();
    let sys = DualSystem::assemble(&ts, &k, false).unwrap();
    let base = sys.residual(est.solution(), 1e-3).unwrap();
    let mut g = est.solution().to_vec();
    g[3] *= 1.1;
    assert!(sys.residual(&g, 1e-3).unwrap() > base);
}

#[test]
fn large_lambda_shrinks_coefficients() {
    let ts = toy_set(0.45, 50, 12, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ft = norm(&ts.tilted_values());
    let est = fit_dual_unsorted(&ts, &k, 1e3).unwrap();
    assert!(norm(est.solution()) <= ft / 1e3 * (1.0 + 1e-12));
    let mut prev = f64::INFINITY;
    for lambda in [1e-9, 1e-7, 1e-5, 1e-3] {
        let g = norm(fit_dual_unsorted(&ts, &k, lambda).unwrap().solution());
        assert!(g <= prev);
        prev = g;
    }
}

#[test]
fn zero_lambda_needs_conditioning() {
    let mut ts = toy_set(0.0, 5, 13, smooth);
    ts.paths[1] = ts.paths[0].clone();
    ts.payoff_values[1] = ts.payoff_values[0];
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 2, 0.0).unwrap();
    assert!(matches!(
        fit_dual_unsorted(&ts, &k, 0.0),
        Err(Error::Solver { .. })
    ));
    // The sorted system removes the exact duplicate and is invertible.
    assert!(fit_dual_sorted(&ts, &k, 0.0).is_ok());
}

#[test]
fn mismatched_tilt_rejected() {
    let ts = toy_set(0.45, 5, 14, smooth);
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 2, 0.3).unwrap();
    assert!(matches!(
        fit_dual_unsorted(&ts, &k, 0.1),
        Err(Error::Input(_))
    ));
}

#[test]
fn dense_limit_enforced() {
    let m = MeasureSpec::nominal(1, 1, 0);
    let n = MAX_DUAL_CENTERS + 1;
    let paths: Vec<Path> = (0..n).map(|i| Path::scalar(&[i as f64 * 1e-4])).collect();
    let ts = TrainingSet::new(
        paths,
        vec![0.0; n],
        vec![1.0; n],
        SamplingDesign::Tilted(m),
        "z",
    )
    .unwrap();
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 1, 0.0).unwrap();
    assert!(matches!(
        fit_dual_unsorted(&ts, &k, 0.1),
        Err(Error::Capability(_))
    ));
}

#[test]
fn path_of_one_lambda_is_direct_fit() {
    let ts = toy_set(0.45, 30, 15, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let p = regularization_path(&ts, &k, &[1e-4]).unwrap();
    assert_eq!(p.len(), 1);
    assert_eq!(p[0], fit_dual_unsorted(&ts, &k, 1e-4).unwrap());
}

#[test]
fn slope_of_power_law() {
    let xs = [1e-6, 1e-5, 1e-4, 1e-3];
    let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(0.7)).collect();
    assert!((loglog_slope(&xs, &ys).unwrap() - 0.7).abs() < 1e-12);
}

#[test]
fn json_round_trip() {
    let ts = toy_set(0.45, 20, 16, smooth);
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let est = fit_dual_unsorted(&ts, &k, 1e-5).unwrap();
    assert_eq!(
        est.training_hash.as_deref(),
        Some(ts.content_hash().unwrap().as_str())
    );
    let back = Estimator::from_json(&est.to_json().unwrap()).unwrap();
    assert_eq!(back, est);
    let x = Path::scalar(&[0.1, 0.2]);
    assert_eq!(back.predict(&x).unwrap(), est.predict(&x).unwrap());

    let feats = vec![
        ProductFeature {
            coeff: 1.0,
            factors: vec![Basis1d::Monomial(0); 2],
        },
        ProductFeature {
            coeff: 1.0,
            factors: vec![Basis1d::Hermite(1), Basis1d::Monomial(0)],
        },
    ];
    let spec = FeatureMapSpec::new(1, 2, feats).unwrap();
    let est = fit_primal(&ts, &spec, 1e-3).unwrap();
    let back = Estimator::from_json(&est.to_json().unwrap()).unwrap();
    assert_eq!(back, est);
}
