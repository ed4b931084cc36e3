use super::*;
use crate::rng::stream_rng;
use crate::sampling::MeasureSpec;
use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

/// Nodes and weights for `E[g(Z)]`, `Z ~ N(0, 1)`, by Golub-Welsch on the
/// Jacobi matrix of the probabilists' Hermite polynomials.
fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let jac = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jac.symmetric_eigen();
    (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect()
}

fn random_path(seed: u64, idx: u64, d: usize, steps: usize, scale: f64) -> Path {
    let mut rng = stream_rng(seed, idx);
    let data = (0..d * steps)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect();
    Path::new(d, steps, data).unwrap()
}

fn test_kernels(d: usize, steps: usize) -> Vec<KernelSpec> {
    let hermite = FeatureMapSpec::new(
        d,
        steps,
        vec![
            ProductFeature {
                coeff: 1.0,
                factors: vec![Basis1d::Monomial(0); d * steps],
            },
            ProductFeature {
                coeff: 0.7,
                factors: (0..d * steps)
                    .map(|j| {
                        if j == 0 {
                            Basis1d::Hermite(2)
                        } else {
                            Basis1d::Monomial(1)
                        }
                    })
                    .collect(),
            },
            ProductFeature {
                coeff: 1.3,
                factors: (0..d * steps)
                    .map(|j| {
                        if j + 1 == d * steps {
                            Basis1d::Monomial(3)
                        } else {
                            Basis1d::Monomial(0)
                        }
                    })
                    .collect(),
            },
        ],
    )
    .unwrap();
    vec![
        KernelSpec::gauss_exp(2.0, 0.3, d, steps, 0.0).unwrap(),
        KernelSpec::gauss_exp(0.0, 0.45, d, steps, 0.45).unwrap(),
        KernelSpec::gauss_exp(6.0, 0.0, d, steps, 0.2).unwrap(),
        KernelSpec::gauss_poly(1.0, 2, d, steps, 0.1).unwrap(),
        KernelSpec::gauss_poly(0.0, 3, d, steps, 0.0).unwrap(),
        KernelSpec::feature_map(hermite, 0.3).unwrap(),
    ]
}

#[test]
fn gaussian_kernel_diagonal_is_one() {
    let k = KernelSpec::gauss_exp(3.0, 0.0, 1, 2, 0.0).unwrap();
    let x = Path::scalar(&[0.3, -2.1]);
    assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
}

#[test]
fn exponentiated_diagonal() {
    let k = KernelSpec::gauss_exp(2.0, 0.3, 1, 2, 0.0).unwrap();
    let x = Path::scalar(&[0.6, 0.8]);
    let y = x.clone();
    assert!((k.eval(&x, &y).unwrap() - 0.3_f64.exp()).abs() < 1e-14);
    assert!((k.eval(&x, &y).unwrap() - 1.349859).abs() < 1e-6);
}

#[test]
fn pure_polynomial_kernel() {
    let k = KernelSpec::gauss_poly(0.0, 2, 1, 1, 0.0).unwrap();
    let v = k
        .eval(&Path::scalar(&[1.0]), &Path::scalar(&[2.0]))
        .unwrap();
    assert!((v - 9.0).abs() < 1e-14);
}

#[test]
fn poly_expansion_matches_direct_evaluation() {
    let k = KernelSpec::gauss_poly(0.7, 3, 1, 2, 0.0).unwrap();
    let KernelFamily::GaussPoly(p) = &k.family else {
        unreachable!()
    };
    for i in 0..10 {
        let x = random_path(3, i, 1, 2, 1.0);
        let y = random_path(4, i, 1, 2, 1.0);
        let fx = p.expansion().feature_vector(&x).unwrap();
        let fy = p.expansion().feature_vector(&y).unwrap();
        let dot: f64 = fx.iter().zip(&fy).map(|(a, b)| a * b).sum();
        let dist: f64 = x
            .as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let expect = (-0.7 * dist).exp() * dot;
        let got = k.eval(&x, &y).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }
}

#[test]
fn poly_expansion_limits() {
    assert!(matches!(
        GaussPolyParams::new(1.0, 5, 1, 2),
        Err(Error::Capability(_))
    ));
    assert!(matches!(
        GaussPolyParams::new(1.0, 2, 3, 3),
        Err(Error::Capability(_))
    ));
    assert!(GaussPolyParams::new(1.0, 4, 2, 4).is_ok());
}

#[test]
fn parameter_validation() {
    assert!(GaussExpParams::new(0.0, 0.0, 1, 1).is_err());
    assert!(GaussExpParams::new(-1.0, 0.1, 1, 1).is_err());
    assert!(GaussExpParams::new(1.0, 0.5, 1, 1).is_err());
    assert!(GaussExpParams::new(1.0, 0.1, 0, 1).is_err());
    assert!(KernelSpec::gauss_exp(1.0, 0.1, 1, 1, 0.5).is_err());
}

#[test]
fn shape_mismatch_is_input_error() {
    let k = KernelSpec::gauss_exp(1.0, 0.1, 1, 2, 0.0).unwrap();
    let r = k.eval(&Path::scalar(&[1.0]), &Path::scalar(&[1.0, 2.0]));
    assert!(matches!(r, Err(Error::Input(_))));
}

#[test]
fn overflow_is_range_error() {
    let k = KernelSpec::gauss_exp(0.0, 0.45, 1, 1, 0.0).unwrap();
    let x = Path::scalar(&[40.0]);
    let y = Path::scalar(&[41.0]);
    assert!(matches!(k.eval(&x, &y), Err(Error::Range(_))));
}

#[test]
fn tilted_prefactor_at_origin() {
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 2, 0.45).unwrap();
    let z = Path::zeros(1, 2);
    assert!((k.eval_tilted(&z, &z).unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn untilted_equals_plain() {
    for k in test_kernels(1, 2) {
        let k = KernelSpec::new(k.family, 0.0).unwrap();
        for i in 0..20 {
            let x = random_path(1, i, 1, 2, 1.0);
            let y = random_path(2, i, 1, 2, 1.0);
            let (a, b) = (k.eval(&x, &y).unwrap(), k.eval_tilted(&x, &y).unwrap());
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }
}

#[test]
fn tilt_consistency() {
    for k in test_kernels(2, 2) {
        let m = MeasureSpec::new(k.gamma, 2, 2, 0).unwrap();
        for i in 0..20 {
            let x = random_path(5, i, 2, 2, 1.2);
            let y = random_path(6, i, 2, 2, 1.2);
            let back = k.eval_tilted(&x, &y).unwrap()
                * (m.rn_weight(&x).unwrap() * m.rn_weight(&y).unwrap()).sqrt();
            let direct = k.eval(&x, &y).unwrap();
            assert!(
                (back - direct).abs() < 1e-10 * direct.abs().max(1e-300),
                "{back} vs {direct}"
            );
        }
    }
}

#[test]
fn u_factor_closed_form_examples() {
    let k = KernelSpec::gauss_exp(2.0, 0.3, 1, 1, 0.0).unwrap();
    assert!((k.u_factor(0, 0, &[0.0]).unwrap() - 0.4472136).abs() < 1e-7);
    let k = KernelSpec::gauss_exp(0.0, 0.3, 1, 1, 0.0).unwrap();
    assert!((k.u_factor(0, 0, &[1.0]).unwrap() - 0.045_f64.exp()).abs() < 1e-14);
    assert!((k.u_factor(0, 0, &[1.0]).unwrap() - 1.0460279).abs() < 1e-7);
}

#[test]
fn u_factor_matches_quadrature() {
    let gh = gauss_hermite(200);
    let k = KernelSpec::gauss_exp(1.0, 0.0, 1, 1, 0.0).unwrap();
    let quad: f64 = gh
        .iter()
        .map(|(z, w)| w * (-(z - 0.5) * (z - 0.5)).exp())
        .sum();
    assert!((k.u_factor(0, 0, &[0.5]).unwrap() - quad).abs() < 1e-10);

    // Every family, every term, every step, several points.
    for k in test_kernels(1, 2) {
        for i in 0..k.num_terms() {
            for t in 0..2 {
                for &y in &[-1.3, 0.0, 0.4, 2.0] {
                    let quad: f64 = match &k.family {
                        KernelFamily::GaussExp(p) => gh
                            .iter()
                            .map(|(z, w)| w * (-p.alpha * (z - y) * (z - y) + p.beta * z * y).exp())
                            .sum(),
                        KernelFamily::GaussPoly(p) => {
                            let f = &p.expansion().features()[i];
                            let c = if t == 0 { f.coeff * f.coeff } else { 1.0 };
                            gh.iter()
                                .map(|(z, w)| {
                                    w * (-p.alpha * (z - y) * (z - y)).exp()
                                        * c
                                        * f.factors[t].eval(*z)
                                        * f.factors[t].eval(y)
                                })
                                .sum()
                        }
                        KernelFamily::FeatureMap(s) => {
                            let f = &s.features()[i];
                            let c = if t == 0 { f.coeff * f.coeff } else { 1.0 };
                            gh.iter()
                                .map(|(z, w)| w * c * f.factors[t].eval(*z) * f.factors[t].eval(y))
                                .sum()
                        }
                    };
                    let got = k.u_factor(i, t, &[y]).unwrap();
                    assert!(
                        (got - quad).abs() < 1e-10 * quad.abs().max(1.0),
                        "{got} vs {quad}"
                    );
                }
            }
        }
    }
}

#[test]
fn u_factor_index_errors() {
    let k = KernelSpec::gauss_exp(1.0, 0.1, 1, 2, 0.0).unwrap();
    assert!(k.u_factor(1, 0, &[0.0]).is_err());
    assert!(k.u_factor(0, 2, &[0.0]).is_err());
    assert!(k.u_factor(0, 0, &[0.0, 1.0]).is_err());
}

#[test]
fn full_conditioning_is_eval() {
    for k in test_kernels(1, 2) {
        let x = random_path(7, 0, 1, 2, 1.0);
        let y = random_path(8, 0, 1, 2, 1.0);
        assert_eq!(
            k.cond_expect(x.as_slice(), &y, 2).unwrap(),
            k.eval(&x, &y).unwrap()
        );
        let series = k.cond_expect_series(&x, &y).unwrap();
        assert_eq!(series[2], k.eval(&x, &y).unwrap());
    }
}

#[test]
fn unconditional_is_product_of_u() {
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    let y = Path::scalar(&[0.7, -1.1]);
    let expect = k.u_factor(0, 0, &[0.7]).unwrap() * k.u_factor(0, 1, &[-1.1]).unwrap();
    let got = k.cond_expect(&[], &y, 0).unwrap();
    assert!((got - expect).abs() < 1e-14 * expect);
}

#[test]
fn series_matches_pointwise() {
    for k in test_kernels(2, 3) {
        let x = random_path(9, 1, 2, 3, 1.0);
        let y = random_path(10, 1, 2, 3, 1.0);
        let s = k.cond_expect_series(&x, &y).unwrap();
        for t in 0..=3 {
            let p = k.cond_expect(x.prefix(t), &y, t).unwrap();
            assert!(
                (s[t] - p).abs() < 1e-12 * p.abs().max(1e-300),
                "t={t}: {} vs {p}",
                s[t]
            );
        }
    }
}

#[test]
fn cond_expect_time_out_of_range() {
    let k = KernelSpec::gauss_exp(1.0, 0.1, 1, 2, 0.0).unwrap();
    let y = Path::zeros(1, 2);
    assert!(matches!(
        k.cond_expect(&[0.0, 0.0, 0.0], &y, 3),
        Err(Error::Input(_))
    ));
    assert!(matches!(k.cond_expect(&[0.0], &y, 0), Err(Error::Input(_))));
}

#[test]
fn tower_property_by_quadrature() {
    let gh = gauss_hermite(120);
    for k in test_kernels(1, 2) {
        for i in 0..5 {
            let x = random_path(11, i, 1, 2, 1.0);
            let y = random_path(12, i, 1, 2, 1.0);
            for t in 0..2 {
                let lhs = k.cond_expect(x.prefix(t), &y, t).unwrap();
                let rhs: f64 = gh
                    .iter()
                    .map(|(z, w)| {
                        let mut pre = x.prefix(t).to_vec();
                        pre.push(*z);
                        w * k.cond_expect(&pre, &y, t + 1).unwrap()
                    })
                    .sum();
                assert!(
                    (lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0),
                    "t={t}: {lhs} vs {rhs}"
                );
            }
        }
    }
}

#[test]
fn symmetry_and_cauchy_schwarz() {
    for k in test_kernels(1, 2) {
        for i in 0..50 {
            let x = random_path(13, i, 1, 2, 1.5);
            let y = random_path(14, i, 1, 2, 1.5);
            let kxy = k.eval(&x, &y).unwrap();
            assert_eq!(kxy, k.eval(&y, &x).unwrap());
            let bound = k.eval(&x, &x).unwrap() * k.eval(&y, &y).unwrap();
            assert!(kxy * kxy <= bound * (1.0 + 1e-12) + 1e-12);
        }
    }
}

#[test]
fn gram_is_positive_semidefinite() {
    for k in test_kernels(1, 2) {
        let paths: Vec<Path> = (0..50).map(|i| random_path(15, i, 1, 2, 1.0)).collect();
        let g = DMatrix::from_fn(50, 50, |i, j| k.eval(&paths[i], &paths[j]).unwrap());
        let eig = g.symmetric_eigenvalues();
        let max = eig.max();
        assert!(eig.min() >= -1e-8 * max, "{:?}", k.family);
    }
}

#[test]
fn feature_map_gram_is_vvt() {
    let spec = FeatureMapSpec::monomials(1, 2, 3).unwrap();
    let k = KernelSpec::feature_map(spec.clone(), 0.0).unwrap();
    let paths: Vec<Path> = (0..30).map(|i| random_path(16, i, 1, 2, 1.0)).collect();
    let v: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| spec.feature_vector(p).unwrap())
        .collect();
    for i in 0..30 {
        for j in 0..30 {
            let vv: f64 = v[i].iter().zip(&v[j]).map(|(a, b)| a * b).sum();
            let kk = k.eval(&paths[i], &paths[j]).unwrap();
            assert!((vv - kk).abs() < 1e-12 * vv.abs().max(1.0));
        }
    }
}

#[test]
fn monomial_feature_vector() {
    let spec = FeatureMapSpec::monomials(1, 1, 2).unwrap();
    assert_eq!(
        spec.feature_vector(&Path::scalar(&[2.0])).unwrap(),
        vec![1.0, 2.0, 4.0]
    );
    for i in 0..5 {
        let x = random_path(17, i, 1, 1, 1.0);
        assert_eq!(spec.feature_vector(&x).unwrap()[0], 1.0);
    }
}

#[test]
fn conditional_features() {
    let spec = FeatureMapSpec::monomials(1, 2, 2).unwrap();
    // Order: 1, x1, x2, x1^2, x1 x2, x2^2.
    for t in 0..=2 {
        let x = [0.5, -1.5];
        let e = spec.cond_expect_features(&x[..t], t).unwrap();
        assert_eq!(e[0], 1.0);
        if t < 2 {
            assert_eq!(e[2], 0.0, "odd moment of an unrealized step");
        }
    }
    let e = spec.cond_expect_features(&[0.5], 1).unwrap();
    assert_eq!(e, vec![1.0, 0.5, 0.0, 0.25, 0.0, 1.0]);
}

#[test]
fn dependent_features_rejected() {
    let feats = vec![
        ProductFeature {
            coeff: 1.0,
            factors: vec![Basis1d::Monomial(2)],
        },
        ProductFeature {
            coeff: 1.0,
            factors: vec![Basis1d::Monomial(0)],
        },
        ProductFeature {
            coeff: 1.0,
            factors: vec![Basis1d::Hermite(2)],
        },
    ];
    assert!(FeatureMapSpec::new(1, 1, feats).is_err());
}

#[test]
fn tilt_conditions_flags() {
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.45).unwrap();
    assert_eq!(
        k.tilt_conditions(),
        TiltConditions {
            fourth_moment: true,
            bounded: true
        }
    );
    let k = KernelSpec::gauss_exp(4.0, 0.3, 1, 2, 0.0).unwrap();
    assert_eq!(
        k.tilt_conditions(),
        TiltConditions {
            fourth_moment: false,
            bounded: false
        }
    );
    let k = KernelSpec::gauss_exp(4.0, 0.2, 1, 2, 0.0).unwrap();
    assert_eq!(
        k.tilt_conditions(),
        TiltConditions {
            fourth_moment: true,
            bounded: false
        }
    );
}

#[test]
fn serde_round_trip_rebuilds_expansion() {
    let k = KernelSpec::gauss_poly(1.0, 2, 1, 2, 0.2).unwrap();
    let json = serde_json::to_string(&k).unwrap();
    let back: KernelSpec = serde_json::from_str(&json).unwrap();
    let back = back.restore().unwrap();
    assert_eq!(back, k);
    let g = KernelSpec::gauss_exp(1.0, 0.2, 1, 2, 0.2).unwrap();
    let back: KernelSpec = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
    assert_eq!(back, g);
}
