//! Test-side oracles, written independently of the library.

#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / SQRT_2)
}

/// Black-Scholes call and put with zero rate: spot `s`, strike `k`,
/// total volatility `v = sigma sqrt(tau)`.
pub fn bs_call_put(s: f64, k: f64, v: f64) -> (f64, f64) {
    if v == 0.0 {
        return ((s - k).max(0.0), (k - s).max(0.0));
    }
    let d1 = ((s / k).ln() + 0.5 * v * v) / v;
    let d2 = d1 - v;
    let call = s * norm_cdf(d1) - k * norm_cdf(d2);
    (call, call - s + k)
}

/// Stock after `t` steps of the discrete model with `r = 0`.
pub fn stock(s0: f64, sigma: f64, x: &[f64]) -> f64 {
    x.iter()
        .fold(s0, |s, xi| s * (sigma * xi - 0.5 * sigma * sigma).exp())
}

/// Trapezoid nodes and weights for the standard normal on `[-10, 10]`.
pub fn normal_nodes(h: f64) -> Vec<(f64, f64)> {
    let m = (10.0 / h).round() as i64;
    (-m..=m)
        .map(|i| {
            let z = i as f64 * h;
            (z, h * (-0.5 * z * z).exp() / (2.0 * PI).sqrt())
        })
        .collect()
}

/// `E[g(prefix, Z)]` over `remaining` i.i.d. standard normals, `remaining <= 2`.
pub fn expect_tail(prefix: &[f64], remaining: usize, h: f64, g: impl Fn(&[f64]) -> f64) -> f64 {
    let nodes = normal_nodes(h);
    let mut buf = prefix.to_vec();
    match remaining {
        0 => g(&buf),
        1 => nodes
            .iter()
            .map(|&(a, w)| {
                buf.truncate(prefix.len());
                buf.push(a);
                w * g(&buf)
            })
            .sum(),
        2 => {
            let mut s = 0.0;
            for &(a, wa) in &nodes {
                for &(b, wb) in &nodes {
                    buf.truncate(prefix.len());
                    buf.extend_from_slice(&[a, b]);
                    s += wa * wb * g(&buf);
                }
            }
            s
        }
        _ => unimplemented!("at most two remaining steps"),
    }
}
