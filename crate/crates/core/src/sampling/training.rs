use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{draw_paths, rn_weight, MeasureSpec};
use crate::error::{Error, Result};
use crate::path::Path;

/// A (possibly expensive) function of a path, such as a payoff.
pub trait PathFunction: Sync {
    fn name(&self) -> String;
    fn value(&self, x: &Path) -> f64;
}

impl<F: PathFunction + ?Sized> PathFunction for &F {
    fn name(&self) -> String {
        (**self).name()
    }
    fn value(&self, x: &Path) -> f64 {
        (**self).value(x)
    }
}

/// Wraps a [`PathFunction`] and counts how often it is evaluated.
pub struct CountingFn<F> {
    inner: F,
    calls: AtomicUsize,
}

impl<F: PathFunction> CountingFn<F> {
    pub fn new(inner: F) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl<F: PathFunction> PathFunction for CountingFn<F> {
    fn name(&self) -> String {
        self.inner.name()
    }
    fn value(&self, x: &Path) -> f64 {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x)
    }
}

/// How the training paths were sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SamplingDesign {
    /// Gaussian tilt with parameter `gamma`.
    Tilted(MeasureSpec),
    /// Optimal mixture measure of a feature map.
    Mixture { dim: usize, steps: usize, seed: u64 },
}

impl SamplingDesign {
    pub fn dim(&self) -> usize {
        match self {
            SamplingDesign::Tilted(m) => m.dim,
            SamplingDesign::Mixture { dim, .. } => *dim,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            SamplingDesign::Tilted(m) => m.steps,
            SamplingDesign::Mixture { steps, .. } => *steps,
        }
    }
}

/// Paths drawn from the sampling measure with their payoff values and
/// Radon-Nikodym weights.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub paths: Vec<Path>,
    pub payoff_values: Vec<f64>,
    pub weights: Vec<f64>,
    pub design: SamplingDesign,
    pub payoff: String,
    /// Number of payoff evaluations spent building the set.
    pub payoff_evaluations: usize,
}

impl TrainingSet {
    pub fn new(
        paths: Vec<Path>,
        payoff_values: Vec<f64>,
        weights: Vec<f64>,
        design: SamplingDesign,
        payoff: impl Into<String>,
    ) -> Result<Self> {
        let n = paths.len();
        if n == 0 {
            return Err(Error::input("training set must contain at least one path"));
        }
        if payoff_values.len() != n || weights.len() != n {
            return Err(Error::input(format!(
                "length mismatch: {n} paths, {} payoffs, {} weights",
                payoff_values.len(),
                weights.len()
            )));
        }
        for (i, p) in paths.iter().enumerate() {
            p.check_shape(design.dim(), design.steps())
                .map_err(|e| Error::input(format!("path {i}: {e}")))?;
        }
        if let Some(i) = payoff_values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!(
                "payoff value at path {i} is not finite ({})",
                payoff_values[i]
            )));
        }
        if let Some(i) = weights.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::data(format!(
                "weight at path {i} is not a positive finite number ({})",
                weights[i]
            )));
        }
        Ok(Self {
            paths,
            payoff_values,
            weights,
            design,
            payoff: payoff.into(),
            payoff_evaluations: n,
        })
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.design.dim()
    }

    pub fn steps(&self) -> usize {
        self.design.steps()
    }

    /// Same paths and weights with different payoff values.
    pub fn with_values(&self, payoff_values: Vec<f64>, payoff: impl Into<String>) -> Result<Self> {
        Self::new(
            self.paths.clone(),
            payoff_values,
            self.weights.clone(),
            self.design.clone(),
            payoff,
        )
    }

    /// Tilted targets `f(X_i) / sqrt(w(X_i))`.
    pub fn tilted_values(&self) -> Vec<f64> {
        self.payoff_values
            .iter()
            .zip(&self.weights)
            .map(|(f, w)| f / w.sqrt())
            .collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["path_id".to_string()];
        for t in 1..=self.steps() {
            for i in 1..=self.dim() {
                h.push(format!("x_{i}_{t}"));
            }
        }
        h.push("payoff".into());
        h.push("weight".into());
        h
    }

    /// Write the CSV form: `path_id, x_1_1 .. x_d_T, payoff, weight`, with
    /// coordinates in time-major order and shortest round-trip floats.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for (i, p) in self.paths.iter().enumerate() {
            let mut rec = Vec::with_capacity(p.as_slice().len() + 3);
            rec.push(i.to_string());
            rec.extend(p.as_slice().iter().map(|v| format!("{v}")));
            rec.push(format!("{}", self.payoff_values[i]));
            rec.push(format!("{}", self.weights[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    /// SHA-256 of the CSV form, hex encoded.
    pub fn content_hash(&self) -> Result<String> {
        let csv = self.to_csv_string()?;
        let digest = Sha256::digest(csv.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    /// Read a CSV written by [`TrainingSet::write_csv`].
    pub fn read_csv<R: Read>(input: R, design: SamplingDesign, payoff: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let coords = design.dim() * design.steps();
        if header.len() != coords + 3 {
            return Err(Error::input(format!(
                "training CSV has {} columns, expected {}",
                header.len(),
                coords + 3
            )));
        }
        let parse = |s: &str, row: usize| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::input(format!("row {row}: cannot parse {s:?}: {e}")))
        };
        let (mut paths, mut values, mut weights) = (Vec::new(), Vec::new(), Vec::new());
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let mut data = Vec::with_capacity(coords);
            for j in 0..coords {
                data.push(parse(&rec[j + 1], row)?);
            }
            paths.push(Path::new(design.dim(), design.steps(), data)?);
            values.push(parse(&rec[coords + 1], row)?);
            weights.push(parse(&rec[coords + 2], row)?);
        }
        let mut ts = Self::new(paths, values, weights, design, payoff)?;
        ts.payoff_evaluations = 0;
        Ok(ts)
    }
}

/// Draw `n` paths from `measure`, evaluate the payoff once per path and
/// attach the Radon-Nikodym weights.
pub fn build_training_set<F: PathFunction + ?Sized>(
    measure: &MeasureSpec,
    payoff: &F,
    n: usize,
) -> Result<TrainingSet> {
    let paths = draw_paths(measure, n)?;
    let values: Vec<f64> = paths.par_iter().map(|p| payoff.value(p)).collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::data(format!(
            "payoff {} returned {} at path {i}",
            payoff.name(),
            values[i]
        )));
    }
    let weights = paths
        .iter()
        .map(|p| rn_weight(measure, p))
        .collect::<Result<Vec<_>>>()?;
    TrainingSet::new(
        paths,
        values,
        weights,
        SamplingDesign::Tilted(*measure),
        payoff.name(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    struct SumSq;
    impl PathFunction for SumSq {
        fn name(&self) -> String {
            "sumsq".into()
        }
        fn value(&self, x: &Path) -> f64 {
            x.norm_sq()
        }
    }

    struct Broken;
    impl PathFunction for Broken {
        fn name(&self) -> String {
            "broken".into()
        }
        fn value(&self, x: &Path) -> f64 {
            if x.as_slice()[0] > 1.0 {
                f64::NAN
            } else {
                0.0
            }
        }
    }

    #[test]
    fn counts_one_evaluation_per_path() {
        let m = MeasureSpec::new(0.45, 1, 2, 5).unwrap();
        let f = CountingFn::new(SumSq);
        let ts = build_training_set(&m, &f, 2000).unwrap();
        assert_eq!(f.calls(), 2000);
        assert_eq!(ts.payoff_evaluations, 2000);
        assert_eq!(ts.len(), 2000);
    }

    #[test]
    fn zero_paths_rejected() {
        let m = MeasureSpec::nominal(1, 2, 5);
        assert!(matches!(
            build_training_set(&m, &SumSq, 0),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn non_finite_payoff_names_index() {
        let m = MeasureSpec::nominal(1, 2, 5);
        let err = build_training_set(&m, &Broken, 100).unwrap_err();
        match err {
            Error::Data(msg) => assert!(msg.contains("at path")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = MeasureSpec::new(0.3, 2, 2, 11).unwrap();
        let ts = build_training_set(&m, &SumSq, 25).unwrap();
        let s = ts.to_csv_string().unwrap();
        assert!(s.starts_with("path_id,x_1_1,x_2_1,x_1_2,x_2_2,payoff,weight\n"));
        let back = TrainingSet::read_csv(s.as_bytes(), ts.design.clone(), "sumsq").unwrap();
        assert!(back
            .paths
            .iter()
            .zip(&ts.paths)
            .all(|(a, b)| a.bitwise_eq(b)));
        assert_eq!(back.payoff_values, ts.payoff_values);
        assert_eq!(back.weights, ts.weights);
        assert_eq!(back.content_hash().unwrap(), ts.content_hash().unwrap());
    }
}
