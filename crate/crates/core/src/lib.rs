//! Kernel ridge regression for learning the dynamic value process of a
//! path-dependent cash flow, with closed-form conditional expectations at
//! every time step.
//!
//! The pipeline is: draw training paths under a (tilted) Gaussian sampling
//! measure ([`sampling`]), fit a kernel ridge regression to the payoff
//! ([`krr`]) using a kernel with product-over-time structure ([`kernel`]),
//! then evaluate `V_t = E[f_X(X) | F_t]` in closed form ([`valuation`]).
//! [`market`] supplies the discrete Black-Scholes model and payoffs,
//! [`diagnostics`] the empirical error-bound checks, and [`experiment`] the
//! grid search and table/figure drivers used by the command-line tool.

// `!(x > 0.0)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod krr;
pub mod market;
pub mod numeric;
pub mod path;
pub mod rng;
pub mod sampling;
pub mod valuation;

pub use error::{Error, Result};
pub use experiment::ExperimentConfig;
pub use kernel::{
    Basis1d, FeatureMapSpec, GaussExpParams, GaussPolyParams, KernelFamily, KernelSpec,
    ProductFeature, TiltConditions,
};
pub use krr::{Coefficients, DualSystem, Estimator, PrimalSystem};
pub use market::{BSConfig, BsPayoff, GroundTruthSource, PayoffId};
pub use path::Path;
pub use sampling::{
    build_training_set, draw_paths, optimal_gamma, rn_weight, CountingFn, MeasureSpec,
    MixtureSampler, PathFunction, SamplingDesign, TrainingSet,
};
pub use valuation::{ErrorReport, TestSet, ValueEvaluator, ValueSeries};
