//! Hypothesis testing under composite likelihood with φ-divergence and
//! (h,φ)-divergence statistics.
//!
//! The crate is organised around the [`CompositeModel`] trait. Estimators,
//! divergences, limiting spectra and tests are generic over it; [`normal4`]
//! provides a fully analytic four-variate normal model and [`sim`] a Monte
//! Carlo harness for level and power studies on that model.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod asymptotics;
pub mod divergence;
pub mod error;
pub mod estimation;
pub mod hypothesis;
pub mod model;
pub mod normal4;
pub mod rng;
pub mod sim;
pub mod wchisq;

pub use asymptotics::{
    clrt_spectrum, composite_null_spectrum, composite_power_sigma2, constrained_blocks, godambe,
    power_approx_composite, power_approx_simple, sample_size, simple_null_spectrum, simple_power_sigma,
    ConstrainedBlocks, GodambeBundle, SpectrumResult,
};
pub use divergence::{
    divergence, hphi_divergence, phi_eval, phi_second_at_one, DivergenceMethod, DivergenceValue, EvaluationMethod,
    HFunction, HPhiValue, PhiFamily,
};
pub use error::{Error, Result};
pub use estimation::{mcle, restricted_mcle, EstimationOptions, EstimationResult};
pub use hypothesis::{
    adjust, calibrate, clrt, composite_null_test, hphi_test, simple_null_test, AdjustedSet, NullHypothesis,
    TestOptions, TestOutcome,
};
pub use model::{
    composite_loglik, empirical_sensitivity, empirical_variability, score_total, CompositeModel, ConstraintSpec,
    Interval, JacobianMethod, ParamVector, Sample, VariabilityEstimate,
};
pub use normal4::{Normal4, Normal4Params, Statistic, SuffStats};
pub use sim::{dale_screen, estimate_rate, relative_efficiency, run_table, Critical, SimConfig, SimRow, SimTable, TableSpec};
pub use wchisq::{weighted_chisq_cdf, weighted_chisq_quantile, weighted_chisq_sf};
