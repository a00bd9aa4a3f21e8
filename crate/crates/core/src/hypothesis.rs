//! φ-divergence, (h,φ)-divergence and composite likelihood ratio tests.

use nalgebra::DMatrix;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::asymptotics::{
    clrt_spectrum, composite_null_spectrum, constrained_blocks, godambe, simple_null_spectrum, SpectrumResult,
};
use crate::divergence::{divergence, hphi_divergence, phi_second_at_one, DivergenceMethod, HFunction, PhiFamily};
use crate::error::{Error, Result};
use crate::estimation::{mcle, restricted_mcle, EstimationOptions, EstimationResult};
use crate::model::{
    check_admissible, empirical_sensitivity, empirical_variability, CompositeModel, ConstraintSpec, ParamVector,
    Sample,
};
use crate::wchisq::{weighted_chisq_quantile, weighted_chisq_sf};

#[derive(Debug, Clone)]
pub struct TestOptions {
    pub alpha: f64,
    pub estimation: EstimationOptions,
    pub divergence: DivergenceMethod,
    /// Starting point for the estimators; defaults to the model's moment estimate.
    pub init: Option<ParamVector>,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            estimation: EstimationOptions::default(),
            divergence: DivergenceMethod::Auto,
            init: None,
        }
    }
}

impl TestOptions {
    pub fn with_alpha(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::default()
        }
    }
}

/// Rao-Scott style moment adjustments of a weighted χ² statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjustedSet {
    /// T / λ_max.
    pub t1: f64,
    /// T / λ̄.
    pub t2: f64,
    /// T / (ν λ̄), referred to χ² with `dof3` degrees of freedom.
    pub t3: f64,
    /// (t2 − a) / b.
    pub t4: f64,
    pub nu: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub dof3: f64,
    /// Number of retained eigenvalues.
    pub r: usize,
    pub p_values: [f64; 4],
}

pub fn adjust(statistic: f64, spectrum: &SpectrumResult) -> Result<AdjustedSet> {
    let beta = spectrum.retained();
    if beta.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let r = beta.len();
    let rf = r as f64;
    let max = beta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = beta.iter().sum::<f64>() / rf;
    let ss: f64 = beta.iter().map(|b| (b - mean).powi(2)).sum();
    let nu = 1.0 + ss / (rf * mean * mean);
    let c = 2.0 * ss / (mean * mean);
    let b = (1.0 + c / (2.0 * rf)).sqrt();
    let a = rf * (1.0 - b);
    let t1 = statistic / max;
    let t2 = statistic / mean;
    let t3 = statistic / (nu * mean);
    let t4 = (t2 - a) / b;
    let dof3 = rf / nu;
    let sf = |dof: f64, x: f64| -> f64 {
        if x.is_infinite() {
            0.0
        } else {
            ChiSquared::new(dof).map(|d| d.sf(x.max(0.0))).unwrap_or(f64::NAN)
        }
    };
    Ok(AdjustedSet {
        t1,
        t2,
        t3,
        t4,
        nu,
        a,
        b,
        c,
        dof3,
        r,
        p_values: [sf(rf, t1), sf(rf, t2), sf(dof3, t3), sf(rf, t4)],
    })
}

#[derive(Debug, Clone)]
pub struct TestOutcome {
    /// Nonnegative, possibly +∞.
    pub statistic: f64,
    pub spectrum: SpectrumResult,
    pub p_value: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub adjusted: Option<AdjustedSet>,
    pub theta_hat: ParamVector,
    /// θ0 for a simple null, the restricted estimate otherwise.
    pub theta_null: ParamVector,
    /// Set when an h-transform left its domain and the statistic became +∞.
    pub domain_violation: bool,
}

/// p-value and critical value from the retained spectrum.
pub fn calibrate(statistic: f64, spectrum: &SpectrumResult, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidProbability(alpha));
    }
    let w = spectrum.retained();
    if w.is_empty() {
        return Err(Error::EmptySpectrum);
    }
    let p_value = if statistic.is_infinite() {
        0.0
    } else {
        weighted_chisq_sf(w, statistic)?
    };
    Ok((p_value, weighted_chisq_quantile(w, 1.0 - alpha)?))
}

fn outcome(
    statistic: f64,
    spectrum: SpectrumResult,
    alpha: f64,
    theta_hat: ParamVector,
    theta_null: ParamVector,
    domain_violation: bool,
) -> Result<TestOutcome> {
    let statistic = statistic.max(0.0);
    let (p_value, critical_value) = calibrate(statistic, &spectrum, alpha)?;
    let adjusted = Some(adjust(statistic, &spectrum)?);
    Ok(TestOutcome {
        statistic,
        reject: statistic > critical_value,
        spectrum,
        p_value,
        critical_value,
        adjusted,
        theta_hat,
        theta_null,
        domain_violation,
    })
}

fn plug_in(model: &dyn CompositeModel, theta: &ParamVector, sample: &Sample, opts: &TestOptions) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let h = match model.sensitivity(theta.as_slice()) {
        Some(h) => h,
        None => empirical_sensitivity(model, theta, sample, opts.estimation.jacobian)?,
    };
    let j = match model.variability(theta.as_slice()) {
        Some(j) => j,
        None => empirical_variability(model, theta, sample, false)?.matrix,
    };
    Ok((h, j))
}

fn start(model: &dyn CompositeModel, sample: &Sample, fallback: Option<&ParamVector>, opts: &TestOptions) -> Result<ParamVector> {
    if let Some(init) = &opts.init {
        return Ok(init.clone());
    }
    if let Some(v) = model.initial_estimate(sample) {
        let mut v = v;
        for (x, b) in v.iter_mut().zip(model.bounds()) {
            *x = b.clamp_inside(*x, 1e-6);
        }
        return Ok(ParamVector::new(v));
    }
    fallback
        .cloned()
        .ok_or_else(|| Error::InvalidConfig("no starting point: supply TestOptions::init".into()))
}

/// The null hypothesis of a test.
#[derive(Debug, Clone)]
pub enum NullHypothesis {
    Simple(ParamVector),
    Composite(ConstraintSpec),
}

struct NullFit {
    theta_hat: EstimationResult,
    theta_null: ParamVector,
    /// Restricted fit, composite nulls only.
    restricted: Option<EstimationResult>,
    h: DMatrix<f64>,
    j: DMatrix<f64>,
    g: Option<DMatrix<f64>>,
}

fn fit_null(model: &dyn CompositeModel, sample: &Sample, null: &NullHypothesis, opts: &TestOptions) -> Result<NullFit> {
    match null {
        NullHypothesis::Simple(theta0) => {
            check_admissible(model, theta0)?;
            let init = start(model, sample, Some(theta0), opts)?;
            let theta_hat = mcle(model, sample, &init, &opts.estimation)?;
            let (h, j) = plug_in(model, theta0, sample, opts)?;
            Ok(NullFit {
                theta_hat,
                theta_null: theta0.clone(),
                restricted: None,
                h,
                j,
                g: None,
            })
        }
        NullHypothesis::Composite(constraint) => {
            let init = start(model, sample, None, opts)?;
            let theta_hat = mcle(model, sample, &init, &opts.estimation)?;
            let restricted = restricted_mcle(model, sample, constraint, &theta_hat.theta_hat, &opts.estimation)?;
            let theta_null = restricted.theta_hat.clone();
            let (h, j) = plug_in(model, &theta_null, sample, opts)?;
            let g = constraint.checked_jacobian(theta_null.as_slice())?;
            Ok(NullFit {
                theta_hat,
                theta_null,
                restricted: Some(restricted),
                h,
                j,
                g: Some(g),
            })
        }
    }
}

fn divergence_spectrum(fit: &NullFit) -> Result<SpectrumResult> {
    let bundle = godambe(&fit.h, &fit.j)?;
    match &fit.g {
        None => simple_null_spectrum(&fit.j, &bundle.g_star),
        Some(g) => {
            let blocks = constrained_blocks(&fit.h, g)?;
            composite_null_spectrum(&fit.j, g, &blocks.q, &bundle.g_star)
        }
    }
}

/// T = 2n / (φ''(1) h'(0)) · h(D_φ(θ̂, θ_null)).
pub fn hphi_test(
    model: &dyn CompositeModel,
    sample: &Sample,
    null: &NullHypothesis,
    h: &HFunction,
    family: &PhiFamily,
    opts: &TestOptions,
) -> Result<TestOutcome> {
    let fit = fit_null(model, sample, null, opts)?;
    let d = divergence(model, &fit.theta_hat.theta_hat, &fit.theta_null, family, opts.divergence)?;
    let transformed = hphi_divergence(h, &d);
    let n = sample.n() as f64;
    let scale = 2.0 * n / (phi_second_at_one(family) * h.derivative_at_zero());
    let spectrum = divergence_spectrum(&fit)?;
    outcome(
        scale * transformed.value,
        spectrum,
        opts.alpha,
        fit.theta_hat.theta_hat,
        fit.theta_null,
        transformed.domain_violation,
    )
}

/// T = 2n/φ''(1) · D_φ(θ̂, θ0), calibrated by the eigenvalues of J G*⁻¹ at θ0.
pub fn simple_null_test(
    model: &dyn CompositeModel,
    sample: &Sample,
    theta0: &ParamVector,
    family: &PhiFamily,
    opts: &TestOptions,
) -> Result<TestOutcome> {
    hphi_test(
        model,
        sample,
        &NullHypothesis::Simple(theta0.clone()),
        &HFunction::Identity,
        family,
        opts,
    )
}

/// T = 2n/φ''(1) · D_φ(θ̂, θ̃), calibrated at the restricted estimate θ̃.
pub fn composite_null_test(
    model: &dyn CompositeModel,
    sample: &Sample,
    constraint: &ConstraintSpec,
    family: &PhiFamily,
    opts: &TestOptions,
) -> Result<TestOutcome> {
    hphi_test(
        model,
        sample,
        &NullHypothesis::Composite(constraint.clone()),
        &HFunction::Identity,
        family,
        opts,
    )
}

/// Composite likelihood ratio 2(cℓ(θ̂) − cℓ(θ̃)).
pub fn clrt(
    model: &dyn CompositeModel,
    sample: &Sample,
    constraint: &ConstraintSpec,
    opts: &TestOptions,
) -> Result<TestOutcome> {
    let fit = fit_null(model, sample, &NullHypothesis::Composite(constraint.clone()), opts)?;
    let restricted = fit.restricted.as_ref().expect("composite fit");
    let gap = fit.theta_hat.loglik - restricted.loglik;
    if gap < -1e-8 * fit.theta_hat.loglik.abs().max(1.0) {
        return Err(Error::NegativeGap(gap));
    }
    let bundle = godambe(&fit.h, &fit.j)?;
    let g = fit.g.as_ref().expect("composite fit");
    let blocks = constrained_blocks(&fit.h, g)?;
    let spectrum = clrt_spectrum(&fit.h, g, &blocks.q, &bundle.g_star)?;
    outcome(
        2.0 * gap.max(0.0),
        spectrum,
        opts.alpha,
        fit.theta_hat.theta_hat,
        fit.theta_null,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spectrum(values: &[f64]) -> SpectrumResult {
        SpectrumResult {
            eigenvalues: values.to_vec(),
            k: values.len(),
        }
    }

    #[test]
    fn equal_eigenvalues_leave_statistic_unchanged() {
        let a = adjust(4.2, &spectrum(&[1.0, 1.0, 1.0])).unwrap();
        assert_eq!((a.t1, a.t2, a.t3, a.t4), (4.2, 4.2, 4.2, 4.2));
        assert_eq!((a.nu, a.a, a.b), (1.0, 0.0, 1.0));
    }

    #[test]
    fn two_eigenvalue_adjustment() {
        let t = 6.0;
        let a = adjust(t, &spectrum(&[3.0, 1.0])).unwrap();
        assert!((a.nu - 1.25).abs() < 1e-15);
        assert!((a.c - 1.0).abs() < 1e-15);
        assert!((a.b - 1.118034).abs() < 1e-6);
        assert!((a.a + 0.236068).abs() < 1e-6);
        assert_eq!(a.t2, t / 2.0);
        assert_eq!(a.t3, t / 2.5);
        assert!((a.t4 - (t / 2.0 + 0.236068) / 1.118034).abs() < 1e-6);
        assert!(a.t1 <= a.t2);
        assert!((a.dof3 - 1.6).abs() < 1e-15);
    }

    #[test]
    fn single_eigenvalue() {
        let a = adjust(3.0, &spectrum(&[2.0])).unwrap();
        assert_eq!((a.t1, a.t2), (1.5, 1.5));
    }

    #[test]
    fn empty_spectrum_rejected() {
        assert_eq!(adjust(1.0, &spectrum(&[])), Err(Error::EmptySpectrum));
    }

    #[test]
    fn p_value_at_critical_value_is_alpha() {
        for w in [vec![1.0], vec![0.5, 1.0, 2.5]] {
            let s = spectrum(&w);
            let (_, crit) = calibrate(1.0, &s, 0.05).unwrap();
            let (p, _) = calibrate(crit, &s, 0.05).unwrap();
            assert!((p - 0.05).abs() < 1e-8, "{w:?}: {p}");
        }
    }

    #[test]
    fn infinite_statistic_has_zero_p_value() {
        let (p, _) = calibrate(f64::INFINITY, &spectrum(&[1.0]), 0.05).unwrap();
        assert_eq!(p, 0.0);
    }
}
