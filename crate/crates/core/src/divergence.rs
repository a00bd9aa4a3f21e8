//! φ-functions, h-functions and divergences between composite densities.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{check_admissible, CompositeModel, ParamVector};

/// Default Monte Carlo size for [`DivergenceMethod::Auto`] when no closed form exists.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
pub const DEFAULT_MC_SEED: u64 = 0x5eed_d1ce_0000_0001;
/// Running averages above this are reported as an infinite divergence.
pub const OVERFLOW_BOUND: f64 = 1e300;

/// User-supplied convex φ with φ(1) = 0.
#[derive(Clone)]
pub struct CustomPhi {
    pub name: String,
    pub phi: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub second_at_one: f64,
    /// φ(0) when finite; `None` means the limit is not registered.
    pub at_zero: Option<f64>,
}

impl fmt::Debug for CustomPhi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPhi")
            .field("name", &self.name)
            .field("second_at_one", &self.second_at_one)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum PhiFamily {
    /// φ_λ(t) = (t^{λ+1} − t − λ(t−1)) / (λ(λ+1)), with the λ ∈ {0, −1} limits.
    CressieRead(f64),
    /// φ(t) = t log t − t + 1.
    KullbackLeibler,
    Custom(CustomPhi),
}

impl PhiFamily {
    pub fn cressie_read(lambda: f64) -> Result<Self> {
        if !lambda.is_finite() {
            return Err(Error::InvalidFamily(format!("lambda = {lambda}")));
        }
        Ok(Self::CressieRead(lambda))
    }

    pub fn custom<F>(name: &str, phi: F, second_at_one: f64, at_zero: Option<f64>) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(second_at_one > 0.0) || !second_at_one.is_finite() {
            return Err(Error::InvalidFamily(format!("phi''(1) = {second_at_one} must be positive")));
        }
        let phi: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(phi);
        if phi(1.0).abs() > 1e-12 {
            return Err(Error::InvalidFamily("phi(1) must vanish".into()));
        }
        Ok(Self::Custom(CustomPhi {
            name: name.to_string(),
            phi,
            second_at_one,
            at_zero,
        }))
    }

    /// Cressie-Read index, with Kullback-Leibler mapped to 0.
    pub fn cressie_read_lambda(&self) -> Option<f64> {
        match self {
            Self::CressieRead(l) => Some(*l),
            Self::KullbackLeibler => Some(0.0),
            Self::Custom(_) => None,
        }
    }
}

/// φ(t) for `t >= 0`; t = 0 uses the limit φ(0+), possibly +∞.
pub fn phi_eval(family: &PhiFamily, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NonPositiveArgument(t));
    }
    match family {
        PhiFamily::KullbackLeibler => Ok(kl_phi(t)),
        PhiFamily::CressieRead(l) => Ok(cressie_read_phi(*l, t)),
        PhiFamily::Custom(c) => {
            if t == 0.0 {
                c.at_zero.ok_or(Error::UndefinedLimit)
            } else {
                Ok((c.phi)(t))
            }
        }
    }
}

fn kl_phi(t: f64) -> f64 {
    if t == 0.0 {
        1.0
    } else if t.is_infinite() {
        f64::INFINITY
    } else {
        t * t.ln() - t + 1.0
    }
}

fn cressie_read_phi(lambda: f64, t: f64) -> f64 {
    if lambda == 0.0 {
        return kl_phi(t);
    }
    if lambda == -1.0 {
        return if t == 0.0 { f64::INFINITY } else { -t.ln() + t - 1.0 };
    }
    let a = lambda + 1.0;
    if t == 0.0 {
        return if a > 0.0 { 1.0 / a } else { f64::INFINITY };
    }
    (t.powf(a) - t - lambda * (t - 1.0)) / (lambda * a)
}

/// φ''(1); equal to 1 for every Cressie-Read member.
pub fn phi_second_at_one(family: &PhiFamily) -> f64 {
    match family {
        PhiFamily::CressieRead(_) | PhiFamily::KullbackLeibler => 1.0,
        PhiFamily::Custom(c) => c.second_at_one,
    }
}

#[derive(Clone)]
pub enum HFunction {
    Identity,
    /// h(x) = log(a(a−1)x + 1) / (a(a−1)).
    Renyi(f64),
    /// h(x) = ([1 + a(a−1)x]^{(b−1)/(a−1)} − 1) / (b−1).
    SharmaMittal(f64, f64),
    Custom {
        h: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        derivative_at_zero: f64,
    },
}

impl fmt::Debug for HFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::Renyi(a) => write!(f, "Renyi({a})"),
            Self::SharmaMittal(a, b) => write!(f, "SharmaMittal({a}, {b})"),
            Self::Custom { derivative_at_zero, .. } => write!(f, "Custom(h'(0) = {derivative_at_zero})"),
        }
    }
}

impl HFunction {
    pub fn renyi(a: f64) -> Result<Self> {
        if !a.is_finite() || a == 0.0 || a == 1.0 {
            return Err(Error::InvalidFamily(format!("Renyi order a = {a} must avoid 0 and 1")));
        }
        Ok(Self::Renyi(a))
    }

    pub fn sharma_mittal(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0) || a == 1.0 || b == 1.0 || !a.is_finite() || !b.is_finite() {
            return Err(Error::InvalidFamily(format!("Sharma-Mittal (a, b) = ({a}, {b})")));
        }
        Ok(Self::SharmaMittal(a, b))
    }

    pub fn custom<F>(h: F, derivative_at_zero: f64) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        if !(derivative_at_zero > 0.0) {
            return Err(Error::InvalidFamily(format!("h'(0) = {derivative_at_zero} must be positive")));
        }
        Ok(Self::Custom {
            h: Arc::new(h),
            derivative_at_zero,
        })
    }

    pub fn derivative_at_zero(&self) -> f64 {
        match self {
            Self::Identity | Self::Renyi(_) => 1.0,
            Self::SharmaMittal(a, _) => *a,
            Self::Custom { derivative_at_zero, .. } => *derivative_at_zero,
        }
    }

    /// The Cressie-Read φ that pairs with this h in the standard table.
    pub fn paired_phi(&self) -> Option<PhiFamily> {
        match self {
            Self::Renyi(a) | Self::SharmaMittal(a, _) => Some(PhiFamily::CressieRead(a - 1.0)),
            _ => None,
        }
    }

    /// h(x), or `DomainViolation` when x falls outside the domain.
    pub fn eval(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::DomainViolation { value: x });
        }
        match self {
            Self::Identity => Ok(x),
            Self::Renyi(a) => {
                let k = a * (a - 1.0);
                let arg = k * x + 1.0;
                if x.is_infinite() && k > 0.0 {
                    return Ok(f64::INFINITY);
                }
                if !(arg > 0.0) {
                    return Err(Error::DomainViolation { value: x });
                }
                Ok((k * x).ln_1p() / k)
            }
            Self::SharmaMittal(a, b) => {
                let k = a * (a - 1.0);
                if !(k * x + 1.0 > 0.0) {
                    return Err(Error::DomainViolation { value: x });
                }
                Ok(((b - 1.0) / (a - 1.0) * (k * x).ln_1p()).exp_m1() / (b - 1.0))
            }
            Self::Custom { h, .. } => {
                let v = h(x);
                if v.is_nan() {
                    Err(Error::DomainViolation { value: x })
                } else {
                    Ok(v)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvaluationMethod {
    ClosedForm,
    MonteCarlo { n_samples: usize, std_error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceValue {
    pub value: f64,
    pub method: EvaluationMethod,
}

impl DivergenceValue {
    pub fn closed_form(value: f64) -> Self {
        Self {
            value,
            method: EvaluationMethod::ClosedForm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum DivergenceMethod {
    /// Closed form when the model registers one, otherwise Monte Carlo with defaults.
    #[default]
    Auto,
    ClosedForm,
    MonteCarlo { n_samples: usize, seed: u64 },
}

/// D_φ(θ1, θ2) = ∫ CL(θ2) φ(CL(θ1)/CL(θ2)).
pub fn divergence(
    model: &dyn CompositeModel,
    theta1: &ParamVector,
    theta2: &ParamVector,
    family: &PhiFamily,
    method: DivergenceMethod,
) -> Result<DivergenceValue> {
    check_admissible(model, theta1)?;
    check_admissible(model, theta2)?;
    let closed = || model.closed_form_divergence(theta1.as_slice(), theta2.as_slice(), family);
    match method {
        DivergenceMethod::ClosedForm => closed()
            .map(DivergenceValue::closed_form)
            .ok_or_else(|| Error::InvalidConfig(format!("{} has no closed-form divergence", model.name()))),
        DivergenceMethod::Auto => match closed() {
            Some(v) => Ok(DivergenceValue::closed_form(v)),
            None => monte_carlo(model, theta1, theta2, family, DEFAULT_MC_SAMPLES, DEFAULT_MC_SEED),
        },
        DivergenceMethod::MonteCarlo { n_samples, seed } => monte_carlo(model, theta1, theta2, family, n_samples, seed),
    }
}

fn monte_carlo(
    model: &dyn CompositeModel,
    theta1: &ParamVector,
    theta2: &ParamVector,
    family: &PhiFamily,
    n_samples: usize,
    seed: u64,
) -> Result<DivergenceValue> {
    if n_samples < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: n_samples });
    }
    let draws = model.sample_composite(theta2.as_slice(), n_samples, seed)?;
    let (t1, t2) = (theta1.as_slice(), theta2.as_slice());
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, y) in draws.rows().enumerate() {
        let ratio = (model.loglik(t1, y) - model.loglik(t2, y)).exp();
        let v = phi_eval(family, ratio)?;
        let delta = v - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (v - mean);
        if !mean.is_finite() || mean > OVERFLOW_BOUND {
            return Ok(DivergenceValue {
                value: f64::INFINITY,
                method: EvaluationMethod::MonteCarlo {
                    n_samples,
                    std_error: f64::INFINITY,
                },
            });
        }
    }
    let n = n_samples as f64;
    let std_error = (m2 / (n - 1.0) / n).sqrt();
    Ok(DivergenceValue {
        value: mean,
        method: EvaluationMethod::MonteCarlo { n_samples, std_error },
    })
}

/// Result of applying h to a divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HPhiValue {
    pub value: f64,
    /// Set when the divergence lay outside the domain of h; `value` is then +∞.
    pub domain_violation: bool,
}

pub fn hphi_divergence(h: &HFunction, d: &DivergenceValue) -> HPhiValue {
    match h.eval(d.value) {
        Ok(value) => HPhiValue {
            value,
            domain_violation: false,
        },
        Err(_) => HPhiValue {
            value: f64::INFINITY,
            domain_violation: true,
        },
    }
}
