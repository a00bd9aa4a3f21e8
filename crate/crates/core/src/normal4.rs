//! Four-variate normal model with pairwise block composite likelihood.
//!
//! Y ~ N4(μ, Σ(ρ)) where Σ has unit diagonal, ρ inside the blocks (1,2) and
//! (3,4), and 2ρ across them. The composite likelihood is the product of the
//! two bivariate block margins, so CL(θ, ·) is itself a proper density
//! N(μ, blockdiag(B(ρ), B(ρ))). Parameters are θ = (μ1, μ2, μ3, μ4, ρ).

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::divergence::PhiFamily;
use crate::error::{Error, Result};
use crate::model::{CompositeModel, Interval, ParamVector, Sample};
use crate::rng;

/// Lower end of the ρ range where Σ(ρ) is positive semidefinite.
pub const RHO_MIN: f64 = -0.2;
/// Upper end of the ρ range where Σ(ρ) is positive semidefinite.
pub const RHO_MAX: f64 = 1.0 / 3.0;
pub const PARAM_DIM: usize = 5;
pub const RHO_INDEX: usize = 4;

const BLOCKS: [(usize, usize); 2] = [(0, 1), (2, 3)];
const EDGE_TOL: f64 = 1e-12;

/// Full covariance Σ(ρ).
pub fn sigma(rho: f64) -> Matrix4<f64> {
    let c = 2.0 * rho;
    Matrix4::new(
        1.0, rho, c, c, //
        rho, 1.0, c, c, //
        c, c, 1.0, rho, //
        c, c, rho, 1.0,
    )
}

/// True when Σ(ρ) is positive semidefinite.
pub fn sigma_admissible(rho: f64) -> bool {
    (RHO_MIN - EDGE_TOL..=RHO_MAX + EDGE_TOL).contains(&rho)
}

fn check_open_unit(rho: f64) -> Result<()> {
    if rho.is_finite() && rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::InadmissibleRho(rho))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normal4Params {
    pub mu: [f64; 4],
    pub rho: f64,
}

impl Normal4Params {
    /// Accepts ρ in the closed range where Σ(ρ) is a valid covariance.
    pub fn new(mu: [f64; 4], rho: f64) -> Result<Self> {
        if !sigma_admissible(rho) || mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InadmissibleRho(rho));
        }
        Ok(Self { mu, rho })
    }

    pub fn theta(&self) -> ParamVector {
        let mut v = self.mu.to_vec();
        v.push(self.rho);
        ParamVector::new(v)
    }
}

/// Means, 1/n variances and the two within-block covariances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuffStats {
    pub n: usize,
    pub ybar: [f64; 4],
    pub v_sq: [f64; 4],
    pub v12: f64,
    pub v34: f64,
}

impl SuffStats {
    pub fn from_sample(sample: &Sample) -> Result<Self> {
        if sample.m() != 4 {
            return Err(Error::WrongDimension { expected: 4, got: sample.m() });
        }
        Self::from_row_major(sample.as_row_major())
    }

    fn from_row_major(data: &[f64]) -> Result<Self> {
        let n = data.len() / 4;
        if n < 2 {
            return Err(Error::TooFewObservations { needed: 2, got: n });
        }
        let nf = n as f64;
        let mut ybar = [0.0; 4];
        for row in data.chunks_exact(4) {
            for j in 0..4 {
                ybar[j] += row[j];
            }
        }
        ybar.iter_mut().for_each(|m| *m /= nf);
        let mut v_sq = [0.0; 4];
        let (mut v12, mut v34) = (0.0, 0.0);
        for row in data.chunks_exact(4) {
            let d = [row[0] - ybar[0], row[1] - ybar[1], row[2] - ybar[2], row[3] - ybar[3]];
            for j in 0..4 {
                v_sq[j] += d[j] * d[j];
            }
            v12 += d[0] * d[1];
            v34 += d[2] * d[3];
        }
        v_sq.iter_mut().for_each(|v| *v /= nf);
        Ok(Self {
            n,
            ybar,
            v_sq,
            v12: v12 / nf,
            v34: v34 / nf,
        })
    }

    pub fn sum_v_sq(&self) -> f64 {
        self.v_sq.iter().sum()
    }

    pub fn sum_cov(&self) -> f64 {
        self.v12 + self.v34
    }

    /// Composite log-likelihood per observation, profiled over μ, up to a constant.
    pub fn profile_loglik(&self, rho: f64) -> f64 {
        let d = 1.0 - rho * rho;
        -d.ln() - (self.sum_v_sq() - 2.0 * rho * self.sum_cov()) / (2.0 * d)
    }

    /// Coefficients (b, c, d) of the monic score cubic ρ³ + bρ² + cρ + d.
    pub fn cubic(&self) -> (f64, f64, f64) {
        let half_cov = 0.5 * self.sum_cov();
        (-half_cov, 0.5 * self.sum_v_sq() - 1.0, -half_cov)
    }
}

/// Real roots of x³ + b x² + c x + d, each refined by one Newton step.
pub fn real_cubic_roots(b: f64, c: f64, d: f64) -> Vec<f64> {
    let shift = b / 3.0;
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let mut roots = if p == 0.0 && q == 0.0 {
        vec![0.0]
    } else if disc < 0.0 {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let phi = arg.acos() / 3.0;
        (0..3).map(|k| m * (phi - 2.0 * PI * k as f64 / 3.0).cos()).collect()
    } else {
        let s = disc.sqrt();
        vec![(-q / 2.0 + s).cbrt() + (-q / 2.0 - s).cbrt()]
    };
    for r in roots.iter_mut() {
        let x = *r - shift;
        let f = ((x + b) * x + c) * x + d;
        let df = (3.0 * x + 2.0 * b) * x + c;
        *r = if df != 0.0 { x - f / df } else { x };
    }
    roots
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoEstimate {
    pub rho: f64,
    /// Whether Σ(ρ̂) is a valid covariance.
    pub sigma_admissible: bool,
    /// Set when no root lay strictly inside (−1, 1) and an endpoint was used.
    pub clipped: bool,
}

/// Maximum composite likelihood estimate of ρ from the score cubic.
///
/// Among the real roots inside (−1, 1) the one with the largest composite
/// log-likelihood wins.
pub fn rho_hat(stats: &SuffStats) -> RhoEstimate {
    let (b, c, d) = stats.cubic();
    let inside: Vec<f64> = real_cubic_roots(b, c, d)
        .into_iter()
        .filter(|r| r.abs() < 1.0)
        .collect();
    let (candidates, clipped) = if inside.is_empty() {
        let e = 1.0 - 1e-8;
        (vec![-e, e], true)
    } else {
        (inside, false)
    };
    let rho = candidates
        .into_iter()
        .max_by(|a, b| stats.profile_loglik(*a).total_cmp(&stats.profile_loglik(*b)))
        .expect("at least one candidate");
    RhoEstimate {
        rho,
        sigma_admissible: sigma_admissible(rho),
        clipped,
    }
}

/// Sensitivity matrix H(ρ) in the (μ1..μ4, ρ) ordering.
pub fn h_matrix(rho: f64) -> Result<DMatrix<f64>> {
    check_open_unit(rho)?;
    let d = 1.0 - rho * rho;
    let mut h = DMatrix::zeros(5, 5);
    for (i, j) in BLOCKS {
        h[(i, i)] = 1.0 / d;
        h[(j, j)] = 1.0 / d;
        h[(i, j)] = -rho / d;
        h[(j, i)] = -rho / d;
    }
    h[(4, 4)] = 2.0 * (1.0 + rho * rho) / (d * d);
    Ok(h)
}

/// Exact variability matrix Var[u(θ, Y)] when Y ~ N4(μ, Σ(ρ)).
///
/// The μ-part of the score is linear in Y − μ and the ρ-part is a quadratic
/// form, so the covariance follows from Gaussian moment identities.
pub fn variability_exact(rho: f64) -> Result<DMatrix<f64>> {
    if !sigma_admissible(rho) || rho.abs() >= 1.0 {
        return Err(Error::InadmissibleRho(rho));
    }
    let d = 1.0 - rho * rho;
    let s = sigma(rho);
    let mut c = Matrix4::zeros();
    let mut a = Matrix4::zeros();
    for (i, j) in BLOCKS {
        c[(i, i)] = 1.0 / d;
        c[(j, j)] = 1.0 / d;
        c[(i, j)] = -rho / d;
        c[(j, i)] = -rho / d;
        a[(i, i)] = -rho / (d * d);
        a[(j, j)] = -rho / (d * d);
        a[(i, j)] = (1.0 + rho * rho) / (2.0 * d * d);
        a[(j, i)] = a[(i, j)];
    }
    let mu_block = c * s * c.transpose();
    let as_ = a * s;
    let rho_var = 2.0 * (as_ * as_).trace();
    let mut j = DMatrix::zeros(5, 5);
    j.view_mut((0, 0), (4, 4)).copy_from(&mu_block);
    j[(4, 4)] = rho_var;
    Ok(j)
}

/// Log of ∫ f1^a f2^(1−a) for two unit-variance bivariate normals.
fn block_log_affinity(m1: [f64; 2], r1: f64, m2: [f64; 2], r2: f64, a: f64) -> f64 {
    let s = a * r2 + (1.0 - a) * r1;
    if s.abs() >= 1.0 {
        return f64::INFINITY;
    }
    let (dx, dy) = (m1[0] - m2[0], m1[1] - m2[1]);
    let quad = (dx * dx + dy * dy - 2.0 * s * dx * dy) / (1.0 - s * s);
    -0.5 * (1.0 - s * s).ln() + 0.5 * (1.0 - a) * (1.0 - r1 * r1).ln() + 0.5 * a * (1.0 - r2 * r2).ln()
        - 0.5 * a * (1.0 - a) * quad
}

/// KL(f1 ‖ f2) for two unit-variance bivariate normals.
fn block_kl(m1: [f64; 2], r1: f64, m2: [f64; 2], r2: f64) -> f64 {
    let d2 = 1.0 - r2 * r2;
    let (dx, dy) = (m1[0] - m2[0], m1[1] - m2[1]);
    let trace = (2.0 - 2.0 * r1 * r2) / d2;
    let quad = (dx * dx + dy * dy - 2.0 * r2 * dx * dy) / d2;
    0.5 * (trace + quad - 2.0 + (d2 / (1.0 - r1 * r1)).ln())
}

fn block_means(theta: &[f64], (i, j): (usize, usize)) -> [f64; 2] {
    [theta[i], theta[j]]
}

/// Cressie-Read divergence between the composite densities at θ1 and θ2.
pub fn composite_divergence(theta1: &[f64], theta2: &[f64], lambda: f64) -> f64 {
    if theta1 == theta2 {
        return 0.0;
    }
    let (r1, r2) = (theta1[RHO_INDEX], theta2[RHO_INDEX]);
    if lambda == 0.0 || lambda == -1.0 {
        let (t1, t2, ra, rb) = if lambda == 0.0 { (theta1, theta2, r1, r2) } else { (theta2, theta1, r2, r1) };
        return BLOCKS
            .iter()
            .map(|&bl| block_kl(block_means(t1, bl), ra, block_means(t2, bl), rb))
            .sum();
    }
    let a = lambda + 1.0;
    let log_i: f64 = BLOCKS
        .iter()
        .map(|&bl| block_log_affinity(block_means(theta1, bl), r1, block_means(theta2, bl), r2, a))
        .sum();
    if log_i.is_infinite() {
        return f64::INFINITY;
    }
    (log_i.exp_m1() / (lambda * a)).max(0.0)
}

/// How the model reports J(θ).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VariabilityProvider {
    /// J(θ) = H(θ), the simplification used in the published analysis of this model.
    #[default]
    EqualsSensitivity,
    /// The exact score covariance from [`variability_exact`].
    Exact,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Normal4 {
    pub variability: VariabilityProvider,
}

impl Normal4 {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_exact_variability() -> Self {
        Self {
            variability: VariabilityProvider::Exact,
        }
    }
}

impl CompositeModel for Normal4 {
    fn name(&self) -> &str {
        "normal4"
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn param_dim(&self) -> usize {
        PARAM_DIM
    }

    fn bounds(&self) -> Vec<Interval> {
        let mut b = vec![Interval::REAL; 4];
        b.push(Interval::new(-1.0, 1.0));
        b
    }

    fn block_weights(&self) -> &[f64] {
        &[1.0, 1.0]
    }

    fn block_loglik(&self, block: usize, theta: &[f64], y: &[f64]) -> f64 {
        let (i, j) = BLOCKS[block];
        let rho = theta[RHO_INDEX];
        let d = 1.0 - rho * rho;
        if !(d > 0.0) {
            return f64::NAN;
        }
        let (a, b) = (y[i] - theta[i], y[j] - theta[j]);
        let q = a * a + b * b - 2.0 * rho * a * b;
        -(2.0 * PI).ln() - 0.5 * d.ln() - q / (2.0 * d)
    }

    fn score(&self, theta: &[f64], y: &[f64]) -> DVector<f64> {
        let rho = theta[RHO_INDEX];
        let d = 1.0 - rho * rho;
        let mut u = DVector::zeros(5);
        for (i, j) in BLOCKS {
            let (a, b) = (y[i] - theta[i], y[j] - theta[j]);
            let q = a * a + b * b - 2.0 * rho * a * b;
            u[i] = (a - rho * b) / d;
            u[j] = (b - rho * a) / d;
            u[4] += rho / d + a * b / d - rho * q / (d * d);
        }
        u
    }

    fn score_jacobian(&self, theta: &[f64], y: &[f64]) -> Option<DMatrix<f64>> {
        let rho = theta[RHO_INDEX];
        let d = 1.0 - rho * rho;
        let mut jac = DMatrix::zeros(5, 5);
        for (i, j) in BLOCKS {
            let (a, b) = (y[i] - theta[i], y[j] - theta[j]);
            let q = a * a + b * b - 2.0 * rho * a * b;
            jac[(i, i)] = -1.0 / d;
            jac[(j, j)] = -1.0 / d;
            jac[(i, j)] = rho / d;
            jac[(j, i)] = rho / d;
            let di = -b / d + (a - rho * b) * 2.0 * rho / (d * d);
            let dj = -a / d + (b - rho * a) * 2.0 * rho / (d * d);
            jac[(i, 4)] = di;
            jac[(4, i)] = di;
            jac[(j, 4)] = dj;
            jac[(4, j)] = dj;
            jac[(4, 4)] += (1.0 + rho * rho) / (d * d) + 4.0 * rho * a * b / (d * d)
                - q / (d * d)
                - 4.0 * rho * rho * q / (d * d * d);
        }
        Some(jac)
    }

    fn sensitivity(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        h_matrix(theta[RHO_INDEX]).ok()
    }

    fn variability(&self, theta: &[f64]) -> Option<DMatrix<f64>> {
        match self.variability {
            VariabilityProvider::EqualsSensitivity => h_matrix(theta[RHO_INDEX]).ok(),
            VariabilityProvider::Exact => variability_exact(theta[RHO_INDEX]).ok(),
        }
    }

    fn sample(&self, theta: &[f64], n: usize, seed: u64) -> Result<Sample> {
        let params = params_from_theta(theta)?;
        Normal4Sampler::new(&params)?.sample(n, &mut rng::substream(seed, 0))
    }

    fn sample_composite(&self, theta: &[f64], n: usize, seed: u64) -> Result<Sample> {
        if theta.len() != PARAM_DIM {
            return Err(Error::ShapeMismatch(format!("normal4 needs 5 parameters, got {}", theta.len())));
        }
        let rho = theta[RHO_INDEX];
        check_open_unit(rho)?;
        let mut cov = Matrix4::zeros();
        for (i, j) in BLOCKS {
            cov[(i, i)] = 1.0;
            cov[(j, j)] = 1.0;
            cov[(i, j)] = rho;
            cov[(j, i)] = rho;
        }
        let mu = Vector4::new(theta[0], theta[1], theta[2], theta[3]);
        Normal4Sampler::from_covariance(mu, cov)?.sample(n, &mut rng::substream(seed, 0))
    }

    fn closed_form_divergence(&self, theta1: &[f64], theta2: &[f64], family: &PhiFamily) -> Option<f64> {
        family
            .cressie_read_lambda()
            .map(|lambda| composite_divergence(theta1, theta2, lambda))
    }

    fn initial_estimate(&self, sample: &Sample) -> Option<Vec<f64>> {
        let s = SuffStats::from_sample(sample).ok()?;
        let scale = (s.v_sq[0] * s.v_sq[1]).sqrt() + (s.v_sq[2] * s.v_sq[3]).sqrt();
        let corr = if scale > 0.0 { s.sum_cov() / scale } else { 0.0 };
        let mut v = s.ybar.to_vec();
        v.push(corr.clamp(-0.9, 0.9));
        Some(v)
    }
}

fn params_from_theta(theta: &[f64]) -> Result<Normal4Params> {
    if theta.len() != PARAM_DIM {
        return Err(Error::ShapeMismatch(format!("normal4 needs 5 parameters, got {}", theta.len())));
    }
    Normal4Params::new([theta[0], theta[1], theta[2], theta[3]], theta[RHO_INDEX])
}

/// Precomputed factor for drawing from N4(μ, Σ).
#[derive(Debug, Clone)]
pub struct Normal4Sampler {
    mu: Vector4<f64>,
    factor: Matrix4<f64>,
}

impl Normal4Sampler {
    /// Cholesky factor of Σ(ρ); at the exact ends of the admissible range,
    /// where Σ is singular, a symmetric square root is used instead.
    pub fn new(params: &Normal4Params) -> Result<Self> {
        Self::from_covariance(Vector4::from(params.mu), sigma(params.rho))
    }

    fn from_covariance(mu: Vector4<f64>, cov: Matrix4<f64>) -> Result<Self> {
        if let Some(ch) = cov.cholesky() {
            return Ok(Self { mu, factor: ch.l() });
        }
        let eig = cov.symmetric_eigen();
        let scale = eig.eigenvalues.amax().max(1.0);
        if eig.eigenvalues.min() < -1e-10 * scale {
            return Err(Error::CholeskyFailure(format!(
                "covariance has eigenvalue {:e}",
                eig.eigenvalues.min()
            )));
        }
        let root = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let factor = eig.eigenvectors * Matrix4::from_diagonal(&root);
        Ok(Self { mu, factor })
    }

    pub fn fill<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(n * 4);
        for _ in 0..n {
            let z = Vector4::from_fn(|_, _| rng.sample::<f64, _>(StandardNormal));
            let y = self.mu + self.factor * z;
            out.extend_from_slice(y.as_slice());
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Sample> {
        let mut data = Vec::new();
        self.fill(n, rng, &mut data);
        Sample::from_row_major(n, 4, data)
    }

    /// Draws `n` rows and reduces them straight to sufficient statistics.
    pub fn stats<R: Rng + ?Sized>(&self, n: usize, rng: &mut R, buf: &mut Vec<f64>) -> Result<SuffStats> {
        self.fill(n, rng, buf);
        SuffStats::from_row_major(buf)
    }
}

/// Rényi statistic of order r for H0: ρ = ρ0; +∞ outside the finite band.
pub fn renyi_stat(n: usize, rho_hat: f64, rho0: f64, r: f64) -> Result<f64> {
    check_open_unit(rho_hat)?;
    check_open_unit(rho0)?;
    let nf = n as f64;
    let (d0, dh) = (1.0 - rho0 * rho0, 1.0 - rho_hat * rho_hat);
    if rho_hat == rho0 {
        return Ok(0.0);
    }
    if r == 1.0 {
        return Ok(2.0 * nf * ((d0 / dh).ln() + 2.0 * rho0 * (rho0 - rho_hat) / d0));
    }
    if r == 0.0 {
        return Ok(2.0 * nf * ((dh / d0).ln() + 2.0 * rho_hat * (rho_hat - rho0) / dh));
    }
    let mix = r * rho0 + (1.0 - r) * rho_hat;
    if mix.abs() >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let log_x = r * d0.ln() - (r - 1.0) * dh.ln() - (1.0 - mix * mix).ln();
    Ok((2.0 * nf / (r * (r - 1.0)) * log_x).max(0.0))
}

/// Cressie-Read statistic of index λ for H0: ρ = ρ0; +∞ outside the finite band.
pub fn cressie_read_stat(n: usize, rho_hat: f64, rho0: f64, lambda: f64) -> Result<f64> {
    if lambda == 0.0 {
        return renyi_stat(n, rho_hat, rho0, 1.0);
    }
    if lambda == -1.0 {
        return renyi_stat(n, rho_hat, rho0, 0.0);
    }
    check_open_unit(rho_hat)?;
    check_open_unit(rho0)?;
    if rho_hat == rho0 {
        return Ok(0.0);
    }
    let (d0, dh) = (1.0 - rho0 * rho0, 1.0 - rho_hat * rho_hat);
    let mix = (lambda + 1.0) * rho0 - lambda * rho_hat;
    if mix.abs() >= 1.0 {
        return Ok(f64::INFINITY);
    }
    let log_x = (lambda + 1.0) * d0.ln() - lambda * dh.ln() - (1.0 - mix * mix).ln();
    let nf = n as f64;
    Ok((4.0 * nf / (lambda * (lambda + 1.0)) * (0.5 * log_x).exp_m1()).max(0.0))
}

/// Composite likelihood ratio 2(cℓ(θ̂) − cℓ(θ̃)) in closed form.
pub fn clrt_stat(n: usize, stats: &SuffStats, rho_hat: f64, rho0: f64) -> Result<f64> {
    check_open_unit(rho_hat)?;
    check_open_unit(rho0)?;
    let (d0, dh) = (1.0 - rho0 * rho0, 1.0 - rho_hat * rho_hat);
    let s = stats.sum_v_sq();
    let c = stats.sum_cov();
    let nf = n as f64;
    Ok(2.0 * nf * ((d0 / dh).ln() + 0.5 * s * (1.0 / d0 - 1.0 / dh) - c * (rho0 / d0 - rho_hat / dh)))
}

/// Closed-form test statistic choices for H0: ρ = ρ0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Statistic {
    Clrt,
    CressieRead(f64),
    Renyi(f64),
}

impl Statistic {
    pub fn evaluate(&self, stats: &SuffStats, rho_hat: f64, rho0: f64) -> Result<f64> {
        match *self {
            Self::Clrt => clrt_stat(stats.n, stats, rho_hat, rho0),
            Self::CressieRead(l) => cressie_read_stat(stats.n, rho_hat, rho0, l),
            Self::Renyi(r) => renyi_stat(stats.n, rho_hat, rho0, r),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Clrt => "clrt",
            Self::CressieRead(_) => "cr",
            Self::Renyi(_) => "renyi",
        }
    }

    pub fn index(&self) -> Option<f64> {
        match *self {
            Self::Clrt => None,
            Self::CressieRead(v) | Self::Renyi(v) => Some(v),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index() {
            None => write!(f, "{}", self.kind()),
            Some(v) => write!(f, "{}:{}", self.kind(), v),
        }
    }
}

/// Parses a real written either as a decimal or as a ratio `a/b`.
pub fn parse_real(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::Parse(format!("`{s}` is not a number"));
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| bad())?;
            let b: f64 = b.trim().parse().map_err(|_| bad())?;
            a / b
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad())
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("clrt") || s.eq_ignore_ascii_case("lrt") {
            return Ok(Self::Clrt);
        }
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("statistic `{s}`: expected clrt, cr:<lambda> or renyi:<r>")))?;
        let v = parse_real(value)?;
        match kind.to_ascii_lowercase().as_str() {
            "cr" => Ok(Self::CressieRead(v)),
            "renyi" => Ok(Self::Renyi(v)),
            other => Err(Error::Parse(format!("unknown statistic family `{other}`"))),
        }
    }
}
