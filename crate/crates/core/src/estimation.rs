//! Unrestricted and restricted maximum composite likelihood estimation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{
    check_admissible, check_sample, loglik_unchecked, score_total, symmetrize, total_score_jacobian, CompositeModel,
    ConstraintSpec, Interval, JacobianMethod, ParamVector, Sample,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimationOptions {
    /// Convergence requires ‖score‖ ≤ tol · (1 + |cℓ|).
    pub tol: f64,
    pub max_iter: usize,
    pub n_starts: usize,
    /// Iterates are kept this far inside finite bounds.
    pub boundary_margin: f64,
    pub jacobian: JacobianMethod,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100,
            n_starts: 5,
            boundary_margin: 1e-8,
            jacobian: JacobianMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimationResult {
    pub theta_hat: ParamVector,
    pub score_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Lagrange multipliers, restricted fits only.
    pub lagrange: Option<DVector<f64>>,
    pub loglik: f64,
}

fn clamp_into(theta: &mut [f64], bounds: &[Interval], margin: f64) {
    for (v, b) in theta.iter_mut().zip(bounds) {
        *v = b.clamp_inside(*v, margin);
    }
}

/// Coordinate pinned at the shrunken boundary, if any.
fn pinned(theta: &[f64], bounds: &[Interval], margin: f64) -> Option<usize> {
    theta.iter().zip(bounds).position(|(v, b)| {
        (b.lower.is_finite() && *v <= b.lower + 2.0 * margin) || (b.upper.is_finite() && *v >= b.upper - 2.0 * margin)
    })
}

/// Deterministic starting points: the base point followed by perturbations.
fn starts(base: &[f64], init: &[f64], bounds: &[Interval], opts: &EstimationOptions) -> Vec<Vec<f64>> {
    let mut out = vec![base.to_vec()];
    if init != base {
        out.push(init.to_vec());
    }
    let fractions: [f64; 6] = [0.5, -0.5, 0.25, -0.25, 0.75, -0.75];
    let mut f = fractions.iter();
    while out.len() < opts.n_starts.max(1) {
        let Some(&frac) = f.next() else { break };
        let mut s = base.to_vec();
        for (v, b) in s.iter_mut().zip(bounds) {
            let target = if frac > 0.0 { b.upper } else { b.lower };
            *v = if target.is_finite() {
                *v + frac.abs() * (target - *v)
            } else {
                *v + frac * (1.0 + v.abs())
            };
        }
        clamp_into(&mut s, bounds, opts.boundary_margin);
        out.push(s);
    }
    out.truncate(opts.n_starts.max(1));
    out
}

fn newton_direction(neg_jac: &DMatrix<f64>, score: &DVector<f64>) -> DVector<f64> {
    let m = symmetrize(neg_jac);
    if let Some(ch) = m.clone().cholesky() {
        return ch.solve(score);
    }
    // Not locally concave: shift the spectrum until it is.
    let shift = m.clone().symmetric_eigen().eigenvalues.min().abs() + 1e-3 * (1.0 + m.diagonal().amax());
    let shifted = m + DMatrix::identity(score.len(), score.len()) * shift;
    shifted
        .cholesky()
        .map(|ch| ch.solve(score))
        .unwrap_or_else(|| score.clone())
}

struct Fit {
    theta: Vec<f64>,
    loglik: f64,
    score_norm: f64,
    iterations: usize,
    converged: bool,
}

fn newton_ascent(
    model: &dyn CompositeModel,
    sample: &Sample,
    start: Vec<f64>,
    bounds: &[Interval],
    opts: &EstimationOptions,
) -> Result<Fit> {
    let mut theta = start;
    let mut cl = loglik_unchecked(model, &theta, sample)?;
    let mut iterations = 0;
    loop {
        let score = score_total(model, &theta, sample);
        let score_norm = score.norm();
        if score_norm <= opts.tol * (1.0 + cl.abs()) {
            return Ok(Fit {
                theta,
                loglik: cl,
                score_norm,
                iterations,
                converged: true,
            });
        }
        if iterations >= opts.max_iter {
            return Ok(Fit {
                theta,
                loglik: cl,
                score_norm,
                iterations,
                converged: false,
            });
        }
        iterations += 1;
        let jac = total_score_jacobian(model, &theta, sample, opts.jacobian)?;
        let step = newton_direction(&(-jac), &score);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(v, s)| v + t * s).collect();
            clamp_into(&mut cand, bounds, opts.boundary_margin);
            if let Ok(c) = loglik_unchecked(model, &cand, sample) {
                if c >= cl - 1e-12 * (1.0 + cl.abs()) {
                    theta = cand;
                    cl = c;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Ok(Fit {
                theta,
                loglik: cl,
                score_norm,
                iterations,
                converged: false,
            });
        }
    }
}

/// Maximum composite likelihood estimate from a multistart damped Newton.
pub fn mcle(
    model: &dyn CompositeModel,
    sample: &Sample,
    init: &ParamVector,
    opts: &EstimationOptions,
) -> Result<EstimationResult> {
    check_admissible(model, init)?;
    check_sample(model, sample)?;
    let bounds = model.bounds();
    let mut base = model.initial_estimate(sample).unwrap_or_else(|| init.as_slice().to_vec());
    clamp_into(&mut base, &bounds, opts.boundary_margin);

    let mut best: Option<Fit> = None;
    let mut worst_failure: Option<Fit> = None;
    for start in starts(&base, init.as_slice(), &bounds, opts) {
        let fit = match newton_ascent(model, sample, start, &bounds, opts) {
            Ok(f) => f,
            Err(_) => continue,
        };
        if fit.converged {
            if best.as_ref().is_none_or(|b| fit.loglik > b.loglik) {
                best = Some(fit);
            }
        } else if worst_failure.as_ref().is_none_or(|w| fit.score_norm < w.score_norm) {
            worst_failure = Some(fit);
        }
    }
    let Some(fit) = best else {
        let (iterations, score_norm) = worst_failure.map_or((0, f64::NAN), |f| (f.iterations, f.score_norm));
        return Err(Error::NoConvergence { iterations, score_norm });
    };
    if let Some(coord) = pinned(&fit.theta, &bounds, opts.boundary_margin) {
        return Err(Error::BoundaryHit { coord });
    }
    Ok(EstimationResult {
        theta_hat: ParamVector::new(fit.theta),
        score_norm: fit.score_norm,
        iterations: fit.iterations,
        converged: true,
        lagrange: None,
        loglik: fit.loglik,
    })
}

/// Stacked KKT residual (Σu + Gλ, g).
fn kkt_residual(
    model: &dyn CompositeModel,
    sample: &Sample,
    constraint: &ConstraintSpec,
    theta: &[f64],
    lambda: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DMatrix<f64>) {
    let g = constraint.jacobian(theta);
    let stationarity = score_total(model, theta, sample) + &g * lambda;
    (stationarity, constraint.eval(theta), g)
}

/// Restricted estimate solving Σu(θ) + G(θ)λ = 0, g(θ) = 0 by damped Newton on
/// the stacked residual.
pub fn restricted_mcle(
    model: &dyn CompositeModel,
    sample: &Sample,
    constraint: &ConstraintSpec,
    init: &ParamVector,
    opts: &EstimationOptions,
) -> Result<EstimationResult> {
    check_admissible(model, init)?;
    check_sample(model, sample)?;
    let p = model.param_dim();
    let r = constraint.r();
    if constraint.p() != p {
        return Err(Error::ShapeMismatch(format!(
            "constraint is for p = {}, model has p = {p}",
            constraint.p()
        )));
    }
    let bounds = model.bounds();
    let mut theta = init.as_slice().to_vec();
    clamp_into(&mut theta, &bounds, opts.boundary_margin);
    let g0 = constraint.checked_jacobian(&theta)?;
    // Least-squares multipliers at the start.
    let s0 = score_total(model, &theta, sample);
    let gtg = g0.transpose() * &g0;
    let mut lambda = -gtg
        .cholesky()
        .ok_or(Error::RankDeficientConstraint)?
        .solve(&(g0.transpose() * &s0));

    let norm = |a: &DVector<f64>, b: &DVector<f64>| (a.norm_squared() + b.norm_squared()).sqrt();
    let (mut stat, mut feas, mut g) = kkt_residual(model, sample, constraint, &theta, &lambda);
    let mut iterations = 0;
    loop {
        let cl = loglik_unchecked(model, &theta, sample)?;
        if stat.norm() <= opts.tol * (1.0 + cl.abs()) && feas.norm() <= opts.tol {
            if let Some(coord) = pinned(&theta, &bounds, opts.boundary_margin) {
                return Err(Error::BoundaryHit { coord });
            }
            return Ok(EstimationResult {
                theta_hat: ParamVector::new(theta),
                score_norm: stat.norm(),
                iterations,
                converged: true,
                lagrange: Some(lambda),
                loglik: cl,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                iterations,
                score_norm: stat.norm(),
            });
        }
        iterations += 1;

        // Curvature of θ ↦ G(θ)λ by central differences (zero for linear g).
        let jac = total_score_jacobian(model, &theta, sample, opts.jacobian)?;
        let mut curv = DMatrix::zeros(p, p);
        for k in 0..p {
            let h = crate::model::fd_step(theta[k]);
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[k] += h;
            dn[k] -= h;
            let col = (constraint.jacobian(&up) - constraint.jacobian(&dn)) * &lambda / (2.0 * h);
            curv.set_column(k, &col);
        }
        let mut kkt = DMatrix::zeros(p + r, p + r);
        kkt.view_mut((0, 0), (p, p)).copy_from(&(jac + curv));
        kkt.view_mut((0, p), (p, r)).copy_from(&g);
        kkt.view_mut((p, 0), (r, p)).copy_from(&g.transpose());
        let mut rhs = DVector::zeros(p + r);
        rhs.rows_mut(0, p).copy_from(&(-&stat));
        rhs.rows_mut(p, r).copy_from(&(-&feas));
        let lu = kkt.clone().lu();
        let singular = kkt
            .singular_values()
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), s| (lo.min(*s), hi.max(*s)));
        if !(singular.0 > 1e-13 * singular.1) {
            return Err(Error::SingularKkt);
        }
        let delta = lu.solve(&rhs).ok_or(Error::SingularKkt)?;

        let current = norm(&stat, &feas);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta
                .iter()
                .zip(delta.rows(0, p).iter())
                .map(|(v, d)| v + t * d)
                .collect();
            clamp_into(&mut cand, &bounds, opts.boundary_margin);
            let cand_lambda = &lambda + delta.rows(p, r) * t;
            if loglik_unchecked(model, &cand, sample).is_ok() {
                let (s, f, gg) = kkt_residual(model, sample, constraint, &cand, &cand_lambda);
                if norm(&s, &f) < current || t == 1.0 && norm(&s, &f) <= current * (1.0 + 1e-12) {
                    theta = cand;
                    lambda = cand_lambda;
                    stat = s;
                    feas = f;
                    g = gg;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(Error::NoConvergence {
                iterations,
                score_norm: stat.norm(),
            });
        }
    }
}
