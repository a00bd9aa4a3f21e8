//! Composite-model abstraction and empirical sensitivity/variability estimators.
//!
//! A composite model is a weighted sum of block log-densities
//! `cl(theta, y) = sum_k w_k l_k(theta, y)`. Everything downstream (estimation,
//! divergences, calibration) goes through [`CompositeModel`].

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::divergence::PhiFamily;
use crate::error::{Error, Result};

/// Open interval `(lower, upper)`; infinite ends allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const REAL: Interval = Interval {
        lower: f64::NEG_INFINITY,
        upper: f64::INFINITY,
    };

    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    /// Clamp into the interval shrunk by `margin` on each finite side.
    pub fn clamp_inside(&self, x: f64, margin: f64) -> f64 {
        let lo = if self.lower.is_finite() { self.lower + margin } else { f64::NEG_INFINITY };
        let hi = if self.upper.is_finite() { self.upper - margin } else { f64::INFINITY };
        x.max(lo).min(hi)
    }
}

/// A point in parameter space, optionally carrying its own admissible box.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    bounds: Option<Vec<Interval>>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, bounds: None }
    }

    pub fn with_bounds(values: Vec<f64>, bounds: Vec<Interval>) -> Result<Self> {
        if bounds.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values but {} bounds",
                values.len(),
                bounds.len()
            )));
        }
        for (j, (v, b)) in values.iter().zip(&bounds).enumerate() {
            if !b.contains(*v) {
                return Err(Error::InadmissibleParameter(format!(
                    "coordinate {j} = {v} outside ({}, {})",
                    b.lower, b.upper
                )));
            }
        }
        Ok(Self { values, bounds: Some(bounds) })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn bounds(&self) -> Option<&[Interval]> {
        self.bounds.as_deref()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

impl std::ops::Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// `n` observations of dimension `m`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl Sample {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.first().map(Vec::len).ok_or(Error::TooFewObservations { needed: 1, got: 0 })?;
        let mut data = Vec::with_capacity(rows.len() * m);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::ShapeMismatch(format!(
                    "row {i} has {} columns, expected {m}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), m, data)
    }

    pub fn from_row_major(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::TooFewObservations { needed: 1, got: 0 });
        }
        if m == 0 || data.len() != n * m {
            return Err(Error::ShapeMismatch(format!(
                "{} values cannot form a {n} x {m} sample",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!("non-finite value in row {}", pos / m)));
        }
        Ok(Self { n, m, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.m)
    }

    pub fn as_row_major(&self) -> &[f64] {
        &self.data
    }

    /// Sample with the same rows repeated `times` times.
    pub fn repeated(&self, times: usize) -> Sample {
        let data = self.data.repeat(times);
        Sample { n: self.n * times, m: self.m, data }
    }

    /// Rows reordered by `order` (a permutation of `0..n`).
    pub fn permuted(&self, order: &[usize]) -> Result<Sample> {
        if order.len() != self.n {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for &i in order {
            data.extend_from_slice(self.row(i));
        }
        Ok(Sample { n: self.n, m: self.m, data })
    }

    /// Reads a headerless (or, with `skip_header`, single-header) CSV of reals.
    pub fn read_csv(path: impl AsRef<Path>, skip_header: bool) -> Result<Sample> {
        let path = path.as_ref();
        let io_err = |e: &dyn fmt::Display| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(skip_header)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| io_err(&e))?;
        let mut rows = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| io_err(&e))?;
            let row = record
                .iter()
                .map(|field| {
                    field
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Parse(format!("row {i}: `{field}` is not a finite real")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Sample::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |e: &dyn fmt::Display| Error::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let mut writer = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(|e| io_err(&e))?;
        for row in self.rows() {
            writer
                .write_record(row.iter().map(|v| format!("{v:?}")))
                .map_err(|e| io_err(&e))?;
        }
        writer.flush().map_err(|e| io_err(&e))
    }
}

/// A composite likelihood model.
///
/// Implementors supply block log-densities and the score; the remaining
/// hooks are optional and unlock analytic shortcuts downstream.
pub trait CompositeModel: Send + Sync {
    fn name(&self) -> &str;

    /// Observation dimension `m`.
    fn obs_dim(&self) -> usize;

    /// Parameter dimension `p`.
    fn param_dim(&self) -> usize;

    /// Admissible open box for each parameter coordinate.
    fn bounds(&self) -> Vec<Interval> {
        vec![Interval::REAL; self.param_dim()]
    }

    fn block_weights(&self) -> &[f64];

    /// `l_k(theta, y)` for block `k`.
    fn block_loglik(&self, block: usize, theta: &[f64], y: &[f64]) -> f64;

    /// `cl(theta, y) = sum_k w_k l_k(theta, y)`.
    fn loglik(&self, theta: &[f64], y: &[f64]) -> f64 {
        self.block_weights()
            .iter()
            .enumerate()
            .map(|(k, w)| w * self.block_loglik(k, theta, y))
            .sum()
    }

    /// Per-observation composite score `u(theta, y)`.
    fn score(&self, theta: &[f64], y: &[f64]) -> DVector<f64>;

    /// Analytic per-observation Jacobian of the score, if available.
    fn score_jacobian(&self, _theta: &[f64], _y: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic sensitivity matrix `H(theta)`, if available.
    fn sensitivity(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Analytic variability matrix `J(theta)`, if available.
    fn variability(&self, _theta: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    /// Draws `n` observations from the data-generating model at `theta`.
    fn sample(&self, _theta: &[f64], _n: usize, _seed: u64) -> Result<Sample> {
        Err(Error::NoSampler)
    }

    /// Draws from the composite density `CL(theta, .)`; only offered when it
    /// is a proper density.
    fn sample_composite(&self, _theta: &[f64], _n: usize, _seed: u64) -> Result<Sample> {
        Err(Error::NoSampler)
    }

    fn closed_form_divergence(&self, _theta1: &[f64], _theta2: &[f64], _family: &PhiFamily) -> Option<f64> {
        None
    }

    /// Moment-style starting point for the estimators.
    fn initial_estimate(&self, _sample: &Sample) -> Option<Vec<f64>> {
        None
    }
}

pub(crate) fn check_admissible(model: &dyn CompositeModel, theta: &ParamVector) -> Result<()> {
    let p = model.param_dim();
    if theta.len() != p {
        return Err(Error::ShapeMismatch(format!(
            "{} needs {p} parameters, got {}",
            model.name(),
            theta.len()
        )));
    }
    let own = theta.bounds().map(<[Interval]>::to_vec);
    for (j, b) in model.bounds().iter().enumerate() {
        let v = theta[j];
        let inside_own = own.as_ref().is_none_or(|o| o[j].contains(v));
        if !b.contains(v) || !inside_own {
            return Err(Error::InadmissibleParameter(format!(
                "{}: coordinate {j} = {v} outside ({}, {})",
                model.name(),
                b.lower,
                b.upper
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_sample(model: &dyn CompositeModel, sample: &Sample) -> Result<()> {
    if sample.m() != model.obs_dim() {
        return Err(Error::WrongDimension {
            expected: model.obs_dim(),
            got: sample.m(),
        });
    }
    Ok(())
}

type VectorFn = Arc<dyn Fn(&[f64]) -> DVector<f64> + Send + Sync>;
type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Equality restriction `g(theta) = 0_r` with Jacobian `G(theta)` (p x r).
#[derive(Clone)]
pub struct ConstraintSpec {
    p: usize,
    r: usize,
    g: VectorFn,
    jacobian: MatrixFn,
}

impl fmt::Debug for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ConstraintSpec").field("p", &self.p).field("r", &self.r).finish()
    }
}

impl ConstraintSpec {
    pub fn new<G, J>(p: usize, r: usize, g: G, jacobian: J) -> Result<Self>
    where
        G: Fn(&[f64]) -> DVector<f64> + Send + Sync + 'static,
        J: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        if r == 0 || r >= p {
            return Err(Error::InvalidConstraint { r, p });
        }
        Ok(Self {
            p,
            r,
            g: Arc::new(g),
            jacobian: Arc::new(jacobian),
        })
    }

    /// `g(theta) = A^T theta - b` with `A` of shape p x r.
    pub fn linear(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let (p, r) = a.shape();
        if b.len() != r {
            return Err(Error::ShapeMismatch(format!("offset has length {}, expected {r}", b.len())));
        }
        let a_t = a.transpose();
        let jac = a.clone();
        Self::new(
            p,
            r,
            move |theta| &a_t * DVector::from_column_slice(theta) - &b,
            move |_| jac.clone(),
        )
    }

    /// Fixes the listed coordinates: `theta[idx] = value`.
    pub fn fix_coordinates(p: usize, fixed: &[(usize, f64)]) -> Result<Self> {
        let r = fixed.len();
        if fixed.iter().any(|&(i, _)| i >= p) {
            return Err(Error::ShapeMismatch("fixed coordinate out of range".into()));
        }
        let mut a = DMatrix::zeros(p, r);
        let mut b = DVector::zeros(r);
        for (col, &(i, v)) in fixed.iter().enumerate() {
            a[(i, col)] = 1.0;
            b[col] = v;
        }
        if r == 0 || r >= p {
            return Err(Error::InvalidConstraint { r, p });
        }
        Self::linear(a, b)
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn eval(&self, theta: &[f64]) -> DVector<f64> {
        (self.g)(theta)
    }

    pub fn jacobian(&self, theta: &[f64]) -> DMatrix<f64> {
        (self.jacobian)(theta)
    }

    /// Jacobian at `theta`, verified to have full column rank `r`.
    pub fn checked_jacobian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let jac = self.jacobian(theta);
        if jac.shape() != (self.p, self.r) {
            return Err(Error::ShapeMismatch(format!(
                "constraint Jacobian is {:?}, expected ({}, {})",
                jac.shape(),
                self.p,
                self.r
            )));
        }
        let sv = jac.singular_values();
        let max = sv.max();
        if !(max > 0.0) || sv.min() <= 1e-12 * max {
            return Err(Error::RankDeficientConstraint);
        }
        Ok(jac)
    }
}

/// Total composite log-likelihood over the sample.
pub fn composite_loglik(model: &dyn CompositeModel, theta: &ParamVector, sample: &Sample) -> Result<f64> {
    check_admissible(model, theta)?;
    check_sample(model, sample)?;
    loglik_unchecked(model, theta.as_slice(), sample)
}

pub(crate) fn loglik_unchecked(model: &dyn CompositeModel, theta: &[f64], sample: &Sample) -> Result<f64> {
    let mut total = 0.0;
    for (i, y) in sample.rows().enumerate() {
        let v = model.loglik(theta, y);
        if !v.is_finite() {
            return Err(Error::NonFiniteDensity { row: i });
        }
        total += v;
    }
    Ok(total)
}

/// Total score `sum_i u(theta, y_i)`.
pub fn score_total(model: &dyn CompositeModel, theta: &[f64], sample: &Sample) -> DVector<f64> {
    let mut total = DVector::zeros(model.param_dim());
    for y in sample.rows() {
        total += model.score(theta, y);
    }
    total
}

/// Variability estimate plus a rank-deficiency flag.
#[derive(Debug, Clone, PartialEq)]
pub struct VariabilityEstimate {
    pub matrix: DMatrix<f64>,
    pub singular: bool,
}

/// `(1/n) sum_i u u^T`, uncentered unless `centered` is set.
pub fn empirical_variability(
    model: &dyn CompositeModel,
    theta: &ParamVector,
    sample: &Sample,
    centered: bool,
) -> Result<VariabilityEstimate> {
    check_admissible(model, theta)?;
    check_sample(model, sample)?;
    if sample.n() < 2 {
        return Err(Error::TooFewObservations { needed: 2, got: sample.n() });
    }
    let p = model.param_dim();
    let scores: Vec<DVector<f64>> = sample.rows().map(|y| model.score(theta.as_slice(), y)).collect();
    let n = sample.n() as f64;
    let mean = if centered {
        scores.iter().fold(DVector::zeros(p), |acc, u| acc + u) / n
    } else {
        DVector::zeros(p)
    };
    let mut j = DMatrix::zeros(p, p);
    for u in &scores {
        let d = u - &mean;
        j.ger(1.0, &d, &d, 1.0);
    }
    j /= n;
    let j = symmetrize(&j);
    let eig = j.clone().symmetric_eigen();
    let max = eig.eigenvalues.max().abs();
    let min = eig.eigenvalues.min();
    let singular = !(max > 0.0) || min <= 1e-10 * max;
    Ok(VariabilityEstimate { matrix: j, singular })
}

/// How `empirical_sensitivity` differentiates the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum JacobianMethod {
    /// Analytic Jacobian when the model registers one, else finite differences.
    #[default]
    Auto,
    FiniteDifference,
}

/// Central-difference step for coordinate value `x`.
pub fn fd_step(x: f64) -> f64 {
    (1e-5 * x.abs()).max(1e-5)
}

/// Per-observation score Jacobian by central differences.
pub(crate) fn fd_score_jacobian(
    model: &dyn CompositeModel,
    theta: &[f64],
    y: &[f64],
    bounds: &[Interval],
) -> Result<DMatrix<f64>> {
    let p = theta.len();
    let mut jac = DMatrix::zeros(p, p);
    let mut work = theta.to_vec();
    for j in 0..p {
        let h = fd_step(theta[j]);
        if !bounds[j].contains(theta[j] - h) || !bounds[j].contains(theta[j] + h) {
            return Err(Error::StepUnderflow { coord: j });
        }
        work[j] = theta[j] + h;
        let up = model.score(&work, y);
        work[j] = theta[j] - h;
        let down = model.score(&work, y);
        work[j] = theta[j];
        jac.set_column(j, &((up - down) / (2.0 * h)));
    }
    Ok(jac)
}

/// Summed score Jacobian over the sample.
pub(crate) fn total_score_jacobian(
    model: &dyn CompositeModel,
    theta: &[f64],
    sample: &Sample,
    method: JacobianMethod,
) -> Result<DMatrix<f64>> {
    let p = model.param_dim();
    let bounds = model.bounds();
    let mut total = DMatrix::zeros(p, p);
    for y in sample.rows() {
        let jac = match method {
            JacobianMethod::Auto => match model.score_jacobian(theta, y) {
                Some(j) => j,
                None => fd_score_jacobian(model, theta, y, &bounds)?,
            },
            JacobianMethod::FiniteDifference => fd_score_jacobian(model, theta, y, &bounds)?,
        };
        total += jac;
    }
    Ok(total)
}

/// Minus the averaged score Jacobian, symmetrized.
pub fn empirical_sensitivity(
    model: &dyn CompositeModel,
    theta: &ParamVector,
    sample: &Sample,
    method: JacobianMethod,
) -> Result<DMatrix<f64>> {
    check_admissible(model, theta)?;
    check_sample(model, sample)?;
    let total = total_score_jacobian(model, theta.as_slice(), sample, method)?;
    Ok(symmetrize(&(-total / sample.n() as f64)))
}

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent normals with unknown means: quadratic log-likelihood.
    struct Gaussian2;

    impl CompositeModel for Gaussian2 {
        fn name(&self) -> &str {
            "gaussian2"
        }
        fn obs_dim(&self) -> usize {
            2
        }
        fn param_dim(&self) -> usize {
            2
        }
        fn block_weights(&self) -> &[f64] {
            &[1.0, 1.0]
        }
        fn block_loglik(&self, k: usize, theta: &[f64], y: &[f64]) -> f64 {
            -0.5 * (y[k] - theta[k]).powi(2)
        }
        fn score(&self, theta: &[f64], y: &[f64]) -> DVector<f64> {
            DVector::from_vec(vec![y[0] - theta[0], y[1] - theta[1]])
        }
    }

    fn sample() -> Sample {
        Sample::from_rows(&[vec![0.5, 1.0], vec![-1.0, 2.0], vec![0.25, -0.5]]).unwrap()
    }

    #[test]
    fn loglik_is_additive_over_rows() {
        let s = sample();
        let theta = ParamVector::new(vec![0.1, 0.2]);
        let once = composite_loglik(&Gaussian2, &theta, &s).unwrap();
        let twice = composite_loglik(&Gaussian2, &theta, &s.repeated(2)).unwrap();
        assert!((twice - 2.0 * once).abs() < 1e-12 * once.abs());
    }

    #[test]
    fn sensitivity_of_quadratic_is_constant() {
        let s = sample();
        for theta in [vec![0.0, 0.0], vec![3.0, -7.0]] {
            let h = empirical_sensitivity(
                &Gaussian2,
                &ParamVector::new(theta),
                &s,
                JacobianMethod::FiniteDifference,
            )
            .unwrap();
            assert!((h - DMatrix::identity(2, 2)).abs().max() < 1e-8);
        }
    }

    #[test]
    fn replicated_rows_give_singular_variability() {
        let s = Sample::from_rows(&[vec![1.0, 2.0]]).unwrap().repeated(5);
        let est = empirical_variability(&Gaussian2, &ParamVector::new(vec![0.0, 0.0]), &s, false).unwrap();
        assert!(est.singular);
        assert_eq!(est.matrix[(0, 1)], 2.0);
    }

    #[test]
    fn variability_needs_two_rows() {
        let s = Sample::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let err = empirical_variability(&Gaussian2, &ParamVector::new(vec![0.0, 0.0]), &s, false);
        assert!(matches!(err, Err(Error::TooFewObservations { .. })));
    }

    #[test]
    fn bounded_param_vector_rejects_outside() {
        let b = vec![Interval::new(-1.0, 1.0)];
        assert!(ParamVector::with_bounds(vec![0.5], b.clone()).is_ok());
        assert!(ParamVector::with_bounds(vec![1.0], b).is_err());
    }

    #[test]
    fn constraint_requires_r_below_p() {
        assert!(matches!(
            ConstraintSpec::fix_coordinates(2, &[(0, 0.0), (1, 0.0)]),
            Err(Error::InvalidConstraint { r: 2, p: 2 })
        ));
        let c = ConstraintSpec::fix_coordinates(3, &[(2, 0.5)]).unwrap();
        assert_eq!(c.eval(&[1.0, 2.0, 0.75])[0], 0.25);
        assert!(c.checked_jacobian(&[0.0; 3]).is_ok());
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = std::env::temp_dir().join(format!("cldiv-model-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("s.csv");
        let s = sample();
        s.write_csv(&path).unwrap();
        assert_eq!(Sample::read_csv(&path, false).unwrap(), s);

        let with_header = dir.join("h.csv");
        std::fs::write(&with_header, "a,b\n1,2\n3,4\n").unwrap();
        assert_eq!(Sample::read_csv(&with_header, true).unwrap().n(), 2);
        assert!(Sample::read_csv(&with_header, false).is_err());
        assert!(matches!(Sample::read_csv(dir.join("missing.csv"), false), Err(Error::Io { .. })));
    }
}
