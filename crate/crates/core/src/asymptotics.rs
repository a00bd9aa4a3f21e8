//! Godambe information, constrained projection blocks, limiting spectra and
//! power / sample-size approximations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::divergence::{divergence, DivergenceMethod, PhiFamily};
use crate::error::{Error, Result};
use crate::model::{fd_step, symmetrize, CompositeModel, ParamVector};

/// Relative cutoff below which eigenvalues count as zero.
pub const RANK_TOL: f64 = 1e-10;

fn cholesky(m: &DMatrix<f64>, name: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!("{name} is {:?}, not square", m.shape())));
    }
    Cholesky::new(symmetrize(m)).ok_or(Error::NotPositiveDefinite(name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GodambeBundle {
    pub h: DMatrix<f64>,
    pub j: DMatrix<f64>,
    /// G* = H J⁻¹ H.
    pub g_star: DMatrix<f64>,
}

pub fn godambe(h: &DMatrix<f64>, j: &DMatrix<f64>) -> Result<GodambeBundle> {
    cholesky(h, "H")?;
    let jc = cholesky(j, "J")?;
    if h.shape() != j.shape() {
        return Err(Error::ShapeMismatch("H and J differ in shape".into()));
    }
    let g_star = symmetrize(&(h * jc.solve(h)));
    cholesky(&g_star, "G*")?;
    Ok(GodambeBundle {
        h: h.clone(),
        j: j.clone(),
        g_star,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedBlocks {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Q = −H⁻¹G(GᵀH⁻¹G)⁻¹, P = H⁻¹ + QGᵀH⁻¹, R = −(GᵀH⁻¹G)⁻¹.
pub fn constrained_blocks(h: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<ConstrainedBlocks> {
    let hc = cholesky(h, "H")?;
    if g.nrows() != h.nrows() || g.ncols() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "G is {:?} but H is {:?}",
            g.shape(),
            h.shape()
        )));
    }
    let h_inv = hc.inverse();
    let h_inv_g = &h_inv * g;
    let m = symmetrize(&(g.transpose() * &h_inv_g));
    let mc = Cholesky::new(m.clone()).ok_or(Error::RankDeficientConstraint)?;
    let diag_max = m.diagonal().amax();
    if mc.l().diagonal().iter().any(|d| d * d <= 1e-14 * diag_max) {
        return Err(Error::RankDeficientConstraint);
    }
    let m_inv = mc.inverse();
    let q = -&h_inv_g * &m_inv;
    let p = &h_inv + &q * h_inv_g.transpose();
    Ok(ConstrainedBlocks { p, q, r: -m_inv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumResult {
    /// Nonincreasing, clamped at zero.
    pub eigenvalues: Vec<f64>,
    /// Number of eigenvalues above `RANK_TOL` times the largest.
    pub k: usize,
}

impl SpectrumResult {
    fn from_symmetric(m: DMatrix<f64>) -> Self {
        let mut ev: Vec<f64> = m.symmetric_eigen().eigenvalues.iter().map(|v| v.max(0.0)).collect();
        ev.sort_by(|a, b| b.total_cmp(a));
        let max = ev.first().copied().unwrap_or(0.0);
        let k = ev.iter().filter(|v| max > 0.0 && **v > RANK_TOL * max).count();
        Self { eigenvalues: ev, k }
    }

    /// The k retained eigenvalues.
    pub fn retained(&self) -> &[f64] {
        &self.eigenvalues[..self.k]
    }
}

/// Eigenvalues of J G*⁻¹ via the congruent form L⁻¹ J L⁻ᵀ with G* = LLᵀ.
pub fn simple_null_spectrum(j: &DMatrix<f64>, g_star: &DMatrix<f64>) -> Result<SpectrumResult> {
    cholesky(j, "J")?;
    let gc = cholesky(g_star, "G*")?;
    if j.shape() != g_star.shape() {
        return Err(Error::ShapeMismatch("J and G* differ in shape".into()));
    }
    let l = gc.l();
    let a = l
        .solve_lower_triangular(j)
        .ok_or(Error::NotPositiveDefinite("G*"))?;
    let b = l
        .solve_lower_triangular(&a.transpose())
        .ok_or(Error::NotPositiveDefinite("G*"))?;
    Ok(SpectrumResult::from_symmetric(symmetrize(&b)))
}

/// G Qᵀ G*⁻¹ Q Gᵀ, the p × p kernel shared by the composite-null spectra.
pub fn projection_kernel(g: &DMatrix<f64>, q: &DMatrix<f64>, g_star: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = g_star.nrows();
    if g.nrows() != p || q.nrows() != p || g.ncols() != q.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "G {:?}, Q {:?}, G* {:?}",
            g.shape(),
            q.shape(),
            g_star.shape()
        )));
    }
    let gc = cholesky(g_star, "G*")?;
    let gq = g * q.transpose();
    Ok(symmetrize(&(&gq * gc.solve(&gq.transpose()))))
}

/// Nonzero eigenvalues of M K, with M SPD and K symmetric PSD, computed as
/// eig(Lᵀ K L) where M = LLᵀ.
fn product_spectrum(m: &DMatrix<f64>, name: &'static str, kernel: &DMatrix<f64>) -> Result<SpectrumResult> {
    if m.shape() != kernel.shape() {
        return Err(Error::ShapeMismatch(format!("{name} and kernel differ in shape")));
    }
    let l = cholesky(m, name)?.l();
    Ok(SpectrumResult::from_symmetric(symmetrize(&(l.transpose() * kernel * &l))))
}

/// Eigenvalues of J G Qᵀ G*⁻¹ Q Gᵀ.
pub fn composite_null_spectrum(
    j: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    g_star: &DMatrix<f64>,
) -> Result<SpectrumResult> {
    product_spectrum(j, "J", &projection_kernel(g, q, g_star)?)
}

/// Eigenvalues of H G Qᵀ G*⁻¹ Q Gᵀ, the CLRT limit weights.
pub fn clrt_spectrum(
    h: &DMatrix<f64>,
    g: &DMatrix<f64>,
    q: &DMatrix<f64>,
    g_star: &DMatrix<f64>,
) -> Result<SpectrumResult> {
    product_spectrum(h, "H", &projection_kernel(g, q, g_star)?)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// 1 − Φ(√n/σ (φ''(1) c / (2n) − D)).
pub fn power_approx_simple(d_star: f64, sigma: f64, n: usize, c_alpha: f64, phi2: f64) -> Result<f64> {
    if !(sigma > 1e-12) || !sigma.is_finite() {
        return Err(Error::DegenerateAlternative(sigma));
    }
    let nf = n as f64;
    let z = nf.sqrt() / sigma * (phi2 * c_alpha / (2.0 * nf) - d_star);
    Ok(std_normal().sf(z))
}

/// σ_φ = √(qᵀ G*⁻¹ q) with q the gradient of D_φ(·, θ0) at θ*, by central
/// differences.
pub fn simple_power_sigma(
    model: &dyn CompositeModel,
    theta_star: &ParamVector,
    theta0: &ParamVector,
    family: &PhiFamily,
    method: DivergenceMethod,
    g_star: &DMatrix<f64>,
) -> Result<f64> {
    let p = theta_star.len();
    let mut q = DVector::zeros(p);
    let base = theta_star.as_slice().to_vec();
    for i in 0..p {
        let h = fd_step(base[i]);
        let mut up = base.clone();
        let mut dn = base.clone();
        up[i] += h;
        dn[i] -= h;
        let du = divergence(model, &ParamVector::new(up), theta0, family, method)?.value;
        let dd = divergence(model, &ParamVector::new(dn), theta0, family, method)?.value;
        q[i] = (du - dd) / (2.0 * h);
    }
    let gc = cholesky(g_star, "G*")?;
    Ok(q.dot(&gc.solve(&q)).max(0.0).sqrt())
}

/// σ² = tᵀG*⁻¹t + 2tᵀA₁₂s + sᵀΣs for caller-supplied blocks.
pub fn composite_power_sigma2(
    t: &DVector<f64>,
    s: &DVector<f64>,
    g_star: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    sigma: &DMatrix<f64>,
) -> Result<f64> {
    let gc = cholesky(g_star, "G*")?;
    Ok(t.dot(&gc.solve(t)) + 2.0 * t.dot(&(a12 * s)) + s.dot(&(sigma * s)))
}

/// 1 − Φ(√n/σ (φ2 c / (2n) − D)); pass `phi2 = 1` for the form without the
/// curvature factor.
pub fn power_approx_composite(d: f64, sigma2: f64, n: usize, c: f64, phi2: f64) -> Result<f64> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::DegenerateAlternative(sigma2));
    }
    power_approx_simple(d, sigma2.sqrt(), n, c, phi2)
}

/// Smallest n reaching power `target_pi`: floor(n*) + 1 with
/// n* = (A + B + √(A(A + 2B))) / (2D²), A = σ²(Φ⁻¹(1 − π))², B = cD.
pub fn sample_size(d: f64, sigma2: f64, c: f64, target_pi: f64) -> Result<u64> {
    if !(d > 0.0) {
        return Err(Error::NonPositiveDivergence(d));
    }
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::DegenerateAlternative(sigma2));
    }
    if !(target_pi > 0.0 && target_pi < 1.0) {
        return Err(Error::InvalidProbability(target_pi));
    }
    let z = std_normal().inverse_cdf(1.0 - target_pi);
    let a = sigma2 * z * z;
    let b = c * d;
    let n_star = (a + b + (a * (a + 2.0 * b)).sqrt()) / (2.0 * d * d);
    Ok(n_star.floor() as u64 + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::normal4::h_matrix;
    use proptest::prelude::*;

    fn spd(entries: &[f64], p: usize) -> DMatrix<f64> {
        let a = DMatrix::from_iterator(p, p, entries.iter().cloned());
        &a * a.transpose() + DMatrix::identity(p, p) * 0.5
    }

    #[test]
    fn godambe_trivial_cases() {
        let h = h_matrix(0.2).unwrap();
        let b = godambe(&h, &h).unwrap();
        assert!((b.g_star - &h).abs().max() < 1e-12);
        let b = godambe(&(DMatrix::identity(2, 2) * 2.0), &DMatrix::identity(2, 2)).unwrap();
        assert!((b.g_star - DMatrix::identity(2, 2) * 4.0).abs().max() < 1e-14);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(godambe(&bad, &DMatrix::identity(2, 2)), Err(Error::NotPositiveDefinite("H")));
    }

    #[test]
    fn identity_blocks() {
        let p = 4;
        let h = DMatrix::identity(p, p);
        let mut g = DMatrix::zeros(p, 1);
        g[(p - 1, 0)] = 1.0;
        let b = constrained_blocks(&h, &g).unwrap();
        assert_eq!(b.q, -&g);
        assert_eq!(b.p, DMatrix::identity(p, p) - &g * g.transpose());
        assert_eq!(b.r[(0, 0)], -1.0);
    }

    #[test]
    fn normal4_blocks_and_unit_spectrum() {
        let rho = 0.2f64;
        let h = h_matrix(rho).unwrap();
        let mut g = DMatrix::zeros(5, 1);
        g[(4, 0)] = 1.0;
        let b = constrained_blocks(&h, &g).unwrap();
        assert!((b.q[(4, 0)] + 1.0).abs() < 1e-14);
        assert!(b.q.rows(0, 4).amax() < 1e-14);
        assert!((g.transpose() * &b.p).amax() < 1e-14);
        let s = composite_null_spectrum(&h, &g, &b.q, &h).unwrap();
        assert_eq!(s.k, 1);
        assert!((s.eigenvalues[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rank_deficient_constraint() {
        let g = DMatrix::zeros(3, 1);
        assert_eq!(
            constrained_blocks(&DMatrix::identity(3, 3), &g),
            Err(Error::RankDeficientConstraint)
        );
    }

    #[test]
    fn scalar_spectrum() {
        let s = simple_null_spectrum(&(DMatrix::identity(3, 3) * 2.0), &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(s.eigenvalues, vec![2.0, 2.0, 2.0]);
        assert_eq!(s.k, 3);
    }

    #[test]
    fn power_and_sample_size_examples() {
        let c = 3.841459;
        let n = sample_size(0.01, 1.0, c, 0.8).unwrap();
        assert_eq!(n, 7463);
        // π = 1/2 leaves only the B term: n* = c / (2D).
        assert_eq!(sample_size(0.01, 1.0, c, 0.5).unwrap(), (c / 0.02).floor() as u64 + 1);
        let n = 150;
        let d = c / (2.0 * n as f64);
        assert!((power_approx_composite(d, 1.0, n, c, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((power_approx_simple(d, 0.3, n, c, 1.0).unwrap() - 0.5).abs() < 1e-15);
        assert!(power_approx_simple(0.01, 0.3, 10_000_000, c, 1.0).unwrap() > 1.0 - 1e-12);
        assert!(matches!(power_approx_simple(0.01, 0.0, 10, c, 1.0), Err(Error::DegenerateAlternative(_))));
        assert!(matches!(sample_size(0.0, 1.0, c, 0.8), Err(Error::NonPositiveDivergence(_))));
    }

    proptest! {
        #[test]
        fn congruent_spectrum_matches_raw_product(
            a in proptest::collection::vec(-1.0f64..1.0, 16),
            b in proptest::collection::vec(-1.0f64..1.0, 16),
        ) {
            let j = spd(&a, 4);
            let g = spd(&b, 4);
            let s = simple_null_spectrum(&j, &g).unwrap();
            let raw = &j * g.clone().try_inverse().unwrap();
            let mut ev: Vec<f64> = raw.complex_eigenvalues().iter().map(|z| z.re).collect();
            ev.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in s.eigenvalues.iter().zip(&ev) {
                prop_assert!((x - y).abs() < 1e-9 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn power_monotone_in_n(d in 1e-3f64..0.5, sigma in 0.1f64..3.0, n in 10usize..5000) {
            let c = 3.841459;
            let a = power_approx_simple(d, sigma, n, c, 1.0).unwrap();
            let b = power_approx_simple(d, sigma, n + 10, c, 1.0).unwrap();
            prop_assert!(b >= a - 1e-15);
        }
    }
}
