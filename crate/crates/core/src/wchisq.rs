//! Distribution of Q = Σ w_i Z_i² for independent standard normals.
//!
//! The CDF comes from Imhof's inversion of the characteristic function,
//!
//! P(Q > x) = 1/2 + (1/π) ∫₀^∞ sin θ(u) / (u ρ(u)) du,
//! θ(u) = ½ Σ atan(w_i u) − ½ x u,  ρ(u) = Π (1 + w_i² u²)^{1/4}.
//!
//! The oscillatory tail is integrated over half-periods of the x u / 2 phase
//! and the partial sums are accelerated with Wynn's epsilon algorithm.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng;

const MAX_INTERVALS: usize = 4000;
const MIN_INTERVALS: usize = 12;
const SUM_TOL: f64 = 1e-12;
const QUANTILE_TOL: f64 = 1e-9;

fn validate(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::EmptyWeights);
    }
    if let Some(&w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::NonPositiveWeight(w));
    }
    Ok(())
}

/// Common weight when all weights agree, so Q is a scaled χ².
fn common_weight(weights: &[f64]) -> Option<f64> {
    let w0 = weights[0];
    weights
        .iter()
        .all(|w| (w - w0).abs() <= 1e-12 * w0)
        .then_some(w0)
}

fn chisq(k: usize) -> ChiSquared {
    ChiSquared::new(k as f64).expect("positive degrees of freedom")
}

/// P(Σ w_i Z_i² ≤ x).
pub fn weighted_chisq_cdf(weights: &[f64], x: f64) -> Result<f64> {
    validate(weights)?;
    if x.is_nan() {
        return Err(Error::InvalidConfig("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if let Some(w) = common_weight(weights) {
        return Ok(chisq(weights.len()).cdf(x / w));
    }
    Ok((1.0 - imhof_upper(weights, x)).clamp(0.0, 1.0))
}

/// P(Σ w_i Z_i² > x).
pub fn weighted_chisq_sf(weights: &[f64], x: f64) -> Result<f64> {
    validate(weights)?;
    if x.is_nan() {
        return Err(Error::InvalidConfig("x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if let Some(w) = common_weight(weights) {
        return Ok(chisq(weights.len()).sf(x / w));
    }
    Ok(imhof_upper(weights, x).clamp(0.0, 1.0))
}

/// Smallest x with CDF(x) ≥ p, located by bisection.
pub fn weighted_chisq_quantile(weights: &[f64], p: f64) -> Result<f64> {
    validate(weights)?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    if let Some(w) = common_weight(weights) {
        return Ok(w * chisq(weights.len()).inverse_cdf(p));
    }
    let mean: f64 = weights.iter().sum();
    let sd = (2.0 * weights.iter().map(|w| w * w).sum::<f64>()).sqrt();
    let mut lo = 0.0;
    let mut hi = mean + 4.0 * sd;
    while weighted_chisq_cdf(weights, hi)? < p {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > QUANTILE_TOL * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if weighted_chisq_cdf(weights, mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Monte Carlo estimate of the CDF, kept for validation.
pub fn weighted_chisq_cdf_mc(weights: &[f64], x: f64, draws: usize, seed: u64) -> Result<f64> {
    validate(weights)?;
    if draws == 0 {
        return Err(Error::TooFewObservations { needed: 1, got: 0 });
    }
    let mut rng = rng::substream(seed, 0);
    let below = (0..draws)
        .filter(|_| {
            let q: f64 = weights
                .iter()
                .map(|w| {
                    let z: f64 = rng.sample(StandardNormal);
                    w * z * z
                })
                .sum();
            q <= x
        })
        .count();
    Ok(below as f64 / draws as f64)
}

fn integrand(weights: &[f64], x: f64, u: f64) -> f64 {
    if u == 0.0 {
        return 0.5 * (weights.iter().sum::<f64>() - x);
    }
    let mut theta = -0.5 * x * u;
    let mut log_rho = 0.0;
    for w in weights {
        let wu = w * u;
        theta += 0.5 * wu.atan();
        log_rho += 0.25 * (wu * wu).ln_1p();
    }
    theta.sin() / (u * log_rho.exp())
}

fn imhof_upper(weights: &[f64], x: f64) -> f64 {
    let f = |u: f64| integrand(weights, x, u);
    let wmax = weights.iter().cloned().fold(0.0, f64::max);
    // Half-period of the phase x u / 2, but never coarser than the scale on
    // which the atan terms move.
    let h = (2.0 * std::f64::consts::PI / x).min(8.0 / wmax.max(1e-300));
    let mut wynn = Wynn::default();
    let mut partial = 0.0;
    let mut last_estimate = f64::NAN;
    let mut stable = 0;
    for j in 0..MAX_INTERVALS {
        let a = j as f64 * h;
        let term = adaptive_gk(&f, a, a + h, 1e-14, 30);
        partial += term;
        let estimate = wynn.push(partial);
        if j >= MIN_INTERVALS {
            if (estimate - last_estimate).abs() < SUM_TOL || term.abs() < 1e-15 {
                stable += 1;
                if stable >= 3 {
                    return 0.5 + estimate / std::f64::consts::PI;
                }
            } else {
                stable = 0;
            }
        }
        last_estimate = estimate;
    }
    0.5 + last_estimate / std::f64::consts::PI
}

/// Wynn epsilon extrapolation of a sequence of partial sums.
///
/// Keeps only the latest ascending diagonal of the epsilon table.
#[derive(Default)]
struct Wynn {
    diagonal: Vec<f64>,
}

impl Wynn {
    const MAX_DEPTH: usize = 30;

    fn push(&mut self, s: f64) -> f64 {
        let prev = std::mem::take(&mut self.diagonal);
        let mut cur = Vec::with_capacity(prev.len() + 1);
        cur.push(s);
        for k in 1..=prev.len().min(Self::MAX_DEPTH) {
            let diff = cur[k - 1] - prev[k - 1];
            if diff == 0.0 || !diff.is_finite() {
                break;
            }
            let before = if k >= 2 { prev[k - 2] } else { 0.0 };
            let next = before + 1.0 / diff;
            if !next.is_finite() {
                break;
            }
            cur.push(next);
        }
        let best_even = (cur.len() - 1) & !1;
        let estimate = cur[best_even];
        self.diagonal = cur;
        estimate
    }
}

const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const G_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let r = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = r * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += G_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * r, ((kronrod - gauss) * r).abs())
}

fn adaptive_gk(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let (v, err) = gk15(f, a, b);
    if err <= tol || depth == 0 {
        return v;
    }
    let m = 0.5 * (a + b);
    adaptive_gk(f, a, m, 0.5 * tol, depth - 1) + adaptive_gk(f, m, b, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// CDF of w1 Z1² + w2 Z2² by direct 1-D integration of the χ²₁ density.
    fn two_weight_oracle(w1: f64, w2: f64, x: f64) -> f64 {
        // P(w1 A + w2 B ≤ x) = ∫₀^{x/w1} f_A(a) F_B((x − w1 a)/w2) da, with a = t²
        // substituted to remove the endpoint singularity.
        let chi1 = ChiSquared::new(1.0).unwrap();
        let upper = (x / w1).sqrt();
        let n = 20000;
        let h = upper / n as f64;
        let g = |t: f64| {
            let a = t * t;
            // density of χ²₁ at a times da/dt = 2t
            let dens = (-a / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt() * 2.0;
            dens * chi1.cdf((x - w1 * a).max(0.0) / w2)
        };
        let mut s = g(0.0) + g(upper);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
        }
        s * h / 3.0
    }

    #[test]
    fn chi_square_reference_points() {
        assert!((weighted_chisq_cdf(&[1.0], 3.841459).unwrap() - 0.95).abs() < 1e-6);
        assert!((weighted_chisq_cdf(&[1.0, 1.0], 5.991465).unwrap() - 0.95).abs() < 1e-6);
        let x = 2.7;
        let scaled = ChiSquared::new(1.0).unwrap().cdf(x / 2.0);
        assert!((weighted_chisq_cdf(&[2.0], x).unwrap() - scaled).abs() < 1e-14);
    }

    #[test]
    fn imhof_matches_equal_weight_closed_form() {
        // Nearly equal weights go through the inversion path.
        for x in [0.5, 2.0, 5.991465, 12.0] {
            let imhof = 1.0 - imhof_upper(&[1.0, 1.0 + 1e-9], x);
            let exact = 1.0 - (-x / 2.0f64).exp();
            assert!((imhof - exact).abs() < 1e-7, "x {x}: {imhof} vs {exact}");
        }
        for x in [0.3, 3.841459, 9.0] {
            let imhof = 1.0 - imhof_upper(&[1.0, 1.0 + 1e-9, 1.0 - 1e-9], x);
            let exact = ChiSquared::new(3.0).unwrap().cdf(x);
            assert!((imhof - exact).abs() < 1e-7, "x {x}");
        }
    }

    #[test]
    fn imhof_matches_two_weight_oracle() {
        for (w1, w2) in [(0.5, 2.5), (1.0, 3.0), (0.334, 1.664)] {
            for x in [0.2, 1.0, 4.0, 10.0] {
                let got = weighted_chisq_cdf(&[w1, w2], x).unwrap();
                let want = two_weight_oracle(w1, w2, x);
                assert!((got - want).abs() < 1e-6, "({w1},{w2}) x={x}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn quantile_round_trip() {
        let w = [0.5, 1.0, 2.5];
        for p in [0.05, 0.5, 0.9, 0.95, 0.99] {
            let q = weighted_chisq_quantile(&w, p).unwrap();
            assert!((weighted_chisq_cdf(&w, q).unwrap() - p).abs() < 1e-8);
        }
        assert!((weighted_chisq_quantile(&[1.0], 0.95).unwrap() - 3.841459).abs() < 1e-6);
    }

    #[test]
    fn invalid_inputs() {
        assert_eq!(weighted_chisq_cdf(&[], 1.0), Err(Error::EmptyWeights));
        assert_eq!(weighted_chisq_cdf(&[1.0, -1.0], 1.0), Err(Error::NonPositiveWeight(-1.0)));
        assert_eq!(weighted_chisq_cdf(&[1.0, 0.0], 1.0), Err(Error::NonPositiveWeight(0.0)));
        assert!(weighted_chisq_quantile(&[1.0], 1.0).is_err());
    }

    #[test]
    fn tails() {
        let w = [0.5, 1.0, 2.5];
        assert_eq!(weighted_chisq_cdf(&w, -1.0).unwrap(), 0.0);
        assert_eq!(weighted_chisq_cdf(&w, f64::INFINITY).unwrap(), 1.0);
        assert!(weighted_chisq_cdf(&w, 1e-6).unwrap() < 1e-6);
        assert!(weighted_chisq_cdf(&w, 200.0).unwrap() > 1.0 - 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn cdf_nondecreasing(w in proptest::collection::vec(0.1f64..4.0, 1..5), x in 0.0f64..30.0, dx in 0.01f64..3.0) {
            let lo = weighted_chisq_cdf(&w, x).unwrap();
            let hi = weighted_chisq_cdf(&w, x + dx).unwrap();
            prop_assert!(hi >= lo - 1e-9);
            prop_assert!((0.0..=1.0).contains(&lo));
        }
    }
}
