//! End-to-end checks of the generic testing API on the normal4 model.

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;

use cldiv::normal4::{self, rho_hat, Normal4Sampler, RHO_INDEX};
use cldiv::sim::{dale_screen, DALE_EPSILON};
use cldiv::{
    clrt, composite_null_test, constrained_blocks, divergence, empirical_sensitivity, empirical_variability,
    estimate_rate, hphi_test, mcle, restricted_mcle, rng, simple_null_test, CompositeModel, ConstraintSpec,
    DivergenceMethod, EstimationOptions, EvaluationMethod, HFunction, JacobianMethod, Normal4, Normal4Params,
    NullHypothesis, ParamVector, PhiFamily, Sample, SimConfig, Statistic, SuffStats, TestOptions,
};

fn draw(rho: f64, n: usize, seed: u64) -> Sample {
    Normal4::new().sample(&[0.3, -0.2, 1.0, 0.0, rho], n, seed).unwrap()
}

fn fix_rho(rho0: f64) -> ConstraintSpec {
    ConstraintSpec::fix_coordinates(5, &[(RHO_INDEX, rho0)]).unwrap()
}

#[test]
fn generic_tests_agree_with_closed_forms() {
    let model = Normal4::new();
    let opts = TestOptions::default();
    for (seed, rho0) in [(1, 0.2), (2, -0.1), (3, 0.0)] {
        let sample = draw(rho0 + 0.05, 250, seed);
        let stats = SuffStats::from_sample(&sample).unwrap();
        let rh = rho_hat(&stats).rho;
        let c = fix_rho(rho0);

        let kl = composite_null_test(&model, &sample, &c, &PhiFamily::KullbackLeibler, &opts).unwrap();
        assert_relative_eq!(kl.statistic, normal4::renyi_stat(250, rh, rho0, 1.0).unwrap(), max_relative = 1e-6);
        assert_eq!(kl.spectrum.k, 1);

        let rev = composite_null_test(&model, &sample, &c, &PhiFamily::cressie_read(-1.0).unwrap(), &opts).unwrap();
        assert_relative_eq!(rev.statistic, normal4::renyi_stat(250, rh, rho0, 0.0).unwrap(), max_relative = 1e-6);

        for r in [0.5, 2.0] {
            let h = HFunction::renyi(r).unwrap();
            let fam = h.paired_phi().unwrap();
            let t = hphi_test(&model, &sample, &NullHypothesis::Composite(c.clone()), &h, &fam, &opts).unwrap();
            assert_relative_eq!(t.statistic, normal4::renyi_stat(250, rh, rho0, r).unwrap(), max_relative = 1e-6);
        }

        let lr = clrt(&model, &sample, &c, &opts).unwrap();
        assert_relative_eq!(lr.statistic, normal4::clrt_stat(250, &stats, rh, rho0).unwrap(), max_relative = 1e-6);
        assert!((lr.theta_null[RHO_INDEX] - rho0).abs() < 1e-10);
    }
}

#[test]
fn simple_null_has_five_unit_weights() {
    let model = Normal4::new();
    let sample = draw(0.1, 300, 9);
    let theta0 = ParamVector::new(vec![0.3, -0.2, 1.0, 0.0, 0.1]);
    let out = simple_null_test(&model, &sample, &theta0, &PhiFamily::KullbackLeibler, &TestOptions::default()).unwrap();
    assert_eq!(out.spectrum.k, 5);
    for w in out.spectrum.retained() {
        assert!((w - 1.0).abs() < 1e-10);
    }
    assert!((out.critical_value - 11.070497693516351).abs() < 1e-6);
    let a = out.adjusted.unwrap();
    assert!(a.t1 <= a.t2 + 1e-12);
}

#[test]
fn exact_variability_changes_the_simple_null_spectrum() {
    let model = Normal4::with_exact_variability();
    let sample = draw(0.2, 300, 4);
    let theta0 = ParamVector::new(vec![0.3, -0.2, 1.0, 0.0, 0.2]);
    let out = simple_null_test(&model, &sample, &theta0, &PhiFamily::KullbackLeibler, &TestOptions::default()).unwrap();
    assert_eq!(out.spectrum.k, 5);
    assert!(out.spectrum.eigenvalues[0] > 1.1);
    let a = out.adjusted.unwrap();
    assert!(a.t1 < a.t2);
    assert!(a.nu > 1.0);
}

#[test]
fn statistics_ignore_row_order_and_location() {
    let sample = draw(0.25, 200, 5);
    let shifted = Sample::from_rows(
        &sample
            .rows()
            .map(|r| r.iter().zip([3.0, -7.0, 0.5, 11.0]).map(|(a, b)| a + b).collect())
            .collect::<Vec<Vec<f64>>>(),
    )
    .unwrap();
    let mut order: Vec<usize> = (0..sample.n()).collect();
    order.shuffle(&mut rng::substream(17, 0));
    let permuted = sample.permuted(&order).unwrap();
    let base = SuffStats::from_sample(&sample).unwrap();
    for other in [&shifted, &permuted] {
        let s = SuffStats::from_sample(other).unwrap();
        let (a, b) = (rho_hat(&base).rho, rho_hat(&s).rho);
        assert!((a - b).abs() < 1e-12);
        for stat in [Statistic::Clrt, Statistic::CressieRead(-0.5), Statistic::CressieRead(1.5), Statistic::Renyi(0.5)] {
            let x = stat.evaluate(&base, a, 0.2).unwrap();
            let y = stat.evaluate(&s, b, 0.2).unwrap();
            assert!((x - y).abs() < 1e-9 * x.abs().max(1.0), "{stat}");
        }
    }
}

#[test]
fn kl_and_reverse_kl_swap_arguments() {
    for (rh, r0) in [(0.3, 0.2), (-0.15, 0.1), (0.0, 0.33)] {
        let a = normal4::renyi_stat(100, rh, r0, 0.0).unwrap();
        let b = normal4::renyi_stat(100, r0, rh, 1.0).unwrap();
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn restricted_estimator_tracks_projection_of_unrestricted() {
    let model = Normal4::new();
    let rho0 = 0.2;
    let theta = [0.3, -0.2, 1.0, 0.0, rho0];
    let h = normal4::h_matrix(rho0).unwrap();
    let mut g = DMatrix::zeros(5, 1);
    g[(RHO_INDEX, 0)] = 1.0;
    let q = constrained_blocks(&h, &g).unwrap().q;
    let proj = DMatrix::identity(5, 5) + &q * g.transpose();
    let opts = EstimationOptions::default();
    let median_residual = |n: usize| {
        let mut res: Vec<f64> = (0..60)
            .map(|r| {
                let s = model.sample(&theta, n, 1000 + r).unwrap();
                let init = ParamVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.0]);
                let full = mcle(&model, &s, &init, &opts).unwrap();
                let rest = restricted_mcle(&model, &s, &fix_rho(rho0), &full.theta_hat, &opts).unwrap();
                let dev = |t: &ParamVector| t.to_dvector() - nalgebra::DVector::from_column_slice(&theta);
                let lhs = dev(&rest.theta_hat) * (n as f64).sqrt();
                let rhs = &proj * dev(&full.theta_hat) * (n as f64).sqrt();
                (lhs - rhs).norm()
            })
            .collect();
        res.sort_by(f64::total_cmp);
        res[res.len() / 2]
    };
    // The mean estimates do not depend on ρ here, so the linearisation is exact
    // and only round-off remains at either n.
    for n in [100, 400] {
        let r = median_residual(n);
        assert!(r < 1e-8, "n = {n}: {r}");
    }
}

#[test]
fn empirical_h_and_j_agree_at_zero_correlation() {
    let model = Normal4::new();
    let theta = ParamVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.0]);
    let sample = model.sample(theta.as_slice(), 40_000, 3).unwrap();
    let h = empirical_sensitivity(&model, &theta, &sample, JacobianMethod::Auto).unwrap();
    let j = empirical_variability(&model, &theta, &sample, true).unwrap();
    assert!(!j.singular);
    // The ρρ entries carry most of the noise: their standard errors are near 0.02.
    assert!((h - j.matrix).amax() < 0.1);
}

#[test]
fn fd_and_analytic_sensitivity_agree_on_one_sample() {
    let model = Normal4::new();
    let theta = ParamVector::new(vec![0.1, 0.0, -0.1, 0.2, 0.15]);
    let sample = model.sample(theta.as_slice(), 10_000, 8).unwrap();
    let a = empirical_sensitivity(&model, &theta, &sample, JacobianMethod::Auto).unwrap();
    let f = empirical_sensitivity(&model, &theta, &sample, JacobianMethod::FiniteDifference).unwrap();
    assert!((a - f).amax() < 1e-4);
}

#[test]
fn h_and_exact_j_are_positive_definite_on_grid() {
    for i in 0..50 {
        let rho = -0.2 + (1.0 / 3.0 + 0.2) * (i as f64 + 0.5) / 50.0;
        assert!(normal4::h_matrix(rho).unwrap().cholesky().is_some(), "H at {rho}");
        assert!(normal4::variability_exact(rho).unwrap().cholesky().is_some(), "J at {rho}");
    }
}

#[test]
fn monte_carlo_error_shrinks_at_root_n() {
    let model = Normal4::new();
    let t1 = ParamVector::new(vec![0.1, 0.0, 0.0, 0.0, 0.3]);
    let t2 = ParamVector::new(vec![0.0, 0.0, 0.0, 0.0, 0.2]);
    let fam = PhiFamily::cressie_read(0.5).unwrap();
    let exact = divergence(&model, &t1, &t2, &fam, DivergenceMethod::ClosedForm).unwrap().value;
    let se = |n: usize| {
        let d = divergence(&model, &t1, &t2, &fam, DivergenceMethod::MonteCarlo { n_samples: n, seed: 5 }).unwrap();
        match d.method {
            EvaluationMethod::MonteCarlo { std_error, .. } => {
                assert!((d.value - exact).abs() < 4.0 * std_error);
                std_error
            }
            EvaluationMethod::ClosedForm => unreachable!("Monte Carlo requested"),
        }
    };
    let ratio = se(20_000) / se(80_000);
    assert!((ratio - 2.0).abs() < 0.3, "ratio {ratio}");
}

#[test]
fn null_levels_fall_in_dale_band() {
    let stats: Vec<Statistic> = [-1.0, -0.5, 0.0, 2.0 / 3.0, 1.0, 1.5].map(Statistic::CressieRead).to_vec();
    let rows = estimate_rate(&SimConfig::new(stats, 300, 0.2, 0.2, 10_000, 21)).unwrap();
    for r in rows {
        assert!(dale_screen(r.rate, 0.05, DALE_EPSILON).unwrap(), "{} rate {}", r.statistic, r.rate);
        assert_eq!(r.dale_pass, Some(true));
    }
}

#[test]
fn power_grows_with_n_and_levels_settle() {
    let kl = Statistic::CressieRead(0.0);
    let power: Vec<f64> = [100, 200, 300]
        .iter()
        .map(|&n| estimate_rate(&SimConfig::new(vec![kl], n, 0.2, 0.3, 4000, 3)).unwrap()[0].rate)
        .collect();
    assert!(power[0] < power[1] && power[1] < power[2], "{power:?}");

    let levels: Vec<(f64, f64)> = [50, 100, 200, 300]
        .iter()
        .map(|&n| {
            let r = &estimate_rate(&SimConfig::new(vec![kl], n, 0.0, 0.0, 10_000, 3)).unwrap()[0];
            (r.rate, r.se)
        })
        .collect();
    for w in levels.windows(2) {
        assert!(w[1].0 <= w[0].0 + 2.0 * w[0].1.hypot(w[1].1), "{levels:?}");
    }
}

#[test]
fn simulation_is_independent_of_thread_count() {
    let cfg = SimConfig::new(vec![Statistic::Clrt, Statistic::CressieRead(-0.5)], 100, -0.1, 0.0, 3000, 77);
    let many = estimate_rate(&cfg).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| estimate_rate(&cfg).unwrap());
    let four = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap()
        .install(|| estimate_rate(&cfg).unwrap());
    assert_eq!(many, single);
    assert_eq!(many, four);
}

#[test]
fn sampler_matches_population_moments() {
    let params = Normal4Params::new([1.0, 2.0, 3.0, 4.0], 0.3).unwrap();
    let s = Normal4Sampler::new(&params)
        .unwrap()
        .sample(200_000, &mut rng::substream(2, 0))
        .unwrap();
    let st = SuffStats::from_sample(&s).unwrap();
    for (m, want) in st.ybar.iter().zip([1.0, 2.0, 3.0, 4.0]) {
        assert!((m - want).abs() < 0.01);
    }
    assert!((st.v12 - 0.3).abs() < 0.01 && (st.v34 - 0.3).abs() < 0.01);
    let cross: f64 = s.rows().map(|r| (r[0] - st.ybar[0]) * (r[2] - st.ybar[2])).sum::<f64>() / s.n() as f64;
    assert!((cross - 0.6).abs() < 0.01);
}
