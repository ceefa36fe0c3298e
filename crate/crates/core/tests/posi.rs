use hrshift_core::design::{canonical_hrf, ChangePointSet, DesignSpec, ModelKind, OnsetSeries};
use hrshift_core::noise::{ar1_covariance, NoiseSpec};
use hrshift_core::posi::{
    approx_cd, conditional_sampler, natural_params, posi_analysis, PosiConfig, PosiProblem, VarianceMode,
};
use hrshift_core::seed::SeedStream;
use hrshift_core::select::{select_model, CandidateDesigns, CandidateSet};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};

const RHO: f64 = 0.2;

struct Scenario {
    y: Vec<f64>,
    designs: CandidateDesigns,
    onset_scans: Vec<usize>,
}

fn onsets() -> (OnsetSeries, Vec<usize>) {
    let scans: Vec<usize> = (0..40).map(|k| 3 + 4 * k).collect();
    (OnsetSeries::from_onsets("a", 170, &scans).unwrap(), scans)
}

fn ar1_noise(rng: &mut ChaCha8Rng, t: usize, rho: f64, sigma2: f64) -> Vec<f64> {
    let s = sigma2.sqrt();
    let mut out = Vec::with_capacity(t);
    let mut prev: f64 = s * rng.sample::<f64, _>(StandardNormal);
    out.push(prev);
    for _ in 1..t {
        prev = rho * prev + s * (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
        out.push(prev);
    }
    out
}

/// One condition, four candidate change points, truth at onset 20.
fn scenario(seed: u64, change: f64, candidates: &[usize]) -> Scenario {
    let (u, scans) = onsets();
    let basis = canonical_hrf(0.1, 30.0).unwrap();
    let configs: Vec<ChangePointSet> =
        candidates.iter().map(|&k| ChangePointSet::new().with("a", vec![scans[k]]).unwrap()).collect();
    let set = CandidateSet::new(configs).unwrap();
    let spec = DesignSpec::new(2.0, ModelKind::Cumulative);
    let designs = CandidateDesigns::build(&[u], &set, &basis, None, &spec).unwrap();
    let truth = designs.designs[0].matrix() * DVector::from_vec(vec![1.0, change, 0.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = ar1_noise(&mut rng, truth.len(), RHO, 1.0);
    let y = truth.iter().zip(&e).map(|(a, b)| a + b).collect();
    Scenario { y, designs, onset_scans: scans }
}

fn selected_problem(seed: u64, known: bool) -> PosiProblem {
    let s = scenario(seed, 0.8, &[20, 12, 26, 31]);
    let noise = NoiseSpec::ar1(RHO, 1.0, known);
    let sel = select_model(&s.y, &s.designs, &noise).unwrap();
    assert_eq!(s.onset_scans.len(), 40);
    PosiProblem::new(&s.y, &s.designs, sel.selected, 1, &noise).unwrap()
}

#[test]
fn natural_parametrization_matches_dense_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let t = rng.random_range(2..30);
        let p = rng.random_range(1..4);
        let rho: f64 = rng.random_range(-0.9..0.9);
        let sigma2: f64 = rng.random_range(0.2..3.0);
        let x = DMatrix::from_fn(t, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let zeta: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = (0..t).map(|_| rng.sample(StandardNormal)).collect();
        let view = natural_params(&x, &zeta, sigma2, rho, &y).unwrap();
        let cov = ar1_covariance(rho, t).unwrap() * sigma2;
        let chol = cov.clone().cholesky().unwrap();
        let r = DVector::from_vec(y) - &x * DVector::from_vec(zeta);
        let z = chol.l().solve_lower_triangular(&r).unwrap();
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let dense = -0.5 * (z.norm_squared() + log_det + t as f64 * (2.0 * std::f64::consts::PI).ln());
        let rel = (view.log_density() - dense).abs() / dense.abs().max(1.0);
        assert!(rel < 1e-10, "relative error {rel}");
    }
}

#[test]
fn single_candidate_cd_is_classical() {
    let s = scenario(3, 0.8, &[20]);
    let noise = NoiseSpec::ar1(RHO, 1.0, true);
    let pr = PosiProblem::new(&s.y, &s.designs, 0, 1, &noise).unwrap();
    let n = Normal::standard();
    for k in -4..=4 {
        let theta = pr.theta_ols + 0.7 * k as f64 * pr.se_ols;
        let classical = n.cdf((theta - pr.theta_ols) / pr.se_ols);
        assert!((pr.exact_cd(theta) - classical).abs() < 1e-9);
    }
    assert!((pr.exact_cd(pr.theta_ols) - 0.5).abs() < 1e-12);
}

#[test]
fn full_draws_respect_conditioning_and_selection() {
    for (known, seed) in [(true, 5), (false, 5), (true, 11)] {
        let pr = selected_problem(seed, known);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut agree = 0;
        let n = 300;
        for i in 0..n {
            let theta = pr.theta_ols + (i as f64 / n as f64 - 0.5) * 8.0 * pr.se_ols;
            let d = pr.draw_full(theta, &mut rng);
            assert!(d.max_constraint_deviation < 1e-6, "deviation {}", d.max_constraint_deviation);
            let u = (d.w - pr.w0) / pr.w_scale;
            if pr.accepts(u) == d.selected {
                agree += 1;
            }
        }
        assert_eq!(agree, n, "mode known={known}");
    }
}

#[test]
fn sampler_matches_truncated_normal_oracle() {
    for known in [true, false] {
        let pr = selected_problem(7, known);
        assert_eq!(pr.mode, if known { VarianceMode::Known } else { VarianceMode::Unknown });
        let d = 4000;
        for k in [-3.0, -1.0, 0.0, 1.5, 3.0] {
            let theta = pr.theta_ols + k * pr.se_ols;
            let out = conditional_sampler(&pr, theta, d, SeedStream::new(21)).unwrap();
            let exact = pr.exact_cd(theta);
            let tol = 4.0 * (exact * (1.0 - exact) / d as f64).sqrt() + 2e-3;
            assert!((out.cd(pr.w_obs) - exact).abs() < tol, "theta {theta}: {} vs {exact}", out.cd(pr.w_obs));
        }
    }
}

#[test]
fn exact_cd_is_nondecreasing() {
    let pr = selected_problem(13, true);
    let mut prev = 0.0;
    for k in -40..=40 {
        let c = pr.exact_cd(pr.theta_ols + 0.25 * k as f64 * pr.se_ols);
        assert!(c + 1e-12 >= prev);
        prev = c;
    }
}

#[test]
fn posi_variance_tracks_oracle_step_moments() {
    let pr = selected_problem(24, true);
    let out = posi_analysis(&pr, &PosiConfig { d: 2000, ..PosiConfig::default() }, SeedStream::new(4)).unwrap();
    assert!(out.failure.is_none(), "{:?}", out.failure);
    let cd = out.cd.as_ref().unwrap();
    let exact: Vec<f64> = cd.grid.iter().map(|&t| pr.exact_cd(t)).collect();
    let mut prev = 0.0;
    let (mut m1, mut m2) = (0.0, 0.0);
    for (t, c) in cd.grid.iter().zip(&exact) {
        m1 += t * (c - prev);
        m2 += t * t * (c - prev);
        prev = *c;
    }
    let oracle = m2 - m1 * m1;
    let v = out.variance.unwrap();
    assert!((v - oracle).abs() / oracle < 0.1, "{v} vs {oracle}");
    assert!(cd.c.windows(2).all(|w| w[0] <= w[1]));

    let again = posi_analysis(&pr, &PosiConfig { d: 2000, ..PosiConfig::default() }, SeedStream::new(4)).unwrap();
    assert_eq!(serde_json::to_string(&out).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn approx_cd_reports_infeasible_points() {
    let pr = selected_problem(19, true);
    let grid: Vec<f64> = (-2..=2).map(|k| pr.theta_ols + k as f64 * pr.se_ols).collect();
    let cd = approx_cd(&pr, &grid, 200, SeedStream::new(2)).unwrap();
    assert_eq!(cd.grid.len() + cd.infeasible.len(), grid.len());
    assert!(approx_cd(&pr, &[1.0, 0.0], 10, SeedStream::new(2)).is_err());
    assert!(approx_cd(&pr, &grid, 0, SeedStream::new(2)).is_err());
}

#[test]
fn cd_that_never_reaches_one_half_is_a_failure() {
    let pr = selected_problem(18, true);
    let out = posi_analysis(&pr, &PosiConfig { d: 2000, ..PosiConfig::default() }, SeedStream::new(4)).unwrap();
    assert!(out.fallback_used);
    assert!(out.is_failure());
    let cd = out.cd.as_ref().unwrap();
    assert!(cd.c.first().unwrap() >= &0.5 || cd.c.last().unwrap() < &0.5);
}
