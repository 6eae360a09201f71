mod common;

use exposure_dynamics::curve::empirical_curve;
use exposure_dynamics::dynamics::peak;
use exposure_dynamics::exposure_log::sessionize;
use exposure_dynamics::probit::{
    fit_probit, fit_probit_traced, log_likelihood, normal, score_and_information, std_normal_cdf,
    FitConfig, ProbitData, ROUNDOFF_SLACK,
};
use exposure_dynamics::simgen::{self, LatentModel, SimConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

const REFERENCE_BETA: [f64; 3] = [0.7952, 0.0048, -0.0002];

/// Φ(z) at z = −8, −7.75, …, 8, from 40-digit arithmetic, rounded to f64.
const CDF_TABLE: [(f64, f64); 65] = [
    (-8.0, 6.220960574271784e-16),
    (-7.75, 4.5946274357785954e-15),
    (-7.5, 3.1908916729108963e-14),
    (-7.25, 2.0838581586720695e-13),
    (-7.0, 1.279812543885835e-12),
    (-6.75, 7.392257778017822e-12),
    (-6.5, 4.016000583859118e-11),
    (-6.25, 2.0522634252189388e-10),
    (-6.0, 9.86587645037698e-10),
    (-5.75, 4.462172453901612e-09),
    (-5.5, 1.8989562465887718e-08),
    (-5.25, 7.604960516488715e-08),
    (-5.0, 2.866515718791939e-07),
    (-4.75, 1.0170832425687032e-06),
    (-4.5, 3.3976731247300603e-06),
    (-4.25, 1.068852577493442e-05),
    (-4.0, 3.1671241833119924e-05),
    (-3.75, 8.841728520080387e-05),
    (-3.5, 0.00023262907903552504),
    (-3.25, 0.000577025042390767),
    (-3.0, 0.0013498980316300946),
    (-2.75, 0.002979763235054557),
    (-2.5, 0.006209665325776135),
    (-2.25, 0.012224472655044703),
    (-2.0, 0.02275013194817921),
    (-1.75, 0.04005915686381709),
    (-1.5, 0.06680720126885807),
    (-1.25, 0.10564977366685525),
    (-1.0, 0.15865525393145705),
    (-0.75, 0.2266273523768682),
    (-0.5, 0.3085375387259869),
    (-0.25, 0.4012936743170763),
    (0.0, 0.5),
    (0.25, 0.5987063256829237),
    (0.5, 0.6914624612740131),
    (0.75, 0.7733726476231318),
    (1.0, 0.8413447460685429),
    (1.25, 0.8943502263331448),
    (1.5, 0.9331927987311419),
    (1.75, 0.9599408431361829),
    (2.0, 0.9772498680518208),
    (2.25, 0.9877755273449553),
    (2.5, 0.9937903346742238),
    (2.75, 0.9970202367649454),
    (3.0, 0.9986501019683699),
    (3.25, 0.9994229749576092),
    (3.5, 0.9997673709209645),
    (3.75, 0.9999115827147992),
    (4.0, 0.9999683287581669),
    (4.25, 0.9999893114742251),
    (4.5, 0.9999966023268753),
    (4.75, 0.9999989829167575),
    (5.0, 0.9999997133484281),
    (5.25, 0.9999999239503948),
    (5.5, 0.9999999810104375),
    (5.75, 0.9999999955378276),
    (6.0, 0.9999999990134123),
    (6.25, 0.9999999997947736),
    (6.5, 0.99999999995984),
    (6.75, 0.9999999999926077),
    (7.0, 0.9999999999987201),
    (7.25, 0.9999999999997916),
    (7.5, 0.9999999999999681),
    (7.75, 0.9999999999999954),
    (8.0, 0.9999999999999993),
];

#[test]
fn cdf_matches_high_precision_table() {
    for (z, expected) in CDF_TABLE {
        let ours = std_normal_cdf(z).unwrap();
        assert!(
            (ours - expected).abs() <= 1e-12,
            "z = {z}: {ours} vs {expected}"
        );
    }
}

#[test]
fn cdf_agrees_with_statrs() {
    // statrs carries errors up to ~1e-11 of its own, so this is only a coarse cross-check
    for i in 0..=1600 {
        let z = -8.0 + i as f64 / 100.0;
        let ours = std_normal_cdf(z).unwrap();
        let theirs = common::oracle_cdf(z);
        assert!(
            (ours - theirs).abs() <= 1e-10,
            "z = {z}: {ours} vs {theirs}"
        );
    }
    // 40-digit reference: Φ(1.959964) = 0.9750000009035575...
    assert!((std_normal_cdf(1.959964).unwrap() - 0.975_000_000_903_557_6).abs() <= 1e-12);
}

#[test]
fn cdf_is_monotone() {
    let mut prev = 0.0;
    for i in 0..=20_000 {
        let z = -10.0 + i as f64 / 1000.0;
        let p = std_normal_cdf(z).unwrap();
        assert!(p >= prev, "{z}");
        prev = p;
    }
}

#[test]
fn log_cdf_tail_against_asymptotic_reference() {
    // log Φ(z) ≈ log φ(z) − log(−z) for very negative z; relative gap shrinks like 1/z²
    for z in [-35.0, -50.0, -200.0] {
        let crude = normal::log_pdf(z) - (-z).ln();
        let rel = (normal::log_cdf(z) - crude).abs() / crude.abs();
        assert!(rel < 1.0 / (z * z), "{z}: {rel}");
    }
}

#[test]
fn likelihood_matches_naive_formula() {
    let mut rng = common::rng(10);
    for _ in 0..50 {
        let truth = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.002..0.002),
        ];
        let n = rng.random_range(10..300);
        let obs = common::probit_sample(&mut rng, truth, n, 1, 40);
        let beta = [
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.002..0.002),
        ];
        let ours = log_likelihood(&beta, &common::data(&obs));
        let naive = common::naive_log_likelihood(&beta, &obs);
        assert!(
            (ours - naive).abs() <= 1e-10 * naive.abs(),
            "{ours} vs {naive}"
        );
    }
}

#[test]
fn likelihood_finite_for_extreme_latents() {
    let data = ProbitData::from_observations([(1.0, true), (2.0, false)]).unwrap();
    for b0 in [-30.0, 30.0, -100.0, 1e4] {
        assert!(log_likelihood(&[b0, 0.0, 0.0], &data).is_finite());
    }
}

#[test]
fn gradient_matches_scaled_differences_over_full_range() {
    let mut rng = common::rng(11);
    for _ in 0..100 {
        let truth = [
            rng.random_range(-1.0..1.5),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.002..0.002),
        ];
        let obs = common::probit_sample(&mut rng, truth, 300, 2, 40);
        let data = common::data(&obs);
        let beta = [
            rng.random_range(-1.0..1.5),
            rng.random_range(-0.05..0.05),
            rng.random_range(-0.002..0.002),
        ];
        let (grad, _) = score_and_information(&beta, &data);
        let fd = common::fd_gradient(
            |b| log_likelihood(b, &data),
            &beta,
            [1e-5, 1e-5 / 40.0, 1e-5 / 1600.0],
        );
        let err = [grad[0] - fd[0], grad[1] - fd[1], grad[2] - fd[2]];
        assert!(
            common::norm(&err) <= 1e-6 * common::norm(&grad),
            "{grad:?} vs {fd:?}"
        );
    }
}

#[test]
fn hessian_matches_differenced_gradient() {
    let mut rng = common::rng(12);
    let obs = common::probit_sample(&mut rng, REFERENCE_BETA, 400, 2, 40);
    let data = common::data(&obs);
    let beta = [0.6, 0.01, -0.0003];
    let (_, hess) = score_and_information(&beta, &data);
    let steps = [1e-6, 1e-6 / 40.0, 1e-6 / 1600.0];
    for j in 0..3 {
        let (mut p, mut m) = (beta, beta);
        p[j] += steps[j];
        m[j] -= steps[j];
        let (gp, _) = score_and_information(&p, &data);
        let (gm, _) = score_and_information(&m, &data);
        for i in 0..3 {
            let fd = (gp[i] - gm[i]) / (2.0 * steps[j]);
            assert!(
                (fd - hess[i][j]).abs() <= 1e-5 * hess[i][j].abs(),
                "({i},{j}) {fd} vs {}",
                hess[i][j]
            );
        }
    }
}

fn small_sim(seed: u64, beta: [f64; 3], users: u64) -> ProbitData {
    let config = SimConfig::single_track(users, 40, LatentModel::QuadraticLatent { beta }, seed);
    let store = sessionize(simgen::records(&config).unwrap(), 40, 30.0).unwrap();
    ProbitData::from_store(&store, 2, 40).unwrap()
}

#[test]
fn recovers_generating_coefficients() {
    let data = small_sim(21, REFERENCE_BETA, 20_000);
    let fit = fit_probit(&data, &FitConfig::default()).unwrap();
    assert!(fit.converged);
    for i in 0..3 {
        assert!(
            (fit.beta[i] - REFERENCE_BETA[i]).abs() <= 3.0 * fit.standard_errors[i],
            "coef {i}: {:?}",
            fit
        );
    }
    assert!(fit.gradient_norm <= 1e-8 * fit.n_obs as f64);
}

#[test]
fn null_latent_gives_insignificant_terms() {
    let runs = 200;
    let mut insignificant = [0; 3];
    let mut intercept_ok = 0;
    for seed in 0..runs {
        let fit = fit_probit(&small_sim(500 + seed, [0.0; 3], 200), &FitConfig::default()).unwrap();
        intercept_ok += (fit.beta[0].abs() <= 3.0 * fit.standard_errors[0]) as usize;
        for i in 1..3 {
            insignificant[i] += (fit.p_values[i] >= 0.05) as usize;
        }
    }
    assert!(intercept_ok as f64 >= 0.99 * runs as f64, "{intercept_ok}");
    assert!(
        insignificant[1] as f64 >= 0.9 * runs as f64,
        "{insignificant:?}"
    );
    assert!(
        insignificant[2] as f64 >= 0.9 * runs as f64,
        "{insignificant:?}"
    );
}

#[test]
fn beats_grid_on_small_dataset() {
    let mut rng = common::rng(30);
    let obs = common::probit_sample(&mut rng, [0.4, 0.03, -0.001], 500, 2, 40);
    let fit = fit_probit(&common::data(&obs), &FitConfig::default()).unwrap();
    let (grid, _) = common::grid_maximum(&common::group(&obs));
    assert!(common::naive_log_likelihood(&fit.beta, &obs) >= grid - 1e-6);
}

#[test]
fn iterates_never_lose_likelihood() {
    for seed in 0..20 {
        let mut rng = common::rng(40 + seed);
        let obs = common::probit_sample(&mut rng, [1.5, -0.2, 0.004], 300, 2, 40);
        let (fit, trace) = fit_probit_traced(&common::data(&obs), &FitConfig::default()).unwrap();
        assert!(
            trace
                .windows(2)
                .all(|w| w[1] >= w[0] - ROUNDOFF_SLACK * w[0].abs()),
            "{trace:?}"
        );
        assert_eq!(trace.len(), fit.iterations + 1);
        assert_eq!(*trace.last().unwrap(), fit.log_likelihood);
    }
}

#[test]
fn grouped_and_per_event_fits_agree() {
    let config = SimConfig::single_track(
        500,
        40,
        LatentModel::QuadraticLatent {
            beta: REFERENCE_BETA,
        },
        50,
    );
    let store = sessionize(simgen::records(&config).unwrap(), 40, 30.0).unwrap();
    let curve = empirical_curve(&store, 2, 40, 0.95).unwrap();
    let grouped = ProbitData::from_curve(&curve).unwrap();
    let per_event = ProbitData::from_observations(
        store
            .sequences()
            .iter()
            .flat_map(|s| s.events.iter())
            .filter(|e| e.exposure_index >= 2)
            .map(|e| (e.exposure_index as f64, e.listened)),
    )
    .unwrap();
    let a = fit_probit(&grouped, &FitConfig::default()).unwrap();
    let b = fit_probit(&per_event, &FitConfig::default()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn permutation_leaves_fit_unchanged() {
    let mut rng = common::rng(60);
    let mut obs = common::probit_sample(&mut rng, [0.5, 0.02, -0.0008], 1000, 2, 40);
    let base = fit_probit(&common::data(&obs), &FitConfig::default()).unwrap();
    for _ in 0..5 {
        obs.shuffle(&mut rng);
        let fit = fit_probit(&common::data(&obs), &FitConfig::default()).unwrap();
        for i in 0..3 {
            assert!((fit.beta[i] - base.beta[i]).abs() <= 1e-12);
            assert!((fit.standard_errors[i] - base.standard_errors[i]).abs() <= 1e-12);
        }
        assert!(
            (fit.log_likelihood - base.log_likelihood).abs() <= 1e-12 * base.log_likelihood.abs()
        );
    }
}

#[test]
fn recentring_preserves_probabilities_and_peak() {
    let data = small_sim(70, REFERENCE_BETA, 5000);
    let fit = fit_probit(&data, &FitConfig::default()).unwrap();
    let (p0, _) = peak(&fit).unwrap();
    for c in [10.0, 21.0, -5.0] {
        let shifted = fit_probit(&data.shifted(c), &FitConfig::default()).unwrap();
        for x in 2..=40 {
            let x = x as f64;
            assert!((fit.probability(x) - shifted.probability(x - c)).abs() <= 1e-6);
        }
        let (p1, _) = peak(&shifted).unwrap();
        assert!((p1 + c - p0).abs() <= 1e-6, "{p0} vs {}", p1 + c);
    }
}

#[test]
fn non_convergence_is_flagged() {
    let data = small_sim(80, REFERENCE_BETA, 2000);
    let cfg = FitConfig {
        max_iter: 1,
        ..FitConfig::default()
    };
    let fit = fit_probit(&data, &cfg).unwrap();
    assert!(!fit.converged);
    assert_eq!(fit.iterations, 1);
    assert!(!fit.warnings.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn likelihood_is_concave_along_segments(
        seed in 0u64..1000,
        a in prop::array::uniform3(-1.0f64..1.0),
        b in prop::array::uniform3(-1.0f64..1.0),
    ) {
        let mut rng = common::rng(seed);
        let obs = common::probit_sample(&mut rng, [0.3, 0.01, -0.0005], 200, 2, 40);
        let data = common::data(&obs);
        let scale = [1.0, 0.1, 0.003];
        let a = [a[0] * scale[0], a[1] * scale[1], a[2] * scale[2]];
        let b = [b[0] * scale[0], b[1] * scale[1], b[2] * scale[2]];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0];
        let (la, lb, lm) = (log_likelihood(&a, &data), log_likelihood(&b, &data), log_likelihood(&mid, &data));
        prop_assert!(lm >= (la + lb) / 2.0 - 1e-9 * lm.abs());
    }

    #[test]
    fn converged_fits_have_small_gradient(seed in 0u64..10_000) {
        let mut rng = common::rng(seed);
        let truth = [rng.random_range(-0.5..1.0), rng.random_range(-0.05..0.05), rng.random_range(-0.001..0.001)];
        let obs = common::probit_sample(&mut rng, truth, 400, 2, 40);
        if let Ok(fit) = fit_probit(&common::data(&obs), &FitConfig::default()) {
            if fit.converged {
                let (grad, _) = score_and_information(&fit.beta, &common::data(&obs));
                prop_assert!(common::norm(&grad) <= 1e-8 * fit.n_obs as f64);
                prop_assert!(fit.standard_errors.iter().all(|s| *s >= 0.0));
            }
        }
    }
}
