//! Monte Carlo checks of the samplers, losses and gradients against
//! quantities computed by hand.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use ssrecon_core::cs_linear::{cs_empirical_loss, CsDataset, CsReconstructor, CsSignalModel, CsTraining};
use ssrecon_core::cs_masks::{build_split, CsScheme};
use ssrecon_core::grad_variance::cs_empirical_risk_gradient;
use ssrecon_core::linear_denoise::{
    empirical_risk, n2n_sample_gradient, noisier2noise_population_estimator, risk_closed_form, risk_gradient,
    LinearEstimator, Target,
};
use ssrecon_core::rng;
use ssrecon_core::signal_model::{Dataset, SubspaceModel};

fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn assert_close(values: &[f64], expected: f64, what: &str) {
    let (mean, se) = mean_se(values);
    assert!((mean - expected).abs() < 4.0 * se, "{what}: {mean} vs {expected} (se {se})");
}

fn random_matrix(n: usize, scale: f64, seed: u64) -> DMatrix<f64> {
    let mut r = rng::stream(seed, 0);
    DMatrix::from_fn(n, n, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

#[test]
fn pair_moments_match_the_model() {
    let (sz, se) = (0.3, 0.5);
    let model = SubspaceModel::<f64>::random(20, 4, sz, se, 1).unwrap();
    let data = Dataset::generate(&model, 20_000, 2);
    let p = data.pairs();
    assert_close(&p.iter().map(|p| p.x.norm_squared()).collect::<Vec<_>>(), 1.0, "signal energy");
    assert_close(&p.iter().map(|p| p.input_noise().norm_squared()).collect::<Vec<_>>(), sz * sz, "input noise");
    assert_close(&p.iter().map(|p| p.target_noise().norm_squared()).collect::<Vec<_>>(), se * se, "target noise");
    assert_close(
        &p.iter().map(|p| p.input_noise().dot(&p.target_noise())).collect::<Vec<_>>(),
        0.0,
        "noise correlation",
    );
    let proj = model.projector();
    for pair in p.iter().take(50) {
        assert!((&proj * &pair.x - &pair.x).norm() < 1e-12, "signal leaves the subspace");
    }
}

#[test]
fn closed_form_risk_matches_sample_average() {
    let model = SubspaceModel::<f64>::random(16, 3, 0.4, 0.2, 3).unwrap();
    let w = LinearEstimator::new(random_matrix(16, 0.3, 4)).unwrap();
    let data = Dataset::generate(&model, 40_000, 5);
    let losses: Vec<f64> = data.pairs().iter().map(|p| (w.apply(&p.y) - &p.x).norm_squared()).collect();
    assert_close(&losses, risk_closed_form(&w, &model).unwrap(), "supervised risk");
    let (mean, _) = mean_se(&losses);
    assert!((empirical_risk(&w, &data, Target::Clean).unwrap() - mean).abs() < 1e-12);
    let noisy: Vec<f64> = data.pairs().iter().map(|p| (w.apply(&p.y) - &p.y_prime).norm_squared()).collect();
    assert_close(&noisy, risk_closed_form(&w, &model).unwrap() + 0.04, "noisy-target risk");
}

#[test]
fn noisy_target_gradient_is_unbiased() {
    let model = SubspaceModel::<f64>::random(8, 2, 0.3, 0.4, 6).unwrap();
    let w = LinearEstimator::new(random_matrix(8, 0.5, 7)).unwrap();
    let data = Dataset::generate(&model, 40_000, 8);
    let exact = risk_gradient(&w, &model).unwrap();
    let grads: Vec<DMatrix<f64>> = data.pairs().iter().map(|p| n2n_sample_gradient(&w, p).unwrap()).collect();
    let mut worst = 0.0f64;
    for i in 0..8 {
        for j in 0..8 {
            let entries: Vec<f64> = grads.iter().map(|g| g[(i, j)]).collect();
            let (mean, se) = mean_se(&entries);
            worst = worst.max((mean - exact[(i, j)]).abs() / se);
        }
    }
    assert!(worst < 4.5, "largest entry deviation {worst} standard errors");
}

#[test]
fn noisier2noise_estimator_is_the_regularized_regression() {
    let model = SubspaceModel::<f64>::random(12, 3, 0.5, 0.0, 9).unwrap();
    let extra = 0.7;
    let u = model.basis();
    let cov = u * u.transpose() / 3.0 + DMatrix::identity(12, 12) * (0.25 / 12.0);
    let ridge = DMatrix::identity(12, 12) * (extra * extra / 12.0);
    let oracle = &cov * (&cov + ridge).try_inverse().unwrap();
    let w = noisier2noise_population_estimator(&model, extra).unwrap();
    assert!((w.matrix() - oracle).norm() < 1e-12);
}

#[test]
fn injected_noise_integrates_to_a_ridge_penalty() {
    let n = 10;
    let extra: f64 = 0.8;
    let w = random_matrix(n, 0.4, 10);
    let y = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
    let mut r = rng::stream(11, 0);
    let scale = extra / (n as f64).sqrt();
    let losses: Vec<f64> = (0..40_000)
        .map(|_| {
            let z = DVector::from_fn(n, |_, _| scale * r.sample::<f64, _>(StandardNormal));
            (&w * (&y + z) - &y).norm_squared()
        })
        .collect();
    let expected = (&w * &y - &y).norm_squared() + extra * extra / n as f64 * w.norm_squared();
    assert_close(&losses, expected, "noisier2noise loss");
}

#[test]
fn splitter_marginals_are_uniform() {
    let scheme = CsScheme::<f64>::new(200, 0.08, 0.25, 0.4).unwrap();
    let c = scheme.counts().unwrap();
    let draws = 10_000;
    let mut input_hits = vec![0usize; 200];
    let mut target_hits = vec![0usize; 200];
    let mut center = Vec::new();
    for i in 0..draws {
        let split = build_split(&scheme, &mut rng::stream(12, i as u64)).unwrap();
        for j in 0..200 {
            input_hits[j] += usize::from(split.m_input[j]);
            target_hits[j] += usize::from(split.m_target[j]);
        }
        center = split.center;
    }
    let p_in = c.input_extra as f64 / c.non_center as f64;
    let q = scheme.q();
    let z = |hits: usize, p: f64| (hits as f64 / draws as f64 - p).abs() / (p * (1.0 - p) / draws as f64).sqrt();
    let (mut worst_in, mut worst_target) = (0.0f64, 0.0f64);
    for j in 0..200 {
        if center[j] {
            assert_eq!((input_hits[j], target_hits[j]), (draws, draws));
        } else {
            worst_in = worst_in.max(z(input_hits[j], p_in));
            worst_target = worst_target.max(z(target_hits[j], q));
        }
    }
    assert!(worst_in < 4.5 && worst_target < 4.5, "input {worst_in}, target {worst_target}");
}

#[test]
fn cs_gradient_matches_finite_differences() {
    let model = CsSignalModel::<f64>::random(24, 3, 13).unwrap();
    let scheme = CsScheme::new(24, 0.1, 0.3, 0.5).unwrap();
    let data = CsDataset::generate(&model, &scheme, 30, 14).unwrap();
    let mut r = rng::stream(15, 0);
    let spectral = DMatrix::from_fn(24, 24, |_, _| {
        Complex::new(0.2 * r.sample::<f64, _>(StandardNormal), 0.2 * r.sample::<f64, _>(StandardNormal))
    });
    let recon = CsReconstructor::from_spectral(spectral.clone()).unwrap();
    let grad = cs_empirical_risk_gradient(&recon, &data).unwrap();
    let h = 1e-4;
    let loss = |m: DMatrix<Complex<f64>>| {
        cs_empirical_loss(&CsReconstructor::from_spectral(m).unwrap(), &data, CsTraining::Supervised).unwrap()
    };
    for _ in 0..20 {
        let (i, j) = (r.random_range(0..24), r.random_range(0..24));
        for (step, part) in [(Complex::new(h, 0.0), grad[(i, j)].re), (Complex::new(0.0, h), grad[(i, j)].im)] {
            let mut plus = spectral.clone();
            plus[(i, j)] += step;
            let mut minus = spectral.clone();
            minus[(i, j)] -= step;
            let fd = (loss(plus) - loss(minus)) / (2.0 * h);
            assert!((fd - part).abs() < 1e-6 * part.abs().max(1e-3), "entry ({i},{j}): {fd} vs {part}");
        }
    }
}
