//! Self-checks of the library's identities, run by `ssrecon-lab verify`.

use nalgebra::{Complex, DMatrix};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cs_masks::{build_split, prop2_exact_check, CsScheme};
use crate::dft::UnitaryDft;
use crate::error::Result;
use crate::linear_denoise::{n2n_sample_gradient, optimal_estimator, risk_closed_form, risk_gradient, LinearEstimator};
use crate::rng::{self, derive_seed, tag};
use crate::signal_model::{Dataset, SubspaceModel};
use crate::training::{sgm_single_pass, theorem1_bound, BoundConstants, SgmSchedule, SlopeReading};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome { name, passed, detail }
}

fn gaussian_matrix<R: Rng>(n: usize, scale: f64, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn reference_model(sigma_e: f64, seed: u64) -> Result<SubspaceModel<f64>> {
    SubspaceModel::random(100, 10, 0.1, sigma_e, derive_seed(seed, tag::BASIS))
}

/// Runs every check. `fast` shrinks the Monte Carlo sizes roughly tenfold.
pub fn run_verification(fast: bool, seed: u64) -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        target_noise_shift(fast, seed)?,
        masked_loss_identity(seed)?,
        gradient_checks(seed)?,
        risk_decomposition(seed)?,
        bound_domination(fast, seed)?,
        splitter_overlap(fast, seed)?,
    ])
}

/// Noisy targets shift the mean loss by the target noise energy.
fn target_noise_shift(fast: bool, seed: u64) -> Result<CheckOutcome> {
    let pairs = if fast { 100_000 } else { 1_000_000 };
    let estimators = if fast { 3 } else { 10 };
    let mut worst = 0.0f64;
    let mut rng = rng::stream(derive_seed(seed, tag::MONTE_CARLO), 0);
    for sigma_e in [0.1, 0.2] {
        let model = reference_model(sigma_e, seed)?;
        for k in 0..estimators {
            let w = gaussian_matrix(100, 0.1, &mut rng) + optimal_estimator(&model).matrix();
            let data_seed = derive_seed(seed, 1000 + k as u64);
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for i in 0..pairs {
                let p = model.sample_pair(&mut rng::stream(data_seed, i as u64));
                let fy = &w * &p.y;
                let diff = (&fy - &p.y_prime).norm_squared() - (&fy - &p.x).norm_squared();
                sum += diff;
                sum_sq += diff * diff;
            }
            let n = pairs as f64;
            let mean = sum / n;
            let se = ((sum_sq / n - mean * mean) * n / (n - 1.0) / n).sqrt();
            worst = worst.max((mean - sigma_e * sigma_e).abs() / se);
        }
    }
    Ok(outcome("noisy-target shift", worst < 3.0, format!("worst deviation {worst:.2} standard errors")))
}

/// Exact expectation of the weighted masked loss equals the image-domain error.
fn masked_loss_identity(seed: u64) -> Result<CheckOutcome> {
    let dft = UnitaryDft::<f64>::new(64)?;
    let center = crate::cs_masks::center_indices(64, 8);
    let mut rng = rng::stream(derive_seed(seed, tag::MASKS), 0);
    let mut worst = 0.0f64;
    for q in [0.1, 0.3, 0.5] {
        let probs: Vec<f64> = (0..64).map(|j| if center.contains(&j) { 1.0 } else { q }).collect();
        for _ in 0..100 {
            let mut draw = || Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
            let a: Vec<_> = (0..64).map(|_| draw()).collect();
            let x: Vec<_> = (0..64).map(|_| draw()).collect();
            worst = worst.max(prop2_exact_check(&a, &x, &probs, &dft)?);
        }
    }
    Ok(outcome("masked-loss identity", worst < 1e-10, format!("largest residual {worst:.3e}")))
}

/// Analytic gradients against central finite differences.
fn gradient_checks(seed: u64) -> Result<CheckOutcome> {
    let model = reference_model(0.1, seed)?;
    let mut rng = rng::stream(derive_seed(seed, tag::MONTE_CARLO), 1);
    let w = LinearEstimator::new(gaussian_matrix(100, 0.1, &mut rng))?;
    let pair = model.sample_pair(&mut rng);
    let risk_grad = risk_gradient(&w, &model)?;
    let sample_grad = n2n_sample_gradient(&w, &pair)?;
    let h = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (i, j) = (rng.random_range(0..100), rng.random_range(0..100));
        let shifted = |delta: f64| {
            let mut m = w.matrix().clone();
            m[(i, j)] += delta;
            LinearEstimator::new(m).expect("square")
        };
        let (plus, minus) = (shifted(h), shifted(-h));
        let fd_risk = (risk_closed_form(&plus, &model)? - risk_closed_form(&minus, &model)?) / (2.0 * h);
        let loss = |e: &LinearEstimator<f64>| (e.apply(&pair.y) - &pair.y_prime).norm_squared();
        let fd_sample = (loss(&plus) - loss(&minus)) / (2.0 * h);
        for (fd, exact) in [(fd_risk, risk_grad[(i, j)]), (fd_sample, sample_grad[(i, j)])] {
            worst = worst.max((fd - exact).abs() / exact.abs().max(1e-8));
        }
    }
    Ok(outcome("gradient finite differences", worst < 1e-6, format!("largest relative error {worst:.3e}")))
}

/// Risk minus optimal risk equals the weighted distance to the optimum.
fn risk_decomposition(seed: u64) -> Result<CheckOutcome> {
    let model = reference_model(0.0, seed)?;
    let opt = optimal_estimator(&model);
    let r_opt = risk_closed_form(&opt, &model)?;
    let mut rng = rng::stream(derive_seed(seed, tag::MONTE_CARLO), 2);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let w = LinearEstimator::new(gaussian_matrix(100, 0.1, &mut rng))?;
        let delta = w.matrix() - opt.matrix();
        let r = risk_closed_form(&w, &model)?;
        let predicted =
            (&delta * model.basis()).norm_squared() / 10.0 + model.input_noise_variance() * delta.norm_squared();
        worst = worst.max((r - r_opt - predicted).abs() / r);
    }
    Ok(outcome("risk decomposition", worst < 1e-9, format!("largest relative residual {worst:.3e}")))
}

/// One-pass SGM stays below its risk bound.
fn bound_domination(fast: bool, seed: u64) -> Result<CheckOutcome> {
    let sizes: &[usize] = if fast { &[3, 10, 30, 100] } else { &[3, 10, 30, 100, 300, 1000, 3000, 5000] };
    let mut violations = Vec::new();
    for sigma_e in [0.0, 0.1, 0.2] {
        let model = reference_model(sigma_e, seed)?;
        let schedule = SgmSchedule::lemma1(&BoundConstants::for_model(&model, SlopeReading::default()))?;
        for &n in sizes {
            let mean = (0..5)
                .map(|t| {
                    let data = Dataset::generate(&model, n, derive_seed(derive_seed(seed, tag::TRAIN), t));
                    let w = sgm_single_pass(&data, &schedule, LinearEstimator::zeros(100), false)?.final_w;
                    risk_closed_form(&w, &model)
                })
                .sum::<Result<f64>>()?
                / 5.0;
            if mean > theorem1_bound(&model, n)? {
                violations.push(format!("sigma_e={sigma_e} N={n}"));
            }
        }
    }
    let detail = if violations.is_empty() { "all sizes below the bound".into() } else { violations.join("; ") };
    Ok(outcome("one-pass risk bound", violations.is_empty(), detail))
}

/// Empirical overlap fraction of the splitter against `p' q`.
fn splitter_overlap(fast: bool, seed: u64) -> Result<CheckOutcome> {
    let scheme = CsScheme::new(1000, 0.08, 0.25, 0.33)?;
    let draws = if fast { 2_000 } else { 10_000 };
    let mask_seed = derive_seed(seed, tag::MASKS);
    let mut fractions = Vec::with_capacity(draws);
    for i in 0..draws {
        let split = build_split(&scheme, &mut rng::stream(mask_seed, i as u64))?;
        fractions.push(split.overlap_count() as f64 / split.non_center_count() as f64);
    }
    let (mean, se) = crate::cs_masks::mean_and_se(&fractions);
    let target = scheme.p_prime() * scheme.q();
    let z = (mean - target).abs() / se;
    Ok(outcome("splitter overlap", z < 3.0, format!("mean {mean:.6} vs {target:.6} ({z:.2} standard errors)")))
}
