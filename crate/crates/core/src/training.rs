//! Single-pass stochastic gradient method, early-stopped full-batch gradient
//! descent, and the constants of the one-pass risk bound.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linear_denoise::{optimal_estimator, optimal_risk, risk_closed_form, LinearEstimator};
use crate::rng;
use crate::scalar::{count, lit, Real};
use crate::signal_model::{Dataset, SubspaceModel};

/// How the second-moment slope `M` relates to `10/d`.
///
/// The derivation bounds `E||G||^2` by a coefficient of order `1/d` times
/// `||W - W*||^2`, which reads naturally as `M^2 = 10/d`; the stated constant
/// is `M = 10/d`. Both are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SlopeReading {
    #[default]
    SquaredIsTenOverD,
    LinearIsTenOverD,
}

/// Strong-convexity and second-moment constants of the noise2noise stochastic gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants<T> {
    /// Strong-convexity constant `sigma_z^2 / n`.
    pub m: T,
    /// Second-moment slope.
    pub big_m: T,
    /// Second-moment offset `12 sigma_z^2 d / n + sigma_e^2 (1 + sigma_z^2)`.
    pub b: T,
}

impl<T: Real> BoundConstants<T> {
    pub fn for_model(model: &SubspaceModel<T>, reading: SlopeReading) -> Self {
        let ten_over_d = lit::<T>(10.0) / count(model.d());
        let big_m = match reading {
            SlopeReading::SquaredIsTenOverD => ten_over_d.sqrt(),
            SlopeReading::LinearIsTenOverD => ten_over_d,
        };
        Self { m: model.input_noise_variance(), big_m, b: second_moment_offset(model) }
    }
}

fn second_moment_offset<T: Real>(model: &SubspaceModel<T>) -> T {
    let sz2 = model.sigma_z() * model.sigma_z();
    let se2 = model.sigma_e() * model.sigma_e();
    lit::<T>(12.0) * sz2 * count(model.d()) / count(model.n()) + se2 * (T::one() + sz2)
}

/// Stepsize schedule `eta_k = numerator / (offset + k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgmSchedule<T> {
    numerator: T,
    offset: T,
}

impl<T: Real> SgmSchedule<T> {
    /// Manual schedule. A zero numerator gives the all-zero schedule.
    pub fn new(numerator: T, offset: T) -> Result<Self> {
        if !(numerator >= T::zero()) || !numerator.is_finite() {
            return Err(Error::InvalidArgument(format!("stepsize numerator must be >= 0, got {numerator}")));
        }
        if !(offset > -T::one()) || !offset.is_finite() {
            return Err(Error::InvalidArgument(format!("stepsize offset must exceed -1, got {offset}")));
        }
        Ok(Self { numerator, offset })
    }

    /// `eta_k = (2/m) / (2 M^2 / m^2 + k)`.
    pub fn lemma1(constants: &BoundConstants<T>) -> Result<Self> {
        if !(constants.m > T::zero()) {
            return Err(Error::DegenerateSchedule("strong-convexity constant is zero (noiseless inputs)".into()));
        }
        let two = lit::<T>(2.0);
        let ratio = constants.big_m / constants.m;
        Self::new(two / constants.m, two * ratio * ratio)
    }

    pub fn numerator(&self) -> T {
        self.numerator
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    /// Stepsize for the 1-based iteration `k`.
    pub fn step(&self, k: usize) -> T {
        self.numerator / (self.offset + count(k))
    }
}

/// Stepsize of the one-pass schedule at iteration `k >= 1`.
pub fn lemma1_stepsize<T: Real>(k: usize, constants: &BoundConstants<T>) -> Result<T> {
    if k == 0 {
        return Err(Error::InvalidArgument("iterations are numbered from 1".into()));
    }
    Ok(SgmSchedule::lemma1(constants)?.step(k))
}

/// Upper bound on the expected risk after one SGM pass over `n_samples` pairs:
///
/// `R(W*) + (1/d + sz) / sz^2 * 1/(N - 2) * (2 + B^2)` with `sz = sigma_z^2/n`.
pub fn theorem1_bound<T: Real>(model: &SubspaceModel<T>, n_samples: usize) -> Result<T> {
    if n_samples <= 2 {
        return Err(Error::OutOfDomain(format!("bound requires N >= 3, got {n_samples}")));
    }
    let sz = model.input_noise_variance();
    if !(sz > T::zero()) {
        return Err(Error::OutOfDomain("bound requires sigma_z > 0".into()));
    }
    let b = second_moment_offset(model);
    let lead = (T::one() / count(model.d()) + sz) / (sz * sz);
    let two = lit::<T>(2.0);
    Ok(optimal_risk(model) + lead * (two + b * b) / count(n_samples - 2))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    DatasetExhausted,
    EarlyStopped,
    MaxEpochs,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::DatasetExhausted => "dataset-exhausted",
            StopReason::EarlyStopped => "early-stopped",
            StopReason::MaxEpochs => "max-epochs",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<T: Real> {
    pub final_w: LinearEstimator<T>,
    /// SGM steps taken, or GD epochs run.
    pub iterations: usize,
    /// `(step, closed-form risk)` pairs when tracing is enabled.
    pub risk_trajectory: Option<Vec<(usize, T)>>,
    pub stop_reason: StopReason,
    /// Epoch of the returned iterate (GD only; 0 is the initialization).
    pub best_epoch: usize,
    pub best_validation_loss: Option<T>,
}

/// One pass of `W <- W - eta_k 2 (W y_k - y'_k) y_k^T` over the pairs in order.
pub fn sgm_single_pass<T: Real>(
    dataset: &Dataset<T>,
    schedule: &SgmSchedule<T>,
    init: LinearEstimator<T>,
    trace: bool,
) -> Result<TrainReport<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let model = dataset.model();
    if init.dim() != model.n() {
        return Err(Error::mismatch(model.n(), init.dim()));
    }
    let mut w = init;
    let mut trajectory = trace.then(|| vec![(0, risk_closed_form(&w, model).expect("dimensions checked"))]);
    let two = lit::<T>(2.0);
    for (idx, pair) in dataset.pairs().iter().enumerate() {
        let k = idx + 1;
        let residual = w.apply(&pair.y) - &pair.y_prime;
        let eta = schedule.step(k);
        w.matrix_mut().ger(-(two * eta), &residual, &pair.y, T::one());
        if let Some(t) = trajectory.as_mut() {
            t.push((k, risk_closed_form(&w, model).expect("dimensions checked")));
        }
    }
    Ok(TrainReport {
        final_w: w,
        iterations: dataset.len(),
        risk_trajectory: trajectory,
        stop_reason: StopReason::DatasetExhausted,
        best_epoch: dataset.len(),
        best_validation_loss: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondMomentReport<T> {
    /// Monte Carlo estimate of `E||G(W)||_F^2`.
    pub lhs: T,
    pub lhs_standard_error: T,
    /// `M^2 ||W - W*||_F^2 + B^2`.
    pub rhs: T,
    /// `lhs <= rhs` up to three standard errors.
    pub holds: bool,
}

/// Monte Carlo check of `E||G(W)||^2 <= M^2 ||W - W*||_F^2 + B^2` using fresh pairs.
pub fn second_moment_check<T: Real>(
    w: &LinearEstimator<T>,
    model: &SubspaceModel<T>,
    constants: &BoundConstants<T>,
    samples: usize,
    seed: u64,
) -> Result<SecondMomentReport<T>> {
    if samples < 10_000 {
        return Err(Error::InvalidArgument(format!("need at least 10^4 samples, got {samples}")));
    }
    if w.dim() != model.n() {
        return Err(Error::mismatch(model.n(), w.dim()));
    }
    let four = lit::<T>(4.0);
    let (mut sum, mut sum_sq) = (T::zero(), T::zero());
    for i in 0..samples {
        let pair = model.sample_pair(&mut rng::stream(seed, i as u64));
        // ||2 r y^T||_F^2 = 4 ||r||^2 ||y||^2
        let g2 = four * (w.apply(&pair.y) - &pair.y_prime).norm_squared() * pair.y.norm_squared();
        sum += g2;
        sum_sq += g2 * g2;
    }
    let n = count::<T>(samples);
    let lhs = sum / n;
    let var = (sum_sq / n - lhs * lhs).max(T::zero()) * n / (n - T::one());
    let se = (var / n).sqrt();
    let dist2 = (w.matrix() - optimal_estimator(model).matrix()).norm_squared();
    let rhs = constants.big_m * constants.big_m * dist2 + constants.b * constants.b;
    Ok(SecondMomentReport { lhs, lhs_standard_error: se, rhs, holds: lhs <= rhs + lit::<T>(3.0) * se })
}

/// Quadratic `tr(W S W^T) - 2 tr(W C^T) + offset + ridge ||W||_F^2`, the
/// sufficient-statistics form of a mean squared loss over a dataset.
#[derive(Debug, Clone)]
pub(crate) struct Quadratic<T: Real> {
    second: DMatrix<T>,
    cross: DMatrix<T>,
    offset: T,
    ridge: T,
}

impl<T: Real> Quadratic<T> {
    /// Mean of `||W a_i - b_i||^2` for columns `a_i` of `inputs` and `b_i` of `targets`.
    pub(crate) fn from_columns(inputs: &DMatrix<T>, targets: &DMatrix<T>, ridge: T) -> Self {
        let inv_n = T::one() / count(inputs.ncols());
        Self {
            second: inputs * inputs.transpose() * inv_n,
            cross: targets * inputs.transpose() * inv_n,
            offset: targets.norm_squared() * inv_n,
            ridge,
        }
    }

    fn value_with(&self, w: &DMatrix<T>, w_second: &DMatrix<T>) -> T {
        let two = lit::<T>(2.0);
        w_second.dot(w) - two * self.cross.dot(w) + self.offset + self.ridge * w.norm_squared()
    }

    pub(crate) fn value(&self, w: &DMatrix<T>) -> T {
        self.value_with(w, &(w * &self.second))
    }

    /// Largest eigenvalue of the Hessian divided by two.
    pub(crate) fn curvature(&self) -> T {
        let top = self.second.clone().symmetric_eigenvalues().max();
        top + self.ridge
    }
}

/// Options for [`gd_early_stopped`].
#[derive(Debug, Clone)]
pub struct GdOptions<T: Real> {
    /// Constant stepsize; `None` picks half the stability limit `1/lambda_max`.
    pub learning_rate: Option<T>,
    pub patience: usize,
    pub max_epochs: usize,
    /// Starting point; `None` is `W = 0`.
    pub init: Option<LinearEstimator<T>>,
    pub trace: bool,
}

impl<T: Real> Default for GdOptions<T> {
    fn default() -> Self {
        Self { learning_rate: None, patience: 10, max_epochs: 5000, init: None, trace: false }
    }
}

/// Size of the self-supervised validation set held out next to `n_train` pairs.
pub fn validation_size(n_train: usize) -> usize {
    (n_train / 5).max(50)
}

/// Half the stability limit of gradient descent on the empirical noise2noise
/// loss of `train`: `0.5 / lambda_max(mean y y^T)`.
pub fn default_learning_rate<T: Real>(train: &Dataset<T>) -> Result<T> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let q = Quadratic::from_columns(&train.inputs(), &train.targets(), T::zero());
    Ok(lit::<T>(0.5) / q.curvature())
}

/// Full-batch gradient descent on the noise2noise loss `mean ||W y_i - y'_i||^2`,
/// stopped when the same loss on `validation` has been worse than its best
/// value for `patience` consecutive epochs. Returns the best-validation iterate.
pub fn gd_early_stopped<T: Real>(
    train: &Dataset<T>,
    validation: &Dataset<T>,
    options: &GdOptions<T>,
) -> Result<TrainReport<T>> {
    check_pair(train, validation)?;
    let objective = Quadratic::from_columns(&train.inputs(), &train.targets(), T::zero());
    let monitor = Quadratic::from_columns(&validation.inputs(), &validation.targets(), T::zero());
    descend(&objective, &monitor, train.model(), options)
}

/// Gradient descent for the noisier2noise scheme: inputs `y + z'` with fresh
/// `z' ~ N(0, extra_sigma^2/n I)` and target `y`. The injected noise is
/// integrated out, so each epoch minimizes
/// `mean ||W y_i - y_i||^2 + (extra_sigma^2/n) ||W||_F^2`, the limit of
/// resampling `z'` every epoch. Validation uses the same expected loss.
pub fn gd_noisier2noise<T: Real>(
    train: &Dataset<T>,
    validation: &Dataset<T>,
    extra_sigma: T,
    options: &GdOptions<T>,
) -> Result<TrainReport<T>> {
    check_pair(train, validation)?;
    if !(extra_sigma >= T::zero()) || !extra_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("extra_sigma must be >= 0, got {extra_sigma}")));
    }
    let ridge = extra_sigma * extra_sigma / count(train.model().n());
    let inputs = train.inputs();
    let objective = Quadratic::from_columns(&inputs, &inputs, ridge);
    let val_inputs = validation.inputs();
    let monitor = Quadratic::from_columns(&val_inputs, &val_inputs, ridge);
    descend(&objective, &monitor, train.model(), options)
}

fn check_pair<T: Real>(train: &Dataset<T>, validation: &Dataset<T>) -> Result<()> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.model().n() != validation.model().n() {
        return Err(Error::mismatch(train.model().n(), validation.model().n()));
    }
    Ok(())
}

fn descend<T: Real>(
    objective: &Quadratic<T>,
    monitor: &Quadratic<T>,
    model: &SubspaceModel<T>,
    options: &GdOptions<T>,
) -> Result<TrainReport<T>> {
    if options.patience == 0 {
        return Err(Error::InvalidArgument("patience must be >= 1".into()));
    }
    let n = model.n();
    let lr = match options.learning_rate {
        Some(lr) if lr >= T::zero() && lr.is_finite() => lr,
        Some(lr) => return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}"))),
        None => lit::<T>(0.5) / objective.curvature(),
    };
    let mut w = match &options.init {
        Some(init) if init.dim() != n => return Err(Error::mismatch(n, init.dim())),
        Some(init) => init.matrix().clone(),
        None => DMatrix::zeros(n, n),
    };
    let two = lit::<T>(2.0);
    // Stable gradient descent on a convex quadratic never increases the
    // training loss; a rise beyond rounding of the loss terms means the
    // stepsize is too large.
    let rise_tolerance = lit::<T>(1e-8);

    let mut best_w = w.clone();
    let mut best_loss = monitor.value(&w);
    let mut best_epoch = 0;
    let mut stall = 0;
    let mut prev_train = None;
    let mut trajectory = options.trace.then(|| vec![(0, risk_of(&w, model))]);
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs = 0;

    for epoch in 1..=options.max_epochs {
        let w_second = &w * &objective.second;
        let train_loss = objective.value_with(&w, &w_second);
        if !train_loss.is_finite() {
            return Err(divergence(epoch, "non-finite training loss"));
        }
        if let Some(prev) = prev_train {
            if train_loss - prev > rise_tolerance * (prev.abs() + objective.offset.abs()) {
                return Err(divergence(epoch, "training loss increased; stepsize too large"));
            }
        }
        prev_train = Some(train_loss);

        // W <- W - lr * 2 (W S - C + ridge W)
        let mut grad = w_second - &objective.cross;
        if objective.ridge != T::zero() {
            grad += &w * objective.ridge;
        }
        w -= grad * (two * lr);
        epochs = epoch;

        let val_loss = monitor.value(&w);
        if !val_loss.is_finite() {
            return Err(divergence(epoch, "non-finite validation loss"));
        }
        if let Some(t) = trajectory.as_mut() {
            t.push((epoch, risk_of(&w, model)));
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best_w.copy_from(&w);
            best_epoch = epoch;
            stall = 0;
        } else if val_loss > best_loss {
            stall += 1;
            if stall >= options.patience {
                stop_reason = StopReason::EarlyStopped;
                break;
            }
        }
    }

    Ok(TrainReport {
        final_w: LinearEstimator::new(best_w).expect("square"),
        iterations: epochs,
        risk_trajectory: trajectory,
        stop_reason,
        best_epoch,
        best_validation_loss: Some(best_loss),
    })
}

fn risk_of<T: Real>(w: &DMatrix<T>, model: &SubspaceModel<T>) -> T {
    risk_closed_form(&LinearEstimator::new(w.clone()).expect("square"), model).expect("dimensions checked")
}

fn divergence(epoch: usize, reason: &str) -> Error {
    Error::Divergence { epoch, reason: reason.into() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linear_denoise::{empirical_risk, Target};

    fn model(n: usize, d: usize, sz: f64, se: f64) -> SubspaceModel<f64> {
        SubspaceModel::random(n, d, sz, se, 21).unwrap()
    }

    #[test]
    fn zero_step_keeps_init() {
        let m = model(6, 2, 0.1, 0.1);
        let ds = Dataset::generate(&m, 1, 0);
        let schedule = SgmSchedule::new(0.0, 0.0).unwrap();
        let init = LinearEstimator::new(DMatrix::from_fn(6, 6, |i, j| (i + 2 * j) as f64)).unwrap();
        let report = sgm_single_pass(&ds, &schedule, init.clone(), false).unwrap();
        assert_eq!(report.final_w, init);
        assert_eq!(report.stop_reason, StopReason::DatasetExhausted);
        assert_eq!(report.iterations, 1);
    }

    #[test]
    fn sgm_noiseless_full_space_risk_decreases() {
        let m = model(5, 5, 0.0, 0.0);
        let ds = Dataset::generate(&m, 10, 4);
        let schedule = SgmSchedule::new(0.05, 0.0).unwrap();
        let report = sgm_single_pass(&ds, &schedule, LinearEstimator::zeros(5), true).unwrap();
        let traj = report.risk_trajectory.unwrap();
        assert_eq!(traj.len(), 11);
        for w in traj.windows(2) {
            assert!(w[1].1 < w[0].1, "risk rose from {} to {}", w[0].1, w[1].1);
        }
    }

    #[test]
    fn sgm_rejects_empty_dataset() {
        let m = model(5, 2, 0.1, 0.0);
        let ds = Dataset::generate(&m, 0, 0);
        let schedule = SgmSchedule::new(1.0, 1.0).unwrap();
        assert!(matches!(sgm_single_pass(&ds, &schedule, LinearEstimator::zeros(5), false), Err(Error::EmptyDataset)));
    }

    #[test]
    fn lemma1_schedule_properties() {
        let m = model(100, 10, 0.1, 0.1);
        let c = BoundConstants::for_model(&m, SlopeReading::SquaredIsTenOverD);
        assert!((c.m - 1e-4).abs() < 1e-18);
        assert!((c.big_m - 1.0).abs() < 1e-15);
        // 12 * 0.01 * 0.1 + 0.01 * 1.01
        assert!((c.b - 0.0221).abs() < 1e-15);
        // eta_1 = (2/1e-4) / (2 * 1 / 1e-8 + 1) = 2e4 / (2e8 + 1)
        let eta1 = lemma1_stepsize(1, &c).unwrap();
        assert!((eta1 - 2e4 / (2e8 + 1.0)).abs() < 1e-18);
        let eta2 = lemma1_stepsize(2, &c).unwrap();
        assert!(eta2 < eta1 && eta2 > 0.0);

        let no_slope = BoundConstants { big_m: 0.0, ..c };
        let eta = lemma1_stepsize(7, &no_slope).unwrap();
        assert!((eta - 2.0 / (1e-4 * 7.0)).abs() < 1e-9);

        let huge_k = lemma1_stepsize(1 << 50, &c).unwrap();
        let asymptote = 2.0 / (1e-4 * (1u64 << 50) as f64);
        assert!((huge_k / asymptote - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lemma1_rejects_noiseless_inputs() {
        let m = model(10, 2, 0.0, 0.1);
        let c = BoundConstants::for_model(&m, SlopeReading::default());
        assert!(matches!(lemma1_stepsize(1, &c), Err(Error::DegenerateSchedule(_))));
        assert!(lemma1_stepsize(0, &BoundConstants { m: 1.0, big_m: 1.0, b: 0.0 }).is_err());
    }

    #[test]
    fn slope_readings_coincide_at_d_ten() {
        let m = model(100, 10, 0.1, 0.1);
        let a = BoundConstants::for_model(&m, SlopeReading::SquaredIsTenOverD);
        let b = BoundConstants::for_model(&m, SlopeReading::LinearIsTenOverD);
        assert!((a.big_m - b.big_m).abs() < 1e-15);
        let m = model(100, 5, 0.1, 0.1);
        let a = BoundConstants::for_model(&m, SlopeReading::SquaredIsTenOverD);
        let b = BoundConstants::for_model(&m, SlopeReading::LinearIsTenOverD);
        assert!((a.big_m - 2f64.sqrt()).abs() < 1e-15);
        assert!((b.big_m - 2.0).abs() < 1e-15);
    }

    #[test]
    fn theorem1_bound_value_and_monotonicity() {
        let m = model(100, 10, 0.1, 0.1);
        let bound = theorem1_bound(&m, 1000).unwrap();
        // Term by term: R* = 1e-3/1.001, lead = (0.1 + 1e-4)/1e-8, tail = (2 + 0.0221^2)/998.
        let expected = 1e-3 / 1.001 + (0.1 + 1e-4) / 1e-8 * (2.0 + 0.0221f64.powi(2)) / 998.0;
        assert!((bound - expected).abs() / expected < 1e-14);
        assert!(theorem1_bound(&m, 1001).unwrap() < bound);

        let louder = m.with_sigma_e(0.2).unwrap();
        for n in [3, 10, 100, 5000] {
            assert!(theorem1_bound(&louder, n).unwrap() > theorem1_bound(&m, n).unwrap());
        }
        assert!(matches!(theorem1_bound(&m, 2), Err(Error::OutOfDomain(_))));
        let far = theorem1_bound(&m, usize::MAX / 2).unwrap();
        assert!((far - optimal_risk(&m)) / optimal_risk(&m) < 1e-3);
    }

    #[test]
    fn gd_with_zero_rate_runs_to_max_epochs() {
        let m = model(10, 3, 0.1, 0.1);
        let train = Dataset::generate(&m, 20, 1);
        let val = Dataset::generate(&m, 50, 2);
        let opts = GdOptions { learning_rate: Some(0.0), max_epochs: 30, ..Default::default() };
        let report = gd_early_stopped(&train, &val, &opts).unwrap();
        assert_eq!(report.final_w, LinearEstimator::zeros(10));
        assert_eq!(report.stop_reason, StopReason::MaxEpochs);
        assert_eq!(report.iterations, 30);
    }

    #[test]
    fn gd_large_rate_reports_divergence() {
        let m = model(10, 3, 0.1, 0.1);
        let train = Dataset::generate(&m, 40, 1);
        let val = Dataset::generate(&m, 50, 2);
        let lr = 10.0 * default_learning_rate(&train).unwrap();
        let opts = GdOptions { learning_rate: Some(lr), ..Default::default() };
        assert!(matches!(gd_early_stopped(&train, &val, &opts), Err(Error::Divergence { .. })));
    }

    #[test]
    fn gd_validation_loss_matches_direct_evaluation() {
        let m = model(12, 3, 0.2, 0.1);
        let train = Dataset::generate(&m, 60, 1);
        let val = Dataset::generate(&m, 50, 2);
        let report = gd_early_stopped(&train, &val, &GdOptions::default()).unwrap();
        let direct = empirical_risk(&report.final_w, &val, Target::Noisy).unwrap();
        assert!((report.best_validation_loss.unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn gd_clean_targets_track_true_risk() {
        // With sigma_e = 0 the monitored loss is the clean empirical risk, so the
        // selected iterate is no worse than the last iterate beyond the gap
        // between empirical and population risk.
        let m = model(20, 4, 0.2, 0.0);
        let train = Dataset::generate(&m, 100, 5);
        let val = Dataset::generate(&m, 400, 6);
        let opts = GdOptions { trace: true, ..Default::default() };
        let report = gd_early_stopped(&train, &val, &opts).unwrap();
        let traj = report.risk_trajectory.as_ref().unwrap();
        let chosen = risk_closed_form(&report.final_w, &m).unwrap();
        let last = traj.last().unwrap().1;
        assert!(chosen <= last * 1.05, "chosen {chosen} last {last}");
        assert!(chosen < risk_closed_form(&LinearEstimator::zeros(20), &m).unwrap());
    }

    #[test]
    fn second_moment_check_needs_enough_samples() {
        let m = model(10, 2, 0.1, 0.1);
        let c = BoundConstants::for_model(&m, SlopeReading::default());
        assert!(second_moment_check(&LinearEstimator::zeros(10), &m, &c, 100, 0).is_err());
    }

    #[test]
    fn second_moment_vanishes_without_noise() {
        let m = model(10, 2, 1e-6, 0.0);
        let c = BoundConstants::for_model(&m, SlopeReading::default());
        let report = second_moment_check(&optimal_estimator(&m), &m, &c, 10_000, 0).unwrap();
        assert!(report.lhs < 1e-10, "lhs {}", report.lhs);
    }
}
