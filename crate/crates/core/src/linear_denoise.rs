//! Closed-form risk, optimal estimator, losses and gradients for the linear
//! denoiser `f_W(y) = W y`.
//!
//! Gradients are gradients of squared norms without a factor one half, so the
//! per-sample noise2noise gradient is `2 (W y - y') y^T`. Stationary points are
//! the same under either convention.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{count, Real};
use crate::signal_model::{Dataset, SamplePair, SubspaceModel};

/// An `n x n` linear estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator<T: Real> {
    w: DMatrix<T>,
}

impl<T: Real> LinearEstimator<T> {
    pub fn new(w: DMatrix<T>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::InvalidDimension(format!("estimator must be square, got {:?}", w.shape())));
        }
        Ok(Self { w })
    }

    pub fn zeros(n: usize) -> Self {
        Self { w: DMatrix::zeros(n, n) }
    }

    pub fn identity(n: usize) -> Self {
        Self { w: DMatrix::identity(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.w
    }

    pub fn into_matrix(self) -> DMatrix<T> {
        self.w
    }

    pub fn apply(&self, y: &DVector<T>) -> DVector<T> {
        &self.w * y
    }

    pub(crate) fn matrix_mut(&mut self) -> &mut DMatrix<T> {
        &mut self.w
    }

    fn check_dim(&self, n: usize) -> Result<()> {
        if self.dim() != n {
            return Err(Error::mismatch(format!("{n}x{n} estimator"), format!("{0}x{0}", self.dim())));
        }
        Ok(())
    }
}

/// Risk of an estimator together with the optimal risk and the excess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskBreakdown<T> {
    pub risk: T,
    pub optimal_risk: T,
    pub excess: T,
}

/// Population risk `E||W y - x||^2 = (1/d)||(W - I)U||_F^2 + (sigma_z^2/n)||W||_F^2`.
pub fn risk_closed_form<T: Real>(w: &LinearEstimator<T>, model: &SubspaceModel<T>) -> Result<T> {
    w.check_dim(model.n())?;
    let u = model.basis();
    let residual = w.matrix() * u - u;
    Ok(residual.norm_squared() / count(model.d()) + model.input_noise_variance() * w.matrix().norm_squared())
}

/// `W* = U U^T / (1 + sigma_z^2 d / n)`.
pub fn optimal_estimator<T: Real>(model: &SubspaceModel<T>) -> LinearEstimator<T> {
    LinearEstimator { w: model.projector() * shrinkage(model) }
}

/// The factor `1 / (1 + sigma_z^2 d / n)` applied on the subspace by `W*`.
pub fn shrinkage<T: Real>(model: &SubspaceModel<T>) -> T {
    T::one() / (T::one() + snr_ratio(model))
}

fn snr_ratio<T: Real>(model: &SubspaceModel<T>) -> T {
    model.sigma_z() * model.sigma_z() * count(model.d()) / count(model.n())
}

/// `R(W*) = s / (1 + s)` with `s = sigma_z^2 d / n`.
pub fn optimal_risk<T: Real>(model: &SubspaceModel<T>) -> T {
    let s = snr_ratio(model);
    s / (T::one() + s)
}

pub fn risk_breakdown<T: Real>(w: &LinearEstimator<T>, model: &SubspaceModel<T>) -> Result<RiskBreakdown<T>> {
    let risk = risk_closed_form(w, model)?;
    let optimal_risk = optimal_risk(model);
    Ok(RiskBreakdown { risk, optimal_risk, excess: risk - optimal_risk })
}

/// `grad R(W) = (2/d)(W - I) U U^T + (2 sigma_z^2 / n) W`.
pub fn risk_gradient<T: Real>(w: &LinearEstimator<T>, model: &SubspaceModel<T>) -> Result<DMatrix<T>> {
    w.check_dim(model.n())?;
    let two = T::one() + T::one();
    let u = model.basis();
    let residual = w.matrix() * u - u;
    let mut grad = residual * u.transpose() * (two / count(model.d()));
    grad += w.matrix() * (two * model.input_noise_variance());
    Ok(grad)
}

/// Per-sample noise2noise gradient `2 (W y - y') y^T`.
pub fn n2n_sample_gradient<T: Real>(w: &LinearEstimator<T>, pair: &SamplePair<T>) -> Result<DMatrix<T>> {
    w.check_dim(pair.y.len())?;
    outer_gradient(w, &pair.y, &pair.y_prime)
}

/// Per-sample supervised gradient `2 (W y - x) y^T`.
pub fn supervised_sample_gradient<T: Real>(w: &LinearEstimator<T>, pair: &SamplePair<T>) -> Result<DMatrix<T>> {
    w.check_dim(pair.y.len())?;
    outer_gradient(w, &pair.y, &pair.x)
}

fn outer_gradient<T: Real>(w: &LinearEstimator<T>, input: &DVector<T>, target: &DVector<T>) -> Result<DMatrix<T>> {
    if target.len() != input.len() {
        return Err(Error::mismatch(input.len(), target.len()));
    }
    let residual = w.apply(input) - target;
    Ok((residual * (T::one() + T::one())) * input.transpose())
}

/// Which vector an empirical risk compares the estimate against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// The clean signal `x` (supervised).
    Clean,
    /// The second noisy measurement `y'` (noise2noise).
    Noisy,
}

/// Mean of `||W y_i - t_i||^2` over the dataset.
pub fn empirical_risk<T: Real>(w: &LinearEstimator<T>, dataset: &Dataset<T>, target: Target) -> Result<T> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    w.check_dim(dataset.model().n())?;
    let total = dataset.pairs().iter().fold(T::zero(), |acc, p| {
        let t = match target {
            Target::Clean => &p.x,
            Target::Noisy => &p.y_prime,
        };
        acc + (w.apply(&p.y) - t).norm_squared()
    });
    Ok(total / count(dataset.len()))
}

/// Population minimizer of `E||W (x + z + z') - (x + z)||^2` where the injected
/// noise is `z' ~ N(0, extra_sigma^2 / n I)`.
///
/// The minimizer shares the eigenbasis of `U U^T`: it scales the subspace by
/// `(1/d + sz)/(1/d + sz + se)` and its complement by `sz/(sz + se)`, with
/// `sz = sigma_z^2/n`, `se = extra_sigma^2/n`. A zero denominator on the
/// complement gives the minimum-norm choice 0.
pub fn noisier2noise_population_estimator<T: Real>(
    model: &SubspaceModel<T>,
    extra_sigma: T,
) -> Result<LinearEstimator<T>> {
    if !(extra_sigma >= T::zero()) || !extra_sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("extra_sigma must be finite and >= 0, got {extra_sigma}")));
    }
    let (on, off) = noisier2noise_eigenvalues(model, extra_sigma);
    let proj = model.projector();
    let complement = DMatrix::identity(model.n(), model.n()) - &proj;
    Ok(LinearEstimator { w: proj * on + complement * off })
}

/// Eigenvalues of the noisier2noise population estimator on the subspace and
/// on its orthogonal complement.
pub fn noisier2noise_eigenvalues<T: Real>(model: &SubspaceModel<T>, extra_sigma: T) -> (T, T) {
    let inv_d = T::one() / count(model.d());
    let sz = model.input_noise_variance();
    let se = extra_sigma * extra_sigma / count(model.n());
    let on = (inv_d + sz) / (inv_d + sz + se);
    let off = if sz + se > T::zero() { sz / (sz + se) } else { T::zero() };
    (on, off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn model(n: usize, d: usize, sz: f64, se: f64) -> SubspaceModel<f64> {
        SubspaceModel::random(n, d, sz, se, 3).unwrap()
    }

    #[test]
    fn zero_estimator_has_unit_risk() {
        let m = model(30, 6, 0.4, 0.0);
        let r = risk_closed_form(&LinearEstimator::zeros(30), &m).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_keeps_all_noise() {
        let m = model(30, 6, 0.4, 0.0);
        let r = risk_closed_form(&LinearEstimator::identity(30), &m).unwrap();
        assert!((r - 0.16).abs() < 1e-12);
    }

    #[test]
    fn optimal_risk_matches_closed_form_value() {
        let m = model(100, 10, 0.1, 0.0);
        let w = optimal_estimator(&m);
        let r = risk_closed_form(&w, &m).unwrap();
        // s / (1 + s) with s = 0.01 * 10 / 100 = 1e-3.
        let expected = 1e-3 / 1.001;
        assert!((r - expected).abs() < 1e-15);
        assert!((optimal_risk(&m) - expected).abs() < 1e-18);
        assert!((shrinkage(&m) - 1.0 / 1.001).abs() < 1e-15);
    }

    #[test]
    fn noiseless_optimum_is_projection() {
        let m = model(12, 3, 0.0, 0.0);
        let w = optimal_estimator(&m);
        assert!((w.matrix() - m.projector()).amax() < 1e-15);
    }

    #[test]
    fn full_space_optimum_is_scaled_identity() {
        let m = model(8, 8, 0.5, 0.0);
        let w = optimal_estimator(&m);
        let expected = DMatrix::<f64>::identity(8, 8) / 1.25;
        assert!((w.matrix() - expected).amax() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_at_optimum() {
        let m = model(50, 7, 0.3, 0.1);
        let g = risk_gradient(&optimal_estimator(&m), &m).unwrap();
        assert!(g.amax() < 1e-9);
    }

    #[test]
    fn gradient_at_zero_is_scaled_projection() {
        let m = model(20, 4, 0.7, 0.0);
        let g = risk_gradient(&LinearEstimator::zeros(20), &m).unwrap();
        assert!((g + m.projector() * 0.5).amax() < 1e-14);
    }

    #[test]
    fn sample_gradient_special_cases() {
        let m = model(10, 2, 0.2, 0.2);
        let mut pair = m.sample_pair(&mut rng::stream(0, 0));
        let w = LinearEstimator::zeros(10);
        let g = n2n_sample_gradient(&w, &pair).unwrap();
        let expected = &pair.y_prime * pair.y.transpose() * -2.0;
        assert_eq!(g, expected);

        let w = LinearEstimator::identity(10);
        pair.y_prime = pair.y.clone();
        assert_eq!(n2n_sample_gradient(&w, &pair).unwrap().amax(), 0.0);
    }

    #[test]
    fn empirical_risk_edge_cases() {
        let m = model(10, 3, 0.0, 0.0);
        let ds = Dataset::generate(&m, 20, 1);
        let id = LinearEstimator::identity(10);
        assert_eq!(empirical_risk(&id, &ds, Target::Clean).unwrap(), 0.0);

        let m = model(10, 3, 0.2, 0.0);
        let ds = Dataset::generate(&m, 20, 1);
        let w = optimal_estimator(&m);
        assert_eq!(empirical_risk(&w, &ds, Target::Clean).unwrap(), empirical_risk(&w, &ds, Target::Noisy).unwrap());
        assert!(matches!(empirical_risk(&w, &ds.prefix(0), Target::Clean), Err(Error::EmptyDataset)));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = model(10, 3, 0.2, 0.0);
        let w = LinearEstimator::zeros(9);
        assert!(matches!(risk_closed_form(&w, &m), Err(Error::DimensionMismatch { .. })));
        assert!(risk_gradient(&w, &m).is_err());
        assert!(LinearEstimator::new(DMatrix::<f64>::zeros(2, 3)).is_err());
    }

    #[test]
    fn noisier2noise_noiseless_is_projection() {
        let m = model(15, 5, 0.0, 0.0);
        let w = noisier2noise_population_estimator(&m, 0.0).unwrap();
        assert!((w.matrix() - m.projector()).amax() < 1e-14);
    }

    #[test]
    fn noisier2noise_eigenvalues_for_equal_noise() {
        let m = model(100, 10, 0.1, 0.0);
        let (on, off) = noisier2noise_eigenvalues(&m, 0.1);
        assert!((off - 0.5).abs() < 1e-15);
        assert!((on - (0.1 + 1e-4) / (0.1 + 2e-4)).abs() < 1e-15);
        assert!(noisier2noise_population_estimator(&m, -1.0).is_err());
    }

    #[test]
    fn f32_risk_agrees_with_f64() {
        let m64 = model(20, 4, 0.3, 0.0);
        let m32 = SubspaceModel::<f32>::new(m64.basis().map(|v| v as f32), 0.3, 0.0).unwrap();
        let r64 = risk_closed_form(&optimal_estimator(&m64), &m64).unwrap();
        let r32 = risk_closed_form(&optimal_estimator(&m32), &m32).unwrap();
        assert!(((r32 as f64) - r64).abs() / r64 < 1e-4);
    }
}
