//! Normalized per-sample gradient variance around the empirical risk gradient.
//!
//! For a per-sample gradient `g_i` and the empirical supervised gradient
//! `G = (1/N) sum_i grad ||f(y_i) - x_i||^2`, the statistic is
//! `||g_i - G||^2 / ||G||^2`. Every per-sample gradient of a linear model is an
//! outer product `u v^T`, so the numerator expands to
//! `||u||^2 ||v||^2 - 2 u^T G v + ||G||^2` and no per-sample matrix is formed.

use std::io::Write;
use std::path::Path;

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::cs_linear::{cs_sample_gradient_factors, supervised_curvature, CsDataset, CsReconstructor, CsTraining};
use crate::error::{Error, Result};
use crate::linear_denoise::LinearEstimator;
use crate::scalar::{count, lit, Real};
use crate::signal_model::Dataset;
use crate::training::default_learning_rate;

/// Smallest dataset accepted for a variance estimate.
pub const MIN_SAMPLES: usize = 100;
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradLoss {
    Supervised,
    Noise2Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradVarReport<T> {
    pub loss_label: String,
    pub per_sample: Vec<T>,
    pub mean: T,
    pub standard_error: T,
    pub histogram: Vec<HistogramBin>,
}

impl<T: Real> GradVarReport<T> {
    fn from_values(loss_label: String, per_sample: Vec<T>, bins: usize) -> Self {
        let values: Vec<f64> = per_sample.iter().map(|v| v.as_f64()).collect();
        let (mean, se) = crate::cs_masks::mean_and_se(&values);
        Self {
            loss_label,
            histogram: log_histogram(&values, bins),
            per_sample,
            mean: lit(mean),
            standard_error: lit(se),
        }
    }

    /// Rows `loss_label,sample_index,normalized_variance`.
    pub fn write_samples_csv(&self, path: &Path) -> Result<()> {
        write_samples_csv(std::slice::from_ref(self), path)
    }

    /// Rows `bin_left,bin_right,count`.
    pub fn write_histogram_csv(&self, path: &Path) -> Result<()> {
        let mut out = create(path)?;
        let mut body = String::from("bin_left,bin_right,count\n");
        for b in &self.histogram {
            body.push_str(&format!("{:.16e},{:.16e},{}\n", b.left, b.right, b.count));
        }
        out.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Per-sample rows of several reports in one file.
pub fn write_samples_csv<T: Real>(reports: &[GradVarReport<T>], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    let mut body = String::from("loss_label,sample_index,normalized_variance\n");
    for r in reports {
        for (i, v) in r.per_sample.iter().enumerate() {
            body.push_str(&format!("{},{},{:.16e}\n", r.loss_label, i, v.as_f64()));
        }
    }
    out.write_all(body.as_bytes()).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| Error::io(path, e))
}

/// Log-spaced bins from the smallest positive value to the largest; zeros
/// land in the first bin.
pub fn log_histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let bins = bins.max(1);
    let lo = values.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(0.0, f64::max);
    if !lo.is_finite() || hi <= lo {
        let edge = if lo.is_finite() { lo } else { 0.0 };
        return vec![HistogramBin { left: edge, right: edge, count: values.len() }];
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    let step = (lhi - llo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { (llo + step * k as f64).exp() }).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        let k = if v <= lo { 0 } else { (((v.ln() - llo) / step) as usize).min(bins - 1) };
        counts[k] += 1;
    }
    (0..bins).map(|k| HistogramBin { left: edges[k], right: edges[k + 1], count: counts[k] }).collect()
}

/// `(2/N) sum_i (W y_i - x_i) y_i^T`.
pub fn empirical_risk_gradient<T: Real>(w: &LinearEstimator<T>, dataset: &Dataset<T>) -> Result<DMatrix<T>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = dataset.model().n();
    if w.dim() != n {
        return Err(Error::mismatch(n, w.dim()));
    }
    let inputs = dataset.inputs();
    let residual = w.matrix() * &inputs - dataset.clean();
    Ok(residual * inputs.transpose() * (lit::<T>(2.0) / count(dataset.len())))
}

pub fn normalized_gradient_variances<T: Real>(
    w: &LinearEstimator<T>,
    dataset: &Dataset<T>,
    loss: GradLoss,
    bins: usize,
) -> Result<GradVarReport<T>> {
    if dataset.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples for a variance estimate, got {}",
            dataset.len()
        )));
    }
    let grad = empirical_risk_gradient(w, dataset)?;
    let g2 = grad.norm_squared();
    if !(g2 > T::zero()) {
        return Err(Error::DegenerateNormalization);
    }
    let two = lit::<T>(2.0);
    let values: Vec<T> = dataset
        .pairs()
        .par_iter()
        .map(|p| {
            let target = match loss {
                GradLoss::Supervised => &p.x,
                GradLoss::Noise2Noise => &p.y_prime,
            };
            let u: DVector<T> = (w.apply(&p.y) - target) * two;
            let cross = u.dot(&(&grad * &p.y));
            ((u.norm_squared() * p.y.norm_squared() - two * cross + g2) / g2).max(T::zero())
        })
        .collect();
    let label = match loss {
        GradLoss::Supervised => "supervised".to_string(),
        GradLoss::Noise2Noise => format!("noise2noise(sigma_e={})", dataset.model().sigma_e()),
    };
    Ok(GradVarReport::from_values(label, values, bins))
}

/// Estimator after one full-batch supervised gradient step from zero at the
/// default learning rate.
pub fn one_epoch_estimator<T: Real>(dataset: &Dataset<T>) -> Result<LinearEstimator<T>> {
    let lr = default_learning_rate(dataset)?;
    let zero = LinearEstimator::zeros(dataset.model().n());
    let grad = empirical_risk_gradient(&zero, dataset)?;
    LinearEstimator::new(grad * (-lr))
}

/// Compressive-sensing reconstructor after one full-batch supervised gradient
/// step from zero at the default learning rate.
pub fn cs_one_epoch_reconstructor<T: Real>(dataset: &CsDataset<T>) -> Result<CsReconstructor<T>> {
    let curvature = supervised_curvature(dataset)?;
    if !(curvature > T::zero()) {
        return Err(Error::DegenerateNormalization);
    }
    let lr = lit::<T>(0.5) / curvature;
    let grad = cs_empirical_risk_gradient(&CsReconstructor::zeros(dataset.scheme().n_freq()), dataset)?;
    CsReconstructor::from_spectral(grad * Complex::new(-lr, T::zero()))
}

/// Supervised empirical risk gradient for the compressive-sensing reconstructor.
pub fn cs_empirical_risk_gradient<T: Real>(
    recon: &CsReconstructor<T>,
    dataset: &CsDataset<T>,
) -> Result<DMatrix<Complex<T>>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = recon.dim();
    let inv_n = Complex::new(T::one() / count(dataset.len()), T::zero());
    let mut grad = DMatrix::zeros(n, n);
    for s in dataset.samples() {
        let (u, v) = cs_sample_gradient_factors(recon, s, CsTraining::Supervised);
        grad.gerc(inv_n, &u, &v, Complex::new(T::one(), T::zero()));
    }
    Ok(grad)
}

pub fn cs_normalized_gradient_variances<T: Real>(
    recon: &CsReconstructor<T>,
    dataset: &CsDataset<T>,
    mode: CsTraining,
    bins: usize,
) -> Result<GradVarReport<T>> {
    if dataset.len() < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "need at least {MIN_SAMPLES} samples for a variance estimate, got {}",
            dataset.len()
        )));
    }
    let grad = cs_empirical_risk_gradient(recon, dataset)?;
    let g2 = grad.norm_squared();
    if !(g2 > T::zero()) {
        return Err(Error::DegenerateNormalization);
    }
    let two = lit::<T>(2.0);
    let values: Vec<T> = dataset
        .samples()
        .par_iter()
        .map(|s| {
            let (u, v) = cs_sample_gradient_factors(recon, s, mode);
            let cross = u.dotc(&(&grad * &v)).re;
            ((u.norm_squared() * v.norm_squared() - two * cross + g2) / g2).max(T::zero())
        })
        .collect();
    let label = match mode {
        CsTraining::Supervised => "supervised".to_string(),
        CsTraining::SelfSupervised => format!("cs-self-supervised(mu={})", dataset.scheme().mu()),
    };
    Ok(GradVarReport::from_values(label, values, bins))
}
