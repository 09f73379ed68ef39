//! Power-law rate fits of trial-averaged excess risk against `N`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::experiments::output::SweepRow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupKey {
    /// One fit per `(experiment, param)`.
    Param,
    /// One fit per experiment, pooling every `param`.
    Experiment,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub experiment: String,
    /// `None` when rows were pooled over `param`.
    pub param: Option<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `(N, mean excess)` points used in the fit.
    pub points: Vec<(usize, f64)>,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r^2)`.
pub fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy) / (sxx * syy) };
    (slope, intercept, r_squared)
}

/// Regresses `ln(mean excess)` on `ln N` for every group, optionally keeping
/// only `N` within `n_range` (inclusive). Sizes with nonpositive mean excess
/// are dropped with a warning.
pub fn fit_rate(rows: &[SweepRow], group: GroupKey, n_range: Option<(usize, usize)>) -> Result<Vec<RateFit>> {
    type Key = (String, Option<u64>);
    let mut groups: BTreeMap<Key, BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        if let Some((lo, hi)) = n_range {
            if r.n_train < lo || r.n_train > hi {
                continue;
            }
        }
        if !r.excess.is_finite() {
            continue;
        }
        let param = match group {
            GroupKey::Param => Some(r.param.to_bits()),
            GroupKey::Experiment => None,
        };
        let cell = groups.entry((r.experiment.clone(), param)).or_default().entry(r.n_train).or_insert((0.0, 0));
        cell.0 += r.excess;
        cell.1 += 1;
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no rows to fit".into()));
    }
    groups
        .into_iter()
        .map(|((experiment, param), by_n)| {
            let label = match param {
                Some(bits) => format!("{experiment} param={}", f64::from_bits(bits)),
                None => experiment.clone(),
            };
            let mut points = Vec::new();
            for (n, (sum, k)) in by_n {
                let mean = sum / k as f64;
                if mean > 0.0 {
                    points.push((n, mean));
                } else {
                    log::warn!("{label}: dropping N={n} with nonpositive mean excess {mean:e}");
                }
            }
            if points.len() < 3 {
                return Err(Error::InvalidArgument(format!(
                    "{label}: need at least 3 sizes with positive mean excess, have {}",
                    points.len()
                )));
            }
            let x: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
            let y: Vec<f64> = points.iter().map(|(_, e)| e.ln()).collect();
            let (slope, intercept, r_squared) = least_squares(&x, &y);
            Ok(RateFit { experiment, param: param.map(f64::from_bits), slope, intercept, r_squared, points })
        })
        .collect()
}
