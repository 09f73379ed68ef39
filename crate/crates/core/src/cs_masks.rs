//! Column-wise k-space splitting for self-supervised compressive sensing.
//!
//! One measurement sampled at a fraction `mu` of the frequencies is split into
//! an input measurement at fraction `p` and a target measurement. The `nu`
//! lowest frequencies are always sampled and shared by both. The target also
//! receives every given frequency the input did not take, plus an overlap drawn
//! from the input's non-center frequencies. The overlap is sized so that,
//! conditional on the input mask, every non-center frequency enters the
//! target with probability `q = (mu - p)/(1 - p)`. The weights `1/sqrt(q)`
//! are therefore exactly `E[M']^{-1/2}`.
//!
//! Masks are indexed in natural DFT order; "center" means lowest `|frequency|`.

use nalgebra::Complex;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::dft::UnitaryDft;
use crate::error::{Error, Result};
use crate::scalar::{count, Real};

/// Derived fractions `p' = (p - nu)/(1 - nu)` and `q = (mu - p)/(1 - p)`.
pub fn derived_fractions<T: Real>(nu: T, p: T, mu: T) -> Result<(T, T)> {
    let (zero, one) = (T::zero(), T::one());
    if !(nu > zero && nu < p && p < mu && mu <= one) {
        return Err(Error::InvalidScheme(format!("need 0 < nu < p < mu <= 1, got nu={nu}, p={p}, mu={mu}")));
    }
    Ok(((p - nu) / (one - nu), (mu - p) / (one - p)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsScheme<T> {
    n_freq: usize,
    nu: T,
    p: T,
    mu: T,
    p_prime: T,
    q: T,
}

impl<T: Real> CsScheme<T> {
    pub fn new(n_freq: usize, nu: T, p: T, mu: T) -> Result<Self> {
        if n_freq == 0 {
            return Err(Error::InvalidScheme("n_freq must be positive".into()));
        }
        let (p_prime, q) = derived_fractions(nu, p, mu)?;
        let scheme = Self { n_freq, nu, p, mu, p_prime, q };
        scheme.counts()?;
        Ok(scheme)
    }

    pub fn n_freq(&self) -> usize {
        self.n_freq
    }

    pub fn nu(&self) -> T {
        self.nu
    }

    pub fn p(&self) -> T {
        self.p
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn p_prime(&self) -> T {
        self.p_prime
    }

    pub fn q(&self) -> T {
        self.q
    }

    /// Column counts after round-to-nearest.
    pub fn counts(&self) -> Result<SplitCounts> {
        let n = count::<T>(self.n_freq);
        let round = |v: T| v.round().to_usize().unwrap_or(0);
        let center = round(self.nu * n);
        if center == 0 {
            return Err(Error::InvalidScheme(format!("no center column: nu * n_freq = {}", self.nu * n)));
        }
        if center >= self.n_freq {
            return Ok(SplitCounts { center: self.n_freq, non_center: 0, input_extra: 0, target_rest: 0 });
        }
        let non_center = self.n_freq - center;
        let input_extra = round((self.p - self.nu) * n);
        let given_extra = round((self.mu - self.nu) * n).min(non_center);
        if input_extra == 0 || given_extra <= input_extra {
            return Err(Error::InvalidScheme(format!(
                "rounding leaves an empty block: {input_extra} input and {} target-only non-center columns",
                given_extra.saturating_sub(input_extra)
            )));
        }
        Ok(SplitCounts { center, non_center, input_extra, target_rest: given_extra - input_extra })
    }

    /// Expected number of input non-center columns copied into the target,
    /// `q * non_center - target_rest` (equal to `p' q non_center` when the
    /// fractions round exactly), clamped to the feasible range.
    pub fn expected_overlap(&self) -> Result<T> {
        let c = self.counts()?;
        let raw = self.q * count::<T>(c.non_center) - count::<T>(c.target_rest);
        Ok(raw.max(T::zero()).min(count(c.input_extra)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub center: usize,
    pub non_center: usize,
    /// Non-center columns of the input mask.
    pub input_extra: usize,
    /// Given non-center columns that only the target receives.
    pub target_rest: usize,
}

/// Indices of the `count` lowest-|frequency| DFT bins: 0, 1, n-1, 2, n-2, ...
pub fn center_indices(n: usize, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&k| (k.min(n - k), k > n / 2));
    order.truncate(count);
    order.sort_unstable();
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSplit<T> {
    pub center: Vec<bool>,
    /// Frequencies of the given measurement.
    pub m_tilde: Vec<bool>,
    pub m_input: Vec<bool>,
    pub m_target: Vec<bool>,
    /// Probability that the target mask selects each frequency.
    pub inclusion_prob: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> MaskSplit<T> {
    pub fn n_freq(&self) -> usize {
        self.center.len()
    }

    pub fn non_center_count(&self) -> usize {
        self.center.iter().filter(|c| !**c).count()
    }

    /// Non-center frequencies present in both input and target.
    pub fn overlap_count(&self) -> usize {
        (0..self.n_freq()).filter(|&j| !self.center[j] && self.m_input[j] && self.m_target[j]).count()
    }

    pub fn export(&self, scheme: &CsScheme<T>) -> MaskSplitExport<T>
    where
        T: Serialize,
    {
        let bits = |m: &[bool]| m.iter().map(|&b| u8::from(b)).collect();
        MaskSplitExport {
            n_freq: scheme.n_freq(),
            nu: scheme.nu(),
            p: scheme.p(),
            mu: scheme.mu(),
            p_prime: scheme.p_prime(),
            q: scheme.q(),
            center: bits(&self.center),
            m_tilde: bits(&self.m_tilde),
            m_input: bits(&self.m_input),
            m_target: bits(&self.m_target),
            inclusion_prob: self.inclusion_prob.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// JSON shape of an exported split: masks as 0/1 arrays.
#[derive(Debug, Clone, Serialize)]
pub struct MaskSplitExport<T> {
    pub n_freq: usize,
    pub nu: T,
    pub p: T,
    pub mu: T,
    pub p_prime: T,
    pub q: T,
    pub center: Vec<u8>,
    pub m_tilde: Vec<u8>,
    pub m_input: Vec<u8>,
    pub m_target: Vec<u8>,
    pub inclusion_prob: Vec<T>,
    pub weights: Vec<T>,
}

/// Draws one split. The stream is consumed identically for every `mu`, so
/// schemes that differ only in `mu` share the input mask.
pub fn build_split<T: Real, R: Rng + ?Sized>(scheme: &CsScheme<T>, rng: &mut R) -> Result<MaskSplit<T>> {
    let n = scheme.n_freq();
    let c = scheme.counts()?;
    let mut center = vec![false; n];
    for j in center_indices(n, c.center) {
        center[j] = true;
    }
    if c.non_center == 0 {
        let ones = vec![true; n];
        return Ok(MaskSplit {
            center,
            m_tilde: ones.clone(),
            m_input: ones.clone(),
            m_target: ones,
            inclusion_prob: vec![T::one(); n],
            weights: vec![T::one(); n],
        });
    }

    let mut shuffled: Vec<usize> = (0..n).filter(|&j| !center[j]).collect();
    shuffled.shuffle(rng);
    let (input_cols, rest) = shuffled.split_at(c.input_extra);
    let target_only = &rest[..c.target_rest];

    let expected = scheme.expected_overlap()?;
    let whole = expected.floor();
    let frac = (expected - whole).as_f64();
    let draw: f64 = rng.random();
    let overlap = whole.to_usize().unwrap_or(0) + usize::from(draw < frac);
    let mut from_input = input_cols.to_vec();
    from_input.shuffle(rng);

    let mut m_input = center.clone();
    let mut m_target = center.clone();
    for &j in input_cols {
        m_input[j] = true;
    }
    for &j in target_only.iter().chain(&from_input[..overlap.min(from_input.len())]) {
        m_target[j] = true;
    }
    let m_tilde: Vec<bool> = (0..n).map(|j| m_input[j] || center[j] || target_only.contains(&j)).collect();

    let raw = scheme.q() * count::<T>(c.non_center) - count::<T>(c.target_rest);
    let non_center_prob = if raw >= T::zero() && raw <= count(c.input_extra) {
        scheme.q()
    } else {
        (count::<T>(c.target_rest) + expected) / count(c.non_center)
    };
    let inclusion_prob: Vec<T> = center.iter().map(|&is_c| if is_c { T::one() } else { non_center_prob }).collect();
    let weights = weights_from_probabilities(&inclusion_prob);
    Ok(MaskSplit { center, m_tilde, m_input, m_target, inclusion_prob, weights })
}

/// `W = E[M']^{-1/2}`: 1 at center frequencies and `1/sqrt(q)` elsewhere.
pub fn weight_vector<T: Real>(split: &MaskSplit<T>, scheme: &CsScheme<T>) -> Result<Vec<T>> {
    if !(scheme.q() > T::zero()) {
        return Err(Error::InfiniteWeight(format!("q = {} gives unbounded weights", scheme.q())));
    }
    let outer = T::one() / scheme.q().sqrt();
    Ok(split.center.iter().map(|&c| if c { T::one() } else { outer }).collect())
}

/// `p^{-1/2}` per frequency; frequencies that are never selected get weight 0
/// and drop out of the loss.
pub fn weights_from_probabilities<T: Real>(probs: &[T]) -> Vec<T> {
    probs.iter().map(|&p| if p > T::zero() { T::one() / p.sqrt() } else { T::zero() }).collect()
}

/// `||W (M' F f - y')||^2` summed over the frequencies selected by `m_target`.
pub fn ss_cs_loss<T: Real>(
    reconstruction: &[Complex<T>],
    target: &[Complex<T>],
    m_target: &[bool],
    weights: &[T],
    dft: &UnitaryDft<T>,
) -> Result<T> {
    let n = dft.len();
    for len in [reconstruction.len(), target.len(), m_target.len(), weights.len()] {
        if len != n {
            return Err(Error::mismatch(n, len));
        }
    }
    let spectrum = dft.forward(reconstruction)?;
    Ok((0..n)
        .filter(|&j| m_target[j])
        .fold(T::zero(), |acc, j| acc + weights[j] * weights[j] * (spectrum[j] - target[j]).norm_sqr()))
}

/// Exact evaluation of `|E_{M'} ||W M' F (a - x)||^2 - ||a - x||^2|` for
/// independent per-frequency inclusion probabilities and `W = E[M']^{-1/2}`.
pub fn prop2_exact_check<T: Real>(
    a: &[Complex<T>],
    x: &[Complex<T>],
    inclusion_prob: &[T],
    dft: &UnitaryDft<T>,
) -> Result<T> {
    let n = dft.len();
    for len in [a.len(), x.len(), inclusion_prob.len()] {
        if len != n {
            return Err(Error::mismatch(n, len));
        }
    }
    if let Some(index) = inclusion_prob.iter().position(|&p| !(p > T::zero())) {
        return Err(Error::UndefinedWeight { index });
    }
    let diff: Vec<Complex<T>> = a.iter().zip(x).map(|(u, v)| u - v).collect();
    let spectrum = dft.forward(&diff)?;
    let expected = spectrum.iter().zip(inclusion_prob).fold(T::zero(), |acc, (s, &p)| {
        let w = T::one() / p.sqrt();
        acc + w * w * p * s.norm_sqr()
    });
    let direct = diff.iter().fold(T::zero(), |acc, v| acc + v.norm_sqr());
    Ok((expected - direct).abs())
}

/// Mean of a 0/1 indicator over draws, with its standard error.
pub(crate) fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
