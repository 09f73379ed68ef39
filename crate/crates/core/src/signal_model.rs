//! Linear subspace signal model and paired noisy measurements.
//!
//! A clean signal is `x = U c` with `U` an `n x d` orthonormal basis and
//! `c ~ N(0, I/d)`, so `E||x||^2 = 1`. The input measurement is `y = x + z`
//! with `z ~ N(0, sigma_z^2/n I)` and the target measurement is `y' = x + e`
//! with `e ~ N(0, sigma_e^2/n I)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{count, lit, Real};

/// Draws an `n x d` matrix with orthonormal columns from a seeded Gaussian matrix.
pub fn random_orthonormal_basis<T: Real>(n: usize, d: usize, seed: u64) -> Result<DMatrix<T>> {
    if d == 0 || d > n {
        return Err(Error::InvalidDimension(format!("need 1 <= d <= n, got n={n}, d={d}")));
    }
    let mut rng = rng::stream(seed, 0);
    let gaussian = DMatrix::<T>::from_fn(n, d, |_, _| lit(rng.sample::<f64, _>(StandardNormal)));
    let q = gaussian.qr().q();
    Ok(q.columns(0, d).into_owned())
}

/// Largest absolute deviation of `basis^T basis` from the identity.
pub fn orthonormality_defect<T: Real>(basis: &DMatrix<T>) -> T {
    let gram = basis.transpose() * basis;
    let mut worst = T::zero();
    for (idx, v) in gram.iter().enumerate() {
        let (i, j) = (idx % gram.nrows(), idx / gram.nrows());
        let target = if i == j { T::one() } else { T::zero() };
        worst = worst.max((*v - target).abs());
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceModel<T: Real> {
    n: usize,
    d: usize,
    basis: DMatrix<T>,
    sigma_z: T,
    sigma_e: T,
}

impl<T: Real> SubspaceModel<T> {
    pub fn new(basis: DMatrix<T>, sigma_z: T, sigma_e: T) -> Result<Self> {
        let (n, d) = basis.shape();
        if d == 0 || d > n {
            return Err(Error::InvalidDimension(format!("need 1 <= d <= n, got n={n}, d={d}")));
        }
        let defect = orthonormality_defect(&basis);
        if defect > T::orthonormality_tolerance() {
            return Err(Error::InvalidArgument(format!(
                "basis columns are not orthonormal (max deviation {defect:e})"
            )));
        }
        validate_sigma("sigma_z", sigma_z)?;
        validate_sigma("sigma_e", sigma_e)?;
        Ok(Self { n, d, basis, sigma_z, sigma_e })
    }

    /// Model with a basis drawn by [`random_orthonormal_basis`].
    pub fn random(n: usize, d: usize, sigma_z: T, sigma_e: T, seed: u64) -> Result<Self> {
        Self::new(random_orthonormal_basis(n, d, seed)?, sigma_z, sigma_e)
    }

    /// Same basis and input noise, different target noise.
    pub fn with_sigma_e(&self, sigma_e: T) -> Result<Self> {
        validate_sigma("sigma_e", sigma_e)?;
        Ok(Self { sigma_e, ..self.clone() })
    }

    pub fn with_sigma_z(&self, sigma_z: T) -> Result<Self> {
        validate_sigma("sigma_z", sigma_z)?;
        Ok(Self { sigma_z, ..self.clone() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn sigma_z(&self) -> T {
        self.sigma_z
    }

    pub fn sigma_e(&self) -> T {
        self.sigma_e
    }

    /// Per-coordinate input noise variance `sigma_z^2 / n`.
    pub fn input_noise_variance(&self) -> T {
        self.sigma_z * self.sigma_z / count(self.n)
    }

    /// Per-coordinate target noise variance `sigma_e^2 / n`.
    pub fn target_noise_variance(&self) -> T {
        self.sigma_e * self.sigma_e / count(self.n)
    }

    /// Orthogonal projector `U U^T` onto the signal subspace.
    pub fn projector(&self) -> DMatrix<T> {
        &self.basis * self.basis.transpose()
    }

    /// Draws one `(x, y, y')` triple. The stream is consumed in a fixed order
    /// (`c`, then `z`, then the standardized `e`) regardless of the noise levels,
    /// so models differing only in `sigma_e` see identical `x` and `z`.
    pub fn sample_pair<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePair<T> {
        let coef_scale = (1.0 / self.d as f64).sqrt();
        let coefs = DVector::<T>::from_fn(self.d, |_, _| lit(coef_scale * gaussian(rng)));
        let x = &self.basis * coefs;
        let z_scale = self.sigma_z / count::<T>(self.n).sqrt();
        let e_scale = self.sigma_e / count::<T>(self.n).sqrt();
        let z = DVector::<T>::from_fn(self.n, |_, _| lit::<T>(gaussian(rng)) * z_scale);
        let e = DVector::<T>::from_fn(self.n, |_, _| lit::<T>(gaussian(rng)) * e_scale);
        let y = &x + z;
        let y_prime = &x + e;
        SamplePair { x, y, y_prime }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn validate_sigma<T: Real>(name: &str, sigma: T) -> Result<()> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {sigma}")));
    }
    Ok(())
}

/// One clean signal with its input and target measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T: Real> {
    pub x: DVector<T>,
    pub y: DVector<T>,
    pub y_prime: DVector<T>,
}

impl<T: Real> SamplePair<T> {
    /// Realized input noise `z = y - x`.
    pub fn input_noise(&self) -> DVector<T> {
        &self.y - &self.x
    }

    /// Realized target noise `e = y' - x`.
    pub fn target_noise(&self) -> DVector<T> {
        &self.y_prime - &self.x
    }
}

/// Ordered, seeded collection of sample pairs. Pair `i` is drawn from stream
/// `i` of the dataset seed, which makes datasets from one seed prefix-nested.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pairs: Vec<SamplePair<T>>,
    seed: u64,
    model: SubspaceModel<T>,
}

impl<T: Real> Dataset<T> {
    pub fn generate(model: &SubspaceModel<T>, size: usize, seed: u64) -> Self {
        let pairs = (0..size).map(|i| model.sample_pair(&mut rng::stream(seed, i as u64))).collect();
        Self { pairs, seed, model: model.clone() }
    }

    pub fn from_pairs(model: &SubspaceModel<T>, pairs: Vec<SamplePair<T>>, seed: u64) -> Result<Self> {
        for p in &pairs {
            for v in [&p.x, &p.y, &p.y_prime] {
                if v.len() != model.n() {
                    return Err(Error::mismatch(model.n(), v.len()));
                }
            }
        }
        Ok(Self { pairs, seed, model: model.clone() })
    }

    pub fn pairs(&self) -> &[SamplePair<T>] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn model(&self) -> &SubspaceModel<T> {
        &self.model
    }

    /// The first `len` pairs as a dataset of their own.
    pub fn prefix(&self, len: usize) -> Self {
        Self { pairs: self.pairs[..len.min(self.len())].to_vec(), seed: self.seed, model: self.model.clone() }
    }

    /// Inputs `y_i` stacked as columns of an `n x N` matrix.
    pub fn inputs(&self) -> DMatrix<T> {
        self.stack(|p| &p.y)
    }

    /// Targets `y'_i` stacked as columns.
    pub fn targets(&self) -> DMatrix<T> {
        self.stack(|p| &p.y_prime)
    }

    /// Clean signals `x_i` stacked as columns.
    pub fn clean(&self) -> DMatrix<T> {
        self.stack(|p| &p.x)
    }

    fn stack(&self, pick: impl Fn(&SamplePair<T>) -> &DVector<T>) -> DMatrix<T> {
        let n = self.model.n();
        let mut out = DMatrix::zeros(n, self.len());
        for (j, p) in self.pairs.iter().enumerate() {
            out.set_column(j, pick(p));
        }
        out
    }
}

/// Builds one dataset per requested size; each is a prefix of the next.
pub fn generate_nested_datasets<T: Real>(
    model: &SubspaceModel<T>,
    sizes: &[usize],
    seed: u64,
) -> Result<Vec<Dataset<T>>> {
    let Some(&largest) = sizes.last() else {
        return Err(Error::InvalidArgument("sizes must be non-empty".into()));
    };
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument(format!("sizes must be strictly increasing, got {sizes:?}")));
    }
    let full = Dataset::generate(model, largest, seed);
    Ok(sizes.iter().map(|&s| full.prefix(s)).collect())
}
