//! Linear compressive-sensing reconstruction trained on split measurements.
//!
//! Signals are complex subspace signals `x = U c` with a real orthonormal
//! `U` and `c` circularly Gaussian with `E||x||^2 = 1`. The reconstructor sees
//! the zero-filled image `F^H M F x` and is parametrized in k-space: it maps
//! the masked spectrum `M F x` to a full spectrum through a matrix `C`, so the
//! image-domain map is `A = F^H C F`.
//!
//! Training minimizes either the supervised loss `||A z - x||^2` or the
//! weighted masked loss `||W (M' F A z - y')||^2` by full-batch gradient
//! descent with early stopping on a validation set drawn the same way. Both
//! losses separate over the rows of `C`, so each row carries its own quadratic.

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::cs_masks::{build_split, CsScheme, MaskSplit};
use crate::dft::UnitaryDft;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::{count, lit, Real};
use crate::signal_model::random_orthonormal_basis;
use crate::training::StopReason;

type C<T> = Complex<T>;

fn czero<T: Real>() -> C<T> {
    C::new(T::zero(), T::zero())
}

#[derive(Debug, Clone)]
pub struct CsSignalModel<T: Real> {
    basis: DMatrix<T>,
    dft: UnitaryDft<T>,
}

impl<T: Real> CsSignalModel<T> {
    pub fn new(basis: DMatrix<T>) -> Result<Self> {
        let (n, d) = basis.shape();
        if d == 0 || d > n {
            return Err(Error::InvalidDimension(format!("need 1 <= d <= n, got n={n}, d={d}")));
        }
        let defect = crate::signal_model::orthonormality_defect(&basis);
        if defect > T::orthonormality_tolerance() {
            return Err(Error::InvalidArgument(format!("basis is not orthonormal (defect {defect:e})")));
        }
        Ok(Self { dft: UnitaryDft::new(n)?, basis })
    }

    pub fn random(n: usize, d: usize, seed: u64) -> Result<Self> {
        Self::new(random_orthonormal_basis(n, d, seed)?)
    }

    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    pub fn d(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<T> {
        &self.basis
    }

    pub fn dft(&self) -> &UnitaryDft<T> {
        &self.dft
    }

    pub fn sample_signal<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<C<T>> {
        let scale = (0.5 / self.d() as f64).sqrt();
        let mut draw = || lit::<T>(scale * rng.sample::<f64, _>(StandardNormal));
        let coefs = DVector::from_fn(self.d(), |_, _| C::new(draw(), draw()));
        self.basis.map(|v| C::new(v, T::zero())) * coefs
    }

    /// Signal covariance in k-space, `F (U U^T / d) F^H`.
    pub fn spectral_covariance(&self) -> DMatrix<C<T>> {
        let f = self.dft.matrix();
        let sigma = (&self.basis * self.basis.transpose() / count::<T>(self.d())).map(|v| C::new(v, T::zero()));
        &f * sigma * f.adjoint()
    }
}

/// One signal with its spectrum and measurement split.
#[derive(Debug, Clone)]
pub struct CsSample<T: Real> {
    pub x: DVector<C<T>>,
    pub spectrum: DVector<C<T>>,
    pub split: MaskSplit<T>,
}

impl<T: Real> CsSample<T> {
    /// `M F x`.
    pub fn input_spectrum(&self) -> DVector<C<T>> {
        masked(&self.spectrum, &self.split.m_input)
    }

    /// `M' F x`.
    pub fn target(&self) -> DVector<C<T>> {
        masked(&self.spectrum, &self.split.m_target)
    }
}

fn masked<T: Real>(v: &DVector<C<T>>, mask: &[bool]) -> DVector<C<T>> {
    DVector::from_fn(v.len(), |j, _| if mask[j] { v[j] } else { czero() })
}

/// Sample `i` reads stream `i` of the seed: the signal first, then the split.
/// The split consumes the stream identically for every `mu`, so datasets that
/// differ only in `mu` share signals and input masks.
#[derive(Debug, Clone)]
pub struct CsDataset<T: Real> {
    samples: Vec<CsSample<T>>,
    scheme: CsScheme<T>,
}

impl<T: Real> CsDataset<T> {
    pub fn generate(model: &CsSignalModel<T>, scheme: &CsScheme<T>, size: usize, seed: u64) -> Result<Self> {
        if scheme.n_freq() != model.n() {
            return Err(Error::mismatch(model.n(), scheme.n_freq()));
        }
        let samples = (0..size)
            .map(|i| {
                let mut rng = rng::stream(seed, i as u64);
                let x = model.sample_signal(&mut rng);
                let spectrum = model.dft().forward_vec(&x)?;
                let split = build_split(scheme, &mut rng)?;
                Ok(CsSample { x, spectrum, split })
            })
            .collect::<Result<_>>()?;
        Ok(Self { samples, scheme: *scheme })
    }

    pub fn samples(&self) -> &[CsSample<T>] {
        &self.samples
    }

    pub fn scheme(&self) -> &CsScheme<T> {
        &self.scheme
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsTraining {
    Supervised,
    SelfSupervised,
}

/// Linear reconstructor stored as its k-space matrix `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsReconstructor<T: Real> {
    spectral: DMatrix<C<T>>,
}

impl<T: Real> CsReconstructor<T> {
    pub fn zeros(n: usize) -> Self {
        Self { spectral: DMatrix::zeros(n, n) }
    }

    pub fn from_spectral(spectral: DMatrix<C<T>>) -> Result<Self> {
        if !spectral.is_square() {
            return Err(Error::InvalidDimension(format!("map must be square, got {:?}", spectral.shape())));
        }
        Ok(Self { spectral })
    }

    pub fn dim(&self) -> usize {
        self.spectral.nrows()
    }

    /// Map from the masked spectrum to the reconstructed spectrum.
    pub fn spectral(&self) -> &DMatrix<C<T>> {
        &self.spectral
    }

    /// Image-domain map `F^H C F` acting on zero-filled images.
    pub fn image_matrix(&self, dft: &UnitaryDft<T>) -> DMatrix<C<T>> {
        let f = dft.matrix();
        f.adjoint() * &self.spectral * f
    }

    /// Reconstruction from a zero-filled image.
    pub fn apply(&self, zero_filled: &DVector<C<T>>, dft: &UnitaryDft<T>) -> Result<DVector<C<T>>> {
        let spectrum = dft.forward_vec(zero_filled)?;
        dft.inverse_vec(&(&self.spectral * spectrum))
    }
}

/// Sum over rows `j` of `g_j^H H_j g_j - 2 Re(g_j^H v_j)` plus a constant,
/// where `g_j` is the conjugated row `j` of `C`.
#[derive(Debug, Clone)]
pub(crate) struct RowQuadratics<T: Real> {
    /// One shared matrix, or one per row.
    hessians: Vec<DMatrix<C<T>>>,
    /// Column `j` is `v_j`.
    cross: DMatrix<C<T>>,
    offset: T,
}

impl<T: Real> RowQuadratics<T> {
    pub(crate) fn build(dataset: &CsDataset<T>, mode: CsTraining) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = dataset.scheme().n_freq();
        let inv_n = T::one() / count::<T>(dataset.len());
        let mut cross = DMatrix::zeros(n, n);
        let mut offset = T::zero();
        let hessians = match mode {
            CsTraining::Supervised => {
                let mut h = DMatrix::zeros(n, n);
                for s in dataset.samples() {
                    let z = s.input_spectrum();
                    h.gerc(C::new(inv_n, T::zero()), &z, &z, C::new(T::one(), T::zero()));
                    cross.gerc(C::new(inv_n, T::zero()), &z, &s.spectrum, C::new(T::one(), T::zero()));
                    offset += s.spectrum.norm_squared() * inv_n;
                }
                vec![h]
            }
            CsTraining::SelfSupervised => {
                let mut hs = vec![DMatrix::<C<T>>::zeros(n, n); n];
                for s in dataset.samples() {
                    let support: Vec<usize> = (0..n).filter(|&k| s.split.m_input[k]).collect();
                    let vals: Vec<C<T>> = support.iter().map(|&k| s.spectrum[k]).collect();
                    for j in (0..n).filter(|&j| s.split.m_target[j]) {
                        let w2 = s.split.weights[j] * s.split.weights[j] * inv_n;
                        let t = s.spectrum[j];
                        let h = &mut hs[j];
                        for (b, &kb) in support.iter().enumerate() {
                            let zb = vals[b].conj() * w2;
                            for (a, &ka) in support.iter().enumerate() {
                                h[(ka, kb)] += vals[a] * zb;
                            }
                            cross[(kb, j)] += vals[b] * t.conj() * w2;
                        }
                        offset += t.norm_sqr() * w2;
                    }
                }
                hs
            }
        };
        Ok(Self { hessians, cross, offset })
    }

    pub(crate) fn offset_of(dataset: &CsDataset<T>, mode: CsTraining) -> Result<T> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let inv_n = T::one() / count::<T>(dataset.len());
        Ok(dataset.samples().iter().fold(T::zero(), |acc, s| {
            acc + match mode {
                CsTraining::Supervised => s.spectrum.norm_squared(),
                CsTraining::SelfSupervised => (0..s.spectrum.len())
                    .filter(|&j| s.split.m_target[j])
                    .fold(T::zero(), |a, j| a + s.split.weights[j] * s.split.weights[j] * s.spectrum[j].norm_sqr()),
            } * inv_n
        }))
    }

    /// Column `j` is `H_j g_j`.
    fn apply(&self, g: &DMatrix<C<T>>) -> DMatrix<C<T>> {
        if self.hessians.len() == 1 {
            return &self.hessians[0] * g;
        }
        let mut out = DMatrix::zeros(g.nrows(), g.ncols());
        for j in 0..g.ncols() {
            out.column_mut(j).gemv(C::new(T::one(), T::zero()), &self.hessians[j], &g.column(j), czero());
        }
        out
    }

    fn value(&self, g: &DMatrix<C<T>>) -> T {
        let quad = g.dotc(&self.apply(g)).re;
        let lin = g.dotc(&self.cross).re;
        quad - (lin + lin) + self.offset
    }
}

#[derive(Debug, Clone)]
pub struct CsTrainOptions<T> {
    /// Defaults to half the inverse of the largest curvature.
    pub learning_rate: Option<T>,
    pub patience: usize,
    pub max_epochs: usize,
}

impl<T> Default for CsTrainOptions<T> {
    fn default() -> Self {
        Self { learning_rate: None, patience: 10, max_epochs: 5000 }
    }
}

#[derive(Debug, Clone)]
pub struct CsTrainReport<T: Real> {
    pub reconstructor: CsReconstructor<T>,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub best_epoch: usize,
    pub best_validation_loss: T,
}

/// Gradient descent from zero on one block of rows sharing a Hessian
/// `H = Q diag(lambda) Q^H`. Each row's iterate is `Q (phi * Q^H v)`, where
/// the per-eigenvalue factor follows `phi <- phi (1 - 2 lr lambda) + 2 lr`,
/// so an epoch costs O(n) per row plus the validation quadratic form.
struct RowBlock<T: Real> {
    rows: Vec<usize>,
    eigvecs: DMatrix<C<T>>,
    eigvals: DVector<T>,
    /// `Q^H v_j` for each row of the block.
    rotated: DMatrix<C<T>>,
    /// `sum_j |Q^H v_j|^2` per eigenvalue.
    energy: DVector<T>,
    monitor: Monitor<T>,
    /// Validation linear term per eigenvalue.
    monitor_linear: DVector<T>,
}

/// Validation quadratic term `phi^T G phi`, stored as `G` or as a factor `Y`
/// with `G = Y^T Y`, whichever is smaller.
enum Monitor<T: Real> {
    Gram(DMatrix<T>),
    Factor(DMatrix<T>),
}

impl<T: Real> Monitor<T> {
    fn from_complex_factor(y: &DMatrix<C<T>>) -> Self {
        let (re, im) = (y.map(|v| v.re), y.map(|v| v.im));
        if y.nrows() > y.ncols() {
            Monitor::Gram(re.tr_mul(&re) + im.tr_mul(&im))
        } else {
            let mut stacked = DMatrix::zeros(2 * y.nrows(), y.ncols());
            stacked.rows_mut(0, y.nrows()).copy_from(&re);
            stacked.rows_mut(y.nrows(), y.nrows()).copy_from(&im);
            Monitor::Factor(stacked)
        }
    }

    fn quadratic(&self, phi: &DVector<T>) -> T {
        match self {
            Monitor::Gram(g) => phi.dot(&(g * phi)),
            Monitor::Factor(y) => (y * phi).norm_squared(),
        }
    }
}

impl<T: Real> RowBlock<T> {
    fn new(rows: Vec<usize>, hessian: DMatrix<C<T>>, cross: &DMatrix<C<T>>) -> Self {
        let eigen = hessian.symmetric_eigen();
        let (eigvecs, eigvals) = (eigen.eigenvectors, eigen.eigenvalues);
        let n = eigvals.len();
        let mut rotated = DMatrix::zeros(n, rows.len());
        for (k, &j) in rows.iter().enumerate() {
            rotated.set_column(k, &eigvecs.ad_mul(&cross.column(j)));
        }
        let energy = DVector::from_fn(n, |a, _| rotated.row(a).iter().fold(T::zero(), |s, v| s + v.norm_sqr()));
        Self {
            rows,
            eigvecs,
            eigvals,
            rotated,
            energy,
            monitor: Monitor::Gram(DMatrix::zeros(0, 0)),
            monitor_linear: DVector::zeros(n),
        }
    }

    fn monitor_linear_from(&mut self, val_cross: &DMatrix<C<T>>) {
        let n = self.eigvals.len();
        let mut lin = DVector::zeros(n);
        for (k, &j) in self.rows.iter().enumerate() {
            let r = self.eigvecs.ad_mul(&val_cross.column(j));
            for a in 0..n {
                lin[a] += (self.rotated[(a, k)].conj() * r[a]).re;
            }
        }
        self.monitor_linear = lin;
    }

    fn train_loss(&self, phi: &DVector<T>) -> T {
        let two = lit::<T>(2.0);
        (0..phi.len()).fold(T::zero(), |s, a| s + self.energy[a] * (self.eigvals[a] * phi[a] * phi[a] - two * phi[a]))
    }

    fn monitor_loss(&self, phi: &DVector<T>) -> T {
        let lin = phi.dot(&self.monitor_linear);
        self.monitor.quadratic(phi) - (lin + lin)
    }

    /// Writes the conjugated rows `Q (phi * Q^H v_j)` into the columns of `g`.
    fn write_rows(&self, phi: &DVector<T>, g: &mut DMatrix<C<T>>) {
        let scaled = DMatrix::from_fn(self.rotated.nrows(), self.rotated.ncols(), |a, k| self.rotated[(a, k)] * phi[a]);
        let cols = &self.eigvecs * scaled;
        for (k, &j) in self.rows.iter().enumerate() {
            g.set_column(j, &cols.column(k));
        }
    }
}

/// Splits the training problem into row blocks with their validation monitors.
fn row_blocks<T: Real>(
    train: &CsDataset<T>,
    validation: &CsDataset<T>,
    mode: CsTraining,
) -> Result<(Vec<RowBlock<T>>, T)> {
    let objective = RowQuadratics::build(train, mode)?;
    let n = train.scheme().n_freq();
    let RowQuadratics { hessians, cross, .. } = objective;
    match mode {
        CsTraining::Supervised => {
            let val = RowQuadratics::build(validation, mode)?;
            let hessian = hessians.into_iter().next().expect("one shared hessian");
            let mut block = RowBlock::new((0..n).collect(), hessian, &cross);
            let b = block.eigvecs.ad_mul(&(&val.hessians[0] * &block.eigvecs));
            let outer = &block.rotated * block.rotated.adjoint();
            block.monitor = Monitor::Gram(DMatrix::from_fn(n, n, |a, c| (b[(a, c)] * outer[(a, c)].conj()).re));
            block.monitor_linear_from(&val.cross);
            Ok((vec![block], val.offset))
        }
        CsTraining::SelfSupervised => {
            if validation.is_empty() {
                return Err(Error::EmptyDataset);
            }
            let inv_n = T::one() / count::<T>(validation.len());
            let mut members: Vec<Vec<(usize, T)>> = vec![Vec::new(); n];
            let mut val_cross = DMatrix::<C<T>>::zeros(n, n);
            let mut val_offset = T::zero();
            let inputs: Vec<DVector<C<T>>> = validation.samples().iter().map(|s| s.input_spectrum()).collect();
            for (i, s) in validation.samples().iter().enumerate() {
                for j in (0..n).filter(|&j| s.split.m_target[j]) {
                    let scale = s.split.weights[j] * s.split.weights[j] * inv_n;
                    members[j].push((i, scale));
                    let t = s.spectrum[j];
                    val_cross.column_mut(j).axpy(
                        C::new(scale, T::zero()) * t.conj(),
                        &inputs[i],
                        C::new(T::one(), T::zero()),
                    );
                    val_offset += t.norm_sqr() * scale;
                }
            }
            let blocks = hessians
                .into_iter()
                .enumerate()
                .map(|(j, h)| {
                    let mut block = RowBlock::new(vec![j], h, &cross);
                    let mut y = DMatrix::<C<T>>::zeros(members[j].len(), n);
                    for (r, &(i, scale)) in members[j].iter().enumerate() {
                        let row = inputs[i].ad_mul(&block.eigvecs);
                        let s = scale.sqrt();
                        for a in 0..n {
                            y[(r, a)] = row[a] * block.rotated[(a, 0)] * s;
                        }
                    }
                    block.monitor = Monitor::from_complex_factor(&y);
                    block.monitor_linear_from(&val_cross);
                    block
                })
                .collect();
            Ok((blocks, val_offset))
        }
    }
}

/// Early-stopped gradient descent from zero on `train`, monitored on `validation`.
pub fn train_cs_linear<T: Real>(
    train: &CsDataset<T>,
    validation: &CsDataset<T>,
    mode: CsTraining,
    options: &CsTrainOptions<T>,
) -> Result<CsTrainReport<T>> {
    if options.patience == 0 {
        return Err(Error::InvalidArgument("patience must be >= 1".into()));
    }
    let n = train.scheme().n_freq();
    if validation.scheme().n_freq() != n {
        return Err(Error::mismatch(n, validation.scheme().n_freq()));
    }
    let train_offset = RowQuadratics::offset_of(train, mode)?;
    let (blocks, val_offset) = row_blocks(train, validation, mode)?;
    let lr = match options.learning_rate {
        Some(lr) if lr >= T::zero() && lr.is_finite() => lr,
        Some(lr) => return Err(Error::InvalidArgument(format!("learning rate must be >= 0, got {lr}"))),
        None => {
            let curvature = blocks.iter().flat_map(|b| b.eigvals.iter()).fold(T::zero(), |m, &v| m.max(v));
            if !(curvature > T::zero()) {
                return Err(Error::InvalidArgument("training inputs carry no energy".into()));
            }
            lit::<T>(0.5) / curvature
        }
    };
    let two_lr = lit::<T>(2.0) * lr;
    let rise_tolerance = lit::<T>(1e-8);
    let decay: Vec<DVector<T>> = blocks.iter().map(|b| b.eigvals.map(|l| T::one() - two_lr * l)).collect();
    let monitor = |phis: &[DVector<T>]| blocks.iter().zip(phis).fold(val_offset, |s, (b, p)| s + b.monitor_loss(p));

    let mut phis: Vec<DVector<T>> = blocks.iter().map(|b| DVector::zeros(b.eigvals.len())).collect();
    let mut best = phis.clone();
    let mut best_loss = monitor(&phis);
    let mut best_epoch = 0;
    let mut stall = 0;
    let mut prev_train: Option<T> = None;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs = 0;

    for epoch in 1..=options.max_epochs {
        let train_loss = blocks.iter().zip(&phis).fold(train_offset, |s, (b, p)| s + b.train_loss(p));
        if !train_loss.is_finite() {
            return Err(divergence(epoch, "non-finite training loss"));
        }
        if let Some(prev) = prev_train {
            if train_loss - prev > rise_tolerance * (prev.abs() + train_offset.abs()) {
                return Err(divergence(epoch, "training loss increased; stepsize too large"));
            }
        }
        prev_train = Some(train_loss);

        for (phi, dec) in phis.iter_mut().zip(&decay) {
            phi.zip_apply(dec, |p, d| *p = *p * d + two_lr);
        }
        epochs = epoch;

        let val_loss = monitor(&phis);
        if !val_loss.is_finite() {
            return Err(divergence(epoch, "non-finite validation loss"));
        }
        if val_loss < best_loss {
            best_loss = val_loss;
            best.clone_from(&phis);
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

    let mut g = DMatrix::<C<T>>::zeros(n, n);
    if best_epoch > 0 {
        for (block, phi) in blocks.iter().zip(&best) {
            block.write_rows(phi, &mut g);
        }
    }
    Ok(CsTrainReport {
        reconstructor: CsReconstructor { spectral: g.adjoint() },
        iterations: epochs,
        stop_reason,
        best_epoch,
        best_validation_loss: best_loss,
    })
}

fn divergence(epoch: usize, reason: &str) -> Error {
    Error::Divergence { epoch, reason: reason.to_string() }
}

type MomentPair<T> = (DMatrix<C<T>>, DMatrix<C<T>>);

/// Second moments of the masked input spectrum under the input-mask law:
/// `E[z z^H]` and `E[z (F x)^H]`.
fn input_moments<T: Real>(model: &CsSignalModel<T>, scheme: &CsScheme<T>) -> Result<MomentPair<T>> {
    let n = model.n();
    let counts = scheme.counts()?;
    let k = model.spectral_covariance();
    let center = crate::cs_masks::center_indices(n, counts.center);
    let is_center: Vec<bool> = (0..n).map(|j| center.binary_search(&j).is_ok()).collect();
    let (k_in, n_nc) = (count::<T>(counts.input_extra), count::<T>(counts.non_center));
    let single = if counts.non_center == 0 { T::one() } else { k_in / n_nc };
    let pair = if counts.non_center < 2 { single } else { k_in * (k_in - T::one()) / (n_nc * (n_nc - T::one())) };
    let marginal = |a: usize| if is_center[a] { T::one() } else { single };
    let joint = |a: usize, b: usize| match (is_center[a], is_center[b]) {
        (true, true) => T::one(),
        (true, false) | (false, true) => single,
        (false, false) if a == b => single,
        (false, false) => pair,
    };
    let szz = DMatrix::from_fn(n, n, |a, b| k[(a, b)] * joint(a, b));
    let szx = DMatrix::from_fn(n, n, |a, b| k[(a, b)] * marginal(a));
    Ok((szz, szx))
}

/// Exact test risk `E||A F^H M F x - x||^2` over fresh signals and input masks.
pub fn cs_population_risk<T: Real>(
    recon: &CsReconstructor<T>,
    model: &CsSignalModel<T>,
    scheme: &CsScheme<T>,
) -> Result<T> {
    if recon.dim() != model.n() {
        return Err(Error::mismatch(model.n(), recon.dim()));
    }
    let (szz, szx) = input_moments(model, scheme)?;
    let c = recon.spectral();
    let quad = (c * &szz).dotc(c).re;
    let lin = c.component_mul(&szx.transpose()).iter().fold(T::zero(), |acc, v| acc + v.re);
    Ok(quad - (lin + lin) + signal_energy(model))
}

fn signal_energy<T: Real>(model: &CsSignalModel<T>) -> T {
    (&model.basis * model.basis.transpose()).trace() / count::<T>(model.d())
}

/// Risk of the best linear reconstructor for the scheme's input masks.
pub fn cs_optimal_risk<T: Real>(model: &CsSignalModel<T>, scheme: &CsScheme<T>) -> Result<T> {
    Ok(cs_population_risk(&cs_optimal_reconstructor(model, scheme)?, model, scheme)?.max(T::zero()))
}

/// `C* = E[F x z^H] E[z z^H]^+`.
pub fn cs_optimal_reconstructor<T: Real>(model: &CsSignalModel<T>, scheme: &CsScheme<T>) -> Result<CsReconstructor<T>> {
    let (szz, szx) = input_moments(model, scheme)?;
    let scale = szz.iter().fold(T::zero(), |m, v| m.max(v.norm_sqr().sqrt()));
    let pinv = szz
        .pseudo_inverse(scale * lit(1e-10))
        .map_err(|e| Error::InvalidArgument(format!("pseudo-inverse failed: {e}")))?;
    CsReconstructor::from_spectral(szx.adjoint() * pinv)
}

/// Held-out Monte Carlo estimate of the test risk with its standard error.
pub fn cs_monte_carlo_risk<T: Real>(
    recon: &CsReconstructor<T>,
    model: &CsSignalModel<T>,
    scheme: &CsScheme<T>,
    samples: usize,
    seed: u64,
) -> Result<(T, T)> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let data = CsDataset::generate(model, scheme, samples, seed)?;
    let errors: Vec<f64> = data
        .samples()
        .iter()
        .map(|s| (recon.spectral() * s.input_spectrum() - &s.spectrum).norm_squared().as_f64())
        .collect();
    let (mean, se) = crate::cs_masks::mean_and_se(&errors);
    Ok((lit(mean), lit(se)))
}

/// Per-sample gradient of a loss with respect to `C`, as the outer product
/// `u v^H`.
pub fn cs_sample_gradient_factors<T: Real>(
    recon: &CsReconstructor<T>,
    sample: &CsSample<T>,
    mode: CsTraining,
) -> (DVector<C<T>>, DVector<C<T>>) {
    let z = sample.input_spectrum();
    let residual = recon.spectral() * &z - &sample.spectrum;
    let two = lit::<T>(2.0);
    let u = match mode {
        CsTraining::Supervised => residual * C::new(two, T::zero()),
        CsTraining::SelfSupervised => DVector::from_fn(residual.len(), |j, _| {
            if sample.split.m_target[j] {
                let w = sample.split.weights[j];
                residual[j] * (two * w * w)
            } else {
                czero()
            }
        }),
    };
    (u, z)
}

/// Largest eigenvalue of the supervised training Hessian `(1/N) sum z z^H`.
pub(crate) fn supervised_curvature<T: Real>(dataset: &CsDataset<T>) -> Result<T> {
    let q = RowQuadratics::build(dataset, CsTraining::Supervised)?;
    Ok(q.hessians[0].symmetric_eigenvalues().iter().fold(T::zero(), |m, &v| m.max(v)))
}

/// Training loss of `recon` on a dataset, averaged over samples.
pub fn cs_empirical_loss<T: Real>(recon: &CsReconstructor<T>, dataset: &CsDataset<T>, mode: CsTraining) -> Result<T> {
    let q = RowQuadratics::build(dataset, mode)?;
    Ok(q.value(&recon.spectral().adjoint()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(mu: f64) -> (CsSignalModel<f64>, CsScheme<f64>) {
        (CsSignalModel::random(100, 10, 4).unwrap(), CsScheme::new(100, 0.08, 0.25, mu).unwrap())
    }

    #[test]
    fn signals_have_unit_energy() {
        let (model, _) = setup(0.33);
        let mut rng = rng::stream(1, 0);
        let m = 20_000;
        let mean = (0..m).map(|_| model.sample_signal(&mut rng).norm_squared()).sum::<f64>() / m as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
        assert!((signal_energy(&model) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn datasets_share_inputs_across_mu() {
        let (model, a) = setup(0.33);
        let b = CsScheme::new(100, 0.08, 0.25, 0.28).unwrap();
        let da = CsDataset::generate(&model, &a, 20, 3).unwrap();
        let db = CsDataset::generate(&model, &b, 20, 3).unwrap();
        for (sa, sb) in da.samples().iter().zip(db.samples()) {
            assert_eq!(sa.x, sb.x);
            assert_eq!(sa.split.m_input, sb.split.m_input);
        }
    }

    #[test]
    fn quadratic_value_matches_direct_loss() {
        let (model, scheme) = setup(0.33);
        let data = CsDataset::generate(&model, &scheme, 30, 5).unwrap();
        let mut rng = rng::stream(8, 0);
        let c = DMatrix::from_fn(100, 100, |_, _| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 0.05);
        let recon = CsReconstructor::from_spectral(c).unwrap();
        let dft = model.dft();
        let direct_ss = data
            .samples()
            .iter()
            .map(|s| {
                let zero_filled = dft.inverse_vec(&s.input_spectrum()).unwrap();
                let f = recon.apply(&zero_filled, dft).unwrap();
                crate::cs_masks::ss_cs_loss(
                    f.as_slice(),
                    s.target().as_slice(),
                    &s.split.m_target,
                    &s.split.weights,
                    dft,
                )
                .unwrap()
            })
            .sum::<f64>()
            / 30.0;
        let quad_ss = cs_empirical_loss(&recon, &data, CsTraining::SelfSupervised).unwrap();
        assert!((direct_ss - quad_ss).abs() < 1e-10 * direct_ss.max(1.0), "{direct_ss} {quad_ss}");

        let direct_sup = data
            .samples()
            .iter()
            .map(|s| {
                let zero_filled = dft.inverse_vec(&s.input_spectrum()).unwrap();
                (recon.apply(&zero_filled, dft).unwrap() - &s.x).norm_squared()
            })
            .sum::<f64>()
            / 30.0;
        let quad_sup = cs_empirical_loss(&recon, &data, CsTraining::Supervised).unwrap();
        assert!((direct_sup - quad_sup).abs() < 1e-10 * direct_sup.max(1.0));
    }

    #[test]
    fn population_risk_matches_monte_carlo() {
        let (model, scheme) = setup(0.33);
        let recon = cs_optimal_reconstructor(&model, &scheme).unwrap();
        let exact = cs_population_risk(&recon, &model, &scheme).unwrap();
        let (mc, se) = cs_monte_carlo_risk(&recon, &model, &scheme, 20_000, 11).unwrap();
        assert!((exact - mc).abs() < 4.0 * se, "{exact} {mc} {se}");
        let zero = cs_population_risk(&CsReconstructor::zeros(100), &model, &scheme).unwrap();
        assert!((zero - 1.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_reconstructor_beats_perturbations() {
        let (model, scheme) = setup(0.33);
        let best = cs_optimal_reconstructor(&model, &scheme).unwrap();
        let r = cs_population_risk(&best, &model, &scheme).unwrap();
        assert!(r > 0.0 && r < 1.0);
        let mut rng = rng::stream(2, 0);
        for _ in 0..5 {
            let bump =
                DMatrix::from_fn(100, 100, |_, _| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5) * 1e-3);
            let other = CsReconstructor::from_spectral(best.spectral() + bump).unwrap();
            assert!(cs_population_risk(&other, &model, &scheme).unwrap() >= r - 1e-12);
        }
    }

    #[test]
    fn eigenbasis_descent_matches_plain_iteration() {
        let (model, scheme) = setup(0.33);
        let train = CsDataset::generate(&model, &scheme, 60, 31).unwrap();
        let val = CsDataset::generate(&model, &scheme, 50, 32).unwrap();
        for mode in [CsTraining::Supervised, CsTraining::SelfSupervised] {
            let q = RowQuadratics::build(&train, mode).unwrap();
            let lr = 0.02;
            let options = CsTrainOptions { learning_rate: Some(lr), patience: 1000, max_epochs: 40 };
            let report = train_cs_linear(&train, &val, mode, &options).unwrap();
            assert!(report.best_epoch > 0);
            let mut g = DMatrix::<C<f64>>::zeros(100, 100);
            for _ in 0..report.best_epoch {
                let grad = q.apply(&g) - &q.cross;
                g -= grad * C::new(2.0 * lr, 0.0);
            }
            let diff = (report.reconstructor.spectral() - g.adjoint()).norm();
            assert!(diff < 1e-9 * g.norm().max(1.0), "{mode:?}: {diff}");
            let val_q = RowQuadratics::build(&val, mode).unwrap();
            assert!((val_q.value(&g) - report.best_validation_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn training_reduces_risk() {
        let (model, scheme) = setup(0.33);
        let train = CsDataset::generate(&model, &scheme, 200, 21).unwrap();
        let val = CsDataset::generate(&model, &scheme, 50, 22).unwrap();
        for mode in [CsTraining::Supervised, CsTraining::SelfSupervised] {
            let report = train_cs_linear(&train, &val, mode, &CsTrainOptions::default()).unwrap();
            let risk = cs_population_risk(&report.reconstructor, &model, &scheme).unwrap();
            assert!(risk < 0.9, "{mode:?} {risk}");
        }
    }
}
