//! Unitary discrete Fourier transform, `F` scaled by `1/sqrt(n)`.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::{count, Real};

#[derive(Clone)]
pub struct UnitaryDft<T: Real> {
    n: usize,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
    scale: T,
}

impl<T: Real> std::fmt::Debug for UnitaryDft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("UnitaryDft").field("n", &self.n).finish()
    }
}

impl<T: Real> UnitaryDft<T> {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidDimension("transform length must be positive".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            scale: T::one() / count::<T>(n).sqrt(),
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn forward(&self, signal: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        self.run(&self.forward, signal)
    }

    pub fn inverse(&self, spectrum: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        self.run(&self.inverse, spectrum)
    }

    pub fn forward_vec(&self, signal: &DVector<Complex<T>>) -> Result<DVector<Complex<T>>> {
        Ok(DVector::from_vec(self.forward(signal.as_slice())?))
    }

    pub fn inverse_vec(&self, spectrum: &DVector<Complex<T>>) -> Result<DVector<Complex<T>>> {
        Ok(DVector::from_vec(self.inverse(spectrum.as_slice())?))
    }

    /// Dense `n x n` matrix of the transform.
    pub fn matrix(&self) -> DMatrix<Complex<T>> {
        let mut out = DMatrix::zeros(self.n, self.n);
        let mut column = vec![Complex::new(T::zero(), T::zero()); self.n];
        for j in 0..self.n {
            column.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
            column[j] = Complex::new(T::one(), T::zero());
            self.forward.process(&mut column);
            for (i, v) in column.iter().enumerate() {
                out[(i, j)] = *v * self.scale;
            }
        }
        out
    }

    fn run(&self, plan: &Arc<dyn Fft<T>>, input: &[Complex<T>]) -> Result<Vec<Complex<T>>> {
        if input.len() != self.n {
            return Err(Error::mismatch(self.n, input.len()));
        }
        let mut buffer = input.to_vec();
        plan.process(&mut buffer);
        buffer.iter_mut().for_each(|v| *v *= self.scale);
        Ok(buffer)
    }
}
