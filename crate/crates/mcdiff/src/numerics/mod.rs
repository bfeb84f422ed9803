//! Complex grid arithmetic, the unitary 2-D Fourier transform used as the
//! measuring operator, and a seeded counter-based Gaussian source.

mod fft;
mod rng;

pub use fft::{dft2, idft2};
pub use rng::{gaussian, gaussian_complex, RngStream};

use std::fmt;

use num_complex::Complex;

use crate::scalar::Scalar;

/// Dimension mismatch between two grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimMismatch {
    pub expected: (usize, usize),
    pub got: (usize, usize),
}

impl fmt::Display for DimMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grid dimension mismatch: expected {}x{}, got {}x{}",
            self.expected.0, self.expected.1, self.got.0, self.got.1
        )
    }
}

impl std::error::Error for DimMismatch {}

/// H×W complex-valued field stored row-major as (re, im) pairs.
///
/// Holds both images and k-space measurement vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid<T> {
    height: usize,
    width: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> ComplexGrid<T> {
    /// All-zero grid. `height` and `width` must be at least 1.
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "grid dimensions must be >= 1");
        Self {
            height,
            width,
            data: vec![Complex::new(T::zero(), T::zero()); height * width],
        }
    }

    /// Builds a grid from row-major data; fails on a length mismatch.
    pub fn from_data(
        height: usize,
        width: usize,
        data: Vec<Complex<T>>,
    ) -> Result<Self, DimMismatch> {
        if data.len() != height * width {
            return Err(DimMismatch {
                expected: (height, width),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Complex<T>,
    ) -> Self {
        let mut g = Self::zeros(height, width);
        for r in 0..height {
            for c in 0..width {
                g.data[r * width + c] = f(r, c);
            }
        }
        g
    }

    /// Assembles a complex grid from separate real and imaginary channels.
    pub fn from_channels(re: &RealGrid<T>, im: &RealGrid<T>) -> Result<Self, DimMismatch> {
        if re.shape() != im.shape() {
            return Err(DimMismatch {
                expected: re.shape(),
                got: im.shape(),
            });
        }
        Ok(Self {
            height: re.height,
            width: re.width,
            data: re
                .data
                .iter()
                .zip(im.data.iter())
                .map(|(&a, &b)| Complex::new(a, b))
                .collect(),
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[Complex<T>] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: Complex<T>) {
        self.data[row * self.width + col] = v;
    }

    pub fn check_shape(&self, other: &Self) -> Result<(), DimMismatch> {
        if self.shape() != other.shape() {
            return Err(DimMismatch {
                expected: self.shape(),
                got: other.shape(),
            });
        }
        Ok(())
    }

    /// Entrywise sum.
    pub fn add(&self, other: &Self) -> Result<Self, DimMismatch> {
        self.check_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Entrywise difference.
    pub fn sub(&self, other: &Self) -> Result<Self, DimMismatch> {
        self.check_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    /// Entrywise scaling by a real factor.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v * factor).collect(),
        }
    }

    /// `a*x + b*y` with real coefficients.
    pub fn lin_comb(a: T, x: &Self, b: T, y: &Self) -> Result<Self, DimMismatch> {
        x.check_shape(y)?;
        let data = x
            .data
            .iter()
            .zip(y.data.iter())
            .map(|(&u, &v)| u * a + v * b)
            .collect();
        Ok(Self {
            height: x.height,
            width: x.width,
            data,
        })
    }

    /// Euclidean norm over both real channels.
    pub fn l2_norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, v| acc + v.norm_sqr())
            .sqrt()
    }

    /// Largest entrywise modulus of the difference; `inf` on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> T {
        if self.shape() != other.shape() {
            return T::infinity();
        }
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).norm()))
    }

    pub fn all_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.re.is_finite() && v.im.is_finite())
    }

    /// Real channel as a grid.
    pub fn re_channel(&self) -> RealGrid<T> {
        RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.re).collect(),
        }
    }

    /// Imaginary channel as a grid.
    pub fn im_channel(&self) -> RealGrid<T> {
        RealGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.im).collect(),
        }
    }
}

/// H×W real-valued field stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RealGrid<T> {
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> RealGrid<T> {
    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height >= 1 && width >= 1, "grid dimensions must be >= 1");
        Self {
            height,
            width,
            data: vec![T::zero(); height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<T>) -> Result<Self, DimMismatch> {
        if data.len() != height * width {
            return Err(DimMismatch {
                expected: (height, width),
                got: (data.len(), 1),
            });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        self.data[row * self.width + col] = v;
    }

    /// Largest entry value.
    pub fn max_value(&self) -> T {
        self.data
            .iter()
            .fold(T::neg_infinity(), |acc, &v| acc.max(v))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        if self.shape() != other.shape() {
            return T::infinity();
        }
        self.data
            .iter()
            .zip(other.data.iter())
            .fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lin_comb_matches_manual() {
        let x = ComplexGrid::<f64>::from_fn(2, 3, |r, c| Complex::new(r as f64, c as f64));
        let y = ComplexGrid::<f64>::from_fn(2, 3, |r, c| Complex::new(c as f64, -(r as f64)));
        let z = ComplexGrid::lin_comb(2.0, &x, -1.0, &y).unwrap();
        assert_eq!(z.get(1, 2), Complex::new(2.0 * 1.0 - 2.0, 2.0 * 2.0 + 1.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let x = ComplexGrid::<f64>::zeros(2, 2);
        let y = ComplexGrid::<f64>::zeros(2, 3);
        assert!(x.add(&y).is_err());
    }

    #[test]
    fn channels_round_trip() {
        let x =
            ComplexGrid::<f64>::from_fn(3, 4, |r, c| Complex::new(r as f64 + 0.5, c as f64 - 0.5));
        let back = ComplexGrid::from_channels(&x.re_channel(), &x.im_channel()).unwrap();
        assert_eq!(x, back);
    }
}
