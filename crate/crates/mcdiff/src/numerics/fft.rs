//! Unitary, non-centered 2-D discrete Fourier transform.
//!
//! Both directions carry the 1/sqrt(HW) factor, so the transform is
//! norm-preserving and the inverse is the conjugate transpose. The DC
//! coefficient sits at index (0, 0); any centered view is a concern of the
//! sampling-mask layer, not of the transform.

use num_complex::Complex;

use super::ComplexGrid;
use crate::scalar::{from_usize, Scalar};

/// Forward unitary 2-D DFT.
pub fn dft2<T: Scalar>(x: &ComplexGrid<T>) -> ComplexGrid<T> {
    transform(x, false)
}

/// Inverse unitary 2-D DFT; exact inverse of [`dft2`] up to roundoff.
pub fn idft2<T: Scalar>(y: &ComplexGrid<T>) -> ComplexGrid<T> {
    transform(y, true)
}

fn transform<T: Scalar>(x: &ComplexGrid<T>, inverse: bool) -> ComplexGrid<T> {
    let (h, w) = x.shape();
    let mut out = x.clone();

    // Rows, then columns through a scratch buffer.
    for r in 0..h {
        fft_1d(&mut out.data_mut()[r * w..(r + 1) * w], inverse);
    }
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for c in 0..w {
        for r in 0..h {
            col[r] = out.get(r, c);
        }
        fft_1d(&mut col, inverse);
        for r in 0..h {
            out.set(r, c, col[r]);
        }
    }

    let scale = (from_usize::<T>(h * w)).sqrt().recip();
    for v in out.data_mut() {
        *v = *v * scale;
    }
    out
}

/// In-place 1-D DFT without normalization. Radix-2 for power-of-two lengths,
/// direct summation otherwise (non-power-of-two sizes are supported but not
/// optimized).
fn fft_1d<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    if n.is_power_of_two() {
        fft_radix2(buf, inverse);
    } else {
        naive_dft(buf, inverse);
    }
}

fn fft_radix2<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { T::one() } else { -T::one() };
    let two_pi = T::PI() + T::PI();
    let mut len = 2usize;
    while len <= n {
        let ang = sign * two_pi / from_usize::<T>(len);
        let w_len = Complex::new(ang.cos(), ang.sin());
        let half = len / 2;
        let mut start = 0usize;
        while start < n {
            let mut w = Complex::new(T::one(), T::zero());
            for k in 0..half {
                let u = buf[start + k];
                let v = buf[start + k + half] * w;
                buf[start + k] = u + v;
                buf[start + k + half] = u - v;
                w = w * w_len;
            }
            start += len;
        }
        len <<= 1;
    }
}

fn naive_dft<T: Scalar>(buf: &mut [Complex<T>], inverse: bool) {
    let n = buf.len();
    let sign = if inverse { T::one() } else { -T::one() };
    let two_pi = T::PI() + T::PI();
    let step = sign * two_pi / from_usize::<T>(n);
    let mut out = vec![Complex::new(T::zero(), T::zero()); n];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = Complex::new(T::zero(), T::zero());
        for (j, &v) in buf.iter().enumerate() {
            let ang = step * from_usize::<T>((k * j) % n);
            acc = acc + v * Complex::new(ang.cos(), ang.sin());
        }
        *slot = acc;
    }
    buf.copy_from_slice(&out);
}
