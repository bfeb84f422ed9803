//! Magnitude images, reconstruction quality metrics and Monte-Carlo
//! mean/standard-deviation maps over posterior samples.

use std::fmt;

use crate::numerics::{ComplexGrid, RealGrid};
use crate::scalar::{from_usize, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    ZeroReference,
    BadDataRange,
    EmptySampleList,
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::ShapeMismatch { expected, got } => write!(
                f,
                "grid shapes differ: {}x{} vs {}x{}",
                expected.0, expected.1, got.0, got.1
            ),
            EvalError::ZeroReference => write!(f, "reference image is identically zero"),
            EvalError::BadDataRange => write!(f, "data range must be positive"),
            EvalError::EmptySampleList => write!(f, "need at least one sample"),
        }
    }
}

impl std::error::Error for EvalError {}

/// PSNR is capped here when the squared error underflows to keep reports
/// total.
pub const PSNR_CAP_DB: f64 = 100.0;
const MSE_FLOOR: f64 = 1e-20;

/// Reconstruction quality record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRecord<T> {
    pub psnr: T,
    pub ssim: T,
    pub nmse: T,
    pub mse: T,
    pub data_range: T,
}

impl<T: Scalar> MetricRecord<T> {
    pub const CSV_HEADER: &'static str = "psnr,ssim,nmse,mse,data_range";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.psnr, self.ssim, self.nmse, self.mse, self.data_range
        )
    }

    pub fn kv_block(&self, prefix: &str) -> String {
        let dot = if prefix.is_empty() { "" } else { "." };
        format!(
            "{prefix}{dot}psnr={}\n{prefix}{dot}ssim={}\n{prefix}{dot}nmse={}\n{prefix}{dot}mse={}\n{prefix}{dot}data_range={}\n",
            self.psnr, self.ssim, self.nmse, self.mse, self.data_range
        )
    }
}

/// Per-pixel modulus of a complex field; the displayed image.
pub fn magnitude<T: Scalar>(x: &ComplexGrid<T>) -> RealGrid<T> {
    let mut out = RealGrid::zeros(x.height(), x.width());
    for (dst, v) in out.data_mut().iter_mut().zip(x.data()) {
        *dst = v.norm();
    }
    out
}

/// PSNR, SSIM, NMSE and MSE of `recon` against `gt`. The data range defaults
/// to the maximum of the reference. SSIM uses uniform square windows of side
/// `min(7, H, W)` fully inside the image, with the usual 0.01/0.03 stability
/// constants.
pub fn metrics<T: Scalar>(
    recon: &RealGrid<T>,
    gt: &RealGrid<T>,
    data_range: Option<T>,
) -> Result<MetricRecord<T>, EvalError> {
    if recon.shape() != gt.shape() {
        return Err(EvalError::ShapeMismatch {
            expected: gt.shape(),
            got: recon.shape(),
        });
    }
    let range = match data_range {
        Some(r) if r > T::zero() => r,
        Some(_) => return Err(EvalError::BadDataRange),
        None => {
            let m = gt.max_value();
            if !(m > T::zero()) {
                return Err(EvalError::ZeroReference);
            }
            m
        }
    };

    let n = from_usize::<T>(gt.data().len());
    let mut err_sq = T::zero();
    let mut ref_sq = T::zero();
    for (&a, &b) in recon.data().iter().zip(gt.data()) {
        let d = b - a;
        err_sq += d * d;
        ref_sq += b * b;
    }
    if !(ref_sq > T::zero()) {
        return Err(EvalError::ZeroReference);
    }
    let mse = err_sq / n;
    let nmse = err_sq / ref_sq;
    let psnr = if mse.to_f64_lossy() < MSE_FLOOR {
        T::from_f64_lossy(PSNR_CAP_DB)
    } else {
        let ten = T::from_f64_lossy(10.0);
        ten * (range * range / mse).log10()
    };
    let ssim = ssim_uniform(recon, gt, range);
    Ok(MetricRecord {
        psnr,
        ssim,
        nmse,
        mse,
        data_range: range,
    })
}

/// Mean local SSIM over all window positions fully inside the image, uniform
/// weights, population moments.
fn ssim_uniform<T: Scalar>(recon: &RealGrid<T>, gt: &RealGrid<T>, range: T) -> T {
    let (h, w) = gt.shape();
    let win = 7usize.min(h).min(w);
    let n_win = from_usize::<T>(win * win);
    let c1 = {
        let k = T::from_f64_lossy(0.01) * range;
        k * k
    };
    let c2 = {
        let k = T::from_f64_lossy(0.03) * range;
        k * k
    };
    let two = T::one() + T::one();
    let mut acc = T::zero();
    let mut count = 0usize;
    for y0 in 0..=h - win {
        for x0 in 0..=w - win {
            let (mut sa, mut sb, mut saa, mut sbb, mut sab) =
                (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
            for y in y0..y0 + win {
                for x in x0..x0 + win {
                    let a = recon.get(y, x);
                    let b = gt.get(y, x);
                    sa += a;
                    sb += b;
                    saa += a * a;
                    sbb += b * b;
                    sab += a * b;
                }
            }
            let ma = sa / n_win;
            let mb = sb / n_win;
            let va = saa / n_win - ma * ma;
            let vb = sbb / n_win - mb * mb;
            let cov = sab / n_win - ma * mb;
            let num = (two * ma * mb + c1) * (two * cov + c2);
            let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
            acc += num / den;
            count += 1;
        }
    }
    acc / from_usize::<T>(count)
}

/// Per-pixel mean and population standard deviation of the magnitude images
/// across posterior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap<T> {
    pub mean: RealGrid<T>,
    pub std: RealGrid<T>,
    pub n_samples: usize,
}

pub fn sample_stats<T: Scalar>(samples: &[ComplexGrid<T>]) -> Result<UncertaintyMap<T>, EvalError> {
    let first = samples.first().ok_or(EvalError::EmptySampleList)?;
    let (h, w) = first.shape();
    for s in samples {
        if s.shape() != (h, w) {
            return Err(EvalError::ShapeMismatch {
                expected: (h, w),
                got: s.shape(),
            });
        }
    }
    let n = from_usize::<T>(samples.len());
    let mags: Vec<RealGrid<T>> = samples.iter().map(magnitude).collect();
    let mut mean = RealGrid::zeros(h, w);
    for m in &mags {
        for (dst, &v) in mean.data_mut().iter_mut().zip(m.data()) {
            *dst += v;
        }
    }
    for v in mean.data_mut() {
        *v /= n;
    }
    let mut std = RealGrid::zeros(h, w);
    if samples.len() > 1 {
        for m in &mags {
            for ((dst, &v), &mu) in std.data_mut().iter_mut().zip(m.data()).zip(mean.data()) {
                let d = v - mu;
                *dst += d * d;
            }
        }
        for v in std.data_mut() {
            let scaled: T = *v / n;
            *v = scaled.sqrt();
        }
    }
    Ok(UncertaintyMap {
        mean,
        std,
        n_samples: samples.len(),
    })
}
