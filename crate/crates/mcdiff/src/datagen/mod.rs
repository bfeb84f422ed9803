//! Synthetic complex phantoms and all persistence: tensor files, mask files,
//! checkpoints and dataset manifests.

mod checkpoint;
mod dataset;
mod maskfile;
mod tensorfile;

pub use checkpoint::{
    read_checkpoint, read_checkpoint_expecting, write_checkpoint, CheckpointBundle,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use dataset::{
    build_dataset, load_dataset, load_manifest, manifest_item_paths, DatasetError, Manifest,
    MANIFEST_NAME,
};
pub use maskfile::{decode_mask, encode_mask, read_mask, write_mask, MaskFileError, MASK_HEADER};
pub use tensorfile::{
    decode_tensor, encode_tensor, read_complex_grid, read_real_grid, read_tensor,
    write_complex_grid, write_real_grid, write_tensor, GridCodec, TensorFileError, TensorPayload,
    DTYPE_C32, DTYPE_C64, DTYPE_F32, DTYPE_F64, DTYPE_U8, TENSOR_MAGIC, TENSOR_VERSION,
};

use std::fmt;

use num_complex::Complex;

use crate::numerics::{dft2, idft2, ComplexGrid, RealGrid, RngStream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub enum DatagenError {
    BadConfig(String),
}

impl fmt::Display for DatagenError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatagenError::BadConfig(msg) => write!(f, "invalid phantom config: {msg}"),
        }
    }
}

impl std::error::Error for DatagenError {}

/// Synthetic phantom description: overlapping soft ellipses for the
/// magnitude and a band-limited random field for the phase, so both channels
/// of the complex image carry structure.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    pub n_ellipses: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    /// Low-pass cutoff for the phase field as a fraction of the Nyquist
    /// band, in (0, 0.5].
    pub phase_cutoff: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 32,
            n_ellipses: 6,
            intensity_min: 0.2,
            intensity_max: 0.9,
            phase_cutoff: 0.25,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        if self.size < 8 {
            return Err(DatagenError::BadConfig(format!("size {} < 8", self.size)));
        }
        if self.n_ellipses == 0 {
            return Err(DatagenError::BadConfig("need at least one ellipse".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity_min)
            || !(0.0..=1.0).contains(&self.intensity_max)
            || self.intensity_min > self.intensity_max
        {
            return Err(DatagenError::BadConfig(format!(
                "intensity range [{}, {}] must sit inside [0, 1]",
                self.intensity_min, self.intensity_max
            )));
        }
        if !(self.phase_cutoff > 0.0 && self.phase_cutoff <= 0.5) {
            return Err(DatagenError::BadConfig(format!(
                "phase cutoff {} outside (0, 0.5]",
                self.phase_cutoff
            )));
        }
        Ok(())
    }
}

/// Magnitude in [0, 1] and the normalized band-limited phase field in
/// [0, 1]; the phantom is `magnitude * exp(i * 2 * pi * phase_field)`.
pub fn phantom_parts<T: Scalar>(
    config: &PhantomConfig,
) -> Result<(RealGrid<T>, RealGrid<T>), DatagenError> {
    config.validate()?;
    let n = config.size;
    let mut rng = RngStream::new(config.seed, 0);

    let mut magnitude = vec![0.0f64; n * n];
    for _ in 0..config.n_ellipses {
        let cx = (0.2 + 0.6 * rng.next_uniform()) * n as f64;
        let cy = (0.2 + 0.6 * rng.next_uniform()) * n as f64;
        let a = (0.08 + 0.22 * rng.next_uniform()) * n as f64;
        let b = (0.08 + 0.22 * rng.next_uniform()) * n as f64;
        let theta = std::f64::consts::PI * rng.next_uniform();
        let intensity = config.intensity_min
            + (config.intensity_max - config.intensity_min) * rng.next_uniform();
        let (sin_t, cos_t) = theta.sin_cos();
        // Soft edge roughly one pixel wide in the ellipse metric.
        let edge = 1.0 / a.min(b);
        for y in 0..n {
            for x in 0..n {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * cos_t + dy * sin_t) / a;
                let v = (-dx * sin_t + dy * cos_t) / b;
                let r = (u * u + v * v).sqrt();
                let t = ((1.0 - r) / edge).clamp(0.0, 1.0);
                let coverage = t * t * (3.0 - 2.0 * t);
                magnitude[y * n + x] += intensity * coverage;
            }
        }
    }
    for v in &mut magnitude {
        *v = v.clamp(0.0, 1.0);
    }

    // Band-limited phase: white noise, hard low-pass box around DC in the
    // centered view, back to image space, min-max normalized to [0, 1].
    // The normalization is affine, so it only moves in-band (DC) energy.
    let noise = ComplexGrid::<f64>::from_fn(n, n, |_, _| {
        let (a, b) = rng.next_normal_pair();
        Complex::new(a, b)
    });
    let mut spectrum = dft2(&noise);
    for r in 0..n {
        for c in 0..n {
            if !(in_band(r, n, config.phase_cutoff) && in_band(c, n, config.phase_cutoff)) {
                spectrum.set(r, c, Complex::new(0.0, 0.0));
            }
        }
    }
    let field = idft2(&spectrum);
    let raw: Vec<f64> = field.data().iter().map(|v| v.re).collect();
    let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mag = RealGrid::from_data(
        n,
        n,
        magnitude.iter().map(|&v| T::from_f64_lossy(v)).collect(),
    )
    .expect("square grid");
    let phase = RealGrid::from_data(
        n,
        n,
        raw.iter()
            .map(|&v| T::from_f64_lossy((v - lo) / span))
            .collect(),
    )
    .expect("square grid");
    Ok((mag, phase))
}

/// Circular distance of a non-centered frequency index from DC, compared to
/// the cutoff fraction of the Nyquist band.
pub fn in_band(index: usize, extent: usize, cutoff: f64) -> bool {
    let dist = index.min(extent - index) as f64;
    dist <= cutoff * (extent as f64 / 2.0)
}

/// Deterministic synthetic complex image assembled from [`phantom_parts`].
pub fn gen_phantom<T: Scalar>(config: &PhantomConfig) -> Result<ComplexGrid<T>, DatagenError> {
    let (mag, phase) = phantom_parts::<T>(config)?;
    let n = config.size;
    let two_pi = T::from_f64_lossy(2.0 * std::f64::consts::PI);
    let mut out = ComplexGrid::zeros(n, n);
    for i in 0..n * n {
        let angle = two_pi * phase.data()[i];
        let m = mag.data()[i];
        out.data_mut()[i] = Complex::new(m * angle.cos(), m * angle.sin());
    }
    Ok(out)
}
