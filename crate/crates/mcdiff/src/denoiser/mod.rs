//! Trainable noise predictor with its own reverse-mode gradients.
//!
//! The network sees two complex fields as four real channels: the inverse
//! transform of the noised full spectrum and the inverse transform of the
//! acquired measurements alone. Its two-channel output is interpreted as a
//! complex field, optionally carried back to measurement space, and projected
//! onto the non-acquired columns, so predictions can never touch acquired
//! data.

mod net;
mod optim;
mod tensor;

pub use net::{time_embedding, ArchConfig, OutputDomain};
pub use optim::{adamw_step, AdamHyper, OptimizerState};
pub use tensor::{ParamVec, Tensor};

use std::fmt;

use rayon::prelude::*;

use crate::diffusion::{q_sample, simple_loss, DiffusionError, DiffusionState, EpsModel};
use crate::measurement::{MaskError, PartialKSpace, Side};
use crate::numerics::{dft2, idft2, ComplexGrid, RngStream};
use crate::scalar::{from_usize, Scalar};
use crate::schedule::DiffusionSchedule;

#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserError {
    BadConfig(String),
    OddEmbeddingDim(usize),
    ShapeMismatch(String),
    EmptyBatch,
    Mask(MaskError),
    Diffusion(String),
}

impl fmt::Display for DenoiserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserError::BadConfig(msg) => write!(f, "invalid architecture: {msg}"),
            DenoiserError::OddEmbeddingDim(d) => {
                write!(f, "time embedding size {d} must be even and positive")
            }
            DenoiserError::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            DenoiserError::EmptyBatch => write!(f, "training batch is empty"),
            DenoiserError::Mask(e) => write!(f, "{e}"),
            DenoiserError::Diffusion(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for DenoiserError {}

impl From<MaskError> for DenoiserError {
    fn from(e: MaskError) -> Self {
        DenoiserError::Mask(e)
    }
}

impl From<DiffusionError> for DenoiserError {
    fn from(e: DiffusionError) -> Self {
        DenoiserError::Diffusion(e.to_string())
    }
}

/// All trainable weights plus the architecture record they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams<T> {
    arch: ArchConfig,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> DenoiserParams<T> {
    /// Fan-in-scaled random initialization, deterministic per stream.
    pub fn init(arch: ArchConfig, rng: &mut RngStream) -> Result<Self, DenoiserError> {
        arch.validate()?;
        Ok(Self {
            arch,
            tensors: net::init_tensors(&arch, rng),
        })
    }

    /// Rebuilds parameters from stored tensors, validating every shape
    /// against the architecture record.
    pub fn from_tensors(arch: ArchConfig, tensors: Vec<Tensor<T>>) -> Result<Self, DenoiserError> {
        arch.validate()?;
        let plan = arch.param_plan();
        if plan.len() != tensors.len() {
            return Err(DenoiserError::ShapeMismatch(format!(
                "expected {} tensors, got {}",
                plan.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in plan.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(DenoiserError::ShapeMismatch(format!(
                    "tensor {name}: expected {shape:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { arch, tensors })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.tensors[index]
    }

    /// Named views in storage order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        self.arch
            .param_plan()
            .into_iter()
            .map(|(name, _)| name)
            .zip(self.tensors.iter())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}

/// One supervised draw of the training objective.
#[derive(Debug, Clone)]
pub struct TrainItem<T> {
    pub y0_c: PartialKSpace<T>,
    pub y_m: PartialKSpace<T>,
    pub t: usize,
    pub noise: PartialKSpace<T>,
}

/// Runs the noise predictor. The returned grid is supported on the
/// non-acquired columns only, whatever the parameters.
pub fn eps_theta<T: Scalar>(
    params: &DenoiserParams<T>,
    y_t: &DiffusionState<T>,
    y_m: &PartialKSpace<T>,
    t_cond: usize,
) -> Result<PartialKSpace<T>, DenoiserError> {
    let (trace, h, w) = eps_theta_forward(params, y_t, y_m, t_cond)?;
    finish_eps(params, trace.output.as_slice(), y_t, h, w)
}

fn eps_theta_forward<T: Scalar>(
    params: &DenoiserParams<T>,
    y_t: &DiffusionState<T>,
    y_m: &PartialKSpace<T>,
    t_cond: usize,
) -> Result<(net::Trace<T>, usize, usize), DenoiserError> {
    if y_t.y.side() != Side::NonSampled || y_m.side() != Side::Sampled {
        return Err(DenoiserError::Mask(MaskError::SideMismatch));
    }
    if !y_t.y.mask().same_support(y_m.mask()) {
        return Err(DenoiserError::Mask(MaskError::MaskMismatch));
    }
    let (h, w) = y_t.y.grid().shape();
    let arch = &params.arch;
    if arch.in_channels != 4 || arch.out_channels != 2 {
        return Err(DenoiserError::BadConfig(
            "the measurement-conditioned input contract needs 4 input and 2 output channels".into(),
        ));
    }
    let full_t = y_t.y.grid().add(y_m.grid()).map_err(MaskError::from)?;
    let zf_t = idft2(&full_t);
    let zf_m = idft2(y_m.grid());
    let hw = h * w;
    let mut input = vec![T::zero(); 4 * hw];
    for (i, v) in zf_t.data().iter().enumerate() {
        input[i] = v.re;
        input[hw + i] = v.im;
    }
    for (i, v) in zf_m.data().iter().enumerate() {
        input[2 * hw + i] = v.re;
        input[3 * hw + i] = v.im;
    }
    let temb = time_embedding(t_cond, arch.time_embed_dim)?;
    Ok((net::forward(arch, &params.tensors, input, temb, h, w), h, w))
}

fn finish_eps<T: Scalar>(
    params: &DenoiserParams<T>,
    raw: &[T],
    y_t: &DiffusionState<T>,
    h: usize,
    w: usize,
) -> Result<PartialKSpace<T>, DenoiserError> {
    let hw = h * w;
    let re = crate::numerics::RealGrid::from_data(h, w, raw[..hw].to_vec()).expect("channel size");
    let im =
        crate::numerics::RealGrid::from_data(h, w, raw[hw..2 * hw].to_vec()).expect("channel size");
    let field = ComplexGrid::from_channels(&re, &im).expect("matching channels");
    let measured = match params.arch.output_domain {
        OutputDomain::Image => dft2(&field),
        OutputDomain::Measurement => field,
    };
    Ok(PartialKSpace::project(
        &measured,
        y_t.y.mask(),
        Side::NonSampled,
    )?)
}

/// Mean simple loss over the batch and its gradient w.r.t. every parameter,
/// by reverse-mode differentiation through the network, the output transform
/// and the projection. Deterministic: items are reduced in index order.
pub fn loss_and_grad<T: Scalar>(
    params: &DenoiserParams<T>,
    batch: &[TrainItem<T>],
    schedule: &DiffusionSchedule<T>,
) -> Result<(T, ParamVec<T>), DenoiserError> {
    if batch.is_empty() {
        return Err(DenoiserError::EmptyBatch);
    }
    let per_item: Vec<Result<(T, ParamVec<T>), DenoiserError>> = batch
        .par_iter()
        .map(|item| item_loss_and_grad(params, item, schedule))
        .collect();

    let mut grads = ParamVec::zeros_like(&params.tensors);
    let mut loss = T::zero();
    for r in per_item {
        let (l, g) = r?;
        loss += l;
        grads.add_scaled(&g, T::one());
    }
    let scale = from_usize::<T>(batch.len()).recip();
    grads.scale(scale);
    Ok((loss * scale, grads))
}

fn item_loss_and_grad<T: Scalar>(
    params: &DenoiserParams<T>,
    item: &TrainItem<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<(T, ParamVec<T>), DenoiserError> {
    let y_t = q_sample(&item.y0_c, item.t, schedule, &item.noise)?;
    let t_cond = schedule.original_timestep(item.t);
    let (trace, h, w) = eps_theta_forward(params, &y_t, &item.y_m, t_cond)?;
    let eps_hat = finish_eps(params, trace.output.as_slice(), &y_t, h, w)?;
    let loss = simple_loss(&item.noise, &eps_hat)?;

    // d loss / d eps_hat = 2 (eps_hat - noise) on the complement support.
    let two = T::one() + T::one();
    let d_eps = PartialKSpace::lin_comb(two, &eps_hat, -two, &item.noise)?;
    // Projection is self-adjoint; the output transform's adjoint is the
    // inverse transform in image mode and the identity otherwise.
    let d_field = match params.arch.output_domain {
        OutputDomain::Image => idft2(d_eps.grid()),
        OutputDomain::Measurement => d_eps.grid().clone(),
    };
    let hw = h * w;
    let mut d_out = vec![T::zero(); 2 * hw];
    for (i, v) in d_field.data().iter().enumerate() {
        d_out[i] = v.re;
        d_out[hw + i] = v.im;
    }
    let mut grads = ParamVec::zeros_like(&params.tensors);
    net::backward(
        &params.arch,
        &params.tensors,
        &trace,
        &d_out,
        &mut grads,
        false,
        h,
        w,
    );
    Ok((loss, grads))
}

/// Largest relative disagreement between analytic gradients and central
/// differences over `n_probes` randomly chosen parameters; denominators are
/// floored at 1e-8.
pub fn finite_diff_check<T: Scalar>(
    params: &DenoiserParams<T>,
    batch: &[TrainItem<T>],
    schedule: &DiffusionSchedule<T>,
    n_probes: usize,
    step: T,
    rng: &mut RngStream,
) -> Result<T, DenoiserError> {
    assert!(n_probes >= 1, "need at least one probe");
    assert!(step > T::zero(), "step must be positive");
    let (_, grads) = loss_and_grad(params, batch, schedule)?;
    let total = params.param_count();
    let mut worst = T::zero();
    let mut probe_params = params.clone();
    for _ in 0..n_probes {
        let flat = rng.next_below(total);
        let (ti, off) = locate(&params.tensors, flat);
        let original = probe_params.tensors[ti].data()[off];

        probe_params.tensors[ti].data_mut()[off] = original + step;
        let (loss_plus, _) = loss_only(&probe_params, batch, schedule)?;
        probe_params.tensors[ti].data_mut()[off] = original - step;
        let (loss_minus, _) = loss_only(&probe_params, batch, schedule)?;
        probe_params.tensors[ti].data_mut()[off] = original;

        let numeric = (loss_plus - loss_minus) / (step + step);
        let analytic = grads.tensors[ti].data()[off];
        let denom = numeric
            .abs()
            .max(analytic.abs())
            .max(T::from_f64_lossy(1e-8));
        worst = worst.max((numeric - analytic).abs() / denom);
    }
    Ok(worst)
}

fn loss_only<T: Scalar>(
    params: &DenoiserParams<T>,
    batch: &[TrainItem<T>],
    schedule: &DiffusionSchedule<T>,
) -> Result<(T, ()), DenoiserError> {
    let mut loss = T::zero();
    for item in batch {
        let y_t = q_sample(&item.y0_c, item.t, schedule, &item.noise)?;
        let t_cond = schedule.original_timestep(item.t);
        let (trace, h, w) = eps_theta_forward(params, &y_t, &item.y_m, t_cond)?;
        let eps_hat = finish_eps(params, trace.output.as_slice(), &y_t, h, w)?;
        loss += simple_loss(&item.noise, &eps_hat)?;
    }
    Ok((loss / from_usize(batch.len()), ()))
}

fn locate<T: Scalar>(tensors: &[Tensor<T>], mut flat: usize) -> (usize, usize) {
    for (i, t) in tensors.iter().enumerate() {
        if flat < t.numel() {
            return (i, flat);
        }
        flat -= t.numel();
    }
    unreachable!("flat index out of range")
}

impl<T: Scalar> EpsModel<T> for DenoiserParams<T> {
    fn predict(
        &self,
        y_t: &DiffusionState<T>,
        y_m: &PartialKSpace<T>,
        t_cond: usize,
    ) -> PartialKSpace<T> {
        eps_theta(self, y_t, y_m, t_cond).expect("noise prediction on validated inputs")
    }
}
