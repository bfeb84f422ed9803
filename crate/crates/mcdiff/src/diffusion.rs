//! Measurement-space diffusion: forward chain, closed-form marginal,
//! posterior, noise-prediction parameterization, training loss and the
//! ancestral sampler.
//!
//! Every state is supported on the non-acquired columns only, so acquired
//! measurements pass through the whole chain untouched and each returned
//! reconstruction agrees with them by construction.

use std::fmt;

use rayon::prelude::*;

use crate::measurement::{
    masked_noise, merge_and_invert, zero_filled, Mask, MaskError, PartialKSpace, Side,
};
use crate::numerics::{dft2, ComplexGrid, RngStream};
use crate::scalar::Scalar;
use crate::schedule::{DiffusionSchedule, ScheduleError};

#[derive(Debug, Clone, PartialEq)]
pub enum DiffusionError {
    Mask(MaskError),
    Schedule(ScheduleError),
    BadStep { t: usize, t_max: usize },
    WrongSide,
    NoiseAtFinalStep,
    ModelSize { height: usize, width: usize },
}

impl fmt::Display for DiffusionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DiffusionError::Mask(e) => write!(f, "{e}"),
            DiffusionError::Schedule(e) => write!(f, "{e}"),
            DiffusionError::BadStep { t, t_max } => write!(f, "timestep {t} outside 1..={t_max}"),
            DiffusionError::WrongSide => write!(f, "operand is on the wrong projector side"),
            DiffusionError::NoiseAtFinalStep => {
                write!(f, "the final reverse step must be noiseless")
            }
            DiffusionError::ModelSize { height, width } => {
                write!(f, "model does not accept {height}x{width} grids")
            }
        }
    }
}

impl std::error::Error for DiffusionError {}

impl From<MaskError> for DiffusionError {
    fn from(e: MaskError) -> Self {
        DiffusionError::Mask(e)
    }
}

impl From<ScheduleError> for DiffusionError {
    fn from(e: ScheduleError) -> Self {
        DiffusionError::Schedule(e)
    }
}

/// Noised non-acquired measurements at one step of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState<T> {
    pub y: PartialKSpace<T>,
    pub t: usize,
}

fn expect_non_sampled<T: Scalar>(p: &PartialKSpace<T>) -> Result<(), DiffusionError> {
    if p.side() != Side::NonSampled {
        return Err(DiffusionError::WrongSide);
    }
    Ok(())
}

/// Draws the marginal at step `t` directly: `alpha_bar_t * y0 + beta_bar_t *
/// noise`. `t = 0` is the defined base case and returns `y0` unchanged.
pub fn q_sample<T: Scalar>(
    y0_c: &PartialKSpace<T>,
    t: usize,
    schedule: &DiffusionSchedule<T>,
    noise: &PartialKSpace<T>,
) -> Result<DiffusionState<T>, DiffusionError> {
    expect_non_sampled(y0_c)?;
    if t > schedule.t_max() {
        return Err(DiffusionError::BadStep {
            t,
            t_max: schedule.t_max(),
        });
    }
    let y = PartialKSpace::lin_comb(schedule.alpha_bar(t), y0_c, schedule.beta_bar(t), noise)?;
    Ok(DiffusionState { y, t })
}

/// One forward transition: `alpha_t * y_{t-1} + beta_t * noise`.
pub fn chain_step<T: Scalar>(
    prev: &DiffusionState<T>,
    schedule: &DiffusionSchedule<T>,
    noise: &PartialKSpace<T>,
) -> Result<DiffusionState<T>, DiffusionError> {
    let t = prev.t + 1;
    if t > schedule.t_max() {
        return Err(DiffusionError::BadStep {
            t,
            t_max: schedule.t_max(),
        });
    }
    let y = PartialKSpace::lin_comb(schedule.alpha(t), &prev.y, schedule.beta(t), noise)?;
    Ok(DiffusionState { y, t })
}

/// Gaussian posterior of the previous state given the current state and the
/// clean measurements: returns its mean and width,
///
/// ```text
/// mean  = (alpha_t beta_bar_{t-1}^2 / beta_bar_t^2) y_t
///       + (alpha_bar_{t-1} beta_t^2 / beta_bar_t^2) y_0
/// width = beta_t beta_bar_{t-1} / beta_bar_t
/// ```
pub fn posterior<T: Scalar>(
    y_t: &DiffusionState<T>,
    y0_c: &PartialKSpace<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<(PartialKSpace<T>, T), DiffusionError> {
    expect_non_sampled(y0_c)?;
    let t = y_t.t;
    if t == 0 || t > schedule.t_max() {
        return Err(DiffusionError::BadStep {
            t,
            t_max: schedule.t_max(),
        });
    }
    let bb_sq = schedule.beta_bar_sq(t);
    let coeff_t = schedule.alpha(t) * schedule.beta_bar_sq(t - 1) / bb_sq;
    let coeff_0 = schedule.alpha_bar(t - 1) * schedule.beta(t) * schedule.beta(t) / bb_sq;
    let mean = PartialKSpace::lin_comb(coeff_t, &y_t.y, coeff_0, y0_c)?;
    Ok((mean, schedule.beta_tilde(t)))
}

/// Reverse-step mean from a noise prediction:
/// `(y_t - (beta_t^2 / beta_bar_t) eps_hat) / alpha_t`.
pub fn mu_from_eps<T: Scalar>(
    y_t: &DiffusionState<T>,
    eps_hat: &PartialKSpace<T>,
    schedule: &DiffusionSchedule<T>,
) -> Result<PartialKSpace<T>, DiffusionError> {
    let t = y_t.t;
    if t == 0 || t > schedule.t_max() {
        return Err(DiffusionError::BadStep {
            t,
            t_max: schedule.t_max(),
        });
    }
    let k = schedule.beta(t) * schedule.beta(t) / schedule.beta_bar(t);
    let combo = PartialKSpace::lin_comb(T::one(), &y_t.y, -k, eps_hat)?;
    Ok(combo.scaled(schedule.alpha(t).recip()))
}

/// Unweighted noise-prediction objective: the squared distance over both real
/// channels at every position (excluded columns hold zeros on both sides and
/// contribute nothing).
pub fn simple_loss<T: Scalar>(
    eps: &PartialKSpace<T>,
    eps_hat: &PartialKSpace<T>,
) -> Result<T, DiffusionError> {
    expect_non_sampled(eps)?;
    let diff = PartialKSpace::lin_comb(T::one(), eps, -T::one(), eps_hat)?;
    Ok(diff.norm_sqr())
}

/// Variational-bound weighting of [`simple_loss`]; undefined at `t = 1` under
/// the posterior sigma rule.
pub fn weighted_loss<T: Scalar>(
    eps: &PartialKSpace<T>,
    eps_hat: &PartialKSpace<T>,
    t: usize,
    schedule: &DiffusionSchedule<T>,
) -> Result<T, DiffusionError> {
    let w = schedule.vlb_weight(t)?;
    Ok(w * simple_loss(eps, eps_hat)?)
}

/// One reverse transition `y_{t-1} = mu + sigma_t * z`. The caller passes the
/// noise `z`; it must be identically zero at `t = 1`.
pub fn reverse_step<T: Scalar>(
    y_t: &DiffusionState<T>,
    eps_hat: &PartialKSpace<T>,
    schedule: &DiffusionSchedule<T>,
    z: &PartialKSpace<T>,
) -> Result<DiffusionState<T>, DiffusionError> {
    let t = y_t.t;
    if t == 1 && z.norm_sqr() != T::zero() {
        return Err(DiffusionError::NoiseAtFinalStep);
    }
    let mu = mu_from_eps(y_t, eps_hat, schedule)?;
    let y = PartialKSpace::lin_comb(T::one(), &mu, schedule.sigma(t), z)?;
    Ok(DiffusionState { y, t: t - 1 })
}

/// Noise predictor consumed by the sampler. Implementations must be pure
/// functions of their arguments so sampling stays deterministic.
pub trait EpsModel<T: Scalar>: Sync {
    /// Predicts the injected noise for the state at original-chain timestep
    /// `t_cond` (respaced schedules condition on the original index).
    fn predict(
        &self,
        y_t: &DiffusionState<T>,
        y_m: &PartialKSpace<T>,
        t_cond: usize,
    ) -> PartialKSpace<T>;

    /// Whether the model accepts this grid size.
    fn accepts(&self, _height: usize, _width: usize) -> bool {
        true
    }
}

/// Ancestral sampler: draws the terminal state from the wide terminal
/// marginal (width `beta_bar_T`, not unit), walks the reverse chain, and
/// recombines with the acquired measurements.
///
/// Chain `i` owns the derived stream `rng.child(i)`, so samples are
/// independent per chain, order-independent, and reproducible. A mask with no
/// non-acquired column short-circuits to the zero-filled inversion.
pub fn sample<T: Scalar, M: EpsModel<T>>(
    model: &M,
    mask: &Mask,
    y_m: &PartialKSpace<T>,
    schedule: &DiffusionSchedule<T>,
    rng: &RngStream,
    n_samples: usize,
) -> Result<Vec<ComplexGrid<T>>, DiffusionError> {
    assert!(n_samples >= 1, "n_samples must be at least 1");
    if y_m.side() != Side::Sampled {
        return Err(DiffusionError::WrongSide);
    }
    if !mask.same_support(y_m.mask()) {
        return Err(DiffusionError::Mask(MaskError::MaskMismatch));
    }
    let height = y_m.height();
    if !model.accepts(height, mask.width()) {
        return Err(DiffusionError::ModelSize {
            height,
            width: mask.width(),
        });
    }
    if mask.non_sampled_count() == 0 {
        return Ok(vec![zero_filled(y_m); n_samples]);
    }

    let results: Vec<Result<ComplexGrid<T>, DiffusionError>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut chain_rng = rng.child(i as u64);
            run_chain(model, mask, y_m, schedule, &mut chain_rng)
        })
        .collect();
    results.into_iter().collect()
}

fn run_chain<T: Scalar, M: EpsModel<T>>(
    model: &M,
    mask: &Mask,
    y_m: &PartialKSpace<T>,
    schedule: &DiffusionSchedule<T>,
    rng: &mut RngStream,
) -> Result<ComplexGrid<T>, DiffusionError> {
    let height = y_m.height();
    let t_max = schedule.t_max();
    let terminal = masked_noise::<T>(height, mask, rng)?.scaled(schedule.beta_bar(t_max));
    let mut state = DiffusionState {
        y: terminal,
        t: t_max,
    };
    for t in (1..=t_max).rev() {
        debug_assert_eq!(state.t, t);
        let eps_hat = model.predict(&state, y_m, schedule.original_timestep(t));
        let z = if t > 1 {
            masked_noise::<T>(height, mask, rng)?
        } else {
            PartialKSpace::zeros(height, mask, Side::NonSampled)
        };
        state = reverse_step(&state, &eps_hat, schedule, &z)?;
    }
    Ok(merge_and_invert(y_m, &state.y)?)
}

/// Largest deviation of a reconstruction's acquired measurements from the
/// given data; structural data consistency keeps this at FFT roundoff.
pub fn data_consistency_error<T: Scalar>(x: &ComplexGrid<T>, y_m: &PartialKSpace<T>) -> T {
    let measured = match PartialKSpace::project(&dft2(x), y_m.mask(), Side::Sampled) {
        Ok(p) => p,
        Err(_) => return T::infinity(),
    };
    measured.grid().max_abs_diff(y_m.grid())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::split;
    use crate::numerics::idft2;
    use crate::schedule::SigmaRule;
    use num_complex::Complex;

    type Grid = ComplexGrid<f64>;

    fn test_mask(width: usize, seed: u64) -> Mask {
        Mask::random(width, 2.0, 0.25, &mut RngStream::new(seed, 0)).unwrap()
    }

    fn random_image(n: usize, seed: u64) -> Grid {
        let mut rng = RngStream::new(seed, 3);
        ComplexGrid::from_fn(n, n, |_, _| {
            let (a, b) = rng.next_normal_pair();
            Complex::new(a, b)
        })
    }

    fn schedule(t_max: usize) -> DiffusionSchedule<f64> {
        DiffusionSchedule::cosine_halved(t_max, SigmaRule::Posterior).unwrap()
    }

    /// Noise prediction recovered from the known clean measurements; inverts
    /// the marginal draw exactly.
    struct OracleEps {
        y0: PartialKSpace<f64>,
        schedule: DiffusionSchedule<f64>,
    }

    impl EpsModel<f64> for OracleEps {
        fn predict(
            &self,
            y_t: &DiffusionState<f64>,
            _y_m: &PartialKSpace<f64>,
            _t: usize,
        ) -> PartialKSpace<f64> {
            let t = y_t.t;
            let scale = self.schedule.beta_bar(t).recip();
            PartialKSpace::lin_comb(scale, &y_t.y, -self.schedule.alpha_bar(t) * scale, &self.y0)
                .unwrap()
        }
    }

    #[test]
    fn q_sample_base_case_is_identity() {
        let mask = test_mask(8, 1);
        let x = random_image(8, 2);
        let (_, y0) = split(&x, &mask).unwrap();
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(9, 9)).unwrap();
        let s = schedule(8);
        let state = q_sample(&y0, 0, &s, &noise).unwrap();
        assert_eq!(state.y.grid(), y0.grid());
    }

    #[test]
    fn q_sample_fully_sampled_mask_stays_zero() {
        let mask = Mask::equispaced(8, 1.0, 0.0).unwrap();
        let x = random_image(8, 3);
        let (_, y0) = split(&x, &mask).unwrap();
        assert_eq!(y0.norm_sqr(), 0.0);
        let s = schedule(4);
        let zero_noise = PartialKSpace::zeros(8, &mask, Side::NonSampled);
        for t in 0..=4 {
            let state = q_sample(&y0, t, &s, &zero_noise).unwrap();
            assert_eq!(state.y.norm_sqr(), 0.0);
        }
    }

    #[test]
    fn q_sample_moments_match_closed_form() {
        let mask = test_mask(4, 4);
        let x = random_image(4, 5);
        let (_, y0) = split(&x, &mask).unwrap();
        let s = schedule(16);
        let t = 16;
        let n_draws = 100_000usize;
        let mut rng = RngStream::new(77, 0);
        let dim = 16usize;
        let mut sum = vec![Complex::new(0.0, 0.0); dim];
        let mut sum_sq = vec![0.0f64; 2 * dim];
        for _ in 0..n_draws {
            let noise = masked_noise::<f64>(4, &mask, &mut rng).unwrap();
            let state = q_sample(&y0, t, &s, &noise).unwrap();
            for (i, v) in state.y.grid().data().iter().enumerate() {
                sum[i] += v;
                sum_sq[2 * i] += v.re * v.re;
                sum_sq[2 * i + 1] += v.im * v.im;
            }
        }
        let expect_std = s.beta_bar(t);
        let se = expect_std / (n_draws as f64).sqrt();
        for c in mask.support_columns(Side::NonSampled) {
            for r in 0..4 {
                let i = r * 4 + c;
                let mean = sum[i] / n_draws as f64;
                let target = y0.grid().get(r, c) * s.alpha_bar(t);
                assert!(
                    (mean.re - target.re).abs() <= 3.0 * se,
                    "re mean off at {i}"
                );
                assert!(
                    (mean.im - target.im).abs() <= 3.0 * se,
                    "im mean off at {i}"
                );
                for ch in 0..2 {
                    let m = if ch == 0 { mean.re } else { mean.im };
                    let var = sum_sq[2 * i + ch] / n_draws as f64 - m * m;
                    let rel = (var - expect_std * expect_std).abs() / (expect_std * expect_std);
                    assert!(rel <= 0.02, "variance off at {i} channel {ch}: {rel}");
                }
            }
        }
    }

    #[test]
    fn chain_composition_matches_marginal_in_distribution() {
        // Small version of the marginal-law check; the acceptance suite runs
        // the full-size one.
        let mask = test_mask(4, 6);
        let x = random_image(4, 7);
        let (_, y0) = split(&x, &mask).unwrap();
        let t_max = 8;
        let s = schedule(t_max);
        let n_chains = 20_000usize;
        let mut rng = RngStream::new(123, 1);
        let mut sum = vec![Complex::new(0.0, 0.0); 16];
        let mut sum_sq = vec![0.0f64; 32];
        for _ in 0..n_chains {
            let mut state = DiffusionState {
                y: y0.clone(),
                t: 0,
            };
            for _ in 0..t_max {
                let noise = masked_noise::<f64>(4, &mask, &mut rng).unwrap();
                state = chain_step(&state, &s, &noise).unwrap();
            }
            for (i, v) in state.y.grid().data().iter().enumerate() {
                sum[i] += v;
                sum_sq[2 * i] += v.re * v.re;
                sum_sq[2 * i + 1] += v.im * v.im;
            }
        }
        let expect_std = s.beta_bar(t_max);
        let se = expect_std / (n_chains as f64).sqrt();
        for c in mask.support_columns(Side::NonSampled) {
            for r in 0..4 {
                let i = r * 4 + c;
                let mean = sum[i] / n_chains as f64;
                let target = y0.grid().get(r, c) * s.alpha_bar(t_max);
                assert!((mean.re - target.re).abs() <= 4.0 * se);
                assert!((mean.im - target.im).abs() <= 4.0 * se);
                let m_re = mean.re;
                let var = sum_sq[2 * i] / n_chains as f64 - m_re * m_re;
                let rel = (var - expect_std * expect_std).abs() / (expect_std * expect_std);
                assert!(rel <= 0.05, "variance rel err {rel}");
            }
        }
    }

    #[test]
    fn chain_step_degenerate_identity() {
        let mask = test_mask(8, 8);
        let x = random_image(8, 9);
        let (_, y0) = split(&x, &mask).unwrap();
        let s =
            DiffusionSchedule::from_alpha_beta(vec![1.0], vec![1e-300], SigmaRule::Beta).unwrap();
        let zero_noise = PartialKSpace::zeros(8, &mask, Side::NonSampled);
        let state = chain_step(
            &DiffusionState {
                y: y0.clone(),
                t: 0,
            },
            &s,
            &zero_noise,
        )
        .unwrap();
        assert_eq!(state.y.grid(), y0.grid());
    }

    #[test]
    fn chain_zero_in_zero_out() {
        let mask = test_mask(8, 10);
        let s = schedule(4);
        let zero = PartialKSpace::<f64>::zeros(8, &mask, Side::NonSampled);
        let state = chain_step(
            &DiffusionState {
                y: zero.clone(),
                t: 0,
            },
            &s,
            &zero,
        )
        .unwrap();
        assert_eq!(state.y.norm_sqr(), 0.0);
    }

    #[test]
    fn posterior_first_step_returns_clean_exactly() {
        let mask = test_mask(8, 11);
        let x = random_image(8, 12);
        let (_, y0) = split(&x, &mask).unwrap();
        let s = schedule(8);
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(5, 5)).unwrap();
        let y1 = q_sample(&y0, 1, &s, &noise).unwrap();
        let (mu, width) = posterior(&y1, &y0, &s).unwrap();
        assert_eq!(width, 0.0);
        assert_eq!(
            mu.grid(),
            y0.grid(),
            "posterior mean at t=1 must be the clean state"
        );
    }

    #[test]
    fn posterior_scalar_hand_case() {
        let s = DiffusionSchedule::from_alpha_beta(
            vec![0.95, 0.9],
            vec![0.3, 0.2],
            SigmaRule::Posterior,
        )
        .unwrap();
        let mask = Mask::from_parts(
            4,
            vec![false, true, false, false],
            2.0,
            0.0,
            crate::measurement::MaskKind::Random,
            0,
        )
        .unwrap();
        // Single non-sampled storage column carries the scalars.
        let col = mask.support_columns(Side::NonSampled)[0];
        let mut y_t_grid = ComplexGrid::<f64>::zeros(1, 4);
        y_t_grid.set(0, col, Complex::new(1.0, 0.0));
        let mut y0_grid = ComplexGrid::<f64>::zeros(1, 4);
        y0_grid.set(0, col, Complex::new(0.5, 0.0));
        let y_t = DiffusionState {
            y: PartialKSpace::project(&y_t_grid, &mask, Side::NonSampled).unwrap(),
            t: 2,
        };
        let y0 = PartialKSpace::project(&y0_grid, &mask, Side::NonSampled).unwrap();
        let (mu, width) = posterior(&y_t, &y0, &s).unwrap();
        let got = mu.grid().get(0, col).re;
        assert!((got - 0.8857).abs() < 1e-4, "mean {got}");
        assert!((width - 0.17857).abs() < 1e-5, "width {width}");
    }

    /// Brute-force Bayes oracle on scalars: numerically integrate the product
    /// of the two Gaussian factors over a fine grid of the previous value and
    /// compare the resulting mean and standard deviation.
    fn bayes_oracle(
        alpha_t: f64,
        beta_t: f64,
        alpha_bar_prev: f64,
        beta_bar_prev: f64,
        y_t: f64,
        y0: f64,
    ) -> (f64, f64) {
        let w0 = beta_bar_prev;
        let u0 = alpha_bar_prev * y0;
        let w1 = beta_t / alpha_t;
        let u1 = y_t / alpha_t;
        let lo = (u0 - 10.0 * w0).min(u1 - 10.0 * w1);
        let hi = (u0 + 10.0 * w0).max(u1 + 10.0 * w1);
        let n = 200_000usize;
        let du = (hi - lo) / n as f64;
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for i in 0..=n {
            let u = lo + du * i as f64;
            let a = (y_t - alpha_t * u) / beta_t;
            let b = (u - u0) / w0;
            let p = (-0.5 * (a * a + b * b)).exp();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            z += w * p;
            m1 += w * p * u;
            m2 += w * p * u * u;
        }
        let mean = m1 / z;
        let var = m2 / z - mean * mean;
        (mean, var.sqrt())
    }

    #[test]
    fn posterior_matches_bayes_integration() {
        let mut rng = RngStream::new(314, 0);
        for _ in 0..3 {
            let len = 3 + rng.next_below(4);
            let alpha: Vec<f64> = (0..len).map(|_| 0.6 + 0.39 * rng.next_uniform()).collect();
            let beta: Vec<f64> = (0..len).map(|_| 0.05 + 0.4 * rng.next_uniform()).collect();
            let s = DiffusionSchedule::from_alpha_beta(alpha, beta, SigmaRule::Posterior).unwrap();
            let t = 2 + rng.next_below(len - 1);
            let y_t = 4.0 * rng.next_uniform() - 2.0;
            let y0 = 4.0 * rng.next_uniform() - 2.0;
            let (mean_o, std_o) = bayes_oracle(
                s.alpha(t),
                s.beta(t),
                s.alpha_bar(t - 1),
                s.beta_bar(t - 1),
                y_t,
                y0,
            );
            let bb_sq = s.beta_bar_sq(t);
            let mean = s.alpha(t) * s.beta_bar_sq(t - 1) / bb_sq * y_t
                + s.alpha_bar(t - 1) * s.beta(t) * s.beta(t) / bb_sq * y0;
            let std = s.beta_tilde(t);
            assert!(
                (mean - mean_o).abs() < 1e-4,
                "mean {mean} vs oracle {mean_o}"
            );
            assert!((std - std_o).abs() < 1e-4, "std {std} vs oracle {std_o}");
        }
    }

    #[test]
    fn posterior_zero_inputs_zero_mean() {
        let mask = test_mask(8, 13);
        let s = schedule(4);
        let zero = PartialKSpace::<f64>::zeros(8, &mask, Side::NonSampled);
        let (mu, _) = posterior(
            &DiffusionState {
                y: zero.clone(),
                t: 3,
            },
            &zero,
            &s,
        )
        .unwrap();
        assert_eq!(mu.norm_sqr(), 0.0);
    }

    #[test]
    fn mu_from_eps_collapses_without_prediction() {
        let mask = test_mask(8, 14);
        let x = random_image(8, 15);
        let (_, y0) = split(&x, &mask).unwrap();
        let s = schedule(8);
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(2, 8)).unwrap();
        let y_t = q_sample(&y0, 5, &s, &noise).unwrap();
        let zero = PartialKSpace::zeros(8, &mask, Side::NonSampled);
        let mu = mu_from_eps(&y_t, &zero, &s).unwrap();
        let expect = y_t.y.scaled(s.alpha(5).recip());
        assert_eq!(mu.grid(), expect.grid());
    }

    #[test]
    fn mu_from_eps_with_oracle_equals_posterior_mean() {
        let mut rng = RngStream::new(2024, 0);
        for trial in 0..20 {
            let len = 2 + rng.next_below(6);
            let alpha: Vec<f64> = (0..len).map(|_| 0.6 + 0.39 * rng.next_uniform()).collect();
            let beta: Vec<f64> = (0..len).map(|_| 0.05 + 0.4 * rng.next_uniform()).collect();
            let s = DiffusionSchedule::from_alpha_beta(alpha, beta, SigmaRule::Posterior).unwrap();
            let t = 1 + rng.next_below(len);
            let mask = test_mask(8, 20 + trial);
            let x = random_image(8, 30 + trial);
            let (_, y0) = split(&x, &mask).unwrap();
            let noise = masked_noise::<f64>(8, &mask, &mut rng.clone()).unwrap();
            rng.next_u64();
            let y_t = q_sample(&y0, t, &s, &noise).unwrap();
            let oracle_eps = PartialKSpace::lin_comb(
                s.beta_bar(t).recip(),
                &y_t.y,
                -s.alpha_bar(t) / s.beta_bar(t),
                &y0,
            )
            .unwrap();
            let mu = mu_from_eps(&y_t, &oracle_eps, &s).unwrap();
            let (mu_post, _) = posterior(&y_t, &y0, &s).unwrap();
            let err = mu.grid().max_abs_diff(mu_post.grid());
            assert!(
                err <= 1e-10,
                "identity violated: {err} (trial {trial}, t {t})"
            );
        }
    }

    #[test]
    fn first_step_with_oracle_noise_is_exact_for_dyadic_widths() {
        // Power-of-two coefficients make every rounding step exact.
        let s =
            DiffusionSchedule::from_alpha_beta(vec![0.5], vec![0.5], SigmaRule::Posterior).unwrap();
        let mask = test_mask(4, 40);
        let x = random_image(4, 41);
        let (_, y0) = split(&x, &mask).unwrap();
        let noise = masked_noise::<f64>(4, &mask, &mut RngStream::new(6, 6)).unwrap();
        let y1 = q_sample(&y0, 1, &s, &noise).unwrap();
        let oracle_eps = PartialKSpace::lin_comb(
            s.beta_bar(1).recip(),
            &y1.y,
            -s.alpha_bar(1) / s.beta_bar(1),
            &y0,
        )
        .unwrap();
        let mu = mu_from_eps(&y1, &oracle_eps, &s).unwrap();
        assert_eq!(mu.grid(), y0.grid());
    }

    #[test]
    fn simple_loss_basics() {
        let mask = test_mask(8, 50);
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(7, 7)).unwrap();
        assert_eq!(simple_loss(&noise, &noise).unwrap(), 0.0);
        let zero = PartialKSpace::zeros(8, &mask, Side::NonSampled);
        let loss = simple_loss(&noise, &zero).unwrap();
        assert!((loss - noise.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn simple_loss_expectation_counts_channels() {
        let mask = test_mask(8, 51);
        let mut rng = RngStream::new(99, 0);
        let n = 2000usize;
        let mut acc = 0.0;
        for _ in 0..n {
            let noise = masked_noise::<f64>(8, &mask, &mut rng).unwrap();
            acc += noise.norm_sqr();
        }
        let per_draw = acc / n as f64;
        let expect = 2.0 * (mask.non_sampled_count() * 8) as f64;
        assert!(
            (per_draw - expect).abs() / expect < 0.05,
            "{per_draw} vs {expect}"
        );
    }

    #[test]
    fn weighted_loss_composes_with_schedule() {
        let mask = test_mask(8, 52);
        let s = schedule(8);
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(8, 8)).unwrap();
        let zero = PartialKSpace::zeros(8, &mask, Side::NonSampled);
        let w = s.vlb_weight(5).unwrap();
        let got = weighted_loss(&noise, &zero, 5, &s).unwrap();
        assert!((got - w * noise.norm_sqr()).abs() < 1e-12);
        assert!(weighted_loss(&noise, &zero, 1, &s).is_err());
    }

    #[test]
    fn reverse_step_rejects_noise_at_final_step() {
        let mask = test_mask(8, 53);
        let s = schedule(8);
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(9, 1)).unwrap();
        let state = DiffusionState {
            y: noise.clone(),
            t: 1,
        };
        let err = reverse_step(
            &state,
            &PartialKSpace::zeros(8, &mask, Side::NonSampled),
            &s,
            &noise,
        );
        assert!(matches!(err, Err(DiffusionError::NoiseAtFinalStep)));
    }

    #[test]
    fn reverse_step_zero_noise_is_deterministic_mean() {
        let mask = test_mask(8, 54);
        let x = random_image(8, 55);
        let (_, y0) = split(&x, &mask).unwrap();
        let s = schedule(8);
        let noise = masked_noise::<f64>(8, &mask, &mut RngStream::new(10, 2)).unwrap();
        let y_t = q_sample(&y0, 4, &s, &noise).unwrap();
        let eps_hat = masked_noise::<f64>(8, &mask, &mut RngStream::new(11, 3)).unwrap();
        let zero = PartialKSpace::zeros(8, &mask, Side::NonSampled);
        let next = reverse_step(&y_t, &eps_hat, &s, &zero).unwrap();
        let mu = mu_from_eps(&y_t, &eps_hat, &s).unwrap();
        assert_eq!(next.y.grid(), mu.grid());
        assert_eq!(next.t, 3);
    }

    #[test]
    fn oracle_reversal_recovers_clean_state() {
        let mask = test_mask(8, 56);
        let x = random_image(8, 57);
        let (y_m, y0) = split(&x, &mask).unwrap();
        let t_max = 8;
        let s = schedule(t_max);
        let oracle = OracleEps {
            y0: y0.clone(),
            schedule: s.clone(),
        };
        let n_chains = 2000usize;
        let mut sum = ComplexGrid::<f64>::zeros(8, 8);
        for chain in 0..n_chains {
            let mut rng = RngStream::new(500, chain as u64);
            let mut state = DiffusionState {
                y: masked_noise::<f64>(8, &mask, &mut rng)
                    .unwrap()
                    .scaled(s.beta_bar(t_max)),
                t: t_max,
            };
            for t in (1..=t_max).rev() {
                let eps = oracle.predict(&state, &y_m, t);
                let z = if t > 1 {
                    masked_noise::<f64>(8, &mask, &mut rng).unwrap()
                } else {
                    PartialKSpace::zeros(8, &mask, Side::NonSampled)
                };
                state = reverse_step(&state, &eps, &s, &z).unwrap();
            }
            sum = sum.add(state.y.grid()).unwrap();
        }
        let mean = sum.scaled(1.0 / n_chains as f64);
        // With oracle noise the terminal state is the clean state exactly,
        // so the mean matches it to roundoff; allow 3 standard errors anyway.
        let err = mean.max_abs_diff(y0.grid());
        assert!(err <= 3.0 * 1e-10 + 1e-9, "terminal mean error {err}");
    }

    #[test]
    fn sample_short_circuits_on_full_mask() {
        let mask = Mask::equispaced(8, 1.0, 0.0).unwrap();
        let x = random_image(8, 60);
        let (y_m, _) = split(&x, &mask).unwrap();
        let s = schedule(4);
        let oracle = OracleEps {
            y0: PartialKSpace::zeros(8, &mask, Side::NonSampled),
            schedule: s.clone(),
        };
        let out = sample(&oracle, &mask, &y_m, &s, &RngStream::new(1, 1), 3).unwrap();
        assert_eq!(out.len(), 3);
        for x_hat in &out {
            assert_eq!(x_hat.max_abs_diff(&idft2(y_m.grid())), 0.0);
        }
    }

    /// Predicts no noise at all; keeps the injected randomness in the chain.
    struct ZeroEps;

    impl EpsModel<f64> for ZeroEps {
        fn predict(
            &self,
            y_t: &DiffusionState<f64>,
            _y_m: &PartialKSpace<f64>,
            _t: usize,
        ) -> PartialKSpace<f64> {
            PartialKSpace::zeros(y_t.y.height(), y_t.y.mask(), Side::NonSampled)
        }
    }

    #[test]
    fn sample_is_deterministic_and_data_consistent() {
        let mask = test_mask(8, 61);
        let x = random_image(8, 62);
        let (y_m, _) = split(&x, &mask).unwrap();
        let s = schedule(8);
        let rng = RngStream::new(404, 0);
        let a = sample(&ZeroEps, &mask, &y_m, &s, &rng, 2).unwrap();
        let b = sample(&ZeroEps, &mask, &y_m, &s, &rng, 2).unwrap();
        assert_eq!(a, b, "same seed and streams must reproduce samples");
        assert!(
            a[0].max_abs_diff(&a[1]) > 1e-8,
            "distinct chains must differ"
        );
        for x_hat in &a {
            assert!(data_consistency_error(x_hat, &y_m) <= 1e-10);
        }
    }

    #[test]
    fn oracle_sampling_collapses_to_truth() {
        // With the exact noise oracle the posterior is a point mass: every
        // chain must return the true image regardless of its noise path.
        let mask = test_mask(8, 68);
        let x = random_image(8, 69);
        let (y_m, y0) = split(&x, &mask).unwrap();
        let s = schedule(8);
        let oracle = OracleEps {
            y0,
            schedule: s.clone(),
        };
        let out = sample(&oracle, &mask, &y_m, &s, &RngStream::new(405, 0), 2).unwrap();
        for x_hat in &out {
            assert!(x_hat.max_abs_diff(&x) <= 1e-9);
        }
    }

    #[test]
    fn sample_rejects_mismatched_mask() {
        let mask = test_mask(8, 63);
        let other = test_mask(8, 64);
        let x = random_image(8, 65);
        let (y_m, y0) = split(&x, &mask).unwrap();
        let s = schedule(4);
        let oracle = OracleEps {
            y0,
            schedule: s.clone(),
        };
        assert!(sample(&oracle, &other, &y_m, &s, &RngStream::new(0, 0), 1).is_err());
    }

    #[test]
    fn support_stays_clean_through_long_chains() {
        let mask = test_mask(8, 66);
        let x = random_image(8, 67);
        let (_, y0) = split(&x, &mask).unwrap();
        let s = schedule(16);
        let mut rng = RngStream::new(31, 0);
        let mut state = DiffusionState { y: y0, t: 0 };
        for _ in 0..16 {
            let noise = masked_noise::<f64>(8, &mask, &mut rng).unwrap();
            state = chain_step(&state, &s, &noise).unwrap();
            assert!(state.y.support_is_clean());
        }
        for t in (1..=16).rev() {
            debug_assert_eq!(state.t, t);
            let eps = masked_noise::<f64>(8, &mask, &mut rng).unwrap();
            let z = if t > 1 {
                masked_noise::<f64>(8, &mask, &mut rng).unwrap()
            } else {
                PartialKSpace::zeros(8, &mask, Side::NonSampled)
            };
            state = reverse_step(&state, &eps, &s, &z).unwrap();
            assert!(state.y.support_is_clean());
        }
    }
}
