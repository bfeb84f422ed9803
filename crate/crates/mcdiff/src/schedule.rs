//! Variance schedules for the measurement-space diffusion.
//!
//! The per-step scale `alpha_t` and noise width `beta_t` are *not* tied by
//! `alpha^2 + beta^2 = 1`. Derived quantities follow the defining product and
//! sum,
//!
//! ```text
//! alpha_bar_t = prod_{i<=t} alpha_i
//! beta_bar_t^2 = sum_{i<=t} (alpha_bar_t^2 / alpha_bar_i^2) beta_i^2
//! ```
//!
//! with base cases `alpha_bar_0 = 1`, `beta_bar_0 = 0`, and satisfy the
//! recursion `beta_bar_t^2 = alpha_t^2 beta_bar_{t-1}^2 + beta_t^2` that the
//! reverse-process algebra leans on.

use std::fmt;

use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaRule {
    /// Reverse-step noise follows the posterior width (`sigma_1 = 0`).
    Posterior,
    /// Reverse-step noise reuses the forward width `beta_t`.
    Beta,
}

impl fmt::Display for SigmaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaRule::Posterior => write!(f, "posterior"),
            SigmaRule::Beta => write!(f, "beta"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleError {
    EmptySchedule,
    LengthMismatch { alpha: usize, beta: usize },
    NonPositiveEntry { t: usize, what: &'static str },
    AlphaAboveOne { t: usize },
    BadRespace { t_max: usize, requested: usize },
    SigmaZero { t: usize },
    BadTimestep { t: usize, t_max: usize },
    TerminalDrift(String),
}

impl fmt::Display for ScheduleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScheduleError::EmptySchedule => write!(f, "schedule needs at least one step"),
            ScheduleError::LengthMismatch { alpha, beta } => {
                write!(f, "alpha has {alpha} entries but beta has {beta}")
            }
            ScheduleError::NonPositiveEntry { t, what } => {
                write!(f, "{what}[{t}] must be positive")
            }
            ScheduleError::AlphaAboveOne { t } => write!(f, "alpha[{t}] must not exceed 1"),
            ScheduleError::BadRespace { t_max, requested } => {
                write!(f, "respacing to {requested} steps is outside 1..={t_max}")
            }
            ScheduleError::SigmaZero { t } => {
                write!(f, "sigma[{t}] is zero; the weight is undefined there")
            }
            ScheduleError::BadTimestep { t, t_max } => {
                write!(f, "timestep {t} outside 1..={t_max}")
            }
            ScheduleError::TerminalDrift(msg) => {
                write!(f, "terminal coefficients off target: {msg}")
            }
        }
    }
}

impl std::error::Error for ScheduleError {}

/// Immutable variance schedule with all derived coefficient tables.
///
/// Tables are stored with length `T + 1`; index 0 holds the defined base case
/// (`alpha_bar_0 = 1`, `beta_bar_0 = 0`) and per-step entries live at their
/// natural index `t`, so the code reads like the recurrences above.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule<T> {
    t_max: usize,
    alpha: Vec<T>,
    beta: Vec<T>,
    alpha_bar: Vec<T>,
    beta_bar_sq: Vec<T>,
    beta_bar: Vec<T>,
    beta_tilde: Vec<T>,
    sigma: Vec<T>,
    sigma_rule: SigmaRule,
    /// Original timestep each respaced index stands for; identity when the
    /// schedule has not been respaced. Network conditioning must use this.
    timestep_map: Vec<usize>,
}

impl<T: Scalar> DiffusionSchedule<T> {
    /// Builds the derived tables from per-step `alpha`, `beta` (1-based
    /// semantics; `alpha[0]` in the input vectors is step 1).
    pub fn from_alpha_beta(
        alpha: Vec<T>,
        beta: Vec<T>,
        sigma_rule: SigmaRule,
    ) -> Result<Self, ScheduleError> {
        if alpha.is_empty() {
            return Err(ScheduleError::EmptySchedule);
        }
        if alpha.len() != beta.len() {
            return Err(ScheduleError::LengthMismatch {
                alpha: alpha.len(),
                beta: beta.len(),
            });
        }
        let t_max = alpha.len();
        for (i, (&a, &b)) in alpha.iter().zip(beta.iter()).enumerate() {
            let t = i + 1;
            if !(a > T::zero()) {
                return Err(ScheduleError::NonPositiveEntry { t, what: "alpha" });
            }
            if a > T::one() {
                return Err(ScheduleError::AlphaAboveOne { t });
            }
            if !(b > T::zero()) {
                return Err(ScheduleError::NonPositiveEntry { t, what: "beta" });
            }
        }

        let mut sched = Self {
            t_max,
            alpha: prepend(T::one(), alpha),
            beta: prepend(T::zero(), beta),
            alpha_bar: vec![T::zero(); t_max + 1],
            beta_bar_sq: vec![T::zero(); t_max + 1],
            beta_bar: vec![T::zero(); t_max + 1],
            beta_tilde: vec![T::zero(); t_max + 1],
            sigma: vec![T::zero(); t_max + 1],
            sigma_rule,
            timestep_map: (0..=t_max).collect(),
        };
        sched.derive();
        Ok(sched)
    }

    fn derive(&mut self) {
        let t_max = self.t_max;
        self.alpha_bar[0] = T::one();
        self.beta_bar_sq[0] = T::zero();
        self.beta_bar[0] = T::zero();
        for t in 1..=t_max {
            self.alpha_bar[t] = self.alpha_bar[t - 1] * self.alpha[t];
            self.beta_bar_sq[t] = self.alpha[t] * self.alpha[t] * self.beta_bar_sq[t - 1]
                + self.beta[t] * self.beta[t];
            self.beta_bar[t] = self.beta_bar_sq[t].sqrt();
        }
        self.beta_tilde[0] = T::zero();
        for t in 1..=t_max {
            // beta_bar_0 = 0 makes this exactly zero at t = 1.
            self.beta_tilde[t] = self.beta[t] * self.beta_bar[t - 1] / self.beta_bar[t];
        }
        for t in 1..=t_max {
            self.sigma[t] = match self.sigma_rule {
                SigmaRule::Posterior => self.beta_tilde[t],
                SigmaRule::Beta => self.beta[t],
            };
        }
    }

    /// Cosine profile for the squared cumulative scale with the usual 0.008
    /// offset and 0.999 per-step clip, with the per-step noise width halved
    /// so the terminal width lands near one half.
    pub fn cosine_halved(t_max: usize, sigma_rule: SigmaRule) -> Result<Self, ScheduleError> {
        if t_max == 0 {
            return Err(ScheduleError::EmptySchedule);
        }
        let profile = |step: usize| -> f64 {
            let s = 0.008;
            let x = (step as f64 / t_max as f64 + s) / (1.0 + s);
            (x * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let mut alpha = Vec::with_capacity(t_max);
        let mut beta = Vec::with_capacity(t_max);
        for t in 1..=t_max {
            let b = (1.0 - profile(t) / profile(t - 1)).min(0.999);
            alpha.push(T::from_f64_lossy((1.0 - b).sqrt()));
            beta.push(T::from_f64_lossy(0.5 * b.sqrt()));
        }
        let sched = Self::from_alpha_beta(alpha, beta, sigma_rule)?;
        if t_max >= 250 {
            let a_term = sched.alpha_bar[t_max].to_f64_lossy();
            let b_term = sched.beta_bar[t_max].to_f64_lossy();
            if a_term > 1e-3 {
                return Err(ScheduleError::TerminalDrift(format!(
                    "terminal cumulative scale {a_term:e} > 1e-3"
                )));
            }
            if (b_term - 0.5).abs() > 0.05 {
                return Err(ScheduleError::TerminalDrift(format!(
                    "terminal noise width {b_term} not within 0.5 +/- 0.05"
                )));
            }
        }
        Ok(sched)
    }

    pub fn t_max(&self) -> usize {
        self.t_max
    }

    pub fn sigma_rule(&self) -> SigmaRule {
        self.sigma_rule
    }

    fn check_t(&self, t: usize) -> Result<(), ScheduleError> {
        if t == 0 || t > self.t_max {
            return Err(ScheduleError::BadTimestep {
                t,
                t_max: self.t_max,
            });
        }
        Ok(())
    }

    #[inline]
    pub fn alpha(&self, t: usize) -> T {
        self.alpha[t]
    }

    #[inline]
    pub fn beta(&self, t: usize) -> T {
        self.beta[t]
    }

    /// Cumulative scale; defined for `0 <= t <= T` with `alpha_bar(0) = 1`.
    #[inline]
    pub fn alpha_bar(&self, t: usize) -> T {
        self.alpha_bar[t]
    }

    /// Cumulative squared noise width; `beta_bar_sq(0) = 0`.
    #[inline]
    pub fn beta_bar_sq(&self, t: usize) -> T {
        self.beta_bar_sq[t]
    }

    #[inline]
    pub fn beta_bar(&self, t: usize) -> T {
        self.beta_bar[t]
    }

    /// Posterior width; exactly zero at `t = 1`.
    #[inline]
    pub fn beta_tilde(&self, t: usize) -> T {
        self.beta_tilde[t]
    }

    /// Reverse-step noise width under the configured rule.
    #[inline]
    pub fn sigma(&self, t: usize) -> T {
        self.sigma[t]
    }

    /// Original-chain timestep represented by index `t` of this schedule.
    #[inline]
    pub fn original_timestep(&self, t: usize) -> usize {
        self.timestep_map[t]
    }

    /// Weight multiplying the squared noise-prediction error in the exact
    /// variational bound: `beta^4 / (2 alpha^2 beta_bar^2 sigma^2)`.
    pub fn vlb_weight(&self, t: usize) -> Result<T, ScheduleError> {
        self.check_t(t)?;
        let sigma = self.sigma[t];
        if !(sigma > T::zero()) {
            return Err(ScheduleError::SigmaZero { t });
        }
        let beta_sq = self.beta[t] * self.beta[t];
        let two = T::one() + T::one();
        Ok(beta_sq * beta_sq
            / (two * self.alpha[t] * self.alpha[t] * self.beta_bar_sq[t] * sigma * sigma))
    }

    /// Subsamples the chain to `steps` intervals over evenly spaced indices
    /// `0 = s_0 < s_1 < ... < s_steps = T`, choosing per-interval
    /// coefficients so every kept index keeps its original marginal:
    ///
    /// ```text
    /// alpha'_k = alpha_bar(s_k) / alpha_bar(s_{k-1})
    /// beta'_k^2 = beta_bar_sq(s_k) - alpha'_k^2 beta_bar_sq(s_{k-1})
    /// ```
    ///
    /// `steps = T` returns the schedule unchanged.
    pub fn respace(&self, steps: usize) -> Result<Self, ScheduleError> {
        if steps == 0 || steps > self.t_max {
            return Err(ScheduleError::BadRespace {
                t_max: self.t_max,
                requested: steps,
            });
        }
        if steps == self.t_max {
            return Ok(self.clone());
        }
        let indices: Vec<usize> = (0..=steps)
            .map(|k| ((k as f64 * self.t_max as f64) / steps as f64).round() as usize)
            .collect();
        let mut alpha = Vec::with_capacity(steps);
        let mut beta = Vec::with_capacity(steps);
        for k in 1..=steps {
            let (lo, hi) = (indices[k - 1], indices[k]);
            let a = self.alpha_bar[hi] / self.alpha_bar[lo];
            let b_sq = self.beta_bar_sq[hi] - a * a * self.beta_bar_sq[lo];
            if !(b_sq > T::zero()) {
                return Err(ScheduleError::NonPositiveEntry { t: k, what: "beta" });
            }
            alpha.push(a);
            beta.push(b_sq.sqrt());
        }
        let mut out = Self::from_alpha_beta(alpha, beta, self.sigma_rule)?;
        out.timestep_map = indices.iter().map(|&s| self.timestep_map[s]).collect();
        Ok(out)
    }

    /// Largest relative violation of the defining recursion across all steps.
    pub fn recursion_residual(&self) -> T {
        let mut worst = T::zero();
        for t in 1..=self.t_max {
            let lhs = self.beta_bar_sq[t];
            let rhs = self.alpha[t] * self.alpha[t] * self.beta_bar_sq[t - 1]
                + self.beta[t] * self.beta[t];
            let denom = lhs.abs().max(rhs.abs()).max(T::from_f64_lossy(1e-300));
            worst = worst.max((lhs - rhs).abs() / denom);
        }
        worst
    }
}

fn prepend<T: Scalar>(sentinel: T, mut v: Vec<T>) -> Vec<T> {
    v.insert(0, sentinel);
    v
}
