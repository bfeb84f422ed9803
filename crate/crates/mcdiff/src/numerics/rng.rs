//! Deterministic counter-based random source.
//!
//! Every draw is a pure function of `(seed, stream_id, counter)`, so streams
//! can be cloned, checkpointed and resumed, and concurrent tasks stay
//! reproducible as long as each owns a distinct `stream_id`. The integer
//! stream is exact on every platform; the Gaussian transform goes through
//! `ln`/`cos`/`sin`, which may differ by ulps between libm builds.

use super::{ComplexGrid, RealGrid};
use crate::scalar::Scalar;
use num_complex::Complex;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer (Stafford variant 13).
#[inline]
fn mix64(mut z: u64) -> u64 {
    z ^= z >> 30;
    z = z.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 27;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Splittable counter-based generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    counter: u64,
    // Derived at construction; never serialized.
    base: u64,
    gamma: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::from_state(seed, stream_id, 0)
    }

    /// Rebuilds a stream at an explicit counter position (checkpoint resume).
    pub fn from_state(seed: u64, stream_id: u64, counter: u64) -> Self {
        let base =
            mix64(seed ^ GOLDEN) ^ mix64(stream_id.wrapping_mul(GOLDEN) ^ 0xA076_1D64_78BD_642F);
        let gamma = mix64(stream_id ^ seed.rotate_left(32)) | 1;
        Self {
            seed,
            stream_id,
            counter,
            base,
            gamma,
        }
    }

    /// `(seed, stream_id, counter)` triple for persistence.
    pub fn state(&self) -> (u64, u64, u64) {
        (self.seed, self.stream_id, self.counter)
    }

    /// Derived stream for an indexed child task (sampling chain, data shard).
    ///
    /// Children of one parent are mutually distinct; callers that mix several
    /// parent streams should keep their `stream_id` ranges apart.
    pub fn child(&self, index: u64) -> RngStream {
        RngStream::new(
            self.seed,
            self.stream_id.wrapping_add(index).wrapping_add(1),
        )
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.base
                .wrapping_add(self.counter.wrapping_mul(self.gamma)),
        )
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Two independent standard normals (Box-Muller).
    #[inline]
    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        // u1 in (0, 1] keeps the log finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = (-2.0 * u1.ln()).sqrt();
        let ang = 2.0 * std::f64::consts::PI * u2;
        (r * ang.cos(), r * ang.sin())
    }

    /// Single standard normal; consumes a full pair.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        self.next_normal_pair().0
    }

    /// Unbiased integer draw in `[0, n)` by rejection.
    pub fn next_below(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_below requires n > 0");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }
}

/// Per-channel standard-normal grids; one Box-Muller pair per entry, scanned
/// row-major, so the stream advance is a pure function of `height * width`.
pub fn gaussian<T: Scalar>(
    rng: &mut RngStream,
    height: usize,
    width: usize,
) -> (RealGrid<T>, RealGrid<T>) {
    let mut re = RealGrid::zeros(height, width);
    let mut im = RealGrid::zeros(height, width);
    for i in 0..height * width {
        let (a, b) = rng.next_normal_pair();
        re.data_mut()[i] = T::from_f64_lossy(a);
        im.data_mut()[i] = T::from_f64_lossy(b);
    }
    (re, im)
}

/// Complex grid with i.i.d. standard-normal channels; identical stream
/// consumption to [`gaussian`].
pub fn gaussian_complex<T: Scalar>(
    rng: &mut RngStream,
    height: usize,
    width: usize,
) -> ComplexGrid<T> {
    let mut g = ComplexGrid::zeros(height, width);
    for v in g.data_mut() {
        let (a, b) = rng.next_normal_pair();
        *v = Complex::new(T::from_f64_lossy(a), T::from_f64_lossy(b));
    }
    g
}
