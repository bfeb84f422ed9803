//! Column sampling masks and the under-sampled forward model.
//!
//! A mask partitions the k-space columns into an acquired set and its
//! complement. Projections keep excluded columns at exact zero, which is what
//! makes data consistency structural downstream: sampled entries are never
//! touched by the diffusion.

use std::fmt;

use crate::numerics::{dft2, idft2, ComplexGrid, DimMismatch, RngStream};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Random,
    Equispaced,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskKind::Random => write!(f, "random"),
            MaskKind::Equispaced => write!(f, "equispaced"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MaskError {
    BadParams(String),
    WidthMismatch { mask: usize, grid: usize },
    MaskMismatch,
    SideMismatch,
    NoComplementSupport,
}

impl fmt::Display for MaskError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskError::BadParams(msg) => write!(f, "invalid mask parameters: {msg}"),
            MaskError::WidthMismatch { mask, grid } => {
                write!(f, "mask width {mask} does not match grid width {grid}")
            }
            MaskError::MaskMismatch => write!(f, "operands were built from different masks"),
            MaskError::SideMismatch => write!(f, "operands are on incompatible projector sides"),
            MaskError::NoComplementSupport => {
                write!(f, "mask samples every column; complement support is empty")
            }
        }
    }
}

impl std::error::Error for MaskError {}

impl From<DimMismatch> for MaskError {
    fn from(e: DimMismatch) -> Self {
        MaskError::WidthMismatch {
            mask: e.expected.1,
            grid: e.got.1,
        }
    }
}

/// Which projector produced a partial measurement grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Acquired columns (the diagonal 0/1 matrix of the forward model).
    Sampled,
    /// Non-acquired columns (its complement).
    NonSampled,
}

impl Side {
    pub fn complement(self) -> Side {
        match self {
            Side::Sampled => Side::NonSampled,
            Side::NonSampled => Side::Sampled,
        }
    }
}

/// Per-column sampling pattern with its generation metadata.
///
/// Column flags are stored in the *centered* frequency order (DC in the
/// middle), which keeps mask files human-readable; translation to the
/// non-centered storage layout of the transform happens at projection time.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    sampled: Vec<bool>,
    acceleration: f64,
    center_fraction: f64,
    kind: MaskKind,
    seed: u64,
}

fn check_mask_params(
    width: usize,
    acceleration: f64,
    center_fraction: f64,
) -> Result<(usize, usize), MaskError> {
    if width < 4 {
        return Err(MaskError::BadParams(format!("width {width} < 4")));
    }
    if !(acceleration >= 1.0) {
        return Err(MaskError::BadParams(format!(
            "acceleration {acceleration} < 1"
        )));
    }
    if !(0.0..1.0).contains(&center_fraction) {
        return Err(MaskError::BadParams(format!(
            "center_fraction {center_fraction} outside [0, 1)"
        )));
    }
    let budget = (width as f64 / acceleration).round() as usize;
    let n_center = (center_fraction * width as f64).round() as usize;
    if n_center > budget {
        return Err(MaskError::BadParams(format!(
            "center budget {n_center} exceeds total budget {budget} (width {width}, acceleration {acceleration})"
        )));
    }
    if budget == 0 {
        return Err(MaskError::BadParams(format!(
            "acceleration {acceleration} leaves no sampled column at width {width}"
        )));
    }
    Ok((budget, n_center))
}

/// Contiguous low-frequency block in centered order.
fn center_block(width: usize, n_center: usize) -> std::ops::Range<usize> {
    let start = (width - n_center + 1) / 2;
    start..start + n_center
}

impl Mask {
    /// Center block plus uniformly random remaining columns, `budget` total
    /// where `budget = round(width / acceleration)`.
    pub fn random(
        width: usize,
        acceleration: f64,
        center_fraction: f64,
        rng: &mut RngStream,
    ) -> Result<Mask, MaskError> {
        let (budget, n_center) = check_mask_params(width, acceleration, center_fraction)?;
        let mut sampled = vec![false; width];
        for j in center_block(width, n_center) {
            sampled[j] = true;
        }
        // Partial Fisher-Yates over the not-yet-sampled columns.
        let mut pool: Vec<usize> = (0..width).filter(|&j| !sampled[j]).collect();
        let remaining = budget - n_center;
        for pick in 0..remaining {
            let j = pick + rng.next_below(pool.len() - pick);
            pool.swap(pick, j);
            sampled[pool[pick]] = true;
        }
        let (seed, _, _) = rng.state();
        Ok(Mask {
            width,
            sampled,
            acceleration,
            center_fraction,
            kind: MaskKind::Random,
            seed,
        })
    }

    /// Center block plus stride-`acceleration` columns from column 0 in
    /// centered order, skipping already-sampled columns, truncated to budget.
    pub fn equispaced(
        width: usize,
        acceleration: f64,
        center_fraction: f64,
    ) -> Result<Mask, MaskError> {
        let (budget, n_center) = check_mask_params(width, acceleration, center_fraction)?;
        let mut sampled = vec![false; width];
        let mut count = 0usize;
        for j in center_block(width, n_center) {
            sampled[j] = true;
            count += 1;
        }
        let stride = acceleration.round().max(1.0) as usize;
        let mut j = 0usize;
        while count < budget && j < width {
            if !sampled[j] {
                sampled[j] = true;
                count += 1;
            }
            j += stride;
        }
        // Stride positions alone may not fill the budget; sweep the rest.
        let mut j = 0usize;
        while count < budget {
            if !sampled[j] {
                sampled[j] = true;
                count += 1;
            }
            j += 1;
        }
        Ok(Mask {
            width,
            sampled,
            acceleration,
            center_fraction,
            kind: MaskKind::Equispaced,
            seed: 0,
        })
    }

    /// Rebuilds a mask from persisted fields. The flag vector must be
    /// non-degenerate in width only; degenerate all/none sampling is allowed
    /// and handled by the callers that care.
    pub fn from_parts(
        width: usize,
        sampled: Vec<bool>,
        acceleration: f64,
        center_fraction: f64,
        kind: MaskKind,
        seed: u64,
    ) -> Result<Mask, MaskError> {
        if sampled.len() != width || width == 0 {
            return Err(MaskError::BadParams(format!(
                "flag vector length {} does not match width {width}",
                sampled.len()
            )));
        }
        Ok(Mask {
            width,
            sampled,
            acceleration,
            center_fraction,
            kind,
            seed,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn acceleration(&self) -> f64 {
        self.acceleration
    }

    pub fn center_fraction(&self) -> f64 {
        self.center_fraction
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Column flags in centered order.
    pub fn sampled_flags(&self) -> &[bool] {
        &self.sampled
    }

    /// Mask with every column flag flipped; metadata is inherited.
    pub fn complement(&self) -> Mask {
        Mask {
            width: self.width,
            sampled: self.sampled.iter().map(|&s| !s).collect(),
            acceleration: self.acceleration,
            center_fraction: self.center_fraction,
            kind: self.kind,
            seed: self.seed,
        }
    }

    #[inline]
    pub fn is_sampled_centered(&self, centered_col: usize) -> bool {
        self.sampled[centered_col]
    }

    /// Flag lookup in the transform's non-centered column order.
    #[inline]
    pub fn is_sampled_storage(&self, storage_col: usize) -> bool {
        self.sampled[self.storage_to_centered(storage_col)]
    }

    #[inline]
    pub fn storage_to_centered(&self, c: usize) -> usize {
        (c + self.width / 2) % self.width
    }

    #[inline]
    pub fn centered_to_storage(&self, j: usize) -> usize {
        (j + self.width - self.width / 2) % self.width
    }

    pub fn sampled_count(&self) -> usize {
        self.sampled.iter().filter(|&&s| s).count()
    }

    pub fn non_sampled_count(&self) -> usize {
        self.width - self.sampled_count()
    }

    /// True when two masks select the same columns at the same width.
    pub fn same_support(&self, other: &Mask) -> bool {
        self.width == other.width && self.sampled == other.sampled
    }

    /// Storage-order columns kept by the given projector side.
    pub fn support_columns(&self, side: Side) -> Vec<usize> {
        (0..self.width)
            .filter(|&c| self.is_sampled_storage(c) == matches!(side, Side::Sampled))
            .collect()
    }
}

/// Measurement grid known to be zero outside one projector's support.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialKSpace<T> {
    grid: ComplexGrid<T>,
    mask: Mask,
    side: Side,
}

impl<T: Scalar> PartialKSpace<T> {
    /// Applies the projector for `side`, zeroing excluded columns bit-exactly.
    pub fn project(
        grid: &ComplexGrid<T>,
        mask: &Mask,
        side: Side,
    ) -> Result<PartialKSpace<T>, MaskError> {
        if grid.width() != mask.width() {
            return Err(MaskError::WidthMismatch {
                mask: mask.width(),
                grid: grid.width(),
            });
        }
        let mut out = ComplexGrid::zeros(grid.height(), grid.width());
        for c in mask.support_columns(side) {
            for r in 0..grid.height() {
                out.set(r, c, grid.get(r, c));
            }
        }
        Ok(PartialKSpace {
            grid: out,
            mask: mask.clone(),
            side,
        })
    }

    /// All-zero partial grid on the given side.
    pub fn zeros(height: usize, mask: &Mask, side: Side) -> PartialKSpace<T> {
        PartialKSpace {
            grid: ComplexGrid::zeros(height, mask.width()),
            mask: mask.clone(),
            side,
        }
    }

    pub fn grid(&self) -> &ComplexGrid<T> {
        &self.grid
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn height(&self) -> usize {
        self.grid.height()
    }

    pub fn check_compatible(&self, other: &PartialKSpace<T>) -> Result<(), MaskError> {
        if !self.mask.same_support(&other.mask) {
            return Err(MaskError::MaskMismatch);
        }
        if self.side != other.side {
            return Err(MaskError::SideMismatch);
        }
        self.grid.check_shape(&other.grid)?;
        Ok(())
    }

    /// `a*self + b*other` on a shared support; excluded columns stay exact
    /// zero because they are never written.
    pub fn lin_comb(
        a: T,
        x: &PartialKSpace<T>,
        b: T,
        y: &PartialKSpace<T>,
    ) -> Result<PartialKSpace<T>, MaskError> {
        x.check_compatible(y)?;
        let mut out = ComplexGrid::zeros(x.grid.height(), x.grid.width());
        for c in x.mask.support_columns(x.side) {
            for r in 0..x.grid.height() {
                out.set(r, c, x.grid.get(r, c) * a + y.grid.get(r, c) * b);
            }
        }
        Ok(PartialKSpace {
            grid: out,
            mask: x.mask.clone(),
            side: x.side,
        })
    }

    /// Entrywise scaling on the support.
    pub fn scaled(&self, factor: T) -> PartialKSpace<T> {
        let mut out = ComplexGrid::zeros(self.grid.height(), self.grid.width());
        for c in self.mask.support_columns(self.side) {
            for r in 0..self.grid.height() {
                out.set(r, c, self.grid.get(r, c) * factor);
            }
        }
        PartialKSpace {
            grid: out,
            mask: self.mask.clone(),
            side: self.side,
        }
    }

    /// Sum of squared entries over both real channels (zero off support).
    pub fn norm_sqr(&self) -> T {
        self.grid
            .data()
            .iter()
            .fold(T::zero(), |acc, v| acc + v.norm_sqr())
    }

    /// True when every excluded column is exactly zero.
    pub fn support_is_clean(&self) -> bool {
        let excluded = self.mask.support_columns(self.side.complement());
        excluded.iter().all(|&c| {
            (0..self.grid.height()).all(|r| {
                let v = self.grid.get(r, c);
                v.re == T::zero() && v.im == T::zero()
            })
        })
    }
}

/// Forward model with noiseless acquisition: transforms the image and splits
/// the full measurements into acquired and non-acquired parts. The two grids
/// sum to the full spectrum exactly.
pub fn split<T: Scalar>(
    image: &ComplexGrid<T>,
    mask: &Mask,
) -> Result<(PartialKSpace<T>, PartialKSpace<T>), MaskError> {
    let spectrum = dft2(image);
    let y_m = PartialKSpace::project(&spectrum, mask, Side::Sampled)?;
    let y_mc = PartialKSpace::project(&spectrum, mask, Side::NonSampled)?;
    Ok((y_m, y_mc))
}

/// Recombines complementary partial measurements and inverts the transform.
/// With a zero non-sampled part this is the zero-filled reconstruction.
pub fn merge_and_invert<T: Scalar>(
    y_m: &PartialKSpace<T>,
    y_mc: &PartialKSpace<T>,
) -> Result<ComplexGrid<T>, MaskError> {
    if !y_m.mask.same_support(&y_mc.mask) {
        return Err(MaskError::MaskMismatch);
    }
    if y_m.side != Side::Sampled || y_mc.side != Side::NonSampled {
        return Err(MaskError::SideMismatch);
    }
    let sum = y_m.grid.add(&y_mc.grid)?;
    Ok(idft2(&sum))
}

/// Zero-filled reconstruction from acquired measurements alone.
pub fn zero_filled<T: Scalar>(y_m: &PartialKSpace<T>) -> ComplexGrid<T> {
    idft2(&y_m.grid)
}

/// Gaussian noise supported on the non-sampled columns only: both real
/// channels i.i.d. standard normal there, exact zero elsewhere. Entries are
/// drawn row-major over the support so the stream advance is reproducible.
pub fn masked_noise<T: Scalar>(
    height: usize,
    mask: &Mask,
    rng: &mut RngStream,
) -> Result<PartialKSpace<T>, MaskError> {
    if mask.non_sampled_count() == 0 {
        return Err(MaskError::NoComplementSupport);
    }
    let mut grid = ComplexGrid::zeros(height, mask.width());
    let cols = mask.support_columns(Side::NonSampled);
    for r in 0..height {
        for &c in &cols {
            let (a, b) = rng.next_normal_pair();
            grid.set(
                r,
                c,
                num_complex::Complex::new(T::from_f64_lossy(a), T::from_f64_lossy(b)),
            );
        }
    }
    Ok(PartialKSpace {
        grid,
        mask: mask.clone(),
        side: Side::NonSampled,
    })
}
