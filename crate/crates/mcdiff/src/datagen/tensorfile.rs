//! Fixed little-endian tensor container.
//!
//! Layout: magic `MCDT`, format version (u16), dtype code (u8), ndim (u8),
//! dims (u32 each), then the row-major payload. Complex payloads interleave
//! (re, im). Codes 1-3 cover f32 real, f32 complex and u8; codes 4-5 extend
//! the same scheme to f64 so double-precision grids round-trip bit-exactly.

use std::fmt;
use std::path::Path;

use num_complex::Complex;

use crate::numerics::{ComplexGrid, RealGrid};
use crate::scalar::Scalar;

pub const TENSOR_MAGIC: &[u8; 4] = b"MCDT";
pub const TENSOR_VERSION: u16 = 1;

pub const DTYPE_F32: u8 = 1;
pub const DTYPE_C32: u8 = 2;
pub const DTYPE_U8: u8 = 3;
pub const DTYPE_F64: u8 = 4;
pub const DTYPE_C64: u8 = 5;

#[derive(Debug)]
pub enum TensorFileError {
    Io(std::io::Error),
    BadMagic,
    UnsupportedVersion(u16),
    BadDtype(u8),
    Truncated,
    TrailingBytes(usize),
    DimOverflow,
    DtypeMismatch { expected: u8, got: u8 },
    BadShape(String),
}

impl fmt::Display for TensorFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorFileError::Io(e) => write!(f, "tensor file I/O: {e}"),
            TensorFileError::BadMagic => write!(f, "not a tensor file (bad magic)"),
            TensorFileError::UnsupportedVersion(v) => {
                write!(f, "unsupported tensor format version {v}")
            }
            TensorFileError::BadDtype(d) => write!(f, "unknown dtype code {d}"),
            TensorFileError::Truncated => write!(f, "tensor file is truncated"),
            TensorFileError::TrailingBytes(n) => write!(f, "{n} unexpected trailing bytes"),
            TensorFileError::DimOverflow => write!(f, "dimension product overflows"),
            TensorFileError::DtypeMismatch { expected, got } => {
                write!(f, "dtype mismatch: expected code {expected}, found {got}")
            }
            TensorFileError::BadShape(msg) => write!(f, "unusable tensor shape: {msg}"),
        }
    }
}

impl std::error::Error for TensorFileError {}

impl From<std::io::Error> for TensorFileError {
    fn from(e: std::io::Error) -> Self {
        TensorFileError::Io(e)
    }
}

/// Decoded payload of a tensor file.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorPayload {
    F32(Vec<f32>),
    C32(Vec<Complex<f32>>),
    U8(Vec<u8>),
    F64(Vec<f64>),
    C64(Vec<Complex<f64>>),
}

impl TensorPayload {
    pub fn dtype(&self) -> u8 {
        match self {
            TensorPayload::F32(_) => DTYPE_F32,
            TensorPayload::C32(_) => DTYPE_C32,
            TensorPayload::U8(_) => DTYPE_U8,
            TensorPayload::F64(_) => DTYPE_F64,
            TensorPayload::C64(_) => DTYPE_C64,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorPayload::F32(v) => v.len(),
            TensorPayload::C32(v) => v.len(),
            TensorPayload::U8(v) => v.len(),
            TensorPayload::F64(v) => v.len(),
            TensorPayload::C64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Serializes one tensor into the container bytes.
pub fn encode_tensor(dims: &[usize], payload: &TensorPayload) -> Result<Vec<u8>, TensorFileError> {
    let count = checked_product(dims)?;
    if count != payload.len() {
        return Err(TensorFileError::BadShape(format!(
            "dims {:?} imply {} elements, payload has {}",
            dims,
            count,
            payload.len()
        )));
    }
    if dims.len() > u8::MAX as usize {
        return Err(TensorFileError::BadShape("too many dimensions".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&TENSOR_VERSION.to_le_bytes());
    out.push(payload.dtype());
    out.push(dims.len() as u8);
    for &d in dims {
        let d32 = u32::try_from(d).map_err(|_| TensorFileError::DimOverflow)?;
        out.extend_from_slice(&d32.to_le_bytes());
    }
    match payload {
        TensorPayload::F32(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorPayload::C32(v) => {
            for x in v {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }
        }
        TensorPayload::U8(v) => out.extend_from_slice(v),
        TensorPayload::F64(v) => {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        TensorPayload::C64(v) => {
            for x in v {
                out.extend_from_slice(&x.re.to_le_bytes());
                out.extend_from_slice(&x.im.to_le_bytes());
            }
        }
    }
    Ok(out)
}

/// Parses container bytes back into dims and payload, rejecting anything
/// malformed with a specific error.
pub fn decode_tensor(bytes: &[u8]) -> Result<(Vec<usize>, TensorPayload), TensorFileError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != TENSOR_MAGIC {
        return Err(TensorFileError::BadMagic);
    }
    let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
    if version != TENSOR_VERSION {
        return Err(TensorFileError::UnsupportedVersion(version));
    }
    let dtype = cur.take(1)?[0];
    let ndim = cur.take(1)?[0] as usize;
    let mut dims = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        dims.push(u32::from_le_bytes(cur.take(4)?.try_into().unwrap()) as usize);
    }
    let count = checked_product(&dims)?;
    let payload = match dtype {
        DTYPE_F32 => {
            let raw = cur.take(count.checked_mul(4).ok_or(TensorFileError::DimOverflow)?)?;
            TensorPayload::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        DTYPE_C32 => {
            let raw = cur.take(count.checked_mul(8).ok_or(TensorFileError::DimOverflow)?)?;
            TensorPayload::C32(
                raw.chunks_exact(8)
                    .map(|c| {
                        Complex::new(
                            f32::from_le_bytes(c[..4].try_into().unwrap()),
                            f32::from_le_bytes(c[4..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            )
        }
        DTYPE_U8 => TensorPayload::U8(cur.take(count)?.to_vec()),
        DTYPE_F64 => {
            let raw = cur.take(count.checked_mul(8).ok_or(TensorFileError::DimOverflow)?)?;
            TensorPayload::F64(
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            )
        }
        DTYPE_C64 => {
            let raw = cur.take(count.checked_mul(16).ok_or(TensorFileError::DimOverflow)?)?;
            TensorPayload::C64(
                raw.chunks_exact(16)
                    .map(|c| {
                        Complex::new(
                            f64::from_le_bytes(c[..8].try_into().unwrap()),
                            f64::from_le_bytes(c[8..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            )
        }
        other => return Err(TensorFileError::BadDtype(other)),
    };
    if cur.pos != bytes.len() {
        return Err(TensorFileError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok((dims, payload))
}

pub fn write_tensor(
    path: &Path,
    dims: &[usize],
    payload: &TensorPayload,
) -> Result<(), TensorFileError> {
    let bytes = encode_tensor(dims, payload)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, TensorPayload), TensorFileError> {
    let bytes = std::fs::read(path)?;
    decode_tensor(&bytes)
}

/// Scalar-specific dtype codes and payload packing for grid I/O.
pub trait GridCodec: Scalar {
    const REAL_DTYPE: u8;
    const COMPLEX_DTYPE: u8;
    const BYTE_WIDTH: usize;
    fn pack_real(values: &[Self]) -> TensorPayload;
    fn pack_complex(values: &[Complex<Self>]) -> TensorPayload;
    fn unpack_real(payload: TensorPayload) -> Option<Vec<Self>>;
    fn unpack_complex(payload: TensorPayload) -> Option<Vec<Complex<Self>>>;
    /// Raw little-endian encoding, header-free (checkpoint sections).
    fn raw_le_bytes(values: &[Self], out: &mut Vec<u8>);
    fn from_raw_le(bytes: &[u8]) -> Vec<Self>;
}

impl GridCodec for f32 {
    const REAL_DTYPE: u8 = DTYPE_F32;
    const COMPLEX_DTYPE: u8 = DTYPE_C32;
    const BYTE_WIDTH: usize = 4;

    fn pack_real(values: &[Self]) -> TensorPayload {
        TensorPayload::F32(values.to_vec())
    }

    fn pack_complex(values: &[Complex<Self>]) -> TensorPayload {
        TensorPayload::C32(values.to_vec())
    }

    fn unpack_real(payload: TensorPayload) -> Option<Vec<Self>> {
        match payload {
            TensorPayload::F32(v) => Some(v),
            _ => None,
        }
    }

    fn unpack_complex(payload: TensorPayload) -> Option<Vec<Complex<Self>>> {
        match payload {
            TensorPayload::C32(v) => Some(v),
            _ => None,
        }
    }

    fn raw_le_bytes(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn from_raw_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

impl GridCodec for f64 {
    const REAL_DTYPE: u8 = DTYPE_F64;
    const COMPLEX_DTYPE: u8 = DTYPE_C64;
    const BYTE_WIDTH: usize = 8;

    fn pack_real(values: &[Self]) -> TensorPayload {
        TensorPayload::F64(values.to_vec())
    }

    fn pack_complex(values: &[Complex<Self>]) -> TensorPayload {
        TensorPayload::C64(values.to_vec())
    }

    fn unpack_real(payload: TensorPayload) -> Option<Vec<Self>> {
        match payload {
            TensorPayload::F64(v) => Some(v),
            _ => None,
        }
    }

    fn unpack_complex(payload: TensorPayload) -> Option<Vec<Complex<Self>>> {
        match payload {
            TensorPayload::C64(v) => Some(v),
            _ => None,
        }
    }

    fn raw_le_bytes(values: &[Self], out: &mut Vec<u8>) {
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    fn from_raw_le(bytes: &[u8]) -> Vec<Self> {
        bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect()
    }
}

pub fn write_complex_grid<T: GridCodec>(
    path: &Path,
    grid: &ComplexGrid<T>,
) -> Result<(), TensorFileError> {
    write_tensor(
        path,
        &[grid.height(), grid.width()],
        &T::pack_complex(grid.data()),
    )
}

pub fn read_complex_grid<T: GridCodec>(path: &Path) -> Result<ComplexGrid<T>, TensorFileError> {
    let (dims, payload) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(TensorFileError::BadShape(format!(
            "expected 2-D grid, found {dims:?}"
        )));
    }
    let got = payload.dtype();
    let data = T::unpack_complex(payload).ok_or(TensorFileError::DtypeMismatch {
        expected: T::COMPLEX_DTYPE,
        got,
    })?;
    ComplexGrid::from_data(dims[0], dims[1], data)
        .map_err(|e| TensorFileError::BadShape(e.to_string()))
}

pub fn write_real_grid<T: GridCodec>(
    path: &Path,
    grid: &RealGrid<T>,
) -> Result<(), TensorFileError> {
    write_tensor(
        path,
        &[grid.height(), grid.width()],
        &T::pack_real(grid.data()),
    )
}

pub fn read_real_grid<T: GridCodec>(path: &Path) -> Result<RealGrid<T>, TensorFileError> {
    let (dims, payload) = read_tensor(path)?;
    if dims.len() != 2 {
        return Err(TensorFileError::BadShape(format!(
            "expected 2-D grid, found {dims:?}"
        )));
    }
    let got = payload.dtype();
    let data = T::unpack_real(payload).ok_or(TensorFileError::DtypeMismatch {
        expected: T::REAL_DTYPE,
        got,
    })?;
    RealGrid::from_data(dims[0], dims[1], data)
        .map_err(|e| TensorFileError::BadShape(e.to_string()))
}

fn checked_product(dims: &[usize]) -> Result<usize, TensorFileError> {
    let mut acc = 1usize;
    for &d in dims {
        acc = acc.checked_mul(d).ok_or(TensorFileError::DimOverflow)?;
    }
    Ok(acc)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorFileError> {
        if self.pos + n > self.bytes.len() {
            return Err(TensorFileError::Truncated);
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}
