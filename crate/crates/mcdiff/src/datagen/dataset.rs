//! Dataset directories: tensor files plus a checksummed manifest.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::tensorfile::{read_complex_grid, write_complex_grid, GridCodec, TensorFileError};
use super::{gen_phantom, DatagenError, PhantomConfig};
use crate::numerics::ComplexGrid;

pub const MANIFEST_NAME: &str = "manifest.txt";

#[derive(Debug)]
pub enum DatasetError {
    Io(std::io::Error),
    Tensor(TensorFileError),
    Config(DatagenError),
    BadManifest(String),
    ChecksumMismatch { expected: u64, got: u64 },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io(e) => write!(f, "dataset I/O: {e}"),
            DatasetError::Tensor(e) => write!(f, "dataset tensor: {e}"),
            DatasetError::Config(e) => write!(f, "dataset config: {e}"),
            DatasetError::BadManifest(msg) => write!(f, "bad manifest: {msg}"),
            DatasetError::ChecksumMismatch { expected, got } => {
                write!(
                    f,
                    "manifest checksum {expected:016x} does not match files ({got:016x})"
                )
            }
        }
    }
}

impl std::error::Error for DatasetError {}

impl From<std::io::Error> for DatasetError {
    fn from(e: std::io::Error) -> Self {
        DatasetError::Io(e)
    }
}

impl From<TensorFileError> for DatasetError {
    fn from(e: TensorFileError) -> Self {
        DatasetError::Tensor(e)
    }
}

impl From<DatagenError> for DatasetError {
    fn from(e: DatagenError) -> Self {
        DatasetError::Config(e)
    }
}

/// Relative item paths plus the content checksum over all of them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub paths: Vec<String>,
    pub checksum: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a64(state: u64, bytes: &[u8]) -> u64 {
    let mut h = state;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn checksum_files(dir: &Path, paths: &[String]) -> Result<u64, DatasetError> {
    let mut h = FNV_OFFSET;
    for rel in paths {
        h = fnv1a64(h, rel.as_bytes());
        h = fnv1a64(h, &[0]);
        let bytes = std::fs::read(dir.join(rel))?;
        h = fnv1a64(h, &bytes);
    }
    Ok(h)
}

/// Generates `n_items` phantoms (item `i` uses `seed + i`) and writes them
/// with a trailing-checksum manifest. Returns the manifest.
pub fn build_dataset<T: GridCodec>(
    n_items: usize,
    config: &PhantomConfig,
    out_dir: &Path,
) -> Result<Manifest, DatasetError> {
    assert!(n_items >= 1, "need at least one item");
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let grids: Vec<ComplexGrid<T>> = (0..n_items)
        .into_par_iter()
        .map(|i| {
            let item_config = PhantomConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.clone()
            };
            gen_phantom::<T>(&item_config).expect("validated config")
        })
        .collect();
    let mut paths = Vec::with_capacity(n_items);
    for (i, grid) in grids.iter().enumerate() {
        let rel = format!("phantom_{i:04}.mcdt");
        write_complex_grid(&out_dir.join(&rel), grid)?;
        paths.push(rel);
    }
    let checksum = checksum_files(out_dir, &paths)?;
    let mut text = String::new();
    for p in &paths {
        text.push_str(p);
        text.push('\n');
    }
    text.push_str(&format!("checksum={checksum:016x}\n"));
    std::fs::write(out_dir.join(MANIFEST_NAME), text)?;
    Ok(Manifest { paths, checksum })
}

/// Parses a manifest and verifies the recorded checksum against the files.
pub fn load_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let text = std::fs::read_to_string(dir.join(MANIFEST_NAME))?;
    let mut paths = Vec::new();
    let mut recorded: Option<u64> = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(value) = line.strip_prefix("checksum=") {
            recorded = Some(
                u64::from_str_radix(value, 16)
                    .map_err(|e| DatasetError::BadManifest(format!("checksum: {e}")))?,
            );
        } else {
            if recorded.is_some() {
                return Err(DatasetError::BadManifest(
                    "entries after the checksum line".into(),
                ));
            }
            paths.push(line.to_string());
        }
    }
    let expected =
        recorded.ok_or_else(|| DatasetError::BadManifest("missing checksum line".into()))?;
    if paths.is_empty() {
        return Err(DatasetError::BadManifest("no items listed".into()));
    }
    let got = checksum_files(dir, &paths)?;
    if got != expected {
        return Err(DatasetError::ChecksumMismatch { expected, got });
    }
    Ok(Manifest {
        paths,
        checksum: expected,
    })
}

/// Loads every item grid listed by a verified manifest.
pub fn load_dataset<T: GridCodec>(dir: &Path) -> Result<Vec<ComplexGrid<T>>, DatasetError> {
    let manifest = load_manifest(dir)?;
    manifest
        .paths
        .iter()
        .map(|rel| Ok(read_complex_grid::<T>(&dir.join(rel))?))
        .collect()
}

/// Paths of a manifest without reading payloads (CLI listing).
pub fn manifest_item_paths(dir: &Path, manifest: &Manifest) -> Vec<PathBuf> {
    manifest.paths.iter().map(|rel| dir.join(rel)).collect()
}
