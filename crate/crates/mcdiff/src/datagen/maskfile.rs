//! Human-readable mask files.
//!
//! A mask persists as plain text: a comment header, its generation metadata
//! as `key=value` lines, and the per-column flags as a 0/1 string in centered
//! frequency order (leftmost character = most negative frequency).

use std::fmt;
use std::path::Path;

use crate::measurement::{Mask, MaskKind};

pub const MASK_HEADER: &str = "# measurement mask v1";

#[derive(Debug)]
pub enum MaskFileError {
    Io(std::io::Error),
    NotAMaskFile,
    MissingKey(&'static str),
    UnknownKey(String),
    Parse(String),
}

impl fmt::Display for MaskFileError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskFileError::Io(e) => write!(f, "mask file I/O: {e}"),
            MaskFileError::NotAMaskFile => write!(f, "not a mask file (missing header line)"),
            MaskFileError::MissingKey(k) => write!(f, "mask file lacks key '{k}'"),
            MaskFileError::UnknownKey(k) => write!(f, "mask file has unknown key '{k}'"),
            MaskFileError::Parse(msg) => write!(f, "mask file parse error: {msg}"),
        }
    }
}

impl std::error::Error for MaskFileError {}

impl From<std::io::Error> for MaskFileError {
    fn from(e: std::io::Error) -> Self {
        MaskFileError::Io(e)
    }
}

pub fn encode_mask(mask: &Mask) -> String {
    let flags: String = mask
        .sampled_flags()
        .iter()
        .map(|&s| if s { '1' } else { '0' })
        .collect();
    format!(
        "{MASK_HEADER}\nwidth={}\nacceleration={}\ncenter_fraction={}\nkind={}\nseed={}\nsampled={}\n",
        mask.width(),
        mask.acceleration(),
        mask.center_fraction(),
        mask.kind(),
        mask.seed(),
        flags
    )
}

pub fn decode_mask(text: &str) -> Result<Mask, MaskFileError> {
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first.trim() == MASK_HEADER => {}
        _ => return Err(MaskFileError::NotAMaskFile),
    }
    let mut width: Option<usize> = None;
    let mut acceleration: Option<f64> = None;
    let mut center_fraction: Option<f64> = None;
    let mut kind: Option<MaskKind> = None;
    let mut seed: Option<u64> = None;
    let mut sampled: Option<Vec<bool>> = None;
    for line in lines {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| MaskFileError::Parse(format!("expected key=value, got '{line}'")))?;
        match key {
            "width" => {
                width = Some(
                    value
                        .parse()
                        .map_err(|e| MaskFileError::Parse(format!("width: {e}")))?,
                )
            }
            "acceleration" => {
                acceleration = Some(
                    value
                        .parse()
                        .map_err(|e| MaskFileError::Parse(format!("acceleration: {e}")))?,
                )
            }
            "center_fraction" => {
                center_fraction = Some(
                    value
                        .parse()
                        .map_err(|e| MaskFileError::Parse(format!("center_fraction: {e}")))?,
                )
            }
            "kind" => {
                kind = Some(match value {
                    "random" => MaskKind::Random,
                    "equispaced" => MaskKind::Equispaced,
                    other => {
                        return Err(MaskFileError::Parse(format!("unknown mask kind '{other}'")))
                    }
                })
            }
            "seed" => {
                seed = Some(
                    value
                        .parse()
                        .map_err(|e| MaskFileError::Parse(format!("seed: {e}")))?,
                )
            }
            "sampled" => {
                let mut flags = Vec::with_capacity(value.len());
                for ch in value.chars() {
                    match ch {
                        '0' => flags.push(false),
                        '1' => flags.push(true),
                        other => {
                            return Err(MaskFileError::Parse(format!(
                                "flag characters must be 0/1, got '{other}'"
                            )))
                        }
                    }
                }
                sampled = Some(flags);
            }
            other => return Err(MaskFileError::UnknownKey(other.to_string())),
        }
    }
    let width = width.ok_or(MaskFileError::MissingKey("width"))?;
    let sampled = sampled.ok_or(MaskFileError::MissingKey("sampled"))?;
    Mask::from_parts(
        width,
        sampled,
        acceleration.ok_or(MaskFileError::MissingKey("acceleration"))?,
        center_fraction.ok_or(MaskFileError::MissingKey("center_fraction"))?,
        kind.ok_or(MaskFileError::MissingKey("kind"))?,
        seed.ok_or(MaskFileError::MissingKey("seed"))?,
    )
    .map_err(|e| MaskFileError::Parse(e.to_string()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<(), MaskFileError> {
    std::fs::write(path, encode_mask(mask))?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Mask, MaskFileError> {
    let text = std::fs::read_to_string(path)?;
    decode_mask(&text)
}
