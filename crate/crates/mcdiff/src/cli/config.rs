//! Run configuration: plain-text `key=value` files with flag overrides.
//!
//! Unknown keys are fatal, every key has a default, and the fully resolved
//! table is echoed into every output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::denoiser::OutputDomain;
use crate::measurement::MaskKind;
use crate::schedule::SigmaRule;

/// Exit-code-bearing command error.
#[derive(Debug)]
pub enum CliError {
    /// User or configuration mistake (exit 1).
    Usage(String),
    /// Filesystem or file-format failure (exit 2).
    Io(String),
    /// Internal invariant violation (exit 3).
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub(crate) fn from_dataset(e: crate::datagen::DatasetError) -> CliError {
        use crate::datagen::DatasetError::*;
        match e {
            Config(c) => CliError::Usage(c.to_string()),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "error: {msg}"),
            CliError::Io(msg) => write!(f, "I/O error: {msg}"),
            CliError::Internal(msg) => write!(f, "internal error: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}

/// How `sample` interprets its input tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    /// Complex image; the forward transform is applied before masking.
    Image,
    /// Already-transformed full spectrum.
    KSpace,
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputKind::Image => write!(f, "image"),
            InputKind::KSpace => write!(f, "kspace"),
        }
    }
}

/// Resolved run configuration. Desk-scale defaults (grid 32, 128 diffusion
/// steps, batch 8, 3000 training steps at learning rate 3e-3, 8 samples)
/// keep every workflow inside CPU minutes; larger production-scale values
/// (320-wide grids, 1000 steps, learning rate 1e-4, tens of thousands of
/// optimizer steps) remain legal settings.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub t: usize,
    pub sigma_rule: SigmaRule,
    pub acceleration: f64,
    pub center_fraction: f64,
    pub mask_kind: MaskKind,
    pub image_size: usize,
    pub batch_size: usize,
    pub train_steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub arch: String,
    pub output_domain: OutputDomain,
    pub n_samples: usize,
    pub sampling_steps: usize,
    pub seed: u64,
    pub n_items: usize,
    pub width: usize,
    pub n_ellipses: usize,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub phase_cutoff: f64,
    pub mask_per_item: bool,
    pub ckpt_every: usize,
    pub respace: usize,
    pub input_kind: InputKind,
    pub data: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub recon: Option<PathBuf>,
    pub mean: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            t: 128,
            sigma_rule: SigmaRule::Posterior,
            acceleration: 4.0,
            center_fraction: 0.08,
            mask_kind: MaskKind::Random,
            image_size: 32,
            batch_size: 8,
            train_steps: 3000,
            learning_rate: 3e-3,
            weight_decay: 0.01,
            arch: "small".into(),
            output_domain: OutputDomain::Image,
            n_samples: 8,
            sampling_steps: 128,
            seed: 0,
            n_items: 64,
            width: 32,
            n_ellipses: 6,
            intensity_min: 0.2,
            intensity_max: 0.9,
            phase_cutoff: 0.25,
            mask_per_item: false,
            ckpt_every: 1000,
            respace: 0,
            input_kind: InputKind::Image,
            data: None,
            mask: None,
            checkpoint: None,
            out: None,
            resume: None,
            input: None,
            gt: None,
            recon: None,
            mean: None,
        }
    }
}

impl RunConfig {
    /// Applies one `key=value` assignment; unknown keys are fatal.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let bad =
            |what: &str, e: &dyn fmt::Display| CliError::Usage(format!("config key {what}: {e}"));
        match key {
            "T" | "t" => self.t = value.parse().map_err(|e| bad("T", &e))?,
            "sigma_rule" => {
                self.sigma_rule = match value {
                    "posterior" => SigmaRule::Posterior,
                    "beta" => SigmaRule::Beta,
                    other => return Err(CliError::Usage(format!("unknown sigma_rule '{other}'"))),
                }
            }
            "acceleration" => {
                self.acceleration = value.parse().map_err(|e| bad("acceleration", &e))?
            }
            "center_fraction" => {
                self.center_fraction = value.parse().map_err(|e| bad("center_fraction", &e))?
            }
            "mask_kind" => {
                self.mask_kind = match value {
                    "random" => MaskKind::Random,
                    "equispaced" => MaskKind::Equispaced,
                    other => return Err(CliError::Usage(format!("unknown mask_kind '{other}'"))),
                }
            }
            "image_size" => self.image_size = value.parse().map_err(|e| bad("image_size", &e))?,
            "batch_size" => self.batch_size = value.parse().map_err(|e| bad("batch_size", &e))?,
            "train_steps" => {
                self.train_steps = value.parse().map_err(|e| bad("train_steps", &e))?
            }
            "learning_rate" => {
                self.learning_rate = value.parse().map_err(|e| bad("learning_rate", &e))?
            }
            "weight_decay" => {
                self.weight_decay = value.parse().map_err(|e| bad("weight_decay", &e))?
            }
            "arch" => self.arch = value.to_string(),
            "output_domain" => {
                self.output_domain = match value {
                    "image" => OutputDomain::Image,
                    "measurement" => OutputDomain::Measurement,
                    other => {
                        return Err(CliError::Usage(format!("unknown output_domain '{other}'")))
                    }
                }
            }
            "n_samples" => self.n_samples = value.parse().map_err(|e| bad("n_samples", &e))?,
            "sampling_steps" => {
                self.sampling_steps = value.parse().map_err(|e| bad("sampling_steps", &e))?
            }
            "seed" => self.seed = value.parse().map_err(|e| bad("seed", &e))?,
            "n_items" => self.n_items = value.parse().map_err(|e| bad("n_items", &e))?,
            "width" => self.width = value.parse().map_err(|e| bad("width", &e))?,
            "n_ellipses" => self.n_ellipses = value.parse().map_err(|e| bad("n_ellipses", &e))?,
            "intensity_min" => {
                self.intensity_min = value.parse().map_err(|e| bad("intensity_min", &e))?
            }
            "intensity_max" => {
                self.intensity_max = value.parse().map_err(|e| bad("intensity_max", &e))?
            }
            "phase_cutoff" => {
                self.phase_cutoff = value.parse().map_err(|e| bad("phase_cutoff", &e))?
            }
            "mask_per_item" => {
                self.mask_per_item = value.parse().map_err(|e| bad("mask_per_item", &e))?
            }
            "ckpt_every" => self.ckpt_every = value.parse().map_err(|e| bad("ckpt_every", &e))?,
            "respace" => self.respace = value.parse().map_err(|e| bad("respace", &e))?,
            "input_kind" => {
                self.input_kind = match value {
                    "image" => InputKind::Image,
                    "kspace" => InputKind::KSpace,
                    other => return Err(CliError::Usage(format!("unknown input_kind '{other}'"))),
                }
            }
            "data" => self.data = Some(PathBuf::from(value)),
            "mask" => self.mask = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "resume" => self.resume = Some(PathBuf::from(value)),
            "input" => self.input = Some(PathBuf::from(value)),
            "gt" => self.gt = Some(PathBuf::from(value)),
            "recon" => self.recon = Some(PathBuf::from(value)),
            "mean" => self.mean = Some(PathBuf::from(value)),
            other => return Err(CliError::Usage(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parses a config file: `key=value` lines, `#` comments, blank lines.
    pub fn apply_file(&mut self, path: &std::path::Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading config {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {} is not key=value: '{line}'",
                    lineno + 1
                ))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Deterministic echo of the full table.
    pub fn resolved_text(&self) -> String {
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("T", self.t.to_string());
        map.insert("sigma_rule", self.sigma_rule.to_string());
        map.insert("acceleration", self.acceleration.to_string());
        map.insert("center_fraction", self.center_fraction.to_string());
        map.insert("mask_kind", self.mask_kind.to_string());
        map.insert("image_size", self.image_size.to_string());
        map.insert("batch_size", self.batch_size.to_string());
        map.insert("train_steps", self.train_steps.to_string());
        map.insert("learning_rate", self.learning_rate.to_string());
        map.insert("weight_decay", self.weight_decay.to_string());
        map.insert("arch", self.arch.clone());
        map.insert("output_domain", self.output_domain.to_string());
        map.insert("n_samples", self.n_samples.to_string());
        map.insert("sampling_steps", self.sampling_steps.to_string());
        map.insert("seed", self.seed.to_string());
        map.insert("n_items", self.n_items.to_string());
        map.insert("width", self.width.to_string());
        map.insert("n_ellipses", self.n_ellipses.to_string());
        map.insert("intensity_min", self.intensity_min.to_string());
        map.insert("intensity_max", self.intensity_max.to_string());
        map.insert("phase_cutoff", self.phase_cutoff.to_string());
        map.insert("mask_per_item", self.mask_per_item.to_string());
        map.insert("ckpt_every", self.ckpt_every.to_string());
        map.insert("respace", self.respace.to_string());
        map.insert("input_kind", self.input_kind.to_string());
        for (key, path) in [
            ("data", &self.data),
            ("mask", &self.mask),
            ("checkpoint", &self.checkpoint),
            ("out", &self.out),
            ("resume", &self.resume),
            ("input", &self.input),
            ("gt", &self.gt),
            ("recon", &self.recon),
            ("mean", &self.mean),
        ] {
            if let Some(p) = path {
                map.insert(key, p.display().to_string());
            }
        }
        let mut out = String::new();
        for (k, v) in map {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn require_path(&self, key: &str) -> Result<PathBuf, CliError> {
        let slot = match key {
            "data" => &self.data,
            "mask" => &self.mask,
            "checkpoint" => &self.checkpoint,
            "out" => &self.out,
            "input" => &self.input,
            "gt" => &self.gt,
            _ => &None,
        };
        slot.clone()
            .ok_or_else(|| CliError::Usage(format!("missing required path --{key}")))
    }
}

/// Maps a command-line flag to its config key; `None` for unknown flags.
fn flag_to_key(flag: &str) -> Option<&'static str> {
    Some(match flag {
        "--t" | "--T" | "--timesteps" => "T",
        "--sigma-rule" => "sigma_rule",
        "--accel" | "--acceleration" => "acceleration",
        "--cf" | "--center-fraction" => "center_fraction",
        "--kind" | "--mask-kind" => "mask_kind",
        "--size" | "--image-size" => "image_size",
        "--batch" | "--batch-size" => "batch_size",
        "--steps" | "--train-steps" => "train_steps",
        "--lr" | "--learning-rate" => "learning_rate",
        "--wd" | "--weight-decay" => "weight_decay",
        "--arch" => "arch",
        "--output-domain" => "output_domain",
        "--n-samples" => "n_samples",
        "--sampling-steps" => "sampling_steps",
        "--seed" => "seed",
        "--n" | "--n-items" => "n_items",
        "--width" => "width",
        "--ellipses" | "--n-ellipses" => "n_ellipses",
        "--intensity-min" => "intensity_min",
        "--intensity-max" => "intensity_max",
        "--phase-cutoff" => "phase_cutoff",
        "--ckpt-every" => "ckpt_every",
        "--respace" => "respace",
        "--input-kind" => "input_kind",
        "--data" => "data",
        "--mask" => "mask",
        "--checkpoint" => "checkpoint",
        "--out" => "out",
        "--resume" => "resume",
        "--input" => "input",
        "--gt" => "gt",
        "--recon" => "recon",
        "--mean" => "mean",
        _ => return None,
    })
}

/// Applies `--flag value` / `--flag=value` pairs (after an optional
/// `--config <file>` pass) on top of the defaults.
pub fn parse_flags(args: &[String]) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    // Config file first so explicit flags override it.
    let mut i = 0;
    while i < args.len() {
        if args[i] == "--config" {
            let path = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a file path".into()))?;
            cfg.apply_file(std::path::Path::new(path))?;
        }
        i += 1;
    }
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        if arg == "--config" {
            i += 2;
            continue;
        }
        if arg == "--mask-per-item" {
            cfg.mask_per_item = true;
            i += 1;
            continue;
        }
        let (flag, inline_value) = match arg.split_once('=') {
            Some((f, v)) => (f, Some(v.to_string())),
            None => (arg.as_str(), None),
        };
        let key =
            flag_to_key(flag).ok_or_else(|| CliError::Usage(format!("unknown flag '{flag}'")))?;
        let value = match inline_value {
            Some(v) => v,
            None => {
                i += 1;
                args.get(i)
                    .cloned()
                    .ok_or_else(|| CliError::Usage(format!("flag '{flag}' needs a value")))?
            }
        };
        cfg.set(key, &value)?;
        i += 1;
    }
    Ok(cfg)
}
