//! Command-line surface: data generation, mask creation, training, posterior
//! sampling, evaluation and schedule inspection.
//!
//! Every command is a pure function of its resolved configuration (seeds
//! included): reruns produce byte-identical outputs. The resolved
//! configuration is echoed at the top of each report and into `config.txt`
//! of any output directory.

mod config;
mod train;

pub use config::{parse_flags, CliError, InputKind, RunConfig};
pub use train::{run_training, TrainOutcome};

use std::path::Path;

use crate::datagen::{
    build_dataset, read_checkpoint, read_complex_grid, read_mask, read_real_grid,
    write_complex_grid, write_mask, write_real_grid, PhantomConfig, TensorFileError,
};
use crate::diffusion::{data_consistency_error, sample};
use crate::evalkit::{magnitude, metrics, sample_stats, MetricRecord};
use crate::measurement::{split, zero_filled, Mask, MaskKind, PartialKSpace, Side};
use crate::numerics::{dft2, RealGrid, RngStream};
use crate::schedule::DiffusionSchedule;

/// Stream-id conventions so the independent pipeline stages never share a
/// stream for one seed.
pub const STREAM_INIT: u64 = 1;
pub const STREAM_TRAIN: u64 = 2;
pub const STREAM_MASK: u64 = 10;
pub const STREAM_SAMPLE: u64 = 100;

fn echo_config(cfg: &RunConfig) -> String {
    format!("# resolved config\n{}", cfg.resolved_text())
}

fn write_config_echo(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    std::fs::write(dir.join("config.txt"), cfg.resolved_text())
        .map_err(|e| CliError::Io(format!("writing config echo: {e}")))?;
    Ok(())
}

/// `gen-data`: synthetic phantom dataset with a checksummed manifest.
pub fn cmd_gen_data(cfg: &RunConfig) -> Result<String, CliError> {
    let out = cfg.require_path("out")?;
    if cfg.n_items == 0 {
        return Err(CliError::Usage("n_items must be at least 1".into()));
    }
    let phantom = PhantomConfig {
        size: cfg.image_size,
        n_ellipses: cfg.n_ellipses,
        intensity_min: cfg.intensity_min,
        intensity_max: cfg.intensity_max,
        phase_cutoff: cfg.phase_cutoff,
        seed: cfg.seed,
    };
    phantom
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let manifest =
        build_dataset::<f64>(cfg.n_items, &phantom, &out).map_err(CliError::from_dataset)?;
    write_config_echo(cfg, &out)?;
    Ok(format!(
        "{}wrote {} items to {}\nchecksum={:016x}\n",
        echo_config(cfg),
        manifest.paths.len(),
        out.display(),
        manifest.checksum
    ))
}

/// `make-mask`: column sampling pattern written as a text mask file.
pub fn cmd_make_mask(cfg: &RunConfig) -> Result<String, CliError> {
    let out = cfg.require_path("out")?;
    let mask = match cfg.mask_kind {
        MaskKind::Random => Mask::random(
            cfg.width,
            cfg.acceleration,
            cfg.center_fraction,
            &mut RngStream::new(cfg.seed, STREAM_MASK),
        ),
        MaskKind::Equispaced => Mask::equispaced(cfg.width, cfg.acceleration, cfg.center_fraction),
    }
    .map_err(|e| CliError::Usage(e.to_string()))?;
    write_mask(&out, &mask).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(format!(
        "{}wrote mask to {}\nsampled_columns={}\nnon_sampled_columns={}\n",
        echo_config(cfg),
        out.display(),
        mask.sampled_count(),
        mask.non_sampled_count()
    ))
}

/// `train`: the training loop (see [`run_training`]) driven by the config.
pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    let outcome = run_training(cfg)?;
    Ok(format!(
        "{}trained {} steps ({})\ncheckpoint={}\n",
        echo_config(cfg),
        outcome.steps_run,
        outcome,
        outcome.final_checkpoint.display()
    ))
}

/// `sample`: posterior reconstructions plus mean and pixel-std maps.
pub fn cmd_sample(cfg: &RunConfig) -> Result<String, CliError> {
    let ckpt_path = cfg.require_path("checkpoint")?;
    let mask_path = cfg.require_path("mask")?;
    let input_path = cfg.require_path("input")?;
    let out = cfg.require_path("out")?;
    if cfg.n_samples == 0 {
        return Err(CliError::Usage("n_samples must be at least 1".into()));
    }
    std::fs::create_dir_all(&out)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out.display())))?;

    let bundle = read_checkpoint::<f64>(&ckpt_path).map_err(|e| CliError::Io(e.to_string()))?;
    let mask = read_mask(&mask_path).map_err(|e| CliError::Io(e.to_string()))?;
    let input = read_complex_grid::<f64>(&input_path).map_err(|e| CliError::Io(e.to_string()))?;

    let spectrum = match cfg.input_kind {
        InputKind::Image => dft2(&input),
        InputKind::KSpace => input.clone(),
    };
    let y_m = PartialKSpace::project(&spectrum, &mask, Side::Sampled)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let t_max = bundle.schedule.t_max();
    if cfg.sampling_steps == 0 || cfg.sampling_steps > t_max {
        return Err(CliError::Usage(format!(
            "sampling_steps {} outside 1..={t_max}",
            cfg.sampling_steps
        )));
    }
    let schedule: DiffusionSchedule<f64> = bundle
        .schedule
        .respace(cfg.sampling_steps)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let rng = RngStream::new(cfg.seed, STREAM_SAMPLE);
    let samples = sample(&bundle.params, &mask, &y_m, &schedule, &rng, cfg.n_samples)
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let mut worst_dc = 0.0f64;
    for s in &samples {
        worst_dc = worst_dc.max(data_consistency_error(s, &y_m));
    }
    if worst_dc > 1e-10 {
        return Err(CliError::Internal(format!(
            "data consistency violated: max deviation {worst_dc:e} exceeds 1e-10"
        )));
    }

    for (i, s) in samples.iter().enumerate() {
        write_complex_grid(&out.join(format!("sample_{i:03}.mcdt")), s)
            .map_err(|e| CliError::Io(e.to_string()))?;
    }
    let stats = sample_stats(&samples).map_err(|e| CliError::Internal(e.to_string()))?;
    write_real_grid(&out.join("mean.mcdt"), &stats.mean)
        .map_err(|e| CliError::Io(e.to_string()))?;
    write_real_grid(&out.join("std.mcdt"), &stats.std).map_err(|e| CliError::Io(e.to_string()))?;
    write_config_echo(cfg, &out)?;

    Ok(format!(
        "{}wrote {} samples to {}\nsampling_steps={}\ndata_consistency_max={:e}\n",
        echo_config(cfg),
        samples.len(),
        out.display(),
        cfg.sampling_steps,
        worst_dc
    ))
}

fn read_recon_grid(path: &Path) -> Result<RealGrid<f64>, CliError> {
    match read_complex_grid::<f64>(path) {
        Ok(grid) => Ok(magnitude(&grid)),
        Err(TensorFileError::DtypeMismatch { .. }) => {
            read_real_grid::<f64>(path).map_err(|e| CliError::Io(e.to_string()))
        }
        Err(e) => Err(CliError::Io(e.to_string())),
    }
}

/// `eval`: metric records for the zero-filled baseline and/or explicit
/// reconstructions against a ground-truth image.
pub fn cmd_eval(cfg: &RunConfig) -> Result<String, CliError> {
    let gt_path = cfg.require_path("gt")?;
    let gt = read_complex_grid::<f64>(&gt_path).map_err(|e| CliError::Io(e.to_string()))?;
    let gt_mag = magnitude(&gt);
    let range = gt_mag.max_value();

    let mut labelled: Vec<(&str, RealGrid<f64>)> = Vec::new();
    if let Some(mask_path) = &cfg.mask {
        let mask = read_mask(mask_path).map_err(|e| CliError::Io(e.to_string()))?;
        let (y_m, _) = split(&gt, &mask).map_err(|e| CliError::Usage(e.to_string()))?;
        labelled.push(("zf", magnitude(&zero_filled(&y_m))));
    }
    if let Some(recon_path) = &cfg.recon {
        labelled.push(("recon", read_recon_grid(recon_path)?));
    }
    if let Some(mean_path) = &cfg.mean {
        labelled.push(("mean", read_recon_grid(mean_path)?));
    }
    if labelled.is_empty() {
        return Err(CliError::Usage(
            "nothing to evaluate: pass --mask for the zero-filled baseline, --recon, or --mean"
                .into(),
        ));
    }

    let mut report = echo_config(cfg);
    for (label, grid) in &labelled {
        let record =
            metrics(grid, &gt_mag, Some(range)).map_err(|e| CliError::Usage(e.to_string()))?;
        report.push_str(&record.kv_block(label));
        if let Some(out) = &cfg.out {
            std::fs::create_dir_all(out).map_err(|e| CliError::Io(e.to_string()))?;
            let csv = format!(
                "{}\n{}\n",
                MetricRecord::<f64>::CSV_HEADER,
                record.csv_row()
            );
            std::fs::write(out.join(format!("metrics_{label}.csv")), csv)
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    if let Some(out) = &cfg.out {
        write_config_echo(cfg, out)?;
    }
    Ok(report)
}

/// `schedule-info`: coefficient table of the configured schedule.
pub fn cmd_schedule_info(cfg: &RunConfig) -> Result<String, CliError> {
    let schedule = DiffusionSchedule::<f64>::cosine_halved(cfg.t, cfg.sigma_rule)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let schedule = if cfg.respace > 0 {
        schedule
            .respace(cfg.respace)
            .map_err(|e| CliError::Usage(e.to_string()))?
    } else {
        schedule
    };
    let mut out = echo_config(cfg);
    out.push_str(
        "t       alpha         beta          alpha_bar     beta_bar      beta_tilde    sigma\n",
    );
    for t in 1..=schedule.t_max() {
        out.push_str(&format!(
            "{:<7} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e} {:<13.6e}\n",
            t,
            schedule.alpha(t),
            schedule.beta(t),
            schedule.alpha_bar(t),
            schedule.beta_bar(t),
            schedule.beta_tilde(t),
            schedule.sigma(t),
        ));
    }
    Ok(out)
}

/// Dispatches a named subcommand.
pub fn run_command(name: &str, cfg: &RunConfig) -> Result<String, CliError> {
    match name {
        "gen-data" => cmd_gen_data(cfg),
        "make-mask" => cmd_make_mask(cfg),
        "train" => cmd_train(cfg),
        "sample" => cmd_sample(cfg),
        "eval" => cmd_eval(cfg),
        "schedule-info" => cmd_schedule_info(cfg),
        other => Err(CliError::Usage(format!(
            "unknown command '{other}'; expected gen-data, make-mask, train, sample, eval or schedule-info"
        ))),
    }
}
