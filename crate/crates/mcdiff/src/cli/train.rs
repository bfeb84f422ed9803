//! Training loop: draw an item, obtain a mask, noise the non-acquired
//! measurements at a uniform timestep, take a gradient step on the
//! noise-prediction error, and checkpoint periodically. All randomness comes
//! from one counter-based stream whose position is checkpointed, so resuming
//! reproduces the uninterrupted parameter trajectory exactly.

use std::io::Write as _;
use std::path::PathBuf;

use super::config::{CliError, RunConfig};
use super::{STREAM_INIT, STREAM_TRAIN};
use crate::datagen::{
    load_dataset, read_checkpoint_expecting, read_mask, write_checkpoint, CheckpointBundle,
    CheckpointError,
};
use crate::denoiser::{
    adamw_step, loss_and_grad, AdamHyper, ArchConfig, DenoiserParams, OptimizerState, TrainItem,
};
use crate::measurement::{masked_noise, split, Mask};
use crate::numerics::RngStream;
use crate::schedule::DiffusionSchedule;

#[derive(Debug)]
pub struct TrainOutcome {
    pub steps_run: usize,
    pub first_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_checkpoint: PathBuf,
}

impl TrainOutcome {
    fn fmt_loss(v: Option<f64>) -> String {
        match v {
            Some(x) => x.to_string(),
            None => "na".into(),
        }
    }
}

impl std::fmt::Display for TrainOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "steps={} first_loss={} final_loss={}",
            self.steps_run,
            Self::fmt_loss(self.first_loss),
            Self::fmt_loss(self.final_loss)
        )
    }
}

fn arch_from_config(cfg: &RunConfig) -> Result<ArchConfig, CliError> {
    let mut arch = ArchConfig::preset(&cfg.arch)
        .ok_or_else(|| CliError::Usage(format!("unknown arch preset '{}'", cfg.arch)))?;
    arch.output_domain = cfg.output_domain;
    Ok(arch)
}

pub fn run_training(cfg: &RunConfig) -> Result<TrainOutcome, CliError> {
    let data_dir = cfg.require_path("data")?;
    let out_dir = cfg.require_path("out")?;
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", out_dir.display())))?;

    let items = load_dataset::<f64>(&data_dir).map_err(CliError::from_dataset)?;
    let (height, width) = items[0].shape();
    for g in &items {
        if g.shape() != (height, width) {
            return Err(CliError::Usage(
                "dataset items disagree on grid size".into(),
            ));
        }
    }

    let fixed_mask: Option<Mask> = if cfg.mask_per_item {
        None
    } else {
        let mask_path = cfg.require_path("mask")?;
        let mask = read_mask(&mask_path).map_err(|e| CliError::Io(e.to_string()))?;
        if mask.width() != width {
            return Err(CliError::Usage(format!(
                "mask width {} does not match dataset width {width}",
                mask.width()
            )));
        }
        if mask.non_sampled_count() == 0 {
            return Err(CliError::Usage(
                "a fully sampled mask leaves nothing to learn".into(),
            ));
        }
        Some(mask)
    };

    let arch = arch_from_config(cfg)?;

    let (mut params, mut opt_state, schedule, mut rng, start_step) = match &cfg.resume {
        Some(path) => {
            let bundle: CheckpointBundle<f64> =
                read_checkpoint_expecting(path, &arch).map_err(|e| match e {
                    CheckpointError::ArchMismatch { .. } => CliError::Usage(e.to_string()),
                    other => CliError::Io(other.to_string()),
                })?;
            if bundle.schedule.t_max() != cfg.t {
                return Err(CliError::Usage(format!(
                    "checkpoint schedule has {} steps, config asks for {}",
                    bundle.schedule.t_max(),
                    cfg.t
                )));
            }
            if bundle.schedule.sigma_rule() != cfg.sigma_rule {
                return Err(CliError::Usage(
                    "checkpoint sigma rule differs from config".into(),
                ));
            }
            let (seed, stream, counter) = bundle.rng_state;
            (
                bundle.params,
                bundle.optimizer,
                bundle.schedule,
                RngStream::from_state(seed, stream, counter),
                bundle.step as usize,
            )
        }
        None => {
            let schedule = DiffusionSchedule::<f64>::cosine_halved(cfg.t, cfg.sigma_rule)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let params = DenoiserParams::init(arch, &mut RngStream::new(cfg.seed, STREAM_INIT))
                .map_err(|e| CliError::Usage(e.to_string()))?;
            let opt_state =
                OptimizerState::new(&params, AdamHyper::new(cfg.learning_rate, cfg.weight_decay));
            (
                params,
                opt_state,
                schedule,
                RngStream::new(cfg.seed, STREAM_TRAIN),
                0usize,
            )
        }
    };

    if start_step > cfg.train_steps {
        return Err(CliError::Usage(format!(
            "checkpoint is already at step {start_step}, beyond train_steps {}",
            cfg.train_steps
        )));
    }

    let log_path = out_dir.join("loss.log");
    let mut log = std::fs::OpenOptions::new()
        .create(true)
        .append(cfg.resume.is_some())
        .write(true)
        .truncate(cfg.resume.is_none())
        .open(&log_path)
        .map_err(|e| CliError::Io(format!("opening {}: {e}", log_path.display())))?;

    let mut first_loss = None;
    let mut final_loss = None;
    for step in start_step..cfg.train_steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let idx = rng.next_below(items.len());
            let mask = match &fixed_mask {
                Some(m) => m.clone(),
                None => Mask::random(width, cfg.acceleration, cfg.center_fraction, &mut rng)
                    .map_err(|e| CliError::Usage(e.to_string()))?,
            };
            let (y_m, y0_c) =
                split(&items[idx], &mask).map_err(|e| CliError::Usage(e.to_string()))?;
            let t = 1 + rng.next_below(schedule.t_max());
            let noise = masked_noise(height, &mask, &mut rng)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            batch.push(TrainItem {
                y0_c,
                y_m,
                t,
                noise,
            });
        }
        let (loss, grads) = loss_and_grad(&params, &batch, &schedule)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        if !loss.is_finite() {
            return Err(CliError::Usage(format!(
                "training diverged: loss is not finite at step {step}; lower the learning rate"
            )));
        }
        let (p2, s2) = adamw_step(&params, &grads, &opt_state)
            .map_err(|e| CliError::Internal(e.to_string()))?;
        params = p2;
        opt_state = s2;

        let step_now = step + 1;
        writeln!(log, "{step_now} {loss}").map_err(|e| CliError::Io(e.to_string()))?;
        first_loss.get_or_insert(loss);
        final_loss = Some(loss);

        if cfg.ckpt_every > 0 && step_now % cfg.ckpt_every == 0 && step_now != cfg.train_steps {
            let bundle = CheckpointBundle {
                params: params.clone(),
                optimizer: opt_state.clone(),
                schedule: schedule.clone(),
                step: step_now as u64,
                rng_state: rng.state(),
            };
            write_checkpoint(&out_dir.join(format!("ckpt_{step_now:06}.mcdc")), &bundle)
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
        if step_now % 500 == 0 {
            eprintln!("step {step_now}/{} loss {loss:.4}", cfg.train_steps);
        }
    }
    log.flush().map_err(|e| CliError::Io(e.to_string()))?;

    let final_path = out_dir.join("ckpt_final.mcdc");
    let bundle = CheckpointBundle {
        params,
        optimizer: opt_state,
        schedule,
        step: cfg.train_steps as u64,
        rng_state: rng.state(),
    };
    write_checkpoint(&final_path, &bundle).map_err(|e| CliError::Io(e.to_string()))?;
    super::write_config_echo(cfg, &out_dir)?;

    Ok(TrainOutcome {
        steps_run: cfg.train_steps - start_step,
        first_loss,
        final_loss,
        final_checkpoint: final_path,
    })
}
