//! Unsupervised training loop: one pair per step, Adam updates, CSV logging,
//! periodic validation, and resumable checkpoints. Fully deterministic under
//! a fixed seed; the per-iteration randomness is derived from
//! `(seed, iteration)`, so a resumed run replays the exact remainder.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{mix_seed, random_affine, AugmentationRanges, Dataset, Sample};
use crate::error::{Error, Result};
use crate::extraction::Mode;
use crate::geometry::warp_values;
use crate::tensor::{
    adam_step, read_checkpoint, write_checkpoint, AdamConfig, AdamState, CheckpointDtype,
    NamedTensor,
};

use super::{evaluate, forward, ErnetModel};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: u64,
    pub seed: u64,
    #[serde(default)]
    pub augmentation: Option<AugmentationRanges>,
    /// Validation cadence in iterations; 0 disables validation.
    #[serde(default)]
    pub validate_every: u64,
    pub checkpoint_dir: PathBuf,
    /// Resume from a previous `last.ern1` checkpoint.
    #[serde(default)]
    pub resume: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 2000,
            seed: 0,
            augmentation: None,
            validate_every: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
            resume: None,
        }
    }
}

impl TrainConfig {
    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One training-log record; validation columns are present at the cadence.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: u64,
    pub similarity: f64,
    pub regularizer_sum: f64,
    pub total: f64,
    pub val_dice_ext: Option<f64>,
    pub val_dice_reg: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<LogRow>,
    /// Iteration and score of the best validation checkpoint, when
    /// validation ran.
    pub best: Option<(u64, f64)>,
    pub final_total: f64,
}

fn checkpoint_tensors(model: &ErnetModel, state: &AdamState, next_iteration: u64) -> Vec<NamedTensor> {
    let mut tensors = model.named_tensors();
    let active: Vec<String> = {
        // Adam state rows align with the active parameter list.
        let mut names = Vec::new();
        let [m, n] = model.manifest.stages;
        if m > 0 {
            names.extend(model.extraction.params().iter().map(|p| p.name.clone()));
        }
        if n > 0 {
            names.extend(model.registration.params().iter().map(|p| p.name.clone()));
        }
        names
    };
    for (i, name) in active.iter().enumerate() {
        tensors.push(NamedTensor::new(
            format!("optim.m.{name}"),
            &[state.m[i].len()],
            state.m[i].clone(),
        ));
        tensors.push(NamedTensor::new(
            format!("optim.v.{name}"),
            &[state.v[i].len()],
            state.v[i].clone(),
        ));
    }
    tensors.push(NamedTensor::scalar("optim.step", state.step as f64));
    tensors.push(NamedTensor::scalar("train.next_iteration", next_iteration as f64));
    tensors
}

fn restore_state(
    model: &mut ErnetModel,
    tensors: &[NamedTensor],
    state: &mut AdamState,
) -> Result<u64> {
    model.load_named_tensors(tensors)?;
    let find = |name: &str| -> Result<&NamedTensor> {
        tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint is missing '{name}'")))
    };
    let active_names: Vec<String> = {
        let [m, n] = model.manifest.stages;
        let mut names = Vec::new();
        if m > 0 {
            names.extend(model.extraction.params().iter().map(|p| p.name.clone()));
        }
        if n > 0 {
            names.extend(model.registration.params().iter().map(|p| p.name.clone()));
        }
        names
    };
    for (i, name) in active_names.iter().enumerate() {
        state.m[i] = find(&format!("optim.m.{name}"))?.values.clone();
        state.v[i] = find(&format!("optim.v.{name}"))?.values.clone();
    }
    state.step = find("optim.step")?.values[0] as u64;
    Ok(find("train.next_iteration")?.values[0] as u64)
}

fn write_log_csv(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut out = String::from("iteration,similarity,regularizer_sum,total,val_dice_ext,val_dice_reg\n");
    for row in log {
        let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{},{}\n",
            row.iteration,
            row.similarity,
            row.regularizer_sum,
            row.total,
            fmt_opt(row.val_dice_ext),
            fmt_opt(row.val_dice_reg),
        ));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn augmented_source(sample: &Sample, ranges: &AugmentationRanges, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let frame = sample.source.frame();
    let u = random_affine(ranges, &frame, rng);
    warp_values(&sample.source.values, sample.source.dims, &u, &frame)
}

/// Train in place. Checkpoints land in `config.checkpoint_dir`: `last.ern1`
/// always, `best.ern1` whenever the validation score (mean extraction plus
/// registration Dice) improves, plus `model.json` and `train_log.csv`.
pub fn train(
    model: &mut ErnetModel,
    dataset: &Dataset,
    validation: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::invalid("train: training set is empty"));
    }
    std::fs::create_dir_all(&config.checkpoint_dir)
        .map_err(|e| Error::io(&config.checkpoint_dir, e))?;
    {
        let manifest = serde_json::to_string_pretty(&model.manifest)?;
        let path = config.checkpoint_dir.join("model.json");
        std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    }

    let active_numels: Vec<usize> = model.active_params_mut().iter().map(|p| p.numel()).collect();
    let mut state = AdamState::from_numels(active_numels.into_iter());
    let mut start_iteration = 0u64;
    if let Some(resume) = &config.resume {
        let tensors = read_checkpoint(resume)?;
        start_iteration = restore_state(model, &tensors, &mut state)?;
    }

    let adam_config = config.adam();
    let mut log = Vec::new();
    let mut best: Option<(u64, f64)> = None;
    let mut final_total = f64::NAN;

    for iteration in start_iteration..config.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, iteration));
        let sample = &dataset.samples[rng.random_range(0..dataset.len())];
        let source = match &config.augmentation {
            Some(ranges) => {
                let mut aug = sample.source.clone();
                aug.values = augmented_source(sample, ranges, &mut rng);
                aug
            }
            None => sample.source.clone(),
        };

        let mut pass = forward(model, &source, &sample.target, Mode::Train)?;
        let breakdown = pass.loss.clone().expect("train mode attaches the loss");
        if !breakdown.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                iteration,
                value: breakdown.total,
            });
        }
        pass.tape.backward(pass.loss_id.expect("train mode"))?;
        let grads: Vec<Option<Vec<f64>>> = pass
            .param_ids
            .iter()
            .map(|&id| pass.tape.take_grad(id))
            .collect();
        drop(pass);
        let mut active = model.active_params_mut();
        adam_step(&mut active, &grads, &mut state, &adam_config)?;

        let mut row = LogRow {
            iteration,
            similarity: breakdown.similarity,
            regularizer_sum: breakdown.regularizer_sum(),
            total: breakdown.total,
            val_dice_ext: None,
            val_dice_reg: None,
        };
        final_total = breakdown.total;

        let validate_now = config.validate_every > 0
            && (iteration + 1) % config.validate_every == 0
            && validation.is_some_and(|v| !v.is_empty());
        if validate_now {
            let summary = evaluate(model, validation.unwrap())?;
            row.val_dice_ext = Some(summary.mean_dice_ext);
            row.val_dice_reg = Some(summary.mean_dice_reg);
            let score = summary.mean_dice_ext + summary.mean_dice_reg;
            if best.map(|(_, b)| score > b).unwrap_or(true) {
                best = Some((iteration, score));
                write_checkpoint(
                    &config.checkpoint_dir.join("best.ern1"),
                    &checkpoint_tensors(model, &state, iteration + 1),
                    CheckpointDtype::F64,
                )?;
            }
        }
        log.push(row);
    }

    write_checkpoint(
        &config.checkpoint_dir.join("last.ern1"),
        &checkpoint_tensors(model, &state, config.iterations),
        CheckpointDtype::F64,
    )?;
    write_log_csv(&config.checkpoint_dir.join("train_log.csv"), &log)?;
    Ok(TrainOutcome {
        log,
        best,
        final_total,
    })
}

