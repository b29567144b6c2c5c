//! End-to-end assembly: both networks, the joint forward pass, training,
//! inference, evaluation, and checkpointing.

mod evaluate;
mod infer;
mod train;

pub use evaluate::{evaluate, mean_displacement_error, EvaluationSummary};
pub use infer::{infer, InferOutputs};
pub use train::{train, LogRow, TrainConfig, TrainOutcome};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Volume;
use crate::error::{Error, Result};
use crate::extraction::{
    run_extraction, ExtractionNet, ExtractionTrace, Mode, DEFAULT_EXTRACTION_WIDTHS,
};
use crate::geometry::{CoordinateFrame, IDENTITY_PARAMS};
use crate::objective::{total_loss, LossBreakdown};
use crate::registration::{
    run_registration, RegistrationNet, RegistrationTrace, DEFAULT_REGISTRATION_HIDDEN,
    DEFAULT_REGISTRATION_WIDTHS,
};
use crate::tensor::{
    read_checkpoint, write_checkpoint, CheckpointDtype, NamedTensor, Param, Tape, TensorId,
};

/// Serializable model description: stage counts, loss hyperparameters, and
/// layer widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelManifest {
    /// Extraction and registration stage counts; 0 disables a module.
    pub stages: [usize; 2],
    pub gamma: f64,
    pub lambda: f64,
    pub ncc_window: usize,
    pub extraction_widths: Vec<usize>,
    pub registration_widths: Vec<usize>,
    pub registration_hidden: usize,
}

impl Default for ModelManifest {
    fn default() -> Self {
        ModelManifest {
            stages: [5, 5],
            gamma: 10.0,
            lambda: 1.0,
            ncc_window: 9,
            extraction_widths: DEFAULT_EXTRACTION_WIDTHS.to_vec(),
            registration_widths: DEFAULT_REGISTRATION_WIDTHS.to_vec(),
            registration_hidden: DEFAULT_REGISTRATION_HIDDEN,
        }
    }
}

impl ModelManifest {
    /// Shrink (or grow) every layer width by a factor, flooring at 1.
    pub fn with_width_scale(mut self, scale: f64) -> Self {
        let rescale = |w: &mut Vec<usize>| {
            for v in w.iter_mut() {
                *v = ((*v as f64 * scale).round() as usize).max(1);
            }
        };
        rescale(&mut self.extraction_widths);
        rescale(&mut self.registration_widths);
        self.registration_hidden =
            ((self.registration_hidden as f64 * scale).round() as usize).max(4);
        self
    }

    pub fn with_stages(mut self, extraction: usize, registration: usize) -> Self {
        self.stages = [extraction, registration];
        self
    }
}

/// The trainable engine: shared-weight extraction and registration networks
/// plus the loss hyperparameters.
#[derive(Debug, Clone)]
pub struct ErnetModel {
    pub manifest: ModelManifest,
    pub extraction: ExtractionNet,
    pub registration: RegistrationNet,
}

impl ErnetModel {
    pub fn new(manifest: ModelManifest, seed: u64) -> Result<Self> {
        if manifest.ncc_window % 2 == 0 || manifest.ncc_window == 0 {
            return Err(Error::invalid(format!(
                "model: similarity window must be odd, got {}",
                manifest.ncc_window
            )));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let extraction = ExtractionNet::new(&manifest.extraction_widths, manifest.gamma, &mut rng)?;
        let registration = RegistrationNet::new(
            &manifest.registration_widths,
            manifest.registration_hidden,
            &mut rng,
        )?;
        Ok(ErnetModel {
            manifest,
            extraction,
            registration,
        })
    }

    pub fn extraction_stages(&self) -> usize {
        self.manifest.stages[0]
    }

    pub fn registration_stages(&self) -> usize {
        self.manifest.stages[1]
    }

    /// All parameters in checkpoint order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.extraction.params();
        out.extend(self.registration.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.extraction.params_mut();
        out.extend(self.registration.params_mut());
        out
    }

    /// Parameters of the enabled modules only; what the optimizer updates.
    pub fn active_params_mut(&mut self) -> Vec<&mut Param> {
        let [m, n] = self.manifest.stages;
        let ext = self.extraction.params_mut();
        let mut out: Vec<&mut Param> = Vec::new();
        if m > 0 {
            out.extend(ext);
        }
        if n > 0 {
            out.extend(self.registration.params_mut());
        }
        out
    }

    /// Snapshot every parameter as a named tensor.
    pub fn named_tensors(&self) -> Vec<NamedTensor> {
        self.params()
            .into_iter()
            .map(|p| NamedTensor::new(p.name.clone(), &p.shape, p.values.clone()))
            .collect()
    }

    /// Load values into matching parameters by name; every model parameter
    /// must be present with the right shape.
    pub fn load_named_tensors(&mut self, tensors: &[NamedTensor]) -> Result<()> {
        for param in self.params_mut() {
            let found = tensors
                .iter()
                .find(|t| t.name == param.name)
                .ok_or_else(|| {
                    Error::invalid(format!("checkpoint is missing tensor '{}'", param.name))
                })?;
            if found.shape != param.shape {
                return Err(Error::ShapeMismatch {
                    op: "load checkpoint",
                    lhs: param.shape.clone(),
                    rhs: found.shape.clone(),
                });
            }
            param.values = found.values.clone();
        }
        Ok(())
    }

    /// Write `model.json` and `weights.ern1` into a directory.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join("model.json"), manifest).map_err(|e| Error::io(dir, e))?;
        write_checkpoint(
            &dir.join("weights.ern1"),
            &self.named_tensors(),
            CheckpointDtype::F64,
        )
    }

    /// Load a model from a directory produced by [`ErnetModel::save`] or by
    /// training (which stores weights under a checkpoint name).
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_text = std::fs::read_to_string(dir.join("model.json"))
            .map_err(|e| Error::io(dir.join("model.json"), e))?;
        let manifest: ModelManifest = serde_json::from_str(&manifest_text)?;
        let mut model = ErnetModel::new(manifest, 0)?;
        let weights = ["weights.ern1", "best.ern1", "last.ern1"]
            .iter()
            .map(|n| dir.join(n))
            .find(|p| p.exists())
            .ok_or_else(|| Error::invalid(format!("{}: no weights file found", dir.display())))?;
        model.load_named_tensors(&read_checkpoint(&weights)?)?;
        Ok(model)
    }
}

/// One joint forward pass. Holds the tape so callers can run backward and
/// read gradients; traces are absent for disabled modules.
pub struct ForwardPass {
    pub tape: Tape,
    pub source_id: TensorId,
    pub target_id: TensorId,
    pub extraction: Option<ExtractionTrace>,
    pub registration: Option<RegistrationTrace>,
    pub loss_id: Option<TensorId>,
    pub loss: Option<LossBreakdown>,
    /// Tape handles of the active parameters, aligned with
    /// [`ErnetModel::active_params_mut`].
    pub param_ids: Vec<TensorId>,
    pub final_image_id: TensorId,
    pub final_transform: [f64; 12],
    /// Both modules disabled: the output is the source unchanged.
    pub degenerate: bool,
}

impl ForwardPass {
    pub fn final_image(&self) -> Vec<f64> {
        self.tape.values(self.final_image_id).to_vec()
    }

    /// Elementwise product of all stage masks; all-ones when extraction is
    /// disabled. Binary in inference mode.
    pub fn cumulative_mask(&self) -> Vec<f64> {
        let voxels = self.tape.tensor(self.source_id).numel();
        let mut mask = vec![1.0; voxels];
        if let Some(trace) = &self.extraction {
            for &m in &trace.mask_ids {
                for (acc, v) in mask.iter_mut().zip(self.tape.values(m)) {
                    *acc *= v;
                }
            }
        }
        mask
    }
}

/// Run extraction then registration on one pair; in train mode the loss is
/// assembled on the tape and reported as a breakdown.
pub fn forward(model: &ErnetModel, source: &Volume, target: &Volume, mode: Mode) -> Result<ForwardPass> {
    if source.dims != target.dims {
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: source.dims.to_vec(),
            rhs: target.dims.to_vec(),
        });
    }
    let dims = source.dims;
    let frame = CoordinateFrame::new(dims)?;
    let [m_stages, n_stages] = model.manifest.stages;
    let requires_grad = mode == Mode::Train;

    let mut tape = Tape::new();
    let source_id = tape.leaf(source.values.clone(), &dims, false)?;
    let target_id = tape.leaf(target.values.clone(), &dims, false)?;

    let mut param_ids = Vec::new();
    let extraction_trace = if m_stages > 0 {
        let bound = model.extraction.bind(&mut tape);
        if requires_grad {
            param_ids.extend(bound.param_ids());
        }
        Some(run_extraction(
            &mut tape,
            &model.extraction,
            &bound,
            source_id,
            m_stages,
            mode,
        )?)
    } else {
        None
    };
    let extracted = extraction_trace
        .as_ref()
        .map(|t| t.final_image())
        .unwrap_or(source_id);

    let registration_trace = if n_stages > 0 {
        let bound = model.registration.bind(&mut tape);
        if requires_grad {
            param_ids.extend(bound.param_ids());
        }
        Some(run_registration(
            &mut tape,
            &model.registration,
            &bound,
            extracted,
            target_id,
            n_stages,
            &frame,
        )?)
    } else {
        None
    };
    let final_image_id = registration_trace
        .as_ref()
        .map(|t| t.final_warp())
        .unwrap_or(extracted);
    let final_transform: [f64; 12] = registration_trace
        .as_ref()
        .map(|t| tape.values(t.final_transform()).try_into().unwrap())
        .unwrap_or(IDENTITY_PARAMS);

    let (loss_id, loss) = if mode == Mode::Train {
        let masks: Vec<TensorId> = extraction_trace
            .as_ref()
            .map(|t| t.mask_ids.clone())
            .unwrap_or_default();
        let (id, breakdown) = total_loss(
            &mut tape,
            &masks,
            final_image_id,
            target_id,
            model.manifest.lambda,
            model.manifest.ncc_window,
        )?;
        (Some(id), Some(breakdown))
    } else {
        (None, None)
    };

    Ok(ForwardPass {
        tape,
        source_id,
        target_id,
        extraction: extraction_trace,
        registration: registration_trace,
        loss_id,
        loss,
        param_ids,
        final_image_id,
        final_transform,
        degenerate: m_stages == 0 && n_stages == 0,
    })
}
