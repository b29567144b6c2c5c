//! Shared-weight multi-stage extraction: a U-Net-shaped mask predictor plus
//! the overlay layer. Stage j predicts a mask from the previous extracted
//! image and multiplies it in; the same parameters serve every stage.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{bind_conv, conv_forward, BoundLayer, Conv3dLayer, LEAKY_SLOPE};
use crate::tensor::{Param, Tape, TensorId};

/// Default conv widths of the mask predictor (encoder then decoder).
pub const DEFAULT_EXTRACTION_WIDTHS: [usize; 10] = [16, 32, 32, 64, 64, 64, 32, 32, 32, 16];

/// Train mode drives the steep sigmoid; inference hard-thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// U-Net-shaped mask predictor: two stride-2 encoder levels, a mirrored
/// decoder with skip concatenation, and a single-channel output head whose
/// logits pass through the steep sigmoid (train) or the hard threshold
/// (inference). The head starts at zero weights with a small positive bias:
/// the initial mask keeps most of the volume while staying on the sloped
/// part of the steep sigmoid, so mask gradients are alive from step one.
#[derive(Debug, Clone)]
pub struct ExtractionNet {
    pub widths: Vec<usize>,
    pub gamma: f64,
    convs: Vec<Conv3dLayer>,
    head: Conv3dLayer,
}

const STRIDES: [usize; 10] = [1, 2, 1, 2, 1, 1, 1, 1, 1, 1];

impl ExtractionNet {
    pub fn new(widths: &[usize], gamma: f64, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() != 10 || widths.contains(&0) {
            return Err(Error::invalid(format!(
                "extraction net: expected 10 positive conv widths, got {:?}",
                widths
            )));
        }
        if gamma <= 0.0 {
            return Err(Error::invalid(format!(
                "extraction net: sigmoid slope must be positive, got {gamma}"
            )));
        }
        let w = widths;
        // Skip concatenation widens the decoder inputs at levels 6 and 8.
        let inputs = [1, w[0], w[1], w[2], w[3], w[4], w[5] + w[2], w[6], w[7] + w[0], w[8]];
        let convs = (0..10)
            .map(|i| {
                Conv3dLayer::new(
                    &format!("extraction.conv{i}"),
                    inputs[i],
                    w[i],
                    3,
                    STRIDES[i],
                    rng,
                )
            })
            .collect();
        let head = Conv3dLayer::zeroed("extraction.head", w[9], 1, 1, 0.2);
        Ok(ExtractionNet {
            widths: widths.to_vec(),
            gamma,
            convs,
            head,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::with_capacity(22);
        for layer in &self.convs {
            out.push(&layer.weight);
            out.push(&layer.bias);
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(22);
        for layer in &mut self.convs {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Register every parameter on the tape once; all stages of a forward
    /// pass read this single snapshot.
    pub fn bind(&self, tape: &mut Tape) -> BoundExtractionNet {
        BoundExtractionNet {
            convs: self.convs.iter().map(|l| bind_conv(tape, l)).collect(),
            head: bind_conv(tape, &self.head),
        }
    }

    fn predict_logits(
        &self,
        tape: &mut Tape,
        bound: &BoundExtractionNet,
        e_prev: TensorId,
    ) -> Result<TensorId> {
        let dims = tape.shape(e_prev).to_vec();
        if dims.len() != 3 {
            return Err(Error::invalid(format!(
                "extraction: expected a [w,h,d] volume, got {:?}",
                dims
            )));
        }
        if dims.iter().any(|&e| e % 4 != 0) {
            return Err(Error::invalid(format!(
                "extraction: spatial extents must be divisible by 4 (two downsampling levels), got {:?}",
                dims
            )));
        }
        let x = tape.reshape(e_prev, &[1, dims[0], dims[1], dims[2]])?;
        let mut act = |tape: &mut Tape, layer: usize, input: TensorId| -> Result<TensorId> {
            let y = conv_forward(tape, &self.convs[layer], bound.convs[layer], input)?;
            Ok(tape.leaky_relu(y, LEAKY_SLOPE))
        };
        let a0 = act(tape, 0, x)?;
        let a1 = act(tape, 1, a0)?;
        let a2 = act(tape, 2, a1)?;
        let a3 = act(tape, 3, a2)?;
        let a4 = act(tape, 4, a3)?;
        let a5 = act(tape, 5, a4)?;
        let u1 = tape.upsample_nearest2x(a5)?;
        let c1 = tape.concat_channels(u1, a2)?;
        let a6 = act(tape, 6, c1)?;
        let a7 = act(tape, 7, a6)?;
        let u2 = tape.upsample_nearest2x(a7)?;
        let c2 = tape.concat_channels(u2, a0)?;
        let a8 = act(tape, 8, c2)?;
        let a9 = act(tape, 9, a8)?;
        let logits = conv_forward(tape, &self.head, bound.head, a9)?;
        tape.reshape(logits, &dims)
    }

    /// One stage of mask prediction from the previous extracted image.
    pub fn predict_mask(
        &self,
        tape: &mut Tape,
        bound: &BoundExtractionNet,
        e_prev: TensorId,
        mode: Mode,
    ) -> Result<TensorId> {
        let logits = self.predict_logits(tape, bound, e_prev)?;
        match mode {
            Mode::Train => tape.steep_sigmoid(logits, self.gamma),
            Mode::Infer => Ok(tape.heaviside(logits)),
        }
    }
}

/// Tape handles of one parameter snapshot.
#[derive(Debug, Clone)]
pub struct BoundExtractionNet {
    convs: Vec<BoundLayer>,
    head: BoundLayer,
}

impl BoundExtractionNet {
    pub fn param_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::with_capacity(22);
        for layer in &self.convs {
            out.push(layer.weight);
            out.push(layer.bias);
        }
        out.push(self.head.weight);
        out.push(self.head.bias);
        out
    }
}

/// Masks and extracted images of one pass; `extracted_ids[0]` is the source
/// and `extracted_ids[j] = extracted_ids[j-1] ∘ mask_ids[j-1]`.
#[derive(Debug, Clone)]
pub struct ExtractionTrace {
    pub mask_ids: Vec<TensorId>,
    pub extracted_ids: Vec<TensorId>,
}

impl ExtractionTrace {
    pub fn final_image(&self) -> TensorId {
        *self.extracted_ids.last().expect("at least the source")
    }
}

/// Elementwise product of the previous extracted image with a mask.
pub fn overlay(tape: &mut Tape, e_prev: TensorId, mask: TensorId) -> Result<TensorId> {
    tape.mul(e_prev, mask)
}

/// Generic stage loop over any mask producer; the network path and the
/// oracle tests share it.
pub fn run_extraction_with(
    tape: &mut Tape,
    mut predict: impl FnMut(&mut Tape, TensorId) -> Result<TensorId>,
    source: TensorId,
    stages: usize,
) -> Result<ExtractionTrace> {
    if stages == 0 {
        return Err(Error::invalid(
            "extraction: stage count must be at least 1 (disabling the module is a pipeline-level configuration)",
        ));
    }
    let mut trace = ExtractionTrace {
        mask_ids: Vec::with_capacity(stages),
        extracted_ids: Vec::with_capacity(stages + 1),
    };
    trace.extracted_ids.push(source);
    let mut current = source;
    for _ in 0..stages {
        let mask = predict(tape, current)?;
        current = overlay(tape, current, mask)?;
        trace.mask_ids.push(mask);
        trace.extracted_ids.push(current);
    }
    Ok(trace)
}

/// Multi-stage extraction with shared weights.
pub fn run_extraction(
    tape: &mut Tape,
    net: &ExtractionNet,
    bound: &BoundExtractionNet,
    source: TensorId,
    stages: usize,
    mode: Mode,
) -> Result<ExtractionTrace> {
    run_extraction_with(
        tape,
        |tape, e_prev| net.predict_mask(tape, bound, e_prev, mode),
        source,
        stages,
    )
}
