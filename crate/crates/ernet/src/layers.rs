//! Parameterized layers shared by the two networks.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Param, Tape, TensorId};

/// He-style standard deviation for a layer with the given fan-in.
fn he_std(fan_in: usize) -> f64 {
    (2.0 / fan_in as f64).sqrt()
}

#[derive(Debug, Clone)]
pub(crate) struct Conv3dLayer {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: usize,
}

impl Conv3dLayer {
    pub fn new(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Conv3dLayer {
            weight: Param::gaussian(
                format!("{name}.weight"),
                &[cout, cin, k, k, k],
                he_std(cin * k * k * k),
                rng,
            ),
            bias: Param::zeros(format!("{name}.bias"), &[cout]),
            stride,
            padding: (k - 1) / 2,
        }
    }

    /// All-zero weights with the given bias value; used for output heads
    /// that must start at a known constant.
    pub fn zeroed(name: &str, cin: usize, cout: usize, k: usize, bias: f64) -> Self {
        Conv3dLayer {
            weight: Param::zeros(format!("{name}.weight"), &[cout, cin, k, k, k]),
            bias: Param::constant(format!("{name}.bias"), &[cout], bias),
            stride: 1,
            padding: (k - 1) / 2,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct DenseLayer {
    pub weight: Param,
    pub bias: Param,
}

impl DenseLayer {
    pub fn new(name: &str, n_in: usize, n_out: usize, rng: &mut impl Rng) -> Self {
        DenseLayer {
            weight: Param::gaussian(format!("{name}.weight"), &[n_out, n_in], he_std(n_in), rng),
            bias: Param::zeros(format!("{name}.bias"), &[n_out]),
        }
    }

    pub fn zeroed(name: &str, n_in: usize, n_out: usize) -> Self {
        DenseLayer {
            weight: Param::zeros(format!("{name}.weight"), &[n_out, n_in]),
            bias: Param::zeros(format!("{name}.bias"), &[n_out]),
        }
    }
}

/// Tape handles for one bound layer (weight, bias).
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundLayer {
    pub weight: TensorId,
    pub bias: TensorId,
}

pub(crate) fn bind_conv(tape: &mut Tape, layer: &Conv3dLayer) -> BoundLayer {
    BoundLayer {
        weight: tape.param(&layer.weight),
        bias: tape.param(&layer.bias),
    }
}

pub(crate) fn bind_dense(tape: &mut Tape, layer: &DenseLayer) -> BoundLayer {
    BoundLayer {
        weight: tape.param(&layer.weight),
        bias: tape.param(&layer.bias),
    }
}

pub(crate) fn conv_forward(
    tape: &mut Tape,
    layer: &Conv3dLayer,
    bound: BoundLayer,
    x: TensorId,
) -> Result<TensorId> {
    tape.conv3d(x, bound.weight, bound.bias, layer.stride, layer.padding)
}

pub(crate) const LEAKY_SLOPE: f64 = 0.2;
