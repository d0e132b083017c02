//! SELU activation, alpha dropout, LeCun initialization and a dense forward pass.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::moments::SeluParams;
use crate::rng;

#[inline]
pub fn selu(x: f64, p: SeluParams) -> f64 {
    if x > 0.0 {
        p.lambda * x
    } else {
        p.lambda * p.alpha * x.exp_m1()
    }
}

/// Derivative of [`selu`]; at 0 the right limit `lambda` is returned.
#[inline]
pub fn selu_derivative(x: f64, p: SeluParams) -> f64 {
    if x >= 0.0 {
        p.lambda
    } else {
        p.lambda * p.alpha * x.exp()
    }
}

/// Alpha dropout: keep with probability `q`, otherwise set to `alpha_prime`,
/// then apply `a * x + b` so that zero mean and unit variance are preserved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub q: f64,
    pub alpha_prime: f64,
    pub a: f64,
    pub b: f64,
}

pub fn make_dropout_config(q: f64, p: SeluParams) -> Result<DropoutConfig> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(domain(format!("keep probability must be in (0, 1], got {q}")));
    }
    let alpha_prime = p.saturation();
    let a = (q + alpha_prime * alpha_prime * q * (1.0 - q)).powf(-0.5);
    let b = -a * (1.0 - q) * alpha_prime;
    Ok(DropoutConfig { q, alpha_prime, a, b })
}

impl DropoutConfig {
    pub fn is_identity(&self) -> bool {
        self.q == 1.0
    }

    /// Applies dropout in place and returns the keep mask.
    pub fn apply<R: Rng>(&self, values: &mut [f64], rng: &mut R) -> Vec<bool> {
        values
            .iter_mut()
            .map(|v| {
                let keep = self.q >= 1.0 || rng.random::<f64>() < self.q;
                let x = if keep { *v } else { self.alpha_prime };
                *v = self.a * x + self.b;
                keep
            })
            .collect()
    }
}

/// Alpha dropout of a batch, reproducible from `seed`.
pub fn alpha_dropout(batch: &[f64], cfg: &DropoutConfig, seed: u64) -> Vec<f64> {
    if cfg.is_identity() {
        return batch.to_vec();
    }
    let mut out = batch.to_vec();
    cfg.apply(&mut out, &mut rng::seeded(seed));
    out
}

/// A dense layer `z = x W + b` with `W` of shape `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LayerFile", into = "LayerFile")]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
    pub seed: u64,
}

/// On-disk form: weights flattened row-major.
#[derive(Serialize, Deserialize)]
struct LayerFile {
    fan_in: usize,
    fan_out: usize,
    seed: u64,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl From<LayerSpec> for LayerFile {
    fn from(l: LayerSpec) -> Self {
        LayerFile {
            fan_in: l.fan_in,
            fan_out: l.fan_out,
            seed: l.seed,
            weights: l.weights.iter().copied().collect(),
            biases: l.biases.to_vec(),
        }
    }
}

impl TryFrom<LayerFile> for LayerSpec {
    type Error = Error;

    fn try_from(f: LayerFile) -> Result<Self> {
        let weights = Array2::from_shape_vec((f.fan_in, f.fan_out), f.weights)
            .map_err(|e| Error::Shape(format!("weights do not match {}x{}: {e}", f.fan_in, f.fan_out)))?;
        if f.biases.len() != f.fan_out {
            return Err(Error::Shape(format!("{} biases for fan_out {}", f.biases.len(), f.fan_out)));
        }
        Ok(LayerSpec { fan_in: f.fan_in, fan_out: f.fan_out, weights, biases: Array1::from(f.biases), seed: f.seed })
    }
}

impl LayerSpec {
    pub fn from_weights(weights: Array2<f64>, seed: u64) -> Self {
        let (fan_in, fan_out) = weights.dim();
        LayerSpec { fan_in, fan_out, weights, biases: Array1::zeros(fan_out), seed }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Weights drawn i.i.d. from `N(0, 1/fan_in)`, biases zero.
pub fn lecun_init(fan_in: usize, fan_out: usize, seed: u64) -> Result<LayerSpec> {
    if fan_in == 0 || fan_out == 0 {
        return Err(domain(format!("layer fans must be positive, got {fan_in}x{fan_out}")));
    }
    let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
    let mut r = rng::seeded(seed);
    let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || normal.sample(&mut r));
    Ok(LayerSpec::from_weights(weights, seed))
}

/// Pre-activations and activations of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub z: Array2<f64>,
    pub a: Array2<f64>,
}

/// Runs `inputs` (one sample per row) through the layers.
pub fn forward(layers: &[LayerSpec], p: SeluParams, inputs: ArrayView2<f64>) -> Result<Vec<LayerOutput>> {
    let mut out: Vec<LayerOutput> = Vec::with_capacity(layers.len());
    for (k, layer) in layers.iter().enumerate() {
        let x = out.last().map(|o| o.a.view()).unwrap_or(inputs);
        if x.ncols() != layer.fan_in || layer.weights.dim() != (layer.fan_in, layer.fan_out) {
            return Err(Error::Shape(format!(
                "layer {k} expects {} inputs with {:?} weights, got {} columns",
                layer.fan_in,
                layer.weights.dim(),
                x.ncols()
            )));
        }
        let z = x.dot(&layer.weights) + layer.biases.view().insert_axis(Axis(0));
        let a = z.mapv(|v| selu(v, p));
        out.push(LayerOutput { z, a });
    }
    Ok(out)
}
