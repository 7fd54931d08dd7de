//! Image feature extractors `z = f(x, theta)`.
//!
//! `Linear` and `Mlp` share one implementation: a stack of affine layers
//! with ReLU between them and no activation after the last layer. Layer
//! parameters are laid out consecutively, each as a row-major
//! `out x in` weight block followed by an `out` bias block.

use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorKind {
    /// Identity on precomputed feature vectors; no parameters.
    Precomputed,
    Linear,
    Mlp,
}

impl ExtractorKind {
    pub fn code(self) -> u8 {
        match self {
            ExtractorKind::Precomputed => 0,
            ExtractorKind::Linear => 1,
            ExtractorKind::Mlp => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ExtractorKind::Precomputed),
            1 => Some(ExtractorKind::Linear),
            2 => Some(ExtractorKind::Mlp),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ExtractorKind::Precomputed => "precomputed",
            ExtractorKind::Linear => "linear",
            ExtractorKind::Mlp => "mlp",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    kind: ExtractorKind,
    /// Layer widths from input to output. Precomputed: `[I]`.
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Input of each layer (the first is the extractor input).
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl FeatureExtractor {
    pub fn precomputed(dim: usize) -> Self {
        Self {
            kind: ExtractorKind::Precomputed,
            dims: vec![dim],
            params: Vec::new(),
        }
    }

    pub fn linear(input_dim: usize, output_dim: usize, rng: &mut Rng) -> Self {
        Self::init(ExtractorKind::Linear, vec![input_dim, output_dim], rng)
    }

    /// Affine + ReLU per hidden width, then an affine output layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, rng: &mut Rng) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        Self::init(ExtractorKind::Mlp, dims, rng)
    }

    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
    fn init(kind: ExtractorKind, dims: Vec<usize>, rng: &mut Rng) -> Self {
        let mut params = Vec::with_capacity(param_count(&dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng::uniform(rng, -bound, bound)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { kind, dims, params }
    }

    pub fn from_parts(kind: ExtractorKind, dims: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        let shape_ok = match kind {
            ExtractorKind::Precomputed => dims.len() == 1,
            ExtractorKind::Linear => dims.len() == 2,
            ExtractorKind::Mlp => dims.len() >= 2,
        };
        if !shape_ok || dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "invalid {} architecture {dims:?}",
                kind.name()
            )));
        }
        let expected = param_count(&dims);
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        Ok(Self { kind, dims, params })
    }

    pub fn kind(&self) -> ExtractorKind {
        self.kind
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        let n_layers = self.dims.len() - 1;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut act = x.to_vec();
        let mut offset = 0;
        for (layer, w) in self.dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            let mut out: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(bias)
                .map(|(row, b)| dot(row, &act) + b)
                .collect();
            if layer + 1 < n_layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            inputs.push(std::mem::replace(&mut act, out));
        }
        Ok(ForwardTrace { inputs, output: act })
    }

    /// Gradient with respect to the parameters given `dz = dL/dz`.
    pub fn backward(&self, trace: &ForwardTrace, dz: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        if self.kind == ExtractorKind::Precomputed {
            return grad;
        }
        let n_layers = self.dims.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = dz.to_vec();
        for layer in (0..n_layers).rev() {
            let (n_in, n_out) = (self.dims[layer], self.dims[layer + 1]);
            let off = offsets[layer];
            let input = &trace.inputs[layer];
            for o in 0..n_out {
                let d = delta[o];
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, &a) in row.iter_mut().zip(input) {
                    *g = d * a;
                }
                grad[off + n_in * n_out + o] = d;
            }
            if layer > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                // input of this layer is the ReLU output of the previous one
                delta = (0..n_in)
                    .map(|i| {
                        if input[i] > 0.0 {
                            (0..n_out).map(|o| weights[o * n_in + i] * delta[o]).sum()
                        } else {
                            0.0
                        }
                    })
                    .collect();
            }
        }
        grad
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
