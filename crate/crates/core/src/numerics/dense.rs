use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_len, gemm, glorot_uniform, Grads, NumericsError, Parameters, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    /// Row-wise softmax. Only valid on the final layer.
    Softmax,
}

/// `y = activation(W·x + b)` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    weight: Tensor,
    bias: Tensor,
    activation: Activation,
}

impl DenseLayer {
    pub fn new(
        weight: Tensor,
        bias: Tensor,
        activation: Activation,
    ) -> Result<Self, NumericsError> {
        if weight.shape().len() != 2 {
            return Err(NumericsError::Architecture(format!(
                "weight must be rank 2, got shape {:?}",
                weight.shape()
            )));
        }
        check_len("dense bias", weight.shape()[0], bias.len())?;
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }
}

/// A stack of dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<DenseLayer>,
}

/// Activations recorded by [`DenseNet::forward_batch`] for the backward pass.
#[derive(Debug, Clone)]
pub struct DenseCache {
    batch: usize,
    /// `activations[0]` is the input; `activations[l + 1]` is layer `l`'s output.
    activations: Vec<Vec<f64>>,
}

impl DenseCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Final-layer output, `batch × output_dim` row-major.
    pub fn output(&self) -> &[f64] {
        self.activations
            .last()
            .expect("cache holds the input at least")
    }

    pub fn input(&self) -> &[f64] {
        &self.activations[0]
    }
}

impl DenseNet {
    /// Builds `input → hidden… → output` with Glorot-uniform weights and zero
    /// biases.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        hidden_activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self, NumericsError> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(output_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (i, pair) in dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let activation = if i + 2 == dims.len() {
                output_activation
            } else {
                hidden_activation
            };
            let weight = glorot_uniform(vec![fan_out, fan_in], fan_in, fan_out, rng);
            layers.push(DenseLayer::new(
                weight,
                Tensor::zeros(vec![fan_out]),
                activation,
            )?);
        }
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self, NumericsError> {
        if layers.is_empty() {
            return Err(NumericsError::Architecture(
                "network needs at least one layer".into(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(NumericsError::Architecture(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        let last = layers.len() - 1;
        if layers[..last]
            .iter()
            .any(|l| l.activation == Activation::Softmax)
        {
            return Err(NumericsError::Architecture(
                "softmax is only permitted on the final layer".into(),
            ));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NumericsError> {
        Ok(self
            .forward_batch(input, 1)?
            .activations
            .pop()
            .unwrap_or_default())
    }

    /// Evaluates `batch` row-major input rows at once.
    pub fn forward_batch(&self, inputs: &[f64], batch: usize) -> Result<DenseCache, NumericsError> {
        check_len(
            "dense forward input",
            batch * self.input_dim(),
            inputs.len(),
        )?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(inputs.to_vec());
        for layer in &self.layers {
            let (fan_in, fan_out) = (layer.in_dim(), layer.out_dim());
            let x = activations.last().expect("non-empty");
            let mut z = vec![0.0; batch * fan_out];
            for row in z.chunks_exact_mut(fan_out) {
                row.copy_from_slice(layer.bias.data());
            }
            gemm(
                batch,
                fan_in,
                fan_out,
                1.0,
                x,
                false,
                layer.weight.data(),
                true,
                1.0,
                &mut z,
            );
            apply_activation(layer.activation, &mut z, fan_out);
            activations.push(z);
        }
        if activations
            .last()
            .is_some_and(|a| a.iter().any(|v| !v.is_finite()))
        {
            return Err(NumericsError::NonFinite {
                context: "dense forward output",
            });
        }
        Ok(DenseCache { batch, activations })
    }

    /// Reverse-mode pass for a cached batch. Parameter gradients are summed
    /// over the batch into `grads`; the input gradient is returned.
    pub fn backward_batch(
        &self,
        cache: &DenseCache,
        upstream: &[f64],
        grads: &mut Grads,
    ) -> Result<Vec<f64>, NumericsError> {
        let batch = cache.batch;
        check_len(
            "dense upstream gradient",
            batch * self.output_dim(),
            upstream.len(),
        )?;
        check_len(
            "dense gradient buffers",
            2 * self.layers.len(),
            grads.tensors.len(),
        )?;
        let mut delta = upstream.to_vec();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (fan_in, fan_out) = (layer.in_dim(), layer.out_dim());
            let out = &cache.activations[l + 1];
            activation_backward(layer.activation, out, &mut delta, fan_out);

            let x = &cache.activations[l];
            let (dw, db) = split_pair(&mut grads.tensors, 2 * l);
            gemm(
                fan_out,
                batch,
                fan_in,
                1.0,
                &delta,
                true,
                x,
                false,
                1.0,
                dw.data_mut(),
            );
            let db = db.data_mut();
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }

            let mut dx = vec![0.0; batch * fan_in];
            gemm(
                batch,
                fan_out,
                fan_in,
                1.0,
                &delta,
                false,
                layer.weight.data(),
                false,
                0.0,
                &mut dx,
            );
            delta = dx;
        }
        Ok(delta)
    }

    /// Single-sample backward pass returning `(parameter grads, input grad)`.
    pub fn backward(
        &self,
        input: &[f64],
        upstream: &[f64],
    ) -> Result<(Grads, Vec<f64>), NumericsError> {
        let cache = self.forward_batch(input, 1)?;
        let mut grads = self.zero_grads();
        let dx = self.backward_batch(&cache, upstream, &mut grads)?;
        Ok((grads, dx))
    }
}

impl Parameters for DenseNet {
    fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

fn split_pair(tensors: &mut [Tensor], at: usize) -> (&mut Tensor, &mut Tensor) {
    let (head, tail) = tensors[at..].split_at_mut(1);
    (&mut head[0], &mut tail[0])
}

fn apply_activation(activation: Activation, z: &mut [f64], width: usize) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
        Activation::Softmax => {
            for row in z.chunks_exact_mut(width) {
                softmax_in_place(row);
            }
        }
    }
}

/// Max-shifted softmax, so logits of any finite magnitude are safe.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Turns `delta` from a gradient w.r.t. the activation output into one w.r.t.
/// the pre-activation, using only the cached outputs.
fn activation_backward(activation: Activation, out: &[f64], delta: &mut [f64], width: usize) {
    match activation {
        Activation::Identity => {}
        Activation::Relu => {
            for (d, a) in delta.iter_mut().zip(out) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        Activation::Tanh => {
            for (d, a) in delta.iter_mut().zip(out) {
                *d *= 1.0 - a * a;
            }
        }
        Activation::Softmax => {
            for (drow, prow) in delta.chunks_exact_mut(width).zip(out.chunks_exact(width)) {
                let dot: f64 = drow.iter().zip(prow).map(|(g, p)| g * p).sum();
                for (g, p) in drow.iter_mut().zip(prow) {
                    *g = p * (*g - dot);
                }
            }
        }
    }
}
