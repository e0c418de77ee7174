use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::layers::{self, LstmTrace};
use super::spec::{LayerSpec, NetworkSpec, ParamBlock, Shape};
use super::{NeuralError, Tensor};

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn next_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// A sequential network with all parameters in one flat vector.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    params: Vec<f64>,
    blocks: Vec<ParamBlock>,
    /// Start of each layer's parameters.
    offsets: Vec<usize>,
    /// Changes whenever the parameters do; caches record the value they saw.
    version: u64,
}

#[derive(Debug, Clone)]
enum LayerCache {
    Dense {
        input: Vec<f64>,
        output: Vec<f64>,
    },
    Lstm(LstmTrace),
    Conv {
        input: Vec<f64>,
        output: Vec<f64>,
    },
    Pool {
        argmax: Vec<usize>,
        input_len: usize,
    },
    Reshape,
    Concat {
        input_len: usize,
    },
}

/// Activations recorded by [`Network::forward`] for one input.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    layers: Vec<LayerCache>,
    output_len: usize,
}

impl Network {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(spec: NetworkSpec, rng: &mut R) -> Result<Network, NeuralError> {
        let mut net = Network::zeros(spec)?;
        for (layer, &offset) in net.spec.layers.iter().zip(&net.offsets) {
            let (fan_in, fan_out, weight_blocks) = match *layer {
                LayerSpec::Dense { input, output, .. } => (input, output, vec![input * output]),
                // Per-gate fan: each gate is its own `hidden`-wide projection.
                LayerSpec::Lstm { input, hidden } => {
                    let limit_in = (6.0 / (input + hidden) as f64).sqrt();
                    let limit_rec = (6.0 / (2 * hidden) as f64).sqrt();
                    let n_in = 4 * hidden * input;
                    let n_rec = 4 * hidden * hidden;
                    for v in &mut net.params[offset..offset + n_in] {
                        *v = rng.gen_range(-limit_in..limit_in);
                    }
                    for v in &mut net.params[offset + n_in..offset + n_in + n_rec] {
                        *v = rng.gen_range(-limit_rec..limit_rec);
                    }
                    continue;
                }
                LayerSpec::Conv1d {
                    in_channels,
                    filters,
                    kernel,
                    ..
                } => (
                    kernel * in_channels,
                    kernel * filters,
                    vec![filters * kernel * in_channels],
                ),
                _ => continue,
            };
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = weight_blocks.iter().sum();
            for v in &mut net.params[offset..offset + n] {
                *v = rng.gen_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Network, NeuralError> {
        let n = spec.param_count();
        Network::from_params(spec, vec![0.0; n])
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Network, NeuralError> {
        let shapes = spec.shapes()?;
        if params.len() != spec.param_count() {
            return Err(NeuralError::Shape(format!(
                "spec needs {} parameters, got {}",
                spec.param_count(),
                params.len()
            )));
        }
        let mut offsets = Vec::with_capacity(spec.layers.len());
        let mut offset = 0;
        for layer in &spec.layers {
            offsets.push(offset);
            offset += layer.param_count();
        }
        Ok(Network {
            blocks: spec.param_blocks(),
            spec,
            shapes,
            params,
            offsets,
            version: next_version(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = next_version();
        &mut self.params
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub(crate) fn params_and_blocks_mut(&mut self) -> (&mut [f64], &[ParamBlock]) {
        self.version = next_version();
        (&mut self.params, &self.blocks)
    }

    /// Copies parameters from another network with the same spec.
    pub fn copy_from(&mut self, other: &Network) -> Result<(), NeuralError> {
        if self.spec != other.spec {
            return Err(NeuralError::Shape(
                "cannot copy parameters between different network specs".into(),
            ));
        }
        self.params.copy_from_slice(&other.params);
        self.version = other.version;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn output_width(&self) -> usize {
        match self.shapes.last() {
            Some(Shape::Vector(n)) => *n,
            _ => unreachable!("validated at construction"),
        }
    }

    fn check_input(&self, input: &Tensor, aux: &[f64]) -> Result<(), NeuralError> {
        let (rows, cols) = input.dims2().ok_or_else(|| {
            NeuralError::Shape(format!("input must be a matrix, got {:?}", input.shape()))
        })?;
        if cols != self.spec.input_width {
            return Err(NeuralError::Shape(format!(
                "input rows have width {cols}, network expects {}",
                self.spec.input_width
            )));
        }
        if let Some(len) = self.spec.input_len {
            if rows != len {
                return Err(NeuralError::Shape(format!(
                    "input has {rows} rows, network expects exactly {len}"
                )));
            }
        }
        if aux.len() != self.spec.aux_width {
            return Err(NeuralError::Shape(format!(
                "aux has {} values, network expects {}",
                aux.len(),
                self.spec.aux_width
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        input: &Tensor,
        aux: &[f64],
    ) -> Result<(Vec<f64>, ForwardCache), NeuralError> {
        self.check_input(input, aux)?;
        let mut value = input.data().to_vec();
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let p = &self.params[self.offsets[i]..self.offsets[i] + layer.param_count()];
            let (next, cache) = match *layer {
                LayerSpec::Dense {
                    input: n_in,
                    output,
                    activation,
                } => {
                    let (w, b) = p.split_at(n_in * output);
                    let out = layers::dense_forward(w, b, &value, activation);
                    (
                        out.clone(),
                        LayerCache::Dense {
                            input: value,
                            output: out,
                        },
                    )
                }
                LayerSpec::Lstm {
                    input: n_in,
                    hidden,
                } => {
                    let (w_in, rest) = p.split_at(4 * hidden * n_in);
                    let (w_rec, b) = rest.split_at(4 * hidden * hidden);
                    let trace = layers::lstm_forward(w_in, w_rec, b, &value, n_in, hidden);
                    (trace.final_hidden(hidden).to_vec(), LayerCache::Lstm(trace))
                }
                LayerSpec::Conv1d {
                    in_channels,
                    filters,
                    kernel,
                    activation,
                } => {
                    let (w, b) = p.split_at(filters * kernel * in_channels);
                    let out = layers::conv1d_forward(w, b, &value, in_channels, kernel, activation);
                    (
                        out.clone(),
                        LayerCache::Conv {
                            input: value,
                            output: out,
                        },
                    )
                }
                LayerSpec::MaxPool1d { pool } => {
                    let channels = match self.shape_before(i) {
                        Shape::Sequence { width, .. } => width,
                        Shape::Vector(_) => unreachable!("validated at construction"),
                    };
                    let (out, argmax) = layers::maxpool1d_forward(&value, channels, pool);
                    (
                        out,
                        LayerCache::Pool {
                            argmax,
                            input_len: value.len(),
                        },
                    )
                }
                LayerSpec::Flatten => (value, LayerCache::Reshape),
                LayerSpec::Concat { .. } => {
                    let input_len = value.len();
                    let mut out = value;
                    out.extend_from_slice(aux);
                    (out, LayerCache::Concat { input_len })
                }
            };
            value = next;
            caches.push(cache);
        }
        let output_len = value.len();
        Ok((
            value,
            ForwardCache {
                version: self.version,
                layers: caches,
                output_len,
            },
        ))
    }

    pub fn predict(&self, input: &Tensor, aux: &[f64]) -> Result<Vec<f64>, NeuralError> {
        Ok(self.forward(input, aux)?.0)
    }

    fn shape_before(&self, layer: usize) -> Shape {
        if layer == 0 {
            Shape::Sequence {
                len: self.spec.input_len,
                width: self.spec.input_width,
            }
        } else {
            self.shapes[layer - 1]
        }
    }

    /// Adds the gradient of `grad_output . output` with respect to every
    /// parameter into `grads`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut [f64],
    ) -> Result<(), NeuralError> {
        if cache.version != self.version {
            return Err(NeuralError::StaleCache);
        }
        if grad_output.len() != cache.output_len {
            return Err(NeuralError::Shape(format!(
                "output gradient has {} values, output has {}",
                grad_output.len(),
                cache.output_len
            )));
        }
        if grads.len() != self.params.len() {
            return Err(NeuralError::Shape(format!(
                "gradient buffer has {} values, network has {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        let mut grad = grad_output.to_vec();
        for (i, (layer, lc)) in self.spec.layers.iter().zip(&cache.layers).enumerate().rev() {
            let start = self.offsets[i];
            let end = start + layer.param_count();
            let p = &self.params[start..end];
            let g = &mut grads[start..end];
            grad = match (*layer, lc) {
                (
                    LayerSpec::Dense {
                        input: n_in,
                        output,
                        activation,
                    },
                    LayerCache::Dense { input, output: out },
                ) => {
                    let (gw, gb) = g.split_at_mut(n_in * output);
                    layers::dense_backward(
                        &p[..n_in * output],
                        input,
                        out,
                        activation,
                        &grad,
                        gw,
                        gb,
                    )
                }
                (
                    LayerSpec::Lstm {
                        input: n_in,
                        hidden,
                    },
                    LayerCache::Lstm(trace),
                ) => {
                    let (w_in, rest) = p.split_at(4 * hidden * n_in);
                    let w_rec = &rest[..4 * hidden * hidden];
                    let (g_in, g_rest) = g.split_at_mut(4 * hidden * n_in);
                    let (g_rec, g_b) = g_rest.split_at_mut(4 * hidden * hidden);
                    layers::lstm_backward(w_in, w_rec, trace, n_in, hidden, &grad, g_in, g_rec, g_b)
                }
                (
                    LayerSpec::Conv1d {
                        in_channels,
                        filters,
                        kernel,
                        activation,
                    },
                    LayerCache::Conv { input, output },
                ) => {
                    let n_w = filters * kernel * in_channels;
                    let (gw, gb) = g.split_at_mut(n_w);
                    layers::conv1d_backward(
                        &p[..n_w],
                        input,
                        output,
                        in_channels,
                        kernel,
                        activation,
                        &grad,
                        gw,
                        gb,
                    )
                }
                (LayerSpec::MaxPool1d { .. }, LayerCache::Pool { argmax, input_len }) => {
                    layers::maxpool1d_backward(argmax, *input_len, &grad)
                }
                (LayerSpec::Flatten, LayerCache::Reshape) => grad,
                (LayerSpec::Concat { .. }, LayerCache::Concat { input_len }) => {
                    grad.truncate(*input_len);
                    grad
                }
                _ => return Err(NeuralError::StaleCache),
            };
        }
        Ok(())
    }
}

/// Scales `grads` so its L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let scale = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}
