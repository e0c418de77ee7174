use serde::{Deserialize, Serialize};

use super::NeuralError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub(crate) fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output.
    pub(crate) fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One stage of a sequential network.
///
/// Sequences are `length x width` matrices, one row per time step; for the
/// convolution layers the width is the channel count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
        activation: Activation,
    },
    /// Runs over the whole sequence and emits the final hidden state.
    Lstm {
        input: usize,
        hidden: usize,
    },
    /// Valid (unpadded) convolution along the time axis.
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        activation: Activation,
    },
    MaxPool1d {
        pool: usize,
    },
    Flatten,
    /// Appends the auxiliary feature vector.
    Concat {
        aux_width: usize,
    },
}

/// Shape of the value flowing between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Sequence { len: Option<usize>, width: usize },
    Vector(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Width of each input row.
    pub input_width: usize,
    /// Fixed sequence length, or `None` for variable-length input.
    pub input_len: Option<usize>,
    pub aux_width: usize,
    pub layers: Vec<LayerSpec>,
}

/// A named, contiguous run of parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBlock {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl LayerSpec {
    /// `(suffix, len)` for each parameter block, in storage order.
    pub(crate) fn param_blocks(&self) -> Vec<(&'static str, usize)> {
        match *self {
            LayerSpec::Dense { input, output, .. } => {
                vec![("weight", input * output), ("bias", output)]
            }
            LayerSpec::Lstm { input, hidden } => vec![
                ("input_weight", 4 * hidden * input),
                ("recurrent_weight", 4 * hidden * hidden),
                ("bias", 4 * hidden),
            ],
            LayerSpec::Conv1d {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("weight", filters * kernel * in_channels),
                ("bias", filters),
            ],
            LayerSpec::MaxPool1d { .. } | LayerSpec::Flatten | LayerSpec::Concat { .. } => {
                Vec::new()
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_blocks().iter().map(|(_, n)| n).sum()
    }

    fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Lstm { .. } => "lstm",
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Concat { .. } => "concat",
        }
    }

    fn output_shape(&self, index: usize, input: Shape, aux: usize) -> Result<Shape, NeuralError> {
        let bad =
            |why: String| NeuralError::Shape(format!("layer {index} ({}): {why}", self.kind()));
        match (*self, input) {
            (
                LayerSpec::Dense {
                    input: n, output, ..
                },
                Shape::Vector(m),
            ) if n == m => Ok(Shape::Vector(output)),
            (LayerSpec::Lstm { input: n, hidden }, Shape::Sequence { width, .. }) if n == width => {
                Ok(Shape::Vector(hidden))
            }
            (
                LayerSpec::Conv1d {
                    in_channels,
                    filters,
                    kernel,
                    ..
                },
                Shape::Sequence {
                    len: Some(len),
                    width,
                },
            ) if in_channels == width && kernel >= 1 && len >= kernel => Ok(Shape::Sequence {
                len: Some(len - kernel + 1),
                width: filters,
            }),
            (
                LayerSpec::MaxPool1d { pool },
                Shape::Sequence {
                    len: Some(len),
                    width,
                },
            ) if pool >= 1 && len >= pool => Ok(Shape::Sequence {
                len: Some(len / pool),
                width,
            }),
            (
                LayerSpec::Flatten,
                Shape::Sequence {
                    len: Some(len),
                    width,
                },
            ) => Ok(Shape::Vector(len * width)),
            (LayerSpec::Flatten, Shape::Vector(n)) => Ok(Shape::Vector(n)),
            (LayerSpec::Concat { aux_width }, Shape::Vector(n)) if aux_width == aux => {
                Ok(Shape::Vector(n + aux_width))
            }
            (_, shape) => Err(bad(format!("incompatible input {shape:?}"))),
        }
    }
}

impl NetworkSpec {
    /// Shapes after each layer, validating compatibility.
    pub fn shapes(&self) -> Result<Vec<Shape>, NeuralError> {
        let mut shape = Shape::Sequence {
            len: self.input_len,
            width: self.input_width,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(i, shape, self.aux_width)?;
            out.push(shape);
        }
        match out.last() {
            Some(Shape::Vector(_)) => Ok(out),
            _ => Err(NeuralError::Shape(
                "network must end in a vector output".into(),
            )),
        }
    }

    pub fn output_width(&self) -> Result<usize, NeuralError> {
        match self.shapes()?.last() {
            Some(Shape::Vector(n)) => Ok(*n),
            _ => unreachable!("shapes() guarantees a vector output"),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    pub fn param_blocks(&self) -> Vec<ParamBlock> {
        let mut offset = 0;
        let mut blocks = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (suffix, len) in layer.param_blocks() {
                blocks.push(ParamBlock {
                    name: format!("{i}.{}.{suffix}", layer.kind()),
                    offset,
                    len,
                });
                offset += len;
            }
        }
        blocks
    }
}
