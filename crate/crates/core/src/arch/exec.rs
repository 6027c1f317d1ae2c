use std::time::{Duration, Instant};

use super::graph::{LayerKind, ModelGraph};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{self, Conv2dParams, Tensor};
use crate::weights::WeightArchive;

enum BoundOp<T> {
    Conv(Conv2dParams<T>),
    UpConv(Conv2dParams<T>),
    MaxPool,
    Relu,
    SaveSkip,
    ConcatSkip,
    Flatten,
    Dense { weights: Vec<T>, bias: Vec<T> },
    Softmax,
    Sigmoid,
}

/// A graph with its parameters validated and converted to `T`.
pub struct BoundModel<T: Scalar = f32> {
    graph: ModelGraph,
    ops: Vec<BoundOp<T>>,
}

/// Checks that every parameter slot exists with the expected dims.
pub fn validate_weights(graph: &ModelGraph, weights: &WeightArchive) -> Result<()> {
    for slot in graph.param_slots() {
        let entry = weights
            .get(&slot.name)
            .ok_or_else(|| Error::MissingParam(slot.name.clone()))?;
        if entry.dims != slot.dims {
            return Err(Error::ParamShape {
                name: slot.name,
                expected: slot.dims,
                found: entry.dims.clone(),
            });
        }
    }
    Ok(())
}

fn convert<T: Scalar>(values: &[f32]) -> Vec<T> {
    values.iter().map(|&v| T::from_storage(v)).collect()
}

impl<T: Scalar> BoundModel<T> {
    pub fn new(graph: &ModelGraph, weights: &WeightArchive) -> Result<Self> {
        validate_weights(graph, weights)?;
        let fetch =
            |name: String| -> Vec<T> { convert(&weights.get(&name).expect("validated").values) };
        let mut ops = Vec::with_capacity(graph.layers().len());
        for layer in graph.layers() {
            let op = match layer.kind {
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    padding,
                } => {
                    let w = Tensor::from_vec(
                        [out_channels, in_channels, kernel, kernel],
                        fetch(layer.weight_slot()),
                    )?;
                    BoundOp::Conv(Conv2dParams::new(w, fetch(layer.bias_slot()), 1, padding)?)
                }
                LayerKind::UpConv {
                    in_channels,
                    out_channels,
                } => {
                    let w = Tensor::from_vec(
                        [out_channels, in_channels, 2, 2],
                        fetch(layer.weight_slot()),
                    )?;
                    BoundOp::UpConv(Conv2dParams::new(w, fetch(layer.bias_slot()), 2, 0)?)
                }
                LayerKind::MaxPool => BoundOp::MaxPool,
                LayerKind::Relu => BoundOp::Relu,
                LayerKind::SaveSkip => BoundOp::SaveSkip,
                LayerKind::ConcatSkip => BoundOp::ConcatSkip,
                LayerKind::Flatten => BoundOp::Flatten,
                LayerKind::Dense { .. } => BoundOp::Dense {
                    weights: fetch(layer.weight_slot()),
                    bias: fetch(layer.bias_slot()),
                },
                LayerKind::Softmax => BoundOp::Softmax,
                LayerKind::Sigmoid => BoundOp::Sigmoid,
            };
            ops.push(op);
        }
        Ok(BoundModel {
            graph: graph.clone(),
            ops,
        })
    }

    pub fn graph(&self) -> &ModelGraph {
        &self.graph
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(input, self.ops.len(), &mut |_, _| {})
    }

    /// Output of the `Flatten` layer: one feature row per batch item.
    pub fn features(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let stop = self
            .graph
            .flatten_index()
            .ok_or_else(|| Error::Config("graph has no flatten layer".into()))?;
        self.run(input, stop + 1, &mut |_, _| {})
    }

    /// Runs the full graph, reporting each layer's wall time.
    pub fn forward_timed(
        &self,
        input: &Tensor<T>,
        on_layer: &mut dyn FnMut(usize, Duration),
    ) -> Result<Tensor<T>> {
        self.run(input, self.ops.len(), on_layer)
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let [n, c, h, w] = input.dims();
        if n == 0 || (c, h, w) != self.graph.input_spec() {
            return Err(Error::Shape(format!(
                "model expects input (N>=1, {:?}), got {:?}",
                self.graph.input_spec(),
                input.dims()
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        input: &Tensor<T>,
        stop: usize,
        on_layer: &mut dyn FnMut(usize, Duration),
    ) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let n = input.batch();
        let mut skips: Vec<Tensor<T>> = Vec::new();
        let mut x = input.clone();
        for (i, op) in self.ops[..stop].iter().enumerate() {
            let start = Instant::now();
            x = match op {
                BoundOp::Conv(p) => tensor::conv2d(&x, p)?,
                BoundOp::UpConv(p) => tensor::transposed_conv2x2(&x, p)?,
                BoundOp::MaxPool => tensor::maxpool2x2(&x)?,
                BoundOp::Relu => tensor::relu(&x),
                BoundOp::SaveSkip => {
                    skips.push(x.clone());
                    x
                }
                BoundOp::ConcatSkip => {
                    let skip = skips.pop().expect("graph validated skip pairing");
                    tensor::concat_channels(&skip, &x)?
                }
                BoundOp::Flatten => {
                    let per_item = x.len() / n;
                    x.reshape([n, per_item, 1, 1])?
                }
                BoundOp::Dense { weights, bias } => {
                    let mut out = Vec::with_capacity(n * bias.len());
                    for item in 0..n {
                        out.extend(tensor::dense(x.item(item), weights, bias)?);
                    }
                    Tensor::from_vec([n, bias.len(), 1, 1], out)?
                }
                BoundOp::Softmax => {
                    let mut out = Vec::with_capacity(x.len());
                    for item in 0..n {
                        out.extend(tensor::softmax(x.item(item)));
                    }
                    Tensor::from_vec(x.dims(), out)?
                }
                BoundOp::Sigmoid => tensor::sigmoid(&x),
            };
            on_layer(i, start.elapsed());
        }
        Ok(x)
    }
}

/// Validates `weights` against `model` and runs one forward pass.
pub fn forward<T: Scalar>(
    model: &ModelGraph,
    weights: &WeightArchive,
    input: &Tensor<T>,
) -> Result<Tensor<T>> {
    BoundModel::new(model, weights)?.forward(input)
}
