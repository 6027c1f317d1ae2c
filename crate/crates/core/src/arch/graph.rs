use std::fmt;

use crate::error::{Error, Result};

/// Shape of the activation flowing out of a layer (batch axis omitted).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Map { c: usize, h: usize, w: usize },
    Vector(usize),
}

impl Shape {
    pub fn numel(&self) -> usize {
        match *self {
            Shape::Map { c, h, w } => c * h * w,
            Shape::Vector(n) => n,
        }
    }

    /// Per-item tensor dims (`Vector(n)` is carried as `(n, 1, 1)`).
    pub fn chw(&self) -> (usize, usize, usize) {
        match *self {
            Shape::Map { c, h, w } => (c, h, w),
            Shape::Vector(n) => (n, 1, 1),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Map { c, h, w } => write!(f, "{c}x{h}x{w}"),
            Shape::Vector(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    ClassProbabilities,
    MaskProbabilities,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerKind {
    /// Stride-1 convolution.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    },
    /// 2x2 stride-2 transposed convolution.
    UpConv {
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool,
    Relu,
    /// Pushes the current activation onto the skip stack.
    SaveSkip,
    /// Pops the skip stack and concatenates `[skip, current]` along channels.
    ConcatSkip,
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Softmax,
    Sigmoid,
}

impl LayerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LayerKind::Conv { .. } => "conv",
            LayerKind::UpConv { .. } => "upconv",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Relu => "relu",
            LayerKind::SaveSkip => "skip",
            LayerKind::ConcatSkip => "concat",
            LayerKind::Flatten => "flatten",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Softmax => "softmax",
            LayerKind::Sigmoid => "sigmoid",
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Conv { .. } | LayerKind::UpConv { .. } | LayerKind::Dense { .. }
        )
    }

    /// `(weight dims, bias dims)` for parametric layers.
    pub fn param_dims(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel, kernel],
                vec![out_channels],
            )),
            LayerKind::UpConv {
                in_channels,
                out_channels,
            } => Some((vec![out_channels, in_channels, 2, 2], vec![out_channels])),
            LayerKind::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    /// Inputs feeding each output unit, used for He initialization.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerKind::Conv {
                in_channels,
                kernel,
                ..
            } => Some(in_channels * kernel * kernel),
            LayerKind::UpConv { in_channels, .. } => Some(in_channels),
            LayerKind::Dense { in_features, .. } => Some(in_features),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_dims()
            .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    /// Parameter-slot prefix; empty for layers without parameters.
    pub name: String,
    pub kind: LayerKind,
    pub output: Shape,
}

impl Layer {
    pub fn weight_slot(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_slot(&self) -> String {
        format!("{}.bias", self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub dims: Vec<usize>,
}

/// Immutable, shape-checked layer sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelGraph {
    layers: Vec<Layer>,
    input: (usize, usize, usize),
    output: Shape,
    head: HeadKind,
    trainable_prefixes: Option<Vec<String>>,
}

impl ModelGraph {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_spec(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn output_spec(&self) -> (Shape, HeadKind) {
        (self.output, self.head)
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn param_slots(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        for layer in &self.layers {
            if let Some((w, b)) = layer.kind.param_dims() {
                slots.push(ParamSlot {
                    name: layer.weight_slot(),
                    dims: w,
                });
                slots.push(ParamSlot {
                    name: layer.bias_slot(),
                    dims: b,
                });
            }
        }
        slots
    }

    /// Slots updated by training. Everything when no freeze applies.
    pub fn trainable_slots(&self) -> Vec<ParamSlot> {
        let slots = self.param_slots();
        match &self.trainable_prefixes {
            None => slots,
            Some(prefixes) => slots
                .into_iter()
                .filter(|s| prefixes.iter().any(|p| s.name.starts_with(p.as_str())))
                .collect(),
        }
    }

    /// Layers of kind conv or upconv.
    pub fn conv_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::UpConv { .. }))
            .count()
    }

    pub fn dense_layer_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Dense { .. }))
            .count()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.kind.param_count()).sum()
    }

    /// Index of the `Flatten` layer, if any.
    pub fn flatten_index(&self) -> Option<usize> {
        self.layers
            .iter()
            .position(|l| l.kind == LayerKind::Flatten)
    }
}

/// Incremental graph construction with shape propagation.
pub struct GraphBuilder {
    input: (usize, usize, usize),
    current: Shape,
    skips: Vec<Shape>,
    layers: Vec<Layer>,
    trainable_prefixes: Option<Vec<String>>,
}

impl GraphBuilder {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        GraphBuilder {
            input: (c, h, w),
            current: Shape::Map { c, h, w },
            skips: Vec::new(),
            layers: Vec::new(),
            trainable_prefixes: None,
        }
    }

    pub fn current(&self) -> Shape {
        self.current
    }

    fn map_dims(&self, op: &str) -> Result<(usize, usize, usize)> {
        match self.current {
            Shape::Map { c, h, w } => Ok((c, h, w)),
            Shape::Vector(_) => Err(Error::Config(format!(
                "{op} needs a feature map, found a flat vector"
            ))),
        }
    }

    fn push(&mut self, name: &str, kind: LayerKind, output: Shape) -> &mut Self {
        self.current = output;
        self.layers.push(Layer {
            name: name.to_string(),
            kind,
            output,
        });
        self
    }

    pub fn conv(
        &mut self,
        name: &str,
        out_channels: usize,
        kernel: usize,
        padding: usize,
    ) -> Result<&mut Self> {
        let (c, h, w) = self.map_dims("conv")?;
        if out_channels == 0 || kernel == 0 {
            return Err(Error::Config(format!("{name}: zero channels or kernel")));
        }
        if h + 2 * padding < kernel || w + 2 * padding < kernel {
            return Err(Error::Config(format!(
                "{name}: kernel {kernel} exceeds padded input {h}x{w}"
            )));
        }
        let out = Shape::Map {
            c: out_channels,
            h: h + 2 * padding - kernel + 1,
            w: w + 2 * padding - kernel + 1,
        };
        let kind = LayerKind::Conv {
            in_channels: c,
            out_channels,
            kernel,
            padding,
        };
        Ok(self.push(name, kind, out))
    }

    pub fn upconv(&mut self, name: &str, out_channels: usize) -> Result<&mut Self> {
        let (c, h, w) = self.map_dims("upconv")?;
        if out_channels == 0 {
            return Err(Error::Config(format!("{name}: zero channels")));
        }
        let kind = LayerKind::UpConv {
            in_channels: c,
            out_channels,
        };
        Ok(self.push(
            name,
            kind,
            Shape::Map {
                c: out_channels,
                h: 2 * h,
                w: 2 * w,
            },
        ))
    }

    pub fn maxpool(&mut self) -> Result<&mut Self> {
        let (c, h, w) = self.map_dims("maxpool")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Config(format!(
                "maxpool on odd spatial dims {h}x{w}"
            )));
        }
        Ok(self.push(
            "",
            LayerKind::MaxPool,
            Shape::Map {
                c,
                h: h / 2,
                w: w / 2,
            },
        ))
    }

    pub fn relu(&mut self) -> &mut Self {
        let cur = self.current;
        self.push("", LayerKind::Relu, cur)
    }

    pub fn save_skip(&mut self) -> Result<&mut Self> {
        self.map_dims("skip")?;
        self.skips.push(self.current);
        let cur = self.current;
        Ok(self.push("", LayerKind::SaveSkip, cur))
    }

    pub fn concat_skip(&mut self) -> Result<&mut Self> {
        let (c, h, w) = self.map_dims("concat")?;
        let skip = self
            .skips
            .pop()
            .ok_or_else(|| Error::Config("concat without a saved skip".into()))?;
        let Shape::Map {
            c: sc,
            h: sh,
            w: sw,
        } = skip
        else {
            unreachable!("skips are always maps")
        };
        if (sh, sw) != (h, w) {
            return Err(Error::Config(format!(
                "skip {sh}x{sw} does not match upsampled {h}x{w}"
            )));
        }
        Ok(self.push("", LayerKind::ConcatSkip, Shape::Map { c: sc + c, h, w }))
    }

    pub fn flatten(&mut self) -> &mut Self {
        let n = self.current.numel();
        self.push("", LayerKind::Flatten, Shape::Vector(n))
    }

    pub fn dense(&mut self, name: &str, out_features: usize) -> Result<&mut Self> {
        let Shape::Vector(n) = self.current else {
            return Err(Error::Config(format!("{name}: dense needs a flat input")));
        };
        if out_features == 0 {
            return Err(Error::Config(format!("{name}: zero output features")));
        }
        let kind = LayerKind::Dense {
            in_features: n,
            out_features,
        };
        Ok(self.push(name, kind, Shape::Vector(out_features)))
    }

    pub fn softmax(&mut self) -> &mut Self {
        let cur = self.current;
        self.push("", LayerKind::Softmax, cur)
    }

    pub fn sigmoid(&mut self) -> &mut Self {
        let cur = self.current;
        self.push("", LayerKind::Sigmoid, cur)
    }

    /// Restricts training to slots under these prefixes.
    pub fn trainable_prefixes(&mut self, prefixes: Vec<String>) -> &mut Self {
        self.trainable_prefixes = Some(prefixes);
        self
    }

    pub fn build(&mut self, head: HeadKind) -> Result<ModelGraph> {
        if !self.skips.is_empty() {
            return Err(Error::Config(format!(
                "{} skip connections never consumed",
                self.skips.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for l in self.layers.iter().filter(|l| l.kind.has_params()) {
            if l.name.is_empty() || !seen.insert(l.name.clone()) {
                return Err(Error::Config(format!(
                    "parametric layer name `{}` empty or repeated",
                    l.name
                )));
            }
        }
        Ok(ModelGraph {
            layers: std::mem::take(&mut self.layers),
            input: self.input,
            output: self.current,
            head,
            trainable_prefixes: self.trainable_prefixes.take(),
        })
    }
}
