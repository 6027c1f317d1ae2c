use super::graph::{GraphBuilder, HeadKind, ModelGraph};
use crate::error::{Error, Result};

/// VGG-16 classifier: 13 same-padded 3x3 convs in five pooled blocks, then a
/// small fully-connected head.
///
/// Slots are named `block{i}.conv{j}.{weight,bias}` (1-based) for the
/// backbone and `head.fc{1,2}.{weight,bias}` for the head.
#[derive(Debug, Clone, PartialEq)]
pub struct Vgg16Config {
    pub input: (usize, usize, usize),
    /// `(convs, channels)` per block.
    pub blocks: Vec<(usize, usize)>,
    pub head_width: usize,
    pub num_classes: usize,
    pub frozen_backbone: bool,
}

pub const VGG16_CONV_LAYERS: usize = 13;
pub const HEAD_PREFIX: &str = "head.";

impl Default for Vgg16Config {
    fn default() -> Self {
        Vgg16Config {
            input: (3, 224, 224),
            blocks: vec![(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)],
            head_width: 64,
            num_classes: 2,
            frozen_backbone: true,
        }
    }
}

impl Vgg16Config {
    /// Same topology with every block's channel count divided by `divisor`
    /// (rounded up).
    pub fn with_channel_divisor(mut self, divisor: usize) -> Self {
        let d = divisor.max(1);
        for (_, ch) in &mut self.blocks {
            *ch = ch.div_ceil(d);
        }
        self
    }

    pub fn head_input_features(&self) -> usize {
        let (_, h, w) = self.input;
        let shrink = 1 << self.blocks.len();
        self.blocks.last().map(|b| b.1).unwrap_or(0) * (h / shrink) * (w / shrink)
    }
}

pub fn build_vgg16(cfg: &Vgg16Config) -> Result<ModelGraph> {
    let convs: usize = cfg.blocks.iter().map(|b| b.0).sum();
    if cfg.blocks.len() != 5 || convs != VGG16_CONV_LAYERS {
        return Err(Error::Config(format!(
            "VGG-16 needs 5 blocks with 13 convs in total, got {} blocks with {convs}",
            cfg.blocks.len()
        )));
    }
    if cfg.blocks.iter().any(|&(n, c)| n == 0 || c == 0) {
        return Err(Error::Config(
            "VGG-16 blocks need positive conv and channel counts".into(),
        ));
    }
    if cfg.num_classes < 2 || cfg.head_width == 0 {
        return Err(Error::Config(format!(
            "head needs >=2 classes and a positive width, got {} and {}",
            cfg.num_classes, cfg.head_width
        )));
    }
    let (c, h, w) = cfg.input;
    let mut b = GraphBuilder::new(c, h, w);
    for (i, &(n_convs, channels)) in cfg.blocks.iter().enumerate() {
        for j in 0..n_convs {
            b.conv(&format!("block{}.conv{}", i + 1, j + 1), channels, 3, 1)?
                .relu();
        }
        b.maxpool()?;
    }
    b.flatten();
    b.dense("head.fc1", cfg.head_width)?.relu();
    b.dense("head.fc2", cfg.num_classes)?.softmax();
    if cfg.frozen_backbone {
        b.trainable_prefixes(vec![HEAD_PREFIX.to_string()]);
    }
    b.build(HeadKind::ClassProbabilities)
}
