use super::graph::{GraphBuilder, HeadKind, ModelGraph};
use crate::error::{Error, Result};

/// U-Net segmenter with same-padded convolutions, so the mask matches the
/// input size.
///
/// Slots: `unet.down{i}.conv{1,2}`, `unet.bottleneck.conv{1,2}`,
/// `unet.up{i}.upconv`, `unet.up{i}.conv{1,2}`, `unet.final`, each with
/// `.weight` and `.bias`. Level `i` runs from 1 (full resolution) to `depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnetConfig {
    pub input: (usize, usize, usize),
    pub depth: usize,
    pub base_channels: usize,
    pub num_mask_classes: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        UnetConfig {
            input: (1, 224, 224),
            depth: 4,
            base_channels: 64,
            num_mask_classes: 1,
        }
    }
}

impl UnetConfig {
    /// Two convs per encoder level, two in the bottleneck, an upconv and two
    /// convs per decoder level, and the final 1x1.
    pub fn conv_layer_count(&self) -> usize {
        5 * self.depth + 3
    }

    pub fn with_channel_divisor(mut self, divisor: usize) -> Self {
        self.base_channels = self.base_channels.div_ceil(divisor.max(1));
        self
    }
}

pub fn build_unet(cfg: &UnetConfig) -> Result<ModelGraph> {
    let (c, h, w) = cfg.input;
    let factor = 1usize
        .checked_shl(cfg.depth as u32)
        .ok_or_else(|| Error::Config(format!("depth {} too large", cfg.depth)))?;
    if h % factor != 0 || w % factor != 0 || h == 0 || w == 0 {
        return Err(Error::Config(format!(
            "U-Net input {h}x{w} not divisible by 2^{}",
            cfg.depth
        )));
    }
    if cfg.base_channels == 0 || cfg.num_mask_classes == 0 {
        return Err(Error::Config("U-Net needs positive channel counts".into()));
    }
    let level_channels = |i: usize| cfg.base_channels << (i - 1);

    let mut b = GraphBuilder::new(c, h, w);
    for i in 1..=cfg.depth {
        double_conv(&mut b, &format!("unet.down{i}"), level_channels(i))?;
        b.save_skip()?.maxpool()?;
    }
    double_conv(&mut b, "unet.bottleneck", cfg.base_channels << cfg.depth)?;
    for i in (1..=cfg.depth).rev() {
        b.upconv(&format!("unet.up{i}.upconv"), level_channels(i))?
            .concat_skip()?;
        double_conv(&mut b, &format!("unet.up{i}"), level_channels(i))?;
    }
    b.conv("unet.final", cfg.num_mask_classes, 1, 0)?.sigmoid();
    b.build(HeadKind::MaskProbabilities)
}

fn double_conv(b: &mut GraphBuilder, prefix: &str, channels: usize) -> Result<()> {
    b.conv(&format!("{prefix}.conv1"), channels, 3, 1)?.relu();
    b.conv(&format!("{prefix}.conv2"), channels, 3, 1)?.relu();
    Ok(())
}
