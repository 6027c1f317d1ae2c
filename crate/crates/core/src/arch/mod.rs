//! Model graphs for the VGG-16 classifier and the U-Net segmenter, and the
//! forward executor shared by both.

mod exec;
mod graph;
mod unet;
mod vgg;

use std::fmt::Write as _;

use rand::Rng;

pub use exec::{forward, validate_weights, BoundModel};
pub use graph::{GraphBuilder, HeadKind, Layer, LayerKind, ModelGraph, ParamSlot, Shape};
pub use unet::{build_unet, UnetConfig};
pub use vgg::{build_vgg16, Vgg16Config, HEAD_PREFIX, VGG16_CONV_LAYERS};

use crate::rng;
use crate::weights::{WeightArchive, WeightTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    Zeros,
    /// Weights uniform in `±sqrt(6 / fan_in)`, biases zero.
    HeUniform,
}

/// Fresh parameters for every slot of `graph`.
///
/// Each layer draws from its own stream keyed by `(seed, layer name)`, so a
/// layer's values do not depend on which other layers the graph contains.
pub fn init_weights(graph: &ModelGraph, init: Init, seed: u64) -> WeightArchive {
    init_layers(graph, init, seed, |_| true)
}

/// Like [`init_weights`] but only for layers whose name starts with `prefix`.
pub fn init_weights_with_prefix(
    graph: &ModelGraph,
    init: Init,
    seed: u64,
    prefix: &str,
) -> WeightArchive {
    init_layers(graph, init, seed, |name| name.starts_with(prefix))
}

fn init_layers(
    graph: &ModelGraph,
    init: Init,
    seed: u64,
    keep: impl Fn(&str) -> bool,
) -> WeightArchive {
    let mut archive = WeightArchive::new();
    for layer in graph.layers() {
        let (Some((wd, bd)), Some(fan_in)) = (layer.kind.param_dims(), layer.kind.fan_in()) else {
            continue;
        };
        if !keep(&layer.name) {
            continue;
        }
        let mut weight = WeightTensor::zeros(wd);
        if init == Init::HeUniform {
            let limit = (6.0 / fan_in as f64).sqrt();
            let mut r = rng::pcg32(rng::keyed_seed(seed, &layer.name));
            for v in &mut weight.values {
                *v = r.gen_range(-limit..limit) as f32;
            }
        }
        archive
            .insert(layer.weight_slot(), weight)
            .expect("layer names are unique");
        archive
            .insert(layer.bias_slot(), WeightTensor::zeros(bd))
            .expect("layer names are unique");
    }
    archive
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub index: usize,
    pub name: String,
    pub kind: &'static str,
    pub output: Shape,
    pub params: usize,
}

pub fn summary_rows(model: &ModelGraph) -> Vec<SummaryRow> {
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(index, l)| SummaryRow {
            index,
            name: l.name.clone(),
            kind: l.kind.label(),
            output: l.output,
            params: l.kind.param_count(),
        })
        .collect()
}

/// Plain-text layer table followed by the parameter total.
pub fn summarize(model: &ModelGraph) -> String {
    let rows = summary_rows(model);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>4}  {:<24} {:<8} {:>14} {:>12}",
        "#", "layer", "kind", "output", "params"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{:>4}  {:<24} {:<8} {:>14} {:>12}",
            r.index,
            r.name,
            r.kind,
            r.output.to_string(),
            r.params
        );
    }
    let total: usize = rows.iter().map(|r| r.params).sum();
    let _ = writeln!(out, "total parameters: {total}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{self, Conv2dParams, Tensor};

    fn small_vgg() -> Vgg16Config {
        Vgg16Config {
            input: (3, 32, 32),
            ..Vgg16Config::default()
        }
        .with_channel_divisor(16)
    }

    #[test]
    fn vgg_default_structure() {
        let g = build_vgg16(&Vgg16Config::default()).unwrap();
        assert_eq!(g.conv_layer_count(), 13);
        assert_eq!(g.dense_layer_count(), 2);
        let flatten = g.flatten_index().unwrap();
        assert_eq!(
            g.layers()[flatten - 1].output,
            Shape::Map { c: 512, h: 7, w: 7 }
        );
        assert_eq!(
            g.output_spec(),
            (Shape::Vector(2), HeadKind::ClassProbabilities)
        );
        let fc1 = summary_rows(&g)
            .into_iter()
            .find(|r| r.name == "head.fc1")
            .unwrap();
        assert_eq!(fc1.params, 25088 * 64 + 64);
    }

    #[test]
    fn vgg_rejects_bad_plans() {
        let mut cfg = Vgg16Config::default();
        cfg.blocks[0].0 = 3;
        assert!(build_vgg16(&cfg).is_err());
        let cfg = Vgg16Config {
            num_classes: 1,
            ..Vgg16Config::default()
        };
        assert!(build_vgg16(&cfg).is_err());
        let cfg = Vgg16Config {
            input: (3, 100, 100),
            ..Vgg16Config::default()
        };
        assert!(build_vgg16(&cfg).is_err());
    }

    #[test]
    fn frozen_flag_only_changes_trainable_set() {
        let frozen = build_vgg16(&small_vgg()).unwrap();
        let open = build_vgg16(&Vgg16Config {
            frozen_backbone: false,
            ..small_vgg()
        })
        .unwrap();
        let names: Vec<_> = frozen
            .trainable_slots()
            .into_iter()
            .map(|s| s.name)
            .collect();
        assert_eq!(
            names,
            [
                "head.fc1.weight",
                "head.fc1.bias",
                "head.fc2.weight",
                "head.fc2.bias"
            ]
        );
        assert_eq!(open.trainable_slots().len(), open.param_slots().len());

        let w = init_weights(&frozen, Init::HeUniform, 5);
        let x = Tensor::from_fn([1, 3, 32, 32], |[_, c, y, x]| {
            ((c + y * x) % 7) as f32 / 7.0
        });
        assert_eq!(
            forward(&frozen, &w, &x).unwrap(),
            forward(&open, &w, &x).unwrap()
        );
    }

    #[test]
    fn unet_structure() {
        let g = build_unet(&UnetConfig::default()).unwrap();
        assert_eq!(g.conv_layer_count(), 23);
        let last_conv = g
            .layers()
            .iter()
            .rev()
            .find(|l| matches!(l.kind, LayerKind::Conv { .. }))
            .unwrap();
        assert_eq!(last_conv.name, "unet.final");
        assert!(matches!(
            last_conv.kind,
            LayerKind::Conv {
                in_channels: 64,
                kernel: 1,
                ..
            }
        ));
        assert_eq!(
            g.output_spec().0,
            Shape::Map {
                c: 1,
                h: 224,
                w: 224
            }
        );
        let bottleneck = g
            .layers()
            .iter()
            .rev()
            .find(|l| l.name.starts_with("unet.bottleneck"))
            .unwrap();
        assert_eq!(
            bottleneck.output,
            Shape::Map {
                c: 1024,
                h: 14,
                w: 14
            }
        );
        let conv_rows = summary_rows(&g)
            .iter()
            .filter(|r| r.kind == "conv" || r.kind == "upconv")
            .count();
        assert_eq!(conv_rows, 23);
    }

    #[test]
    fn unet_rejects_indivisible_input() {
        let cfg = UnetConfig {
            input: (1, 100, 100),
            ..UnetConfig::default()
        };
        assert!(matches!(build_unet(&cfg), Err(crate::Error::Config(_))));
    }

    #[test]
    fn unet_levels_preserve_spatial_dims() {
        let g = build_unet(&UnetConfig::default()).unwrap();
        for l in g.layers() {
            if let (LayerKind::Conv { kernel: 3, .. }, Shape::Map { h, .. }) = (&l.kind, l.output) {
                let level: usize = l.name["unet.".len()..]
                    .trim_start_matches(|c: char| c.is_alphabetic())
                    .split('.')
                    .next()
                    .unwrap()
                    .parse()
                    .unwrap_or(5);
                assert_eq!(h, 224 >> (level - 1), "{}", l.name);
            }
        }
    }

    #[test]
    fn zero_weights_give_uniform_outputs() {
        let vgg = build_vgg16(&small_vgg()).unwrap();
        let x = Tensor::from_fn([1, 3, 32, 32], |[_, _, y, x]| (y + x) as f32);
        let p = forward(&vgg, &init_weights(&vgg, Init::Zeros, 0), &x).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let cfg = UnetConfig {
            input: (1, 32, 32),
            base_channels: 4,
            ..UnetConfig::default()
        };
        let unet = build_unet(&cfg).unwrap();
        let x = Tensor::full([1, 1, 32, 32], 0.3f32);
        let m = forward(&unet, &init_weights(&unet, Init::Zeros, 0), &x).unwrap();
        assert_eq!(m.dims(), [1, 1, 32, 32]);
        assert!(m.as_slice().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn validation_happens_before_execution() {
        let vgg = build_vgg16(&small_vgg()).unwrap();
        let mut w = init_weights(&vgg, Init::Zeros, 0);
        w.set("block1.conv1.bias", WeightTensor::zeros(vec![3]))
            .unwrap();
        let x = Tensor::<f32>::zeros([1, 3, 32, 32]);
        assert!(matches!(
            forward(&vgg, &w, &x),
            Err(crate::Error::ParamShape { .. })
        ));
        let good = init_weights(&vgg, Init::Zeros, 0);
        let partial = good.with_prefix("block");
        assert!(matches!(
            forward(&vgg, &partial, &x),
            Err(crate::Error::MissingParam(_))
        ));
        assert!(forward(&vgg, &good, &Tensor::<f32>::zeros([1, 1, 32, 32])).is_err());
    }

    #[test]
    fn toy_graph_matches_manual_composition() {
        let mut b = GraphBuilder::new(2, 6, 6);
        b.conv("a", 3, 3, 1).unwrap().relu().maxpool().unwrap();
        b.conv("b", 2, 1, 0).unwrap();
        b.flatten().dense("c", 4).unwrap().softmax();
        let g = b.build(HeadKind::ClassProbabilities).unwrap();
        let w = init_weights(&g, Init::HeUniform, 99);
        let x = Tensor::from_fn([2, 2, 6, 6], |[n, c, y, x]| {
            ((n * 31 + c * 7 + y * 5 + x * 3) % 11) as f32 / 11.0 - 0.4
        });
        let got = forward(&g, &w, &x).unwrap();

        let conv = |name: &str, pad| {
            let t = w.get(&format!("{name}.weight")).unwrap();
            let d = &t.dims;
            Conv2dParams::new(
                Tensor::from_vec([d[0], d[1], d[2], d[3]], t.values.clone()).unwrap(),
                w.get(&format!("{name}.bias")).unwrap().values.clone(),
                1,
                pad,
            )
            .unwrap()
        };
        let h = tensor::conv2d(&x, &conv("a", 1)).unwrap();
        let h = tensor::maxpool2x2(&tensor::relu(&h)).unwrap();
        let h = tensor::conv2d(&h, &conv("b", 0)).unwrap();
        let mut expected = Vec::new();
        for n in 0..2 {
            let logits = tensor::dense(
                h.item(n),
                &w.get("c.weight").unwrap().values,
                &w.get("c.bias").unwrap().values,
            )
            .unwrap();
            expected.extend(tensor::softmax(&logits));
        }
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(got.as_slice()), bits(&expected));
    }

    #[test]
    fn summary_of_empty_graph() {
        let g = GraphBuilder::new(1, 4, 4)
            .build(HeadKind::MaskProbabilities)
            .unwrap();
        let text = summarize(&g);
        assert_eq!(text.lines().count(), 2);
        assert!(text.ends_with("total parameters: 0\n"));
    }

    #[test]
    fn summary_total_is_row_sum() {
        let g = build_unet(&UnetConfig::default()).unwrap();
        let rows = summary_rows(&g);
        assert_eq!(
            rows.iter().map(|r| r.params).sum::<usize>(),
            g.parameter_count()
        );
        assert!(summarize(&g).contains(&format!("total parameters: {}", g.parameter_count())));
    }

    #[test]
    fn unpaired_skip_rejected() {
        let mut b = GraphBuilder::new(1, 4, 4);
        b.save_skip().unwrap();
        assert!(b.build(HeadKind::MaskProbabilities).is_err());
        let mut b = GraphBuilder::new(1, 4, 4);
        assert!(b.concat_skip().is_err());
    }
}
