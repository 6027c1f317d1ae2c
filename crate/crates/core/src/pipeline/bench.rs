use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arch::BoundModel;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Latency of one parametric layer together with the parameter-free ops
/// (activation, pooling, flatten, softmax) that follow it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTiming {
    pub name: String,
    pub kind: String,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndToEnd {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub iterations: usize,
    pub warmup: usize,
    pub seed: u64,
    pub layers: Vec<LayerTiming>,
    pub end_to_end: EndToEnd,
    pub layer_sum_ms: f64,
}

impl BenchReport {
    /// `|sum of layer means - end-to-end mean| / end-to-end mean`.
    pub fn additivity_error(&self) -> f64 {
        (self.layer_sum_ms - self.end_to_end.mean_ms).abs() / self.end_to_end.mean_ms
    }
}

/// Nearest-rank percentile of sorted `v`.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Times `iterations` forward passes after `warmup` untimed ones, on one
/// thread, using a uniform `[0, 1)` input drawn from `seed`.
pub fn bench<T: Scalar>(
    model: &BoundModel<T>,
    iterations: usize,
    warmup: usize,
    seed: u64,
) -> Result<BenchReport> {
    if iterations == 0 {
        return Err(Error::Config("bench needs at least one iteration".into()));
    }
    let graph = model.graph();
    let (c, h, w) = graph.input_spec();
    let mut r = rng::pcg32(seed);
    let input = Tensor::from_fn([1, c, h, w], |_| T::lit(r.gen::<f64>()));

    // Map every op to the timed group of the nearest preceding parametric layer.
    let mut groups: Vec<(String, String)> = Vec::new();
    let mut group_of = Vec::with_capacity(graph.layers().len());
    for layer in graph.layers() {
        if layer.kind.has_params() || groups.is_empty() {
            groups.push((layer.name.clone(), layer.kind.label().to_string()));
        }
        group_of.push(groups.len() - 1);
    }

    super::single_threaded(|| -> Result<BenchReport> {
        for _ in 0..warmup {
            model.forward(&input)?;
        }
        let mut per_layer = vec![Vec::with_capacity(iterations); groups.len()];
        let mut totals = Vec::with_capacity(iterations);
        for _ in 0..iterations {
            let mut acc = vec![0.0; groups.len()];
            let start = Instant::now();
            model.forward_timed(&input, &mut |i, d| {
                acc[group_of[i]] += d.as_secs_f64() * 1e3
            })?;
            totals.push(start.elapsed().as_secs_f64() * 1e3);
            for (g, v) in per_layer.iter_mut().zip(acc) {
                g.push(v);
            }
        }
        let layers: Vec<LayerTiming> = groups
            .iter()
            .zip(&per_layer)
            .map(|((name, kind), v)| LayerTiming {
                name: name.clone(),
                kind: kind.clone(),
                mean_ms: v.iter().sum::<f64>() / v.len() as f64,
                min_ms: v.iter().copied().fold(f64::INFINITY, f64::min),
                max_ms: v.iter().copied().fold(0.0, f64::max),
                samples: v.len(),
            })
            .collect();
        let mut sorted = totals.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(BenchReport {
            iterations,
            warmup,
            seed,
            layer_sum_ms: layers.iter().map(|l| l.mean_ms).sum(),
            layers,
            end_to_end: EndToEnd {
                mean_ms: totals.iter().sum::<f64>() / totals.len() as f64,
                p50_ms: percentile(&sorted, 0.50),
                p95_ms: percentile(&sorted, 0.95),
                min_ms: sorted[0],
                max_ms: sorted[sorted.len() - 1],
            },
        })
    })?
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_vgg16, init_weights, Init};
    use crate::Vgg16Config;

    #[test]
    fn percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 0.5), 10.0);
        assert_eq!(percentile(&v, 0.95), 19.0);
        assert_eq!(percentile(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn minimal_run_and_vgg_layer_count() {
        let g = build_vgg16(&Vgg16Config {
            input: (3, 32, 32),
            ..Vgg16Config::default().with_channel_divisor(16)
        })
        .unwrap();
        let m = BoundModel::<f32>::new(&g, &init_weights(&g, Init::HeUniform, 0)).unwrap();
        let r = bench(&m, 1, 0, 7).unwrap();
        assert_eq!(r.layers.len(), 15);
        assert!(r.layers.iter().all(|l| l.samples == 1));
        assert_eq!(r.layers.iter().filter(|l| l.kind == "dense").count(), 2);
        assert!(
            r.layers[0].min_ms <= r.layers[0].mean_ms && r.layers[0].mean_ms <= r.layers[0].max_ms
        );
        assert!(bench(&m, 0, 0, 7).is_err());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["iterations"], 1);
        assert!(v["end_to_end"]["p95_ms"].is_number());
    }
}
