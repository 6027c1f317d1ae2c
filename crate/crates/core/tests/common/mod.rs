//! Naive reference implementations in f64, written independently of the
//! library kernels.
#![allow(dead_code)]

use lus_screen::{Conv2dParams, Tensor};
use rand::Rng;

pub fn random_tensor(r: &mut impl Rng, dims: [usize; 4]) -> Tensor<f32> {
    Tensor::from_fn(dims, |_| r.gen_range(-1.0..1.0))
}

fn at(t: &Tensor<f32>, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let [_, ch, h, w] = t.dims();
    t.as_slice()[((n * ch + c) * h + y) * w + x] as f64
}

pub fn conv2d(
    input: &Tensor<f32>,
    weights: &Tensor<f32>,
    bias: &[f32],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let [n, cin, h, w] = input.dims();
    let [cout, _, kh, kw] = weights.dims();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[o] as f64;
                    for i in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += at(input, b, i, iy as usize, ix as usize)
                                        * at(weights, o, i, ky, kx);
                                }
                            }
                        }
                    }
                    out[((b * cout + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

pub fn maxpool(input: &Tensor<f32>) -> Vec<f64> {
    let [n, c, h, w] = input.dims();
    let mut out = Vec::new();
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h / 2 {
                for x in 0..w / 2 {
                    let mut m = f64::NEG_INFINITY;
                    for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                        m = m.max(at(input, b, ch, 2 * y + dy, 2 * x + dx));
                    }
                    out.push(m);
                }
            }
        }
    }
    out
}

/// Stride-2 2x2 transposed convolution; weights are `(out, in, 2, 2)`.
pub fn upconv(input: &Tensor<f32>, weights: &Tensor<f32>, bias: &[f32]) -> Vec<f64> {
    let [n, cin, h, w] = input.dims();
    let cout = weights.dims()[0];
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; n * cout * oh * ow];
    for b in 0..n {
        for o in 0..cout {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = bias[o] as f64;
                    for i in 0..cin {
                        acc += at(input, b, i, y / 2, x / 2) * at(weights, o, i, y % 2, x % 2);
                    }
                    out[((b * cout + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(got: &Tensor<f32>, want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.as_slice()
        .iter()
        .zip(want)
        .map(|(&g, &w)| (g as f64 - w).abs())
        .fold(0.0, f64::max)
}

/// Worst error of the library kernels against the oracles over `cases`
/// random problems each: `[conv2d, maxpool2x2, transposed_conv2x2]`.
pub fn kernel_suite(seed: u64, cases: usize) -> [f64; 3] {
    let mut r = lus_screen::rng::pcg32(seed);
    let mut worst = [0.0f64; 3];
    for _ in 0..cases {
        let n = r.gen_range(1..3);
        let cin = r.gen_range(1..9);
        let cout = r.gen_range(1..11);
        let k = [1, 2, 3, 5][r.gen_range(0..4)];
        let stride = r.gen_range(1..3);
        let pad = r.gen_range(0..k.min(3));
        let h = r.gen_range(k..14);
        let w = r.gen_range(k..14);
        let x = random_tensor(&mut r, [n, cin, h, w]);
        let wt = random_tensor(&mut r, [cout, cin, k, k]);
        let bias: Vec<f32> = (0..cout).map(|_| r.gen_range(-1.0..1.0)).collect();
        let p = Conv2dParams::new(wt.clone(), bias.clone(), stride, pad).unwrap();
        let got = lus_screen::tensor::conv2d(&x, &p).unwrap();
        worst[0] = worst[0].max(max_abs_diff(&got, &conv2d(&x, &wt, &bias, stride, pad)));

        let (ph, pw) = (2 * r.gen_range(1..8), 2 * r.gen_range(1..8));
        let x = random_tensor(&mut r, [n, cin, ph, pw]);
        let got = lus_screen::tensor::maxpool2x2(&x).unwrap();
        worst[1] = worst[1].max(max_abs_diff(&got, &maxpool(&x)));

        let (uh, uw) = (r.gen_range(1..8), r.gen_range(1..8));
        let x = random_tensor(&mut r, [n, cin, uh, uw]);
        let wt = random_tensor(&mut r, [cout, cin, 2, 2]);
        let p = Conv2dParams::new(wt.clone(), bias.clone(), 2, 0).unwrap();
        let got = lus_screen::tensor::transposed_conv2x2(&x, &p).unwrap();
        worst[2] = worst[2].max(max_abs_diff(&got, &upconv(&x, &wt, &bias)));
    }
    worst
}
