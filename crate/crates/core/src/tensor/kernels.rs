//! Neural kernels.
//!
//! Every reduction has a fixed accumulation order so results are
//! bit-reproducible across runs, platforms and thread counts. Convolution
//! outputs accumulate over the kernel window in `ky -> kx -> in_channel`
//! order starting from zero, and the bias is added last. Parallel work is
//! split by output element only; no output is ever summed by two tasks.

use rayon::prelude::*;

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Weights `(out_c, in_c, k_h, k_w)`, one bias per output channel.
///
/// The same layout is used by [`transposed_conv2x2`], where `weights[o][i]`
/// is the 2x2 stamp that input channel `i` scatters into output channel `o`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2dParams<T = f32> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2dParams<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>, stride: usize, padding: usize) -> Result<Self> {
        if bias.len() != weights.dims()[0] {
            return Err(Error::Shape(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                weights.dims()[0]
            )));
        }
        if stride == 0 {
            return Err(Error::Shape("stride must be positive".into()));
        }
        Ok(Conv2dParams {
            weights,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.dims()[2], self.weights.dims()[3])
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel();
        let span_h = h + 2 * self.padding;
        let span_w = w + 2 * self.padding;
        if span_h < kh || span_w < kw {
            return Err(Error::Shape(format!(
                "kernel {kh}x{kw} larger than padded input {span_h}x{span_w}"
            )));
        }
        Ok((
            (span_h - kh) / self.stride + 1,
            (span_w - kw) / self.stride + 1,
        ))
    }
}

// Micro-kernel tile: MR output channels x NR output pixels.
const MR: usize = 8;
const NR: usize = 8;
// Output pixels handled per parallel task.
const BAND: usize = 16 * NR;

/// 2-D cross-correlation with zero padding.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, params: &Conv2dParams<T>) -> Result<Tensor<T>> {
    let [n, c_in, h, w] = input.dims();
    if c_in != params.in_channels() {
        return Err(Error::Shape(format!(
            "conv2d expects {} input channels, got {c_in}",
            params.in_channels()
        )));
    }
    let (oh, ow) = params.output_hw(h, w)?;
    let c_out = params.out_channels();
    let (kh, kw) = params.kernel();
    let k_len = kh * kw * c_in;
    let packed = pack_weights(params);
    let tiles = c_out.div_ceil(MR);

    let mut out = Tensor::zeros([n, c_out, oh, ow]);
    let pixels = oh * ow;
    let geom = Geometry {
        h,
        w,
        ow,
        kh,
        kw,
        stride: params.stride,
        pad: params.padding,
    };
    for ni in 0..n {
        let src = input.item(ni);
        let bands: Vec<Vec<T>> = (0..pixels.div_ceil(BAND))
            .into_par_iter()
            .map(|b| {
                let p0 = b * BAND;
                let len = BAND.min(pixels - p0);
                let cols = im2col_band(src, c_in, &geom, p0, len);
                let mut band = vec![T::zero(); c_out * len];
                let job = BandJob {
                    packed: &packed,
                    cols: &cols,
                    bias: &params.bias,
                    k_len,
                    tiles,
                    len,
                };
                job.run(&mut band);
                band
            })
            .collect();
        let dst_item = out_item_mut(&mut out, ni);
        for (b, band) in bands.iter().enumerate() {
            let p0 = b * BAND;
            let len = band.len() / c_out.max(1);
            for oc in 0..c_out {
                dst_item[oc * pixels + p0..oc * pixels + p0 + len]
                    .copy_from_slice(&band[oc * len..(oc + 1) * len]);
            }
        }
    }
    Ok(out)
}

struct Geometry {
    h: usize,
    w: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
}

fn out_item_mut<T: Scalar>(t: &mut Tensor<T>, n: usize) -> &mut [T] {
    let [_, c, h, w] = t.dims();
    let chw = c * h * w;
    &mut t.as_mut_slice()[n * chw..(n + 1) * chw]
}

/// Weights re-laid as `[tile][k][MR]` with `k = (ky*kw + kx)*c_in + ic`.
fn pack_weights<T: Scalar>(params: &Conv2dParams<T>) -> Vec<T> {
    let [c_out, c_in, kh, kw] = params.weights.dims();
    let k_len = kh * kw * c_in;
    let tiles = c_out.div_ceil(MR);
    let mut packed = vec![T::zero(); tiles * k_len * MR];
    for oc in 0..c_out {
        let (t, r) = (oc / MR, oc % MR);
        for ky in 0..kh {
            for kx in 0..kw {
                for ic in 0..c_in {
                    let k = (ky * kw + kx) * c_in + ic;
                    packed[(t * k_len + k) * MR + r] = params.weights.get([oc, ic, ky, kx]);
                }
            }
        }
    }
    packed
}

/// Patch matrix `[k][px]` for output pixels `p0..p0+len`, columns padded to a
/// multiple of `NR` with zeros.
fn im2col_band<T: Scalar>(src: &[T], c_in: usize, g: &Geometry, p0: usize, len: usize) -> Vec<T> {
    let width = len.div_ceil(NR) * NR;
    let k_len = g.kh * g.kw * c_in;
    let mut cols = vec![T::zero(); k_len * width];
    let plane = g.h * g.w;
    for j in 0..len {
        let p = p0 + j;
        let (oy, ox) = (p / g.ow, p % g.ow);
        for ky in 0..g.kh {
            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
            if iy < 0 || iy >= g.h as isize {
                continue;
            }
            for kx in 0..g.kw {
                let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                if ix < 0 || ix >= g.w as isize {
                    continue;
                }
                let offset = iy as usize * g.w + ix as usize;
                let k0 = (ky * g.kw + kx) * c_in;
                for ic in 0..c_in {
                    cols[(k0 + ic) * width + j] = src[ic * plane + offset];
                }
            }
        }
    }
    cols
}

struct BandJob<'a, T> {
    packed: &'a [T],
    cols: &'a [T],
    bias: &'a [T],
    k_len: usize,
    tiles: usize,
    len: usize,
}

impl<T: Scalar> BandJob<'_, T> {
    fn run(&self, band: &mut [T]) {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") {
                // SAFETY: the CPU supports AVX2, checked just above.
                unsafe { self.run_avx2(band) };
                return;
            }
        }
        self.run_generic(band);
    }

    // Same code compiled with wider vectors; mul and add stay separate
    // instructions, so results are identical to the generic path.
    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn run_avx2(&self, band: &mut [T]) {
        self.run_generic(band);
    }

    #[inline(always)]
    fn run_generic(&self, band: &mut [T]) {
        let c_out = self.bias.len();
        let width = self.len.div_ceil(NR) * NR;
        for t in 0..self.tiles {
            let wt = &self.packed[t * self.k_len * MR..(t + 1) * self.k_len * MR];
            for ct in 0..width / NR {
                let acc = micro_kernel(wt, self.cols, width, ct * NR, self.k_len);
                for (r, row) in acc.iter().enumerate() {
                    let oc = t * MR + r;
                    if oc >= c_out {
                        break;
                    }
                    let bias = self.bias[oc];
                    for (j, v) in row.iter().enumerate() {
                        let px = ct * NR + j;
                        if px < self.len {
                            band[oc * self.len + px] = *v + bias;
                        }
                    }
                }
            }
        }
    }
}

#[inline(always)]
fn micro_kernel<T: Scalar>(
    wt: &[T],
    cols: &[T],
    width: usize,
    col0: usize,
    k_len: usize,
) -> [[T; NR]; MR] {
    let mut acc = [[T::zero(); NR]; MR];
    for k in 0..k_len {
        let a: &[T; MR] = wt[k * MR..k * MR + MR].try_into().unwrap();
        let b: &[T; NR] = cols[k * width + col0..k * width + col0 + NR]
            .try_into()
            .unwrap();
        for r in 0..MR {
            for j in 0..NR {
                acc[r][j] = acc[r][j] + a[r] * b[j];
            }
        }
    }
    acc
}

/// Non-overlapping 2x2 max pooling.
pub fn maxpool2x2<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2x2 needs even spatial dims, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let src = input.as_slice();
    let mut data = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            let r0 = base + 2 * y * w;
            let r1 = r0 + w;
            for x in 0..ow {
                let a = src[r0 + 2 * x].max(src[r0 + 2 * x + 1]);
                let b = src[r1 + 2 * x].max(src[r1 + 2 * x + 1]);
                data.push(a.max(b));
            }
        }
    }
    Tensor::from_vec([n, c, oh, ow], data)
}

/// Stride-2 transposed convolution with a 2x2 kernel (exact 2x upsampling).
pub fn transposed_conv2x2<T: Scalar>(
    input: &Tensor<T>,
    params: &Conv2dParams<T>,
) -> Result<Tensor<T>> {
    if params.kernel() != (2, 2) || params.stride != 2 || params.padding != 0 {
        return Err(Error::Shape(format!(
            "transposed_conv2x2 needs a 2x2 kernel, stride 2, padding 0; got {:?}, stride {}, padding {}",
            params.kernel(),
            params.stride,
            params.padding
        )));
    }
    let [n, c_in, h, w] = input.dims();
    if c_in != params.in_channels() {
        return Err(Error::Shape(format!(
            "transposed_conv2x2 expects {} input channels, got {c_in}",
            params.in_channels()
        )));
    }
    let c_out = params.out_channels();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c_out, oh, ow]);
    out.as_mut_slice()
        .par_chunks_mut(oh * ow)
        .enumerate()
        .for_each(|(plane_idx, dst)| {
            let (ni, oc) = (plane_idx / c_out, plane_idx % c_out);
            let bias = params.bias[oc];
            let mut acc = vec![T::zero(); h * w];
            for dy in 0..2 {
                for dx in 0..2 {
                    acc.iter_mut().for_each(|v| *v = T::zero());
                    for ic in 0..c_in {
                        let k = params.weights.get([oc, ic, dy, dx]);
                        for (a, &s) in acc.iter_mut().zip(input.plane(ni, ic)) {
                            *a = *a + s * k;
                        }
                    }
                    for y in 0..h {
                        for x in 0..w {
                            dst[(2 * y + dy) * ow + 2 * x + dx] = acc[y * w + x] + bias;
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Stacks `b`'s channels after `a`'s.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if na != nb || ha != hb || wa != wb {
        return Err(Error::Shape(format!(
            "concat_channels needs matching N,H,W; got {:?} and {:?}",
            a.dims(),
            b.dims()
        )));
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    for ni in 0..na {
        data.extend_from_slice(a.item(ni));
        data.extend_from_slice(b.item(ni));
    }
    Tensor::from_vec([na, ca + cb, ha, wa], data)
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn sigmoid<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

/// `weights` is row-major `(bias.len(), input.len())`.
pub fn dense<T: Scalar>(input: &[T], weights: &[T], bias: &[T]) -> Result<Vec<T>> {
    let rows = bias.len();
    if weights.len() != rows * input.len() {
        return Err(Error::Shape(format!(
            "dense weights hold {} values, expected {rows}x{}",
            weights.len(),
            input.len()
        )));
    }
    if rows == 0 {
        return Ok(Vec::new());
    }
    Ok(weights
        .chunks_exact(input.len().max(1))
        .zip(bias)
        .map(|(row, &b)| {
            let mut acc = T::zero();
            for (&wv, &x) in row.iter().zip(input) {
                acc = acc + wv * x;
            }
            acc + b
        })
        .collect())
}

/// Max-subtracted softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let mut sum = T::zero();
    for &e in &exps {
        sum = sum + e;
    }
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_pcg::Pcg32;

    fn params(weights: Tensor<f32>, bias: Vec<f32>, stride: usize, padding: usize) -> Conv2dParams {
        Conv2dParams::new(weights, bias, stride, padding).unwrap()
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let input = Tensor::from_vec([1, 1, 3, 3], (1..=9).map(|v| v as f32).collect()).unwrap();
        let p = params(Tensor::full([1, 1, 1, 1], 1.0), vec![0.0], 1, 0);
        assert_eq!(conv2d(&input, &p).unwrap(), input);
    }

    #[test]
    fn all_ones_3x3_with_padding_counts_neighbours() {
        let input = Tensor::full([1, 1, 3, 3], 1.0f32);
        let p = params(Tensor::full([1, 1, 3, 3], 1.0), vec![0.0], 1, 1);
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(
            out.as_slice(),
            &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
        );
    }

    #[test]
    fn conv_shape_rule() {
        let input = Tensor::<f32>::zeros([2, 3, 5, 5]);
        let p = params(Tensor::zeros([4, 3, 3, 3]), vec![0.0; 4], 1, 1);
        assert_eq!(conv2d(&input, &p).unwrap().dims(), [2, 4, 5, 5]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_and_empty_output() {
        let p = params(Tensor::zeros([1, 2, 3, 3]), vec![0.0], 1, 0);
        assert!(matches!(
            conv2d(&Tensor::<f32>::zeros([1, 3, 5, 5]), &p),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv2d(&Tensor::<f32>::zeros([1, 2, 2, 2]), &p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_bias_length_checked() {
        assert!(Conv2dParams::new(Tensor::<f32>::zeros([2, 1, 1, 1]), vec![0.0], 1, 0).is_err());
    }

    #[test]
    fn conv_with_stride_two() {
        let input = Tensor::from_fn([1, 1, 4, 4], |[_, _, y, x]| (y * 4 + x) as f32);
        let p = params(Tensor::full([1, 1, 1, 1], 1.0), vec![0.5], 2, 0);
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.as_slice(), &[0.5, 2.5, 8.5, 10.5]);
    }

    #[test]
    fn maxpool_basic_cases() {
        let input = Tensor::from_vec([1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2x2(&input).unwrap().as_slice(), &[4.0]);
        let constant = Tensor::full([1, 3, 6, 4], 2.5f32);
        assert_eq!(
            maxpool2x2(&constant).unwrap(),
            Tensor::full([1, 3, 3, 2], 2.5)
        );
        assert!(maxpool2x2(&Tensor::<f32>::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn transposed_single_scatter() {
        let input = Tensor::full([1, 1, 1, 1], 3.5f32);
        let p = params(Tensor::full([1, 1, 2, 2], 1.0), vec![0.0], 2, 0);
        let out = transposed_conv2x2(&input, &p).unwrap();
        assert_eq!(out, Tensor::full([1, 1, 2, 2], 3.5));
    }

    #[test]
    fn transposed_shape_and_config_errors() {
        let input = Tensor::<f32>::zeros([1, 64, 14, 14]);
        let p = params(Tensor::zeros([32, 64, 2, 2]), vec![0.0; 32], 2, 0);
        assert_eq!(
            transposed_conv2x2(&input, &p).unwrap().dims(),
            [1, 32, 28, 28]
        );
        let bad = params(Tensor::zeros([32, 64, 3, 3]), vec![0.0; 32], 2, 0);
        assert!(transposed_conv2x2(&input, &bad).is_err());
        let bad_stride = params(Tensor::zeros([32, 64, 2, 2]), vec![0.0; 32], 1, 0);
        assert!(transposed_conv2x2(&input, &bad_stride).is_err());
    }

    #[test]
    fn concat_cases() {
        let a = Tensor::from_fn([1, 2, 4, 4], |[_, c, y, x]| (c * 100 + y * 4 + x) as f32);
        let b = Tensor::from_fn([1, 3, 4, 4], |[_, c, y, x]| -((c * 100 + y * 4 + x) as f32));
        let ab = concat_channels(&a, &b).unwrap();
        assert_eq!(ab.dims(), [1, 5, 4, 4]);
        for j in 0..3 {
            assert_eq!(ab.plane(0, 2 + j), b.plane(0, j));
        }
        let empty = Tensor::<f32>::zeros([1, 0, 4, 4]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &Tensor::zeros([1, 1, 4, 5])).is_err());
    }

    #[test]
    fn softmax_properties() {
        assert_eq!(softmax(&[0.0f32, 0.0]), vec![0.5, 0.5]);
        let mut rng = Pcg32::seed_from_u64(7);
        for _ in 0..100 {
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let c = rng.gen_range(-50.0..50.0);
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let (p, q) = (softmax(&x), softmax(&shifted));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (a, b) in p.iter().zip(&q) {
                assert!((a - b).abs() < 1e-6);
            }
        }
        let huge = softmax(&[1000.0f32, 0.0]);
        assert!(huge.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dense_identity_and_mismatch() {
        let x = [1.0f32, -2.0, 3.0];
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(dense(&x, &eye, &[0.0; 3]).unwrap(), x.to_vec());
        assert!(dense(&x, &eye[..6], &[0.0; 3]).is_err());
    }

    #[test]
    fn relu_and_sigmoid() {
        let t = Tensor::from_vec([1, 1, 1, 4], vec![-1.0f32, 0.0, 2.0, -30.0]).unwrap();
        let r = relu(&t);
        assert_eq!(r.as_slice(), &[0.0, 0.0, 2.0, 0.0]);
        assert_eq!(relu(&r), r);
        let s = sigmoid(&t);
        assert_eq!(s.as_slice()[1], 0.5);
        assert!(s.as_slice().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}
