//! 8-bit images, preprocessing, file I/O and the augmentation engine.

mod augment;
mod io;

pub use augment::{augment, augment_keyed, AugmentConfig, Augmented, Transform, Variant};
pub use io::{decode_gray, encode_pgm, encode_ppm, load_gray, load_rgb, save_gray, save_rgb};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Processing resolution for both networks.
pub const PROCESSING_SIZE: usize = 224;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image(format!("zero-sized image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Image(format!(
                "{width}x{height} image needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn hflip(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    pub fn vflip(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y)
        })
    }

    /// Moves content by `(dx, dy)` pixels; exposed pixels become 0.
    pub fn shift(&self, dx: isize, dy: isize) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            let sx = x as isize - dx;
            let sy = y as isize - dy;
            if sx < 0 || sy < 0 || sx >= self.width as isize || sy >= self.height as isize {
                0
            } else {
                self.get(sx as usize, sy as usize)
            }
        })
    }

    /// True when every pixel is 0 or 255.
    pub fn is_binary(&self) -> bool {
        self.pixels.iter().all(|&p| p == 0 || p == 255)
    }
}

/// Interleaved 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::Image(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            data,
        })
    }

    pub fn from_gray(gray: &GrayImage) -> Self {
        RgbImage {
            width: gray.width,
            height: gray.height,
            data: gray.pixels.iter().flat_map(|&p| [p, p, p]).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

/// BT.601 luma `0.299 R + 0.587 G + 0.114 B`, rounded half-up.
pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    let pixels = rgb
        .data
        .chunks_exact(3)
        .map(|c| {
            let acc = 299 * c[0] as u32 + 587 * c[1] as u32 + 114 * c[2] as u32;
            ((acc + 500) / 1000) as u8
        })
        .collect();
    GrayImage {
        width: rgb.width,
        height: rgb.height,
        pixels,
    }
}

/// Bilinear resampling with half-pixel centers: destination pixel `d` samples
/// source coordinate `(d + 0.5) * src/dst - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::Image(format!(
            "resize target {width}x{height} must be positive"
        )));
    }
    if (width, height) == img.dims() {
        return Ok(img.clone());
    }
    let axis = |dst: usize, src: usize| -> Vec<(usize, usize, f64)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|d| {
                let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, s - i0 as f64)
            })
            .collect()
    };
    let xs = axis(width, img.width);
    let ys = axis(height, img.height);
    let mut pixels = Vec::with_capacity(width * height);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let p = |x, y| img.get(x, y) as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            pixels.push(round_to_u8(v));
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Rounds half-up and clamps to `0..=255`.
#[inline]
pub(crate) fn round_to_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Intensities scaled to `[0, 1]`, shaped `(1, 1, H, W)`.
pub fn normalize<T: Scalar>(img: &GrayImage) -> Tensor<T> {
    let scale = T::lit(255.0);
    let data = img
        .pixels
        .iter()
        .map(|&p| T::from_storage(p as f32) / scale)
        .collect();
    Tensor::from_vec([1, 1, img.height, img.width], data).expect("dims match pixel count")
}

/// Inverse of [`normalize`] for the first plane of `t`.
pub fn denormalize<T: Scalar>(t: &Tensor<T>) -> GrayImage {
    let [_, _, h, w] = t.dims();
    let pixels = t
        .plane(0, 0)
        .iter()
        .map(|&v| round_to_u8(v.to_f64().unwrap_or(0.0) * 255.0))
        .collect();
    GrayImage {
        width: w,
        height: h,
        pixels,
    }
}

/// Grayscale frame to the `(1, 1, 224, 224)` network input.
pub fn preprocess<T: Scalar>(img: &GrayImage) -> Result<(GrayImage, Tensor<T>)> {
    let resized = resize_bilinear(img, PROCESSING_SIZE, PROCESSING_SIZE)?;
    let tensor = normalize(&resized);
    Ok((resized, tensor))
}
