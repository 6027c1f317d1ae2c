//! Deterministic dataset expansion.
//!
//! A fixed plan of variants is applied to every sample. Geometric transforms
//! (flips and zero-filled shifts) act on the image and its mask alike;
//! Gaussian noise touches the image only. Noise comes from one Box–Muller
//! stream over PCG32 per sample, consumed in plan order.

use super::{round_to_u8, GrayImage};
use crate::error::{Error, Result};
use crate::rng::{self, GaussianStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    HFlip,
    VFlip,
    /// Shift by `(dx, dy)` steps of `shift_fraction` of the image size.
    Shift {
        dx: i8,
        dy: i8,
    },
    Noise,
}

impl Transform {
    fn is_geometric(self) -> bool {
        !matches!(self, Transform::Noise)
    }
}

/// One plan entry: transforms applied left to right.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Variant(pub Vec<Transform>);

impl Variant {
    pub fn original() -> Self {
        Variant(Vec::new())
    }

    pub fn has_noise(&self) -> bool {
        self.0.contains(&Transform::Noise)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Shift step as a fraction of width (x) or height (y).
    pub shift_fraction: f64,
    /// Noise standard deviation as a fraction of the 0..255 range.
    pub noise_sigma: f64,
    pub plan: Vec<Variant>,
}

pub const MIN_PLAN_LEN: usize = 10;

impl Default for AugmentConfig {
    fn default() -> Self {
        use Transform::*;
        let plan = [
            vec![],
            vec![HFlip],
            vec![VFlip],
            vec![HFlip, VFlip],
            vec![Shift { dx: 1, dy: 0 }],
            vec![Shift { dx: -1, dy: 0 }],
            vec![Shift { dx: 0, dy: 1 }],
            vec![Shift { dx: 0, dy: -1 }],
            vec![Shift { dx: 1, dy: 0 }, HFlip],
            vec![Noise],
            vec![HFlip, Noise],
        ]
        .into_iter()
        .map(Variant)
        .collect();
        AugmentConfig {
            shift_fraction: 0.10,
            noise_sigma: 0.05,
            plan,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plan.len() < MIN_PLAN_LEN {
            return Err(Error::Config(format!(
                "augmentation plan has {} variants, need at least {MIN_PLAN_LEN}",
                self.plan.len()
            )));
        }
        if !self.plan[0].0.is_empty() {
            return Err(Error::Config(
                "first augmentation variant must be the untouched original".into(),
            ));
        }
        for (i, v) in self.plan.iter().enumerate() {
            let first_noise = v.0.iter().position(|t| !t.is_geometric());
            if let Some(k) = first_noise {
                if v.0[k..].iter().any(|t| t.is_geometric()) {
                    return Err(Error::Config(format!(
                        "variant {i}: geometric transform listed after noise"
                    )));
                }
            }
        }
        if !(0.0..1.0).contains(&self.shift_fraction)
            || self.noise_sigma.is_nan()
            || self.noise_sigma < 0.0
        {
            return Err(Error::Config(format!(
                "shift_fraction {} must be in [0,1) and noise_sigma {} non-negative",
                self.shift_fraction, self.noise_sigma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub image: GrayImage,
    pub mask: Option<GrayImage>,
}

/// Expands one sample into `cfg.plan.len()` variants; variant 0 is the input.
pub fn augment(
    image: &GrayImage,
    mask: Option<&GrayImage>,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<Augmented>> {
    cfg.validate()?;
    if let Some(m) = mask {
        if m.dims() != image.dims() {
            return Err(Error::Image(format!(
                "mask {:?} does not match image {:?}",
                m.dims(),
                image.dims()
            )));
        }
    }
    let step_x = (cfg.shift_fraction * image.width() as f64).round() as isize;
    let step_y = (cfg.shift_fraction * image.height() as f64).round() as isize;
    let sigma = cfg.noise_sigma * 255.0;
    let mut noise = GaussianStream::new(rng::pcg32(seed));

    let mut out = Vec::with_capacity(cfg.plan.len());
    for variant in &cfg.plan {
        let mut img = image.clone();
        let mut m = mask.cloned();
        for &t in &variant.0 {
            let geo = |g: &GrayImage| match t {
                Transform::HFlip => g.hflip(),
                Transform::VFlip => g.vflip(),
                Transform::Shift { dx, dy } => g.shift(dx as isize * step_x, dy as isize * step_y),
                Transform::Noise => unreachable!(),
            };
            if t == Transform::Noise {
                for p in img.pixels_mut() {
                    *p = round_to_u8(*p as f64 + sigma * noise.next_standard());
                }
            } else {
                img = geo(&img);
                m = m.as_ref().map(geo);
            }
        }
        out.push(Augmented {
            image: img,
            mask: m,
        });
    }
    Ok(out)
}

/// [`augment`] with the per-sample seed `seed XOR fnv1a(sample_id)`, so a
/// sample's variants do not depend on processing order.
pub fn augment_keyed(
    sample_id: &str,
    image: &GrayImage,
    mask: Option<&GrayImage>,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<Vec<Augmented>> {
    augment(image, mask, cfg, rng::keyed_seed(seed, sample_id))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (GrayImage, GrayImage) {
        let img = GrayImage::from_fn(20, 10, |x, y| (x * 11 + y * 7) as u8);
        let mask = GrayImage::from_fn(
            20,
            10,
            |x, y| if (4..9).contains(&x) && y < 5 { 255 } else { 0 },
        );
        (img, mask)
    }

    #[test]
    fn default_plan_is_valid_and_large_enough() {
        let cfg = AugmentConfig::default();
        cfg.validate().unwrap();
        assert!(cfg.plan.len() >= 10);
        let (img, mask) = sample();
        let out = augment(&img, Some(&mask), &cfg, 1).unwrap();
        assert_eq!(out.len(), cfg.plan.len());
        assert_eq!(out[0].image, img);
        assert_eq!(out[0].mask.as_ref(), Some(&mask));
    }

    #[test]
    fn masks_follow_geometry_and_stay_binary() {
        let (img, mask) = sample();
        let cfg = AugmentConfig::default();
        for (v, a) in cfg
            .plan
            .iter()
            .zip(augment(&img, Some(&mask), &cfg, 9).unwrap())
        {
            let m = a.mask.unwrap();
            assert!(m.is_binary());
            if !v.has_noise() {
                // Mask and image received the same geometric transform.
                let expected = v.0.iter().fold(mask.clone(), |g, t| match t {
                    Transform::HFlip => g.hflip(),
                    Transform::VFlip => g.vflip(),
                    Transform::Shift { dx, dy } => g.shift(*dx as isize * 2, *dy as isize),
                    Transform::Noise => g,
                });
                assert_eq!(m, expected);
            }
        }
    }

    #[test]
    fn replay_and_seed_sensitivity() {
        let (img, mask) = sample();
        let cfg = AugmentConfig::default();
        let a = augment(&img, Some(&mask), &cfg, 42).unwrap();
        assert_eq!(a, augment(&img, Some(&mask), &cfg, 42).unwrap());
        let b = augment(&img, Some(&mask), &cfg, 43).unwrap();
        for ((v, x), y) in cfg.plan.iter().zip(&a).zip(&b) {
            assert_eq!(x.mask, y.mask);
            if v.has_noise() {
                assert_ne!(x.image, y.image);
            } else {
                assert_eq!(x.image, y.image);
            }
        }
    }

    #[test]
    fn keyed_seed_separates_samples() {
        let (img, _) = sample();
        let cfg = AugmentConfig::default();
        let a = augment_keyed("v1_f0", &img, None, &cfg, 5).unwrap();
        let b = augment_keyed("v1_f1", &img, None, &cfg, 5).unwrap();
        assert_ne!(a[9].image, b[9].image);
        assert_eq!(a[1], b[1]);
    }

    #[test]
    fn noise_is_clamped() {
        let black = GrayImage::filled(16, 16, 0);
        let cfg = AugmentConfig {
            noise_sigma: 0.5,
            ..AugmentConfig::default()
        };
        let out = augment(&black, None, &cfg, 3).unwrap();
        let noisy = &out[9].image;
        assert!(noisy.pixels().contains(&0));
        assert!(noisy.pixels().iter().any(|&p| p > 0));
    }

    #[test]
    fn config_validation() {
        let mut cfg = AugmentConfig::default();
        cfg.plan.truncate(9);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.plan[3] = Variant(vec![Transform::Noise, Transform::HFlip]);
        assert!(cfg.validate().is_err());
        let mut cfg = AugmentConfig::default();
        cfg.plan.swap(0, 1);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mask_dimension_mismatch() {
        let (img, _) = sample();
        let bad = GrayImage::filled(10, 10, 0);
        assert!(augment(&img, Some(&bad), &AugmentConfig::default(), 0).is_err());
    }
}
