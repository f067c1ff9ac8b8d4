//! Paired data augmentation: a shared random crop and horizontal flip,
//! then brightness and saturation jitter on the input only.

use rand::Rng;

use crate::error::Result;
use crate::image::ImageBuffer;
use crate::scalar::Real;
use crate::trainer::SamplePair;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Crop side length as a fraction of the image side.
    pub crop_scale: (f64, f64),
    pub flip_probability: f64,
    pub brightness: (f64, f64),
    pub saturation: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            crop_scale: (0.6, 1.0),
            flip_probability: 0.5,
            brightness: (0.8, 1.2),
            saturation: (0.8, 1.2),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self { enabled: false, ..Self::default() }
    }
}

/// One realization of the random augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub scale: f64,
    pub crop: (usize, usize, usize, usize),
    pub flip: bool,
    pub brightness: f64,
    pub saturation: f64,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let (lo, hi) = cfg.crop_scale;
        let (scale, cw, ch) = loop {
            let s = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            let cw = (s * width as f64).round() as usize;
            let ch = (s * height as f64).round() as usize;
            if (1..=width).contains(&cw) && (1..=height).contains(&ch) {
                break (s, cw, ch);
            }
            if s <= 0.0 {
                break (1.0, width, height);
            }
        };
        let x0 = rng.random_range(0..=width - cw);
        let y0 = rng.random_range(0..=height - ch);
        let flip = rng.random_bool(cfg.flip_probability);
        let brightness = rng.random_range(cfg.brightness.0..=cfg.brightness.1);
        let saturation = rng.random_range(cfg.saturation.0..=cfg.saturation.1);
        Self { scale, crop: (x0, y0, cw, ch), flip, brightness, saturation }
    }

    pub fn apply<T: Real>(&self, pair: &SamplePair<T>) -> Result<SamplePair<T>> {
        let (x0, y0, w, h) = self.crop;
        let mut input = pair.input.crop(x0, y0, w, h)?;
        let mut target = pair.target.crop(x0, y0, w, h)?;
        if self.flip {
            input = input.flipped_horizontal();
            target = target.flipped_horizontal();
        }
        jitter(&mut input, self.brightness, self.saturation);
        SamplePair::new(input, target)
    }
}

/// Scales brightness, then interpolates each pixel from its Rec.601 gray
/// value by `saturation`; clamps to `[0, 1]`.
pub fn jitter<T: Real>(image: &mut ImageBuffer<T>, brightness: f64, saturation: f64) {
    let (b, s) = (T::of(brightness), T::of(saturation));
    let (wr, wg, wb) = (T::of(0.299), T::of(0.587), T::of(0.114));
    for px in image.data_mut().chunks_exact_mut(3) {
        let [r, g, bl] = [px[0] * b, px[1] * b, px[2] * b];
        let gray = wr * r + wg * g + wb * bl;
        for (dst, v) in px.iter_mut().zip([r, g, bl]) {
            *dst = (gray + s * (v - gray)).max(T::zero()).min(T::one());
        }
    }
}

pub fn augment<T: Real, R: Rng + ?Sized>(pair: &SamplePair<T>, cfg: &AugmentConfig, rng: &mut R) -> Result<SamplePair<T>> {
    if !cfg.enabled {
        return Ok(pair.clone());
    }
    let draw = AugmentDraw::sample(cfg, pair.input.width(), pair.input.height(), rng);
    draw.apply(pair)
}
