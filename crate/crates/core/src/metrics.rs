//! Full-reference quality metrics: PSNR, SSIM and CIE76 ΔE*ab.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// dB, `f64::INFINITY` for identical images.
    pub psnr: f64,
    pub ssim: f64,
    pub delta_e: f64,
}

impl MetricReport {
    pub fn compute<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<Self> {
        Ok(Self { psnr: psnr(a, b)?, ssim: ssim(a, b)?, delta_e: delta_e(a, b)? })
    }

    /// Averages reports; a single infinite PSNR makes the mean infinite.
    pub fn mean(reports: &[MetricReport]) -> Option<MetricReport> {
        if reports.is_empty() {
            return None;
        }
        let n = reports.len() as f64;
        Some(MetricReport {
            psnr: reports.iter().map(|r| r.psnr).sum::<f64>() / n,
            ssim: reports.iter().map(|r| r.ssim).sum::<f64>() / n,
            delta_e: reports.iter().map(|r| r.delta_e).sum::<f64>() / n,
        })
    }
}

/// Formats a PSNR value, printing `inf` for the identical-image sentinel.
pub fn format_psnr(db: f64) -> String {
    if db.is_infinite() {
        "inf".to_string()
    } else {
        format!("{db:.4}")
    }
}

pub fn mse<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    a.same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.to_f64_lossless() - y.to_f64_lossless();
            d * d
        })
        .sum();
    Ok(sum / a.data().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Peak signal-to-noise ratio for a peak value of 1.0, over all channels.
pub fn psnr<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 1.0) * (0.01 * 1.0);
const SSIM_C2: f64 = (0.03 * 1.0) * (0.03 * 1.0);

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut taps = std::array::from_fn(|i| {
        let x = i as f64 - r;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

fn luma<T: Real>(img: &ImageBuffer<T>) -> Vec<f64> {
    img.pixels()
        .map(|[r, g, b]| 0.299 * r.to_f64_lossless() + 0.587 * g.to_f64_lossless() + 0.114 * b.to_f64_lossless())
        .collect()
}

/// Separable Gaussian filter over valid positions only:
/// output is `(w − 10) × (h − 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|t| taps[t] * horiz[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale SSIM on Rec.601 luma with an 11×11 Gaussian window
/// (σ = 1.5), averaged over every window position fully inside the image.
pub fn ssim<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    a.same_dims(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h, min: SSIM_WINDOW });
    }
    let taps = gaussian_taps();
    let ya = luma(a);
    let yb = luma(b);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&ya, w, h, &taps);
    let mu_b = filter_valid(&yb, w, h, &taps);
    let aa = filter_valid(&prod(&ya, &ya), w, h, &taps);
    let bb = filter_valid(&prod(&yb, &yb), w, h, &taps);
    let ab = filter_valid(&prod(&ya, &yb), w, h, &taps);
    let n = mu_a.len();
    let mut sum = 0.0;
    for p in 0..n {
        let (ma, mb) = (mu_a[p], mu_b[p]);
        let va = aa[p] - ma * ma;
        let vb = bb[p] - mb * mb;
        let cov = ab[p] - ma * mb;
        sum += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
            / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    Ok(sum / n as f64)
}

/// IEC 61966-2-1 decoding.
pub fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// D65 reference white, taken as the image of linear white under
/// `RGB_TO_XYZ` so that white maps to L* = 100, a* = b* = 0.
const WHITE: [f64; 3] = [
    RGB_TO_XYZ[0][0] + RGB_TO_XYZ[0][1] + RGB_TO_XYZ[0][2],
    RGB_TO_XYZ[1][0] + RGB_TO_XYZ[1][1] + RGB_TO_XYZ[1][2],
    RGB_TO_XYZ[2][0] + RGB_TO_XYZ[2][1] + RGB_TO_XYZ[2][2],
];

fn lab_f(t: f64) -> f64 {
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if t > EPS {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// sRGB-encoded color in `[0, 1]` to CIELAB under D65.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(|v| srgb_to_linear(v.clamp(0.0, 1.0)));
    let xyz: [f64; 3] = std::array::from_fn(|r| (0..3).map(|c| RGB_TO_XYZ[r][c] * lin[c]).sum());
    let f: [f64; 3] = std::array::from_fn(|i| lab_f(xyz[i] / WHITE[i]));
    [116.0 * f[1] - 16.0, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

pub fn delta_e76(a: [f64; 3], b: [f64; 3]) -> f64 {
    let la = srgb_to_lab(a);
    let lb = srgb_to_lab(b);
    ((la[0] - lb[0]).powi(2) + (la[1] - lb[1]).powi(2) + (la[2] - lb[2]).powi(2)).sqrt()
}

/// Mean CIE76 ΔE*ab over pixels.
pub fn delta_e<T: Real>(a: &ImageBuffer<T>, b: &ImageBuffer<T>) -> Result<f64> {
    a.same_dims(b)?;
    let to64 = |p: [T; 3]| p.map(|v| v.to_f64_lossless());
    let sum: f64 = a.pixels().zip(b.pixels()).map(|(p, q)| delta_e76(to64(p), to64(q))).sum();
    Ok(sum / a.pixel_count() as f64)
}
