use crate::image::ImageBuffer;
use crate::predictor::layers::FeatureMap;
use crate::scalar::Real;

/// Source taps `(lo, hi, t)` for each output position along one axis, using
/// half-pixel centers (`align_corners = false`) clamped at the borders.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (x.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, x - lo as f64)
        })
        .collect()
}

/// Bilinear resampling to `width × height`. Constant images stay constant
/// and a same-size resample returns the input unchanged.
pub fn downsample_bilinear<T: Real>(image: &ImageBuffer<T>, width: usize, height: usize) -> ImageBuffer<T> {
    if image.width() == width && image.height() == height {
        return image.clone();
    }
    let xs = axis_taps(image.width(), width);
    let ys = axis_taps(image.height(), height);
    let src = image.data();
    let sw = image.width();
    let mut out = Vec::with_capacity(width * height * 3);
    for &(y0, y1, ty) in &ys {
        let ty = T::of(ty);
        for &(x0, x1, tx) in &xs {
            let tx = T::of(tx);
            for c in 0..3 {
                let at = |x: usize, y: usize| src[(y * sw + x) * 3 + c];
                let top = at(x0, y0) + tx * (at(x1, y0) - at(x0, y0));
                let bottom = at(x0, y1) + tx * (at(x1, y1) - at(x0, y1));
                out.push(top + ty * (bottom - top));
            }
        }
    }
    ImageBuffer::from_raw(width, height, out)
}

/// Interleaved RGB to a planar 3-channel feature map.
pub fn to_feature_map<T: Real>(image: &ImageBuffer<T>) -> FeatureMap<T> {
    let (w, h) = (image.width(), image.height());
    let mut data = vec![T::zero(); 3 * w * h];
    for (p, px) in image.data().chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + p] = px[c];
        }
    }
    FeatureMap { channels: 3, height: h, width: w, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Reference sampler: the same resampling written as an explicit
    /// interpolation-matrix product `Ry · X · Rxᵀ` per channel, in f64.
    fn reference(img: &ImageBuffer<f64>, w: usize, h: usize) -> Vec<f64> {
        let matrix = |src: usize, dst: usize| {
            let mut m = vec![vec![0.0; src]; dst];
            for (o, row) in m.iter_mut().enumerate() {
                let x = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = x.floor() as usize;
                let t = x - lo as f64;
                row[lo] += 1.0 - t;
                if t > 0.0 {
                    row[lo + 1] += t;
                }
            }
            m
        };
        let rx = matrix(img.width(), w);
        let ry = matrix(img.height(), h);
        let mut out = vec![0.0; w * h * 3];
        for c in 0..3 {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = 0.0;
                    for (sy, wy) in ry[oy].iter().enumerate() {
                        if *wy == 0.0 {
                            continue;
                        }
                        for (sx, wx) in rx[ox].iter().enumerate() {
                            if *wx != 0.0 {
                                acc += wy * wx * img.pixel(sx, sy)[c];
                            }
                        }
                    }
                    out[(oy * w + ox) * 3 + c] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn same_size_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = ImageBuffer::<f32>::from_fn(256, 256, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        assert_eq!(downsample_bilinear(&img, 256, 256), img);
    }

    #[test]
    fn constants_are_preserved() {
        for (w, h) in [(1, 1), (3, 700), (513, 97), (64, 64)] {
            let img = ImageBuffer::<f32>::filled(w, h, [0.3; 3]).unwrap();
            let out = downsample_bilinear(&img, 256, 256);
            assert!(out.data().iter().all(|v| *v == 0.3), "{w}x{h}");
        }
    }

    #[test]
    fn checkerboard_matches_reference_sampler() {
        let img = ImageBuffer::<f64>::from_fn(512, 512, |x, y| {
            let v = ((x / 3 + y / 5) % 2) as f64;
            [v, 1.0 - v, 0.25 + 0.5 * v]
        })
        .unwrap();
        let out = downsample_bilinear(&img, 256, 256);
        let want = reference(&img, 256, 256);
        let max = out.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max < 1e-6, "{max}");
        assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn upsampling_matches_reference_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = ImageBuffer::<f64>::from_fn(7, 5, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let out = downsample_bilinear(&img, 16, 12);
        let want = reference(&img, 16, 12);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
