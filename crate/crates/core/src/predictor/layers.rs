//! Building blocks of the weight predictor, each with a handwritten
//! backward pass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const KERNEL: usize = 3;
pub const TAPS: usize = KERNEL * KERNEL;
pub const DEFAULT_NEGATIVE_SLOPE: f64 = 0.2;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

/// Planar `channels × height × width` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!("feature map {channels}x{height}x{width} has an empty dimension")));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "feature map {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Self { channels, height, width, data })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, data: vec![T::zero(); channels * height * width] }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
}

/// Weights of one 3×3, stride-2, pad-1 convolution followed by a leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out × in × 3 × 3`, row-major.
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub negative_slope: T,
}

impl<T: Real> ConvBlockParams<T> {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: vec![T::zero(); out_channels * in_channels * TAPS],
            bias: vec![T::zero(); out_channels],
            negative_slope: T::of(DEFAULT_NEGATIVE_SLOPE),
        }
    }

    pub fn param_count(&self) -> usize {
        self.kernel.len() + self.bias.len()
    }

    fn patch_len(&self) -> usize {
        self.in_channels * TAPS
    }
}

/// Saved state of a convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvCache<T> {
    input_shape: (usize, usize, usize),
    /// im2col matrix, `(in·9) × (out_h·out_w)`.
    columns: Vec<T>,
}

pub struct ConvGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub input: Option<FeatureMap<T>>,
}

fn im2col<T: Real>(input: &FeatureMap<T>, oh: usize, ow: usize) -> Vec<T> {
    let (c_in, h, w) = input.shape();
    let p = oh * ow;
    let mut cols = vec![T::zero(); c_in * TAPS * p];
    for c in 0..c_in {
        let src = input.channel(c);
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((c * TAPS) + ky * KERNEL + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = &src[iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            *d = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], shape: (usize, usize, usize), oh: usize, ow: usize) -> FeatureMap<T> {
    let (c_in, h, w) = shape;
    let p = oh * ow;
    let mut out = FeatureMap::zeros(c_in, h, w);
    for c in 0..c_in {
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((c * TAPS) + ky * KERNEL + kx) * p..][..p];
                for oy in 0..oh {
                    let iy = (2 * oy + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let d = &mut dst[iy as usize * w..][..w];
                    for ox in 0..ow {
                        let ix = (2 * ox + kx) as isize - 1;
                        if ix >= 0 && ix < w as isize {
                            d[ix as usize] += row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 3×3 convolution with stride 2 and zero padding 1. Even inputs halve:
/// `H × W → H/2 × W/2`.
pub fn conv2d_s2<T: Real>(input: &FeatureMap<T>, params: &ConvBlockParams<T>) -> Result<(FeatureMap<T>, ConvCache<T>)> {
    let (c_in, h, w) = input.shape();
    if c_in != params.in_channels {
        return Err(Error::Shape(format!("conv expects {} input channels, got {c_in}", params.in_channels)));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("conv input must have even size, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let p = oh * ow;
    let columns = im2col(input, oh, ow);
    let mut out = vec![T::zero(); params.out_channels * p];
    for (o, b) in params.bias.iter().enumerate() {
        out[o * p..(o + 1) * p].fill(*b);
    }
    T::gemm(params.out_channels, params.patch_len(), p, &params.kernel, false, &columns, false, T::one(), &mut out);
    Ok((
        FeatureMap { channels: params.out_channels, height: oh, width: ow, data: out },
        ConvCache { input_shape: input.shape(), columns },
    ))
}

/// Gradients of [`conv2d_s2`]. The input gradient is skipped when
/// `need_input` is false (first layer).
pub fn conv2d_s2_backward<T: Real>(
    params: &ConvBlockParams<T>,
    cache: &ConvCache<T>,
    upstream: &FeatureMap<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let (oh, ow) = (upstream.height, upstream.width);
    let p = oh * ow;
    let k = params.patch_len();
    let oc = params.out_channels;
    let mut kernel = vec![T::zero(); oc * k];
    T::gemm(oc, p, k, &upstream.data, false, &cache.columns, true, T::zero(), &mut kernel);
    let bias = (0..oc).map(|o| upstream.channel(o).iter().copied().sum()).collect();
    let input = need_input.then(|| {
        let mut dcols = vec![T::zero(); k * p];
        T::gemm(k, oc, p, &params.kernel, true, &upstream.data, false, T::zero(), &mut dcols);
        col2im(&dcols, cache.input_shape, oh, ow)
    });
    ConvGrads { kernel, bias, input }
}

#[inline]
pub fn leaky_relu<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

#[inline]
pub fn leaky_relu_grad<T: Real>(x: T, slope: T) -> T {
    if x >= T::zero() {
        T::one()
    } else {
        slope
    }
}

pub fn leaky_relu_inplace<T: Real>(x: &mut [T], slope: T) {
    x.iter_mut().for_each(|v| *v = leaky_relu(*v, slope));
}

/// Multiplies `upstream` by the activation derivative. `activated` may be
/// either the pre- or post-activation values since a positive slope keeps
/// the sign.
pub fn leaky_relu_backward<T: Real>(activated: &[T], upstream: &mut [T], slope: T) {
    for (g, x) in upstream.iter_mut().zip(activated) {
        *g *= leaky_relu_grad(*x, slope);
    }
}

/// Per-channel normalization without affine parameters. Returns the output
/// and `1/√(var + ε)` for each channel.
pub fn instance_norm<T: Real>(x: &FeatureMap<T>) -> Result<(FeatureMap<T>, Vec<T>)> {
    let n = x.plane();
    if n < 2 {
        return Err(Error::Shape("instance norm needs at least 2 values per channel".into()));
    }
    let mut out = x.clone();
    let mut inv_std = Vec::with_capacity(x.channels);
    for c in 0..x.channels {
        let src = x.channel(c);
        let mean = src.iter().map(|v| v.to_f64_lossless()).sum::<f64>() / n as f64;
        let var = src.iter().map(|v| (v.to_f64_lossless() - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        let (m, s) = (T::of(mean), T::of(inv));
        for v in &mut out.data[c * n..(c + 1) * n] {
            *v = (*v - m) * s;
        }
        inv_std.push(s);
    }
    Ok((out, inv_std))
}

/// `dx = σ⁻¹ (dy − mean(dy) − y · mean(dy · y))` per channel.
pub fn instance_norm_backward<T: Real>(normalized: &FeatureMap<T>, inv_std: &[T], upstream: &mut FeatureMap<T>) {
    let n = normalized.plane();
    for (c, &s) in inv_std.iter().enumerate().take(normalized.channels) {
        let y = normalized.channel(c);
        let g = &mut upstream.data[c * n..(c + 1) * n];
        let mean_g = g.iter().map(|v| v.to_f64_lossless()).sum::<f64>() / n as f64;
        let mean_gy = g.iter().zip(y).map(|(a, b)| a.to_f64_lossless() * b.to_f64_lossless()).sum::<f64>() / n as f64;
        let (mg, mgy) = (T::of(mean_g), T::of(mean_gy));
        for (gv, yv) in g.iter_mut().zip(y) {
            *gv = s * (*gv - mg - *yv * mgy);
        }
    }
}

/// Inverted-dropout keep mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<bool>,
    rate: f64,
}

impl DropoutMask {
    pub fn sample<R: Rng + ?Sized>(len: usize, rate: f64, rng: &mut R) -> Self {
        Self { keep: (0..len).map(|_| !rng.random_bool(rate)).collect(), rate }
    }

    pub fn all_keep(len: usize, rate: f64) -> Self {
        Self { keep: vec![true; len], rate }
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    /// Zeroes dropped units and scales survivors by `1/(1 − rate)`. The same
    /// call is the backward pass.
    pub fn apply<T: Real>(&self, x: &mut [T]) {
        assert_eq!(x.len(), self.keep.len());
        let scale = T::of(1.0 / (1.0 - self.rate));
        for (v, k) in x.iter_mut().zip(&self.keep) {
            *v = if *k { *v * scale } else { T::zero() };
        }
    }
}

/// Fully connected head: `out_n = ⟨kernel_n, x⟩ + bias_n`, no activation.
pub fn fc_forward<T: Real>(x: &[T], kernel: &[T], bias: &[T]) -> Result<Vec<T>> {
    let n = bias.len();
    if kernel.len() != n * x.len() {
        return Err(Error::Shape(format!(
            "fc kernel has {} values, expected {n}×{}",
            kernel.len(),
            x.len()
        )));
    }
    Ok(kernel
        .chunks_exact(x.len())
        .zip(bias)
        .map(|(row, b)| {
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w.to_f64_lossless() * v.to_f64_lossless()).sum();
            T::of(dot) + *b
        })
        .collect())
}

pub struct FcGrads<T> {
    pub kernel: Vec<T>,
    pub bias: Vec<T>,
    pub input: Vec<T>,
}

pub fn fc_backward<T: Real>(x: &[T], kernel: &[T], upstream: &[T]) -> FcGrads<T> {
    let len = x.len();
    let mut dk = Vec::with_capacity(kernel.len());
    let mut dx = vec![T::zero(); len];
    for (row, g) in kernel.chunks_exact(len).zip(upstream) {
        dk.extend(x.iter().map(|v| *g * *v));
        for (d, w) in dx.iter_mut().zip(row) {
            *d += *g * *w;
        }
    }
    FcGrads { kernel: dk, bias: upstream.to_vec(), input: dx }
}
