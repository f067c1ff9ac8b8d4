//! 3D lookup tables: lattice lookup, trilinear interpolation and its
//! gradient, weighted fusion of several tables, and parallel application to
//! whole images.
//!
//! # Lattice layout
//!
//! A table of size `M` stores `3·M³` output values. Entries are
//! channel-major: the red plane first, then green, then blue. Within a plane
//! the index is `(i·M + j)·M + k`, so `k` (the blue input axis) varies
//! fastest. Lattice point `(i, j, k)` is indexed by the input color
//! `(i·s, j·s, k·s)` with `s = 1/(M−1)`, which puts an input of `1.0` on the
//! last lattice point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::scalar::Real;

pub const DEFAULT_LATTICE: usize = 33;

#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D<T = f32> {
    size: usize,
    entries: Vec<T>,
}

impl<T: Real> Lut3D<T> {
    fn check_size(size: usize) -> Result<()> {
        if size < 2 {
            return Err(Error::LatticeTooSmall(size));
        }
        Ok(())
    }

    pub fn from_entries(size: usize, entries: Vec<T>) -> Result<Self> {
        Self::check_size(size)?;
        let want = 3 * size * size * size;
        if entries.len() != want {
            return Err(Error::Shape(format!(
                "lattice of size {size} needs {want} entries, got {}",
                entries.len()
            )));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("LUT entries"));
        }
        Ok(Self { size, entries })
    }

    /// Same-shape buffer that may hold non-finite values (gradients).
    pub(crate) fn like(other: &Self, entries: Vec<T>) -> Self {
        debug_assert_eq!(entries.len(), other.entries.len());
        Self { size: other.size, entries }
    }

    /// Builds a table from the output color at every lattice point.
    pub fn from_fn(size: usize, mut f: impl FnMut(usize, usize, usize) -> [T; 3]) -> Result<Self> {
        Self::check_size(size)?;
        let plane = size * size * size;
        let mut entries = vec![T::zero(); 3 * plane];
        for i in 0..size {
            for j in 0..size {
                for k in 0..size {
                    let o = (i * size + j) * size + k;
                    let rgb = f(i, j, k);
                    for c in 0..3 {
                        entries[c * plane + o] = rgb[c];
                    }
                }
            }
        }
        Self::from_entries(size, entries)
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::check_size(size)?;
        let cells = (size - 1) as f64;
        let at = |n: usize| T::of(n as f64 / cells);
        Self::from_fn(size, |i, j, k| [at(i), at(j), at(k)])
    }

    pub fn zeros(size: usize) -> Result<Self> {
        Self::constant(size, T::zero())
    }

    pub fn constant(size: usize, value: T) -> Result<Self> {
        Self::check_size(size)?;
        Self::from_entries(size, vec![value; 3 * size * size * size])
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Lattice spacing in input units, `1/(M−1)`.
    pub fn step(&self) -> f64 {
        1.0 / (self.size - 1) as f64
    }

    pub fn param_count(&self) -> usize {
        self.entries.len()
    }

    pub fn plane_len(&self) -> usize {
        self.size * self.size * self.size
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// Mutable access for optimizers. Callers must keep entries finite.
    pub fn entries_mut(&mut self) -> &mut [T] {
        &mut self.entries
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane_len();
        &self.entries[c * p..(c + 1) * p]
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize, k: usize) -> usize {
        c * self.plane_len() + (i * self.size + j) * self.size + k
    }

    pub fn get(&self, c: usize, i: usize, j: usize, k: usize) -> T {
        self.entries[self.index(c, i, j, k)]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, k: usize, value: T) {
        let idx = self.index(c, i, j, k);
        self.entries[idx] = value;
    }

    pub fn output_at(&self, i: usize, j: usize, k: usize) -> [T; 3] {
        [self.get(0, i, j, k), self.get(1, i, j, k), self.get(2, i, j, k)]
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Lut3D<U> {
        Lut3D {
            size: self.size,
            entries: self.entries.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }

    /// Transforms a single color; see [`trilinear_forward`].
    pub fn lookup(&self, color: [T; 3]) -> Result<[T; 3]> {
        trilinear_forward(self, color)
    }
}

/// Position of an input color inside the lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellLocation<T = f32> {
    /// Lower corner `(i, j, k)`, each in `[0, M−2]`.
    pub base: [usize; 3],
    /// Fractional offsets `(d_x, d_y, d_z)`, each in `[0, 1]`.
    pub frac: [T; 3],
}

impl<T: Real> CellLocation<T> {
    /// Trilinear weights of the 8 cell corners. Corner `n` sits at
    /// `base + (n & 1, (n >> 1) & 1, (n >> 2) & 1)`.
    pub fn weights(&self) -> [T; 8] {
        let [dx, dy, dz] = self.frac;
        let one = T::one();
        let wx = [one - dx, dx];
        let wy = [one - dy, dy];
        let wz = [one - dz, dz];
        std::array::from_fn(|n| wx[n & 1] * wy[(n >> 1) & 1] * wz[(n >> 2) & 1])
    }

    /// Offsets of the 8 corners within one channel plane, same order as
    /// [`weights`](Self::weights).
    pub fn corner_offsets(&self, size: usize) -> [usize; 8] {
        let [i, j, k] = self.base;
        let o = (i * size + j) * size + k;
        let si = size * size;
        std::array::from_fn(|n| o + (n & 1) * si + ((n >> 1) & 1) * size + ((n >> 2) & 1))
    }
}

#[inline(always)]
fn axis<T: Real>(v: T, cells: usize) -> (usize, T) {
    let coord = v.max(T::zero()).min(T::one()) * T::of(cells as f64);
    // `coord` lies in [0, cells]; an input of exactly 1.0 lands in the last
    // cell with offset 1.
    let base = coord.floor().to_usize().unwrap_or(0).min(cells - 1);
    (base, coord - T::of(base as f64))
}

#[inline(always)]
fn locate_clamped<T: Real>(color: [T; 3], size: usize) -> CellLocation<T> {
    let cells = size - 1;
    let (i, dx) = axis(color[0], cells);
    let (j, dy) = axis(color[1], cells);
    let (k, dz) = axis(color[2], cells);
    CellLocation { base: [i, j, k], frac: [dx, dy, dz] }
}

/// Finds the lattice cell containing `color`. Components outside `[0, 1]`
/// are clamped; non-finite components are rejected.
pub fn locate<T: Real>(color: [T; 3], size: usize) -> Result<CellLocation<T>> {
    if size < 2 {
        return Err(Error::LatticeTooSmall(size));
    }
    for (index, v) in color.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidColor { index, value: v.to_f64_lossless() });
        }
    }
    Ok(locate_clamped(color, size))
}

#[inline(always)]
fn lerp<T: Real>(a: T, b: T, t: T) -> T {
    a + t * (b - a)
}

/// Nested-lerp evaluation of the 8-corner weighted sum. It is algebraically
/// identical to summing `weights()[n] · corner[n]`, and it reproduces the
/// identity table bit-exactly whenever `M − 1` is a power of two.
#[inline(always)]
fn interpolate_plane<T: Real>(plane: &[T], offsets: &[usize; 8], frac: [T; 3]) -> T {
    let [dx, dy, dz] = frac;
    let v = |n: usize| plane[offsets[n]];
    let c00 = lerp(v(0), v(1), dx);
    let c10 = lerp(v(2), v(3), dx);
    let c01 = lerp(v(4), v(5), dx);
    let c11 = lerp(v(6), v(7), dx);
    let c0 = lerp(c00, c10, dy);
    let c1 = lerp(c01, c11, dy);
    lerp(c0, c1, dz)
}

#[inline(always)]
fn sample<T: Real>(lut: &Lut3D<T>, loc: &CellLocation<T>) -> [T; 3] {
    let offsets = loc.corner_offsets(lut.size);
    std::array::from_fn(|c| interpolate_plane(lut.channel(c), &offsets, loc.frac))
}

pub fn trilinear_forward<T: Real>(lut: &Lut3D<T>, color: [T; 3]) -> Result<[T; 3]> {
    let loc = locate(color, lut.size)?;
    Ok(sample(lut, &loc))
}

/// Gradient of one interpolated color with respect to the lattice: for each
/// channel, 8 entries receive `upstream[c] · weight`.
#[derive(Debug, Clone, PartialEq)]
pub struct CornerGrads<T> {
    /// Flat indices into [`Lut3D::entries`], per channel and corner.
    pub indices: [[usize; 8]; 3],
    pub values: [[T; 8]; 3],
}

impl<T: Real> CornerGrads<T> {
    pub fn accumulate_into(&self, grad: &mut [T]) {
        for c in 0..3 {
            for n in 0..8 {
                grad[self.indices[c][n]] += self.values[c][n];
            }
        }
    }
}

pub fn trilinear_backward<T: Real>(lut: &Lut3D<T>, color: [T; 3], upstream: [T; 3]) -> Result<CornerGrads<T>> {
    let loc = locate(color, lut.size)?;
    let w = loc.weights();
    let offsets = loc.corner_offsets(lut.size);
    let plane = lut.plane_len();
    Ok(CornerGrads {
        indices: std::array::from_fn(|c| std::array::from_fn(|n| c * plane + offsets[n])),
        values: std::array::from_fn(|c| std::array::from_fn(|n| upstream[c] * w[n])),
    })
}

/// One scalar weight per basis LUT.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<T = f32>(Vec<T>);

impl<T: Real> FusionWeights<T> {
    pub fn new(weights: Vec<T>) -> Result<Self> {
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::NonFinite("fusion weights"));
        }
        Ok(Self(weights))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![T::one(); n])
    }

    /// `[1, 0, …, 0]`-style weights selecting basis `index`.
    pub fn one_hot(n: usize, index: usize) -> Self {
        Self((0..n).map(|i| if i == index { T::one() } else { T::zero() }).collect())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest weight (first one on ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.0.iter().enumerate() {
            if *w > self.0[best] {
                best = i;
            }
        }
        best
    }
}

fn check_basis<T: Real>(luts: &[Lut3D<T>], weights: usize) -> Result<usize> {
    let first = luts.first().ok_or(Error::EmptyFusion)?;
    for lut in &luts[1..] {
        if lut.size != first.size {
            return Err(Error::LatticeSizeMismatch { expected: first.size, found: lut.size });
        }
    }
    if weights != luts.len() {
        return Err(Error::WeightCountMismatch { expected: luts.len(), found: weights });
    }
    Ok(first.size)
}

/// Entry-wise linear combination `Σ_n w_n · lut_n`.
pub fn fuse<T: Real>(luts: &[Lut3D<T>], weights: &FusionWeights<T>) -> Result<Lut3D<T>> {
    let size = check_basis(luts, weights.len())?;
    let mut entries = vec![T::zero(); luts[0].entries.len()];
    for (lut, &w) in luts.iter().zip(weights.as_slice()) {
        for (out, &v) in entries.iter_mut().zip(&lut.entries) {
            *out += w * v;
        }
    }
    if !entries.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("fused LUT"));
    }
    Ok(Lut3D { size, entries })
}

/// Chain rule through [`fuse`]: `∂L/∂w_n = ⟨∂L/∂fused, lut_n⟩`.
pub fn fusion_weight_gradient<T: Real>(luts: &[Lut3D<T>], fused_grad: &[T]) -> Result<Vec<T>> {
    check_basis(luts, luts.len())?;
    if fused_grad.len() != luts[0].entries.len() {
        return Err(Error::Shape(format!(
            "fused gradient has {} values, LUT has {}",
            fused_grad.len(),
            luts[0].entries.len()
        )));
    }
    Ok(luts
        .iter()
        .map(|lut| {
            let dot: f64 = lut
                .entries
                .iter()
                .zip(fused_grad)
                .map(|(v, g)| v.to_f64_lossless() * g.to_f64_lossless())
                .sum();
            T::of(dot)
        })
        .collect())
}

/// Applies `lut` to every pixel. Rows are distributed over the current rayon
/// pool; each output pixel depends only on its input pixel, so the result
/// does not depend on the thread count.
pub fn apply<T: Real>(lut: &Lut3D<T>, image: &ImageBuffer<T>) -> ImageBuffer<T> {
    let row_len = image.width() * 3;
    let mut out = vec![T::zero(); image.data().len()];
    out.par_chunks_mut(row_len)
        .zip(image.data().par_chunks(row_len))
        .for_each(|(dst, src)| apply_row(lut, src, dst));
    ImageBuffer::from_raw(image.width(), image.height(), out)
}

/// Single-threaded [`apply`], used inside the training step.
pub fn apply_serial<T: Real>(lut: &Lut3D<T>, image: &ImageBuffer<T>) -> ImageBuffer<T> {
    let mut out = vec![T::zero(); image.data().len()];
    apply_row(lut, image.data(), &mut out);
    ImageBuffer::from_raw(image.width(), image.height(), out)
}

#[inline]
fn apply_row<T: Real>(lut: &Lut3D<T>, src: &[T], dst: &mut [T]) {
    let size = lut.size;
    let (r, rest) = lut.entries.split_at(lut.plane_len());
    let (g, b) = rest.split_at(lut.plane_len());
    for (s, d) in src.chunks_exact(3).zip(dst.chunks_exact_mut(3)) {
        let loc = locate_clamped([s[0], s[1], s[2]], size);
        let offsets = loc.corner_offsets(size);
        d[0] = interpolate_plane(r, &offsets, loc.frac);
        d[1] = interpolate_plane(g, &offsets, loc.frac);
        d[2] = interpolate_plane(b, &offsets, loc.frac);
    }
}

/// Accumulates `∂L/∂entries` for `output = apply(lut, image)` given the
/// per-pixel upstream gradient (interleaved like the image).
pub fn apply_backward<T: Real>(lut: &Lut3D<T>, image: &ImageBuffer<T>, upstream: &[T]) -> Result<Vec<T>> {
    if upstream.len() != image.data().len() {
        return Err(Error::Shape(format!(
            "upstream gradient has {} values, image has {}",
            upstream.len(),
            image.data().len()
        )));
    }
    let size = lut.size;
    let plane = lut.plane_len();
    let mut grad = vec![T::zero(); lut.entries.len()];
    for (s, up) in image.data().chunks_exact(3).zip(upstream.chunks_exact(3)) {
        let loc = locate_clamped([s[0], s[1], s[2]], size);
        let w = loc.weights();
        let offsets = loc.corner_offsets(size);
        for c in 0..3 {
            let g = &mut grad[c * plane..(c + 1) * plane];
            for n in 0..8 {
                g[offsets[n]] += up[c] * w[n];
            }
        }
    }
    Ok(grad)
}

/// Production inference: fuse once, interpolate once.
pub fn apply_adaptive<T: Real>(
    luts: &[Lut3D<T>],
    image: &ImageBuffer<T>,
    weights: &FusionWeights<T>,
) -> Result<ImageBuffer<T>> {
    let fused = fuse(luts, weights)?;
    Ok(apply(&fused, image))
}

/// Reference path that transforms the image with every basis LUT and then
/// blends the outputs. Equal to [`apply_adaptive`] up to round-off because
/// interpolation is linear in the entries.
pub fn apply_weighted_outputs<T: Real>(
    luts: &[Lut3D<T>],
    image: &ImageBuffer<T>,
    weights: &FusionWeights<T>,
) -> Result<ImageBuffer<T>> {
    check_basis(luts, weights.len())?;
    let mut out = vec![T::zero(); image.data().len()];
    for (lut, &w) in luts.iter().zip(weights.as_slice()) {
        let q = apply(lut, image);
        for (o, v) in out.iter_mut().zip(q.data()) {
            *o += w * *v;
        }
    }
    ImageBuffer::new(image.width(), image.height(), out)
}

/// Scene-classifier style baseline: use only the basis LUT with the largest
/// weight.
pub fn apply_hard_selection<T: Real>(
    luts: &[Lut3D<T>],
    image: &ImageBuffer<T>,
    weights: &FusionWeights<T>,
) -> Result<ImageBuffer<T>> {
    check_basis(luts, weights.len())?;
    Ok(apply(&luts[weights.argmax()], image))
}
