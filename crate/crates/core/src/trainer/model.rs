use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lut::{self, FusionWeights, Lut3D};
use crate::predictor::{FcInit, PredictorParams};
use crate::scalar::Real;

/// Basis LUTs plus the optional weight predictor. Without a predictor every
/// basis weight is pinned to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveModel<T = f32> {
    pub luts: Vec<Lut3D<T>>,
    pub predictor: Option<PredictorParams<T>>,
}

impl<T: Real> AdaptiveModel<T> {
    /// Basis 1 is the identity, the rest are zero maps; the predictor's FC
    /// bias is 1, so with [`FcInit::Zero`] the initial model reproduces its
    /// input exactly.
    pub fn new<R: Rng + ?Sized>(num_luts: usize, lattice: usize, fc: FcInit, rng: &mut R) -> Result<Self> {
        let mut model = Self::without_predictor(num_luts, lattice)?;
        model.predictor = Some(PredictorParams::init(num_luts, fc, rng));
        Ok(model)
    }

    pub fn without_predictor(num_luts: usize, lattice: usize) -> Result<Self> {
        if num_luts == 0 {
            return Err(Error::Config("model needs at least one basis LUT".into()));
        }
        let mut luts = vec![Lut3D::identity(lattice)?];
        for _ in 1..num_luts {
            luts.push(Lut3D::zeros(lattice)?);
        }
        Ok(Self { luts, predictor: None })
    }

    pub fn from_parts(luts: Vec<Lut3D<T>>, predictor: Option<PredictorParams<T>>) -> Result<Self> {
        let first = luts.first().ok_or(Error::EmptyFusion)?;
        if let Some(l) = luts.iter().find(|l| l.size() != first.size()) {
            return Err(Error::LatticeSizeMismatch { expected: first.size(), found: l.size() });
        }
        if let Some(p) = &predictor {
            if p.outputs() != luts.len() {
                return Err(Error::WeightCountMismatch { expected: luts.len(), found: p.outputs() });
            }
        }
        Ok(Self { luts, predictor })
    }

    pub fn num_luts(&self) -> usize {
        self.luts.len()
    }

    pub fn lattice(&self) -> usize {
        self.luts[0].size()
    }

    pub fn param_count(&self) -> usize {
        self.luts.iter().map(|l| l.param_count()).sum::<usize>()
            + self.predictor.as_ref().map_or(0, |p| p.param_count())
    }

    pub fn is_finite(&self) -> bool {
        self.luts.iter().all(|l| l.is_finite()) && self.predictor.as_ref().is_none_or(|p| p.is_finite())
    }

    /// Eval-mode fusion weights for `image`.
    pub fn weights_for(&self, image: &ImageBuffer<T>) -> Result<FusionWeights<T>> {
        match &self.predictor {
            Some(p) => p.predict(image),
            None => Ok(FusionWeights::ones(self.num_luts())),
        }
    }

    pub fn fused(&self, weights: &FusionWeights<T>) -> Result<Lut3D<T>> {
        lut::fuse(&self.luts, weights)
    }

    pub fn apply_adaptive(&self, image: &ImageBuffer<T>, weights: &FusionWeights<T>) -> Result<ImageBuffer<T>> {
        lut::apply_adaptive(&self.luts, image, weights)
    }

    /// Predicts weights, fuses, and applies. Output is not clamped.
    pub fn enhance(&self, image: &ImageBuffer<T>) -> Result<ImageBuffer<T>> {
        let w = self.weights_for(image)?;
        self.apply_adaptive(image, &w)
    }

    /// Every trainable tensor: basis LUTs in order, then predictor tensors.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.luts.iter().map(|l| l.entries()).collect();
        if let Some(p) = &self.predictor {
            out.extend(p.tensors());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.luts.iter_mut().map(|l| l.entries_mut()).collect();
        if let Some(p) = &mut self.predictor {
            out.extend(p.tensors_mut());
        }
        out
    }

    pub fn cast<U: Real>(&self) -> AdaptiveModel<U> {
        AdaptiveModel {
            luts: self.luts.iter().map(|l| l.cast()).collect(),
            predictor: self.predictor.as_ref().map(|p| p.cast()),
        }
    }
}
