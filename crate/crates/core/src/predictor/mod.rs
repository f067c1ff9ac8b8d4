//! The CNN weight predictor.
//!
//! A downsampled 256×256 copy of the image passes through five blocks of
//! (3×3 stride-2 conv, leaky ReLU, instance norm) with channels
//! 3→16→32→64→128→128, then dropout on the 128×8×8 map and a fully
//! connected layer producing one weight per basis LUT.

pub mod downsample;
pub mod layers;

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lut::FusionWeights;
use crate::scalar::Real;

pub use self::downsample::{downsample_bilinear, to_feature_map};
pub use self::layers::{ConvBlockParams, DropoutMask, FeatureMap};
use self::layers::{ConvCache, KERNEL};

pub const INPUT_SIZE: usize = 256;
pub const CHANNEL_PLAN: [usize; 6] = [3, 16, 32, 64, 128, 128];
pub const HEAD_SIZE: usize = 8;
pub const HEAD_INPUTS: usize = 128 * HEAD_SIZE * HEAD_SIZE;
pub const DROPOUT_RATE: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How the fully connected kernel starts out. The bias always starts at 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FcInit {
    /// Every image initially gets weights of exactly 1.
    #[default]
    Zero,
    Glorot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams<T = f32> {
    pub blocks: Vec<ConvBlockParams<T>>,
    /// `N × 128 × 8 × 8`.
    pub fc_kernel: Vec<T>,
    pub fc_bias: Vec<T>,
    pub dropout_rate: f64,
    pub mode: Mode,
}

fn glorot<T: Real, R: Rng + ?Sized>(buf: &mut [T], fan_in: usize, fan_out: usize, rng: &mut R) {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    buf.iter_mut().for_each(|v| *v = T::of(rng.random_range(-limit..limit)));
}

/// Number of parameters for `outputs` fusion weights.
pub fn param_count(outputs: usize) -> usize {
    let conv: usize = CHANNEL_PLAN.windows(2).map(|w| w[0] * w[1] * KERNEL * KERNEL + w[1]).sum();
    conv + outputs * HEAD_INPUTS + outputs
}

impl<T: Real> PredictorParams<T> {
    /// All-zero parameters of the right shape (gradient buffers, decoding).
    pub fn zeros(outputs: usize) -> Self {
        Self {
            blocks: CHANNEL_PLAN.windows(2).map(|w| ConvBlockParams::zeros(w[0], w[1])).collect(),
            fc_kernel: vec![T::zero(); outputs * HEAD_INPUTS],
            fc_bias: vec![T::zero(); outputs],
            dropout_rate: DROPOUT_RATE,
            mode: Mode::Train,
        }
    }

    /// Glorot-uniform convolutions with zero biases, FC bias 1.
    pub fn init<R: Rng + ?Sized>(outputs: usize, fc: FcInit, rng: &mut R) -> Self {
        let mut p = Self::zeros(outputs);
        for b in &mut p.blocks {
            let taps = KERNEL * KERNEL;
            glorot(&mut b.kernel, b.in_channels * taps, b.out_channels * taps, rng);
        }
        if fc == FcInit::Glorot {
            glorot(&mut p.fc_kernel, HEAD_INPUTS, outputs, rng);
        }
        p.fc_bias.fill(T::one());
        p
    }

    pub fn outputs(&self) -> usize {
        self.fc_bias.len()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    /// Parameter tensors in serialization order: C1..C5 kernel then bias,
    /// then FC kernel and FC bias.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(12);
        for b in &self.blocks {
            out.push(&b.kernel);
            out.push(&b.bias);
        }
        out.push(&self.fc_kernel);
        out.push(&self.fc_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(12);
        for b in &mut self.blocks {
            out.push(&mut b.kernel);
            out.push(&mut b.bias);
        }
        out.push(&mut self.fc_kernel);
        out.push(&mut self.fc_bias);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> PredictorParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossless())).collect::<Vec<U>>();
        PredictorParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlockParams {
                    in_channels: b.in_channels,
                    out_channels: b.out_channels,
                    kernel: conv(&b.kernel),
                    bias: conv(&b.bias),
                    negative_slope: U::of(b.negative_slope.to_f64_lossless()),
                })
                .collect(),
            fc_kernel: conv(&self.fc_kernel),
            fc_bias: conv(&self.fc_bias),
            dropout_rate: self.dropout_rate,
            mode: self.mode,
        }
    }

    fn check_architecture(&self) -> Result<()> {
        if self.blocks.len() != CHANNEL_PLAN.len() - 1 {
            return Err(Error::Shape(format!("predictor needs 5 conv blocks, has {}", self.blocks.len())));
        }
        for (b, w) in self.blocks.iter().zip(CHANNEL_PLAN.windows(2)) {
            if b.in_channels != w[0]
                || b.out_channels != w[1]
                || b.kernel.len() != w[0] * w[1] * KERNEL * KERNEL
                || b.bias.len() != w[1]
            {
                return Err(Error::Shape(format!("conv block {}→{} has the wrong shape", w[0], w[1])));
            }
        }
        if self.fc_kernel.len() != self.outputs() * HEAD_INPUTS {
            return Err(Error::Shape("fc kernel does not match output count".into()));
        }
        Ok(())
    }

    /// Eval-mode prediction; consumes no randomness.
    pub fn predict(&self, image: &ImageBuffer<T>) -> Result<FusionWeights<T>> {
        self.run(image, Mode::Eval, false, &mut Eval).map(|(w, _)| w)
    }

    /// Forward pass recording everything the backward pass needs. In train
    /// mode the dropout mask is drawn from `rng`.
    pub fn forward<R: Rng + ?Sized>(&self, image: &ImageBuffer<T>, rng: &mut R) -> Result<(FusionWeights<T>, PredictorTape<T>)> {
        let (w, tape) = self.run(image, self.mode, true, rng)?;
        Ok((w, tape.expect("tape is always recorded by forward")))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        image: &ImageBuffer<T>,
        mode: Mode,
        record: bool,
        rng: &mut R,
    ) -> Result<(FusionWeights<T>, Option<PredictorTape<T>>)> {
        self.check_architecture()?;
        let small = downsample_bilinear(image, INPUT_SIZE, INPUT_SIZE);
        let mut x = to_feature_map(&small);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (mut y, conv) = layers::conv2d_s2(&x, b)?;
            layers::leaky_relu_inplace(&mut y.data, b.negative_slope);
            let (z, inv_std) = layers::instance_norm(&y)?;
            if record {
                blocks.push(BlockTape { conv, activated: y.data, normalized: z.clone(), inv_std });
            }
            x = z;
        }
        debug_assert_eq!(x.shape(), (128, HEAD_SIZE, HEAD_SIZE));
        let mask = match mode {
            Mode::Train => {
                let m = DropoutMask::sample(x.data.len(), self.dropout_rate, rng);
                m.apply(&mut x.data);
                Some(m)
            }
            Mode::Eval => None,
        };
        let out = layers::fc_forward(&x.data, &self.fc_kernel, &self.fc_bias)?;
        let weights = FusionWeights::new(out)?;
        let tape = record.then_some(PredictorTape { blocks, mask, head_input: x.data });
        Ok((weights, tape))
    }

    /// Parameter gradients given `∂L/∂weights`.
    pub fn backward(&self, tape: &PredictorTape<T>, upstream: &[T]) -> Result<PredictorParams<T>> {
        if upstream.len() != self.outputs() {
            return Err(Error::WeightCountMismatch { expected: self.outputs(), found: upstream.len() });
        }
        let mut grads = Self::zeros(self.outputs());
        grads.mode = self.mode;
        let fc = layers::fc_backward(&tape.head_input, &self.fc_kernel, upstream);
        grads.fc_kernel = fc.kernel;
        grads.fc_bias = fc.bias;
        let mut g = FeatureMap { channels: 128, height: HEAD_SIZE, width: HEAD_SIZE, data: fc.input };
        if let Some(mask) = &tape.mask {
            mask.apply(&mut g.data);
        }
        for (idx, (b, t)) in self.blocks.iter().zip(&tape.blocks).enumerate().rev() {
            layers::instance_norm_backward(&t.normalized, &t.inv_std, &mut g);
            layers::leaky_relu_backward(&t.activated, &mut g.data, b.negative_slope);
            let cg = layers::conv2d_s2_backward(b, &t.conv, &g, idx > 0);
            grads.blocks[idx].kernel = cg.kernel;
            grads.blocks[idx].bias = cg.bias;
            if let Some(input) = cg.input {
                g = input;
            }
        }
        Ok(grads)
    }
}

/// Saved activations from [`PredictorParams::forward`].
pub struct PredictorTape<T> {
    blocks: Vec<BlockTape<T>>,
    mask: Option<DropoutMask>,
    head_input: Vec<T>,
}

struct BlockTape<T> {
    conv: ConvCache<T>,
    activated: Vec<T>,
    normalized: FeatureMap<T>,
    inv_std: Vec<T>,
}

/// RNG stand-in for eval-mode prediction. Never sampled.
struct Eval;

impl rand::RngCore for Eval {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval mode does not sample")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval mode does not sample")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval mode does not sample")
    }
}
