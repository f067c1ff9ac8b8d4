//! Paired training: augmentation, forward through predictor, fusion and
//! LUT application, MSE plus regularizers, backpropagation to every
//! parameter, and Adam updates.

pub mod adam;
pub mod augment;
pub mod loss;
pub mod model;

use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lut::{self, FusionWeights};
use crate::metrics::psnr_from_mse;
use crate::regularizers::{self, RegConfig};
use crate::scalar::Real;

pub use self::adam::{AdamConfig, AdamState};
pub use self::augment::{augment, AugmentConfig, AugmentDraw};
pub use self::loss::mse_loss;
pub use self::model::AdaptiveModel;

const AUGMENT_STREAM: u64 = 0x6175_676d_656e_7421;
const DROPOUT_STREAM: u64 = 0x6472_6f70_6f75_7421;
const SHUFFLE_STREAM: u64 = 0x7368_7566_666c_6521;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePair<T = f32> {
    pub input: ImageBuffer<T>,
    pub target: ImageBuffer<T>,
}

impl<T: Real> SamplePair<T> {
    pub fn new(input: ImageBuffer<T>, target: ImageBuffer<T>) -> Result<Self> {
        input.same_dims(&target)?;
        Ok(Self { input, target })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub reg: RegConfig,
    pub epochs: usize,
    /// Stops after this many updates even mid-epoch.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    /// Receives `latest.ckpt` every epoch and `best.ckpt` whenever the epoch
    /// mean PSNR improves.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 1,
            reg: RegConfig::default(),
            epochs: 1,
            max_steps: None,
            seed: 0,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size != 1 {
            return Err(Error::Config(format!("only batch size 1 is supported, got {}", self.batch_size)));
        }
        self.reg.validate()
    }
}

/// Loss terms of one step. `total = mse + λ_s·r_s + λ_m·r_m`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub mse: f64,
    pub r_s: f64,
    pub r_m: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse: f64, r_s: f64, r_m: f64, reg: &RegConfig) -> Self {
        Self { mse, r_s, r_m, total: mse + reg.lambda_s * r_s + reg.lambda_m * r_m }
    }

    pub fn is_finite(&self) -> bool {
        self.mse.is_finite() && self.r_s.is_finite() && self.r_m.is_finite() && self.total.is_finite()
    }
}

/// Total loss of `model` on one pair and its gradient, shaped like the
/// model. `rng` drives dropout when the predictor is in train mode.
///
/// The smoothness term includes the weight L2 norm only when a predictor
/// produces the weights; pinned weights are not parameters.
pub fn compute_gradients<T: Real, R: Rng + ?Sized>(
    model: &AdaptiveModel<T>,
    pair: &SamplePair<T>,
    reg: &RegConfig,
    rng: &mut R,
) -> Result<(LossBreakdown, AdaptiveModel<T>)> {
    pair.input.same_dims(&pair.target)?;
    let n = model.num_luts();
    let (weights, tape) = match &model.predictor {
        Some(p) => {
            let (w, tape) = p.forward(&pair.input, rng)?;
            (w, Some(tape))
        }
        None => (FusionWeights::ones(n), None),
    };
    let fused = model.fused(&weights)?;
    let output = lut::apply(&fused, &pair.input);
    let (mse, out_grad) = mse_loss(&output, &pair.target)?;
    let fused_grad = lut::apply_backward(&fused, &pair.input, &out_grad)?;

    let mut lut_grads = Vec::with_capacity(n);
    for (basis, &w) in model.luts.iter().zip(weights.as_slice()) {
        let mut g: Vec<T> = fused_grad.iter().map(|&v| w * v).collect();
        regularizers::tv_grad(basis, reg.lambda_s, &mut g);
        regularizers::monotonicity_grad(basis, reg.lambda_m, &mut g);
        lut_grads.push(lut::Lut3D::like(basis, g));
    }

    let mut r_s: f64 = model.luts.iter().map(regularizers::tv_loss).sum();
    let r_m = regularizers::monotonicity_reg(&model.luts);
    let predictor_grads = match (&model.predictor, tape) {
        (Some(p), Some(tape)) => {
            r_s += regularizers::weight_l2(&weights);
            let mut wg = lut::fusion_weight_gradient(&model.luts, &fused_grad)?;
            regularizers::weight_l2_grad(&weights, reg.lambda_s, &mut wg);
            Some(p.backward(&tape, &wg)?)
        }
        _ => None,
    };
    let loss = LossBreakdown::new(mse, r_s, r_m, reg);
    Ok((loss, AdaptiveModel { luts: lut_grads, predictor: predictor_grads }))
}

/// One forward/backward pass and one Adam update. On a non-finite loss or
/// gradient the model and optimizer are left untouched.
pub fn train_step<T: Real, R: Rng + ?Sized>(
    model: &mut AdaptiveModel<T>,
    pair: &SamplePair<T>,
    config: &TrainConfig,
    adam: &mut AdamState<T>,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let (loss, grads) = compute_gradients(model, pair, &config.reg, rng)?;
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence { step: adam.t + 1 });
    }
    let grad_refs = grads.tensors();
    adam.step(&mut model.tensors_mut(), &grad_refs, config.learning_rate)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    /// PSNR of the step's (augmented) training output.
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<StepRecord>,
    /// Mean training PSNR per completed epoch.
    pub epoch_psnr: Vec<f64>,
    pub adam: AdamState<f32>,
}

impl TrainReport {
    pub fn steps(&self) -> u64 {
        self.adam.t
    }
}

/// Trains `model` in place over `samples` with a fresh optimizer.
pub fn train(model: &mut AdaptiveModel<f32>, samples: &[SamplePair<f32>], config: &TrainConfig) -> Result<TrainReport> {
    let adam = AdamState::for_tensors(config.adam, &model.tensors());
    train_from(model, samples, config, adam)
}

/// Like [`train`] but continues from an existing optimizer state.
pub fn train_from(
    model: &mut AdaptiveModel<f32>,
    samples: &[SamplePair<f32>],
    config: &TrainConfig,
    mut adam: AdamState<f32>,
) -> Result<TrainReport> {
    config.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut aug_rng = ChaCha8Rng::seed_from_u64(config.seed ^ AUGMENT_STREAM);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(config.seed ^ DROPOUT_STREAM);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_STREAM);
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }

    let mut history = Vec::new();
    let mut epoch_psnr = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    'epochs: for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut psnr_sum = 0.0;
        let mut count = 0usize;
        for &i in &order {
            if config.max_steps.is_some_and(|m| adam.t >= m) {
                break;
            }
            let pair = augment(&samples[i], &config.augment, &mut aug_rng)?;
            let loss = train_step(model, &pair, config, &mut adam, &mut drop_rng)?;
            let psnr = psnr_from_mse(loss.mse);
            history.push(StepRecord { epoch, step: adam.t, loss, psnr });
            psnr_sum += psnr.min(100.0);
            count += 1;
        }
        if count == 0 {
            break 'epochs;
        }
        let mean = psnr_sum / count as f64;
        epoch_psnr.push(mean);
        log::info!("epoch {epoch}: {count} steps, mean train PSNR {mean:.3} dB");
        if let Some(dir) = &config.checkpoint_dir {
            crate::io::checkpoint::write_checkpoint(&dir.join("latest.ckpt"), model, Some(&adam))?;
            if mean > best {
                best = mean;
                crate::io::checkpoint::write_checkpoint(&dir.join("best.ckpt"), model, Some(&adam))?;
            }
        }
    }
    Ok(TrainReport { history, epoch_psnr, adam })
}

/// Writes the step history as CSV with header `epoch,step,mse,r_s,r_m,total,psnr`.
pub fn write_history_csv<W: Write>(history: &[StepRecord], mut out: W) -> Result<()> {
    writeln!(out, "epoch,step,mse,r_s,r_m,total,psnr")?;
    for r in history {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{}",
            r.epoch,
            r.step,
            r.loss.mse,
            r.loss.r_s,
            r.loss.r_m,
            r.loss.total,
            crate::metrics::format_psnr(r.psnr)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lut::Lut3D;
    use crate::predictor::{FcInit, Mode};

    fn random_image<T: Real>(w: usize, h: usize, rng: &mut ChaCha8Rng) -> ImageBuffer<T> {
        ImageBuffer::from_fn(w, h, |_, _| [T::of(rng.random()), T::of(rng.random()), T::of(rng.random())]).unwrap()
    }

    #[test]
    fn identity_init_has_zero_loss_and_zero_data_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = AdaptiveModel::<f32>::new(3, 33, FcInit::Zero, &mut rng).unwrap();
        let img = random_image::<f32>(20, 12, &mut rng);
        let pair = SamplePair::new(img.clone(), img).unwrap();
        let (loss, grads) = compute_gradients(&model, &pair, &RegConfig::none(), &mut rng).unwrap();
        assert_eq!(loss.total, 0.0);
        assert!(grads.luts.iter().all(|l| l.entries().iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn total_is_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut model = AdaptiveModel::<f32>::new(2, 9, FcInit::Glorot, &mut rng).unwrap();
        model.luts[1] = Lut3D::from_fn(9, |i, j, k| [0.1 * (k as f32).sin(), 0.02 * j as f32, -0.03 * i as f32]).unwrap();
        let pair = SamplePair::new(random_image(16, 16, &mut rng), random_image(16, 16, &mut rng)).unwrap();
        let reg = RegConfig { lambda_s: 0.3, lambda_m: 7.0 };
        let (l, _) = compute_gradients(&model, &pair, &reg, &mut rng).unwrap();
        assert!(l.r_s > 0.0 && l.r_m > 0.0);
        assert_eq!(l.total, l.mse + 0.3 * l.r_s + 7.0 * l.r_m);
    }

    #[test]
    fn first_adam_step_is_about_lr() {
        let mut model = AdaptiveModel::<f64>::without_predictor(1, 2).unwrap();
        let input = ImageBuffer::new(1, 1, vec![0.3, 0.6, 0.8]).unwrap();
        let target = ImageBuffer::new(1, 1, vec![0.5, 0.2, 0.9]).unwrap();
        let pair = SamplePair::new(input, target).unwrap();
        let config = TrainConfig { reg: RegConfig::none(), ..TrainConfig::default() };
        let (_, grads) = compute_gradients(&model, &pair, &config.reg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let before = model.luts[0].clone();
        let mut adam = AdamState::for_tensors(config.adam, &model.tensors());
        train_step(&mut model, &pair, &config, &mut adam, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let lr = config.learning_rate;
        for ((a, b), g) in before.entries().iter().zip(model.luts[0].entries()).zip(grads.luts[0].entries()) {
            let moved = b - a;
            if *g != 0.0 {
                assert!((0.9 * lr..=1.0 * lr + 1e-12).contains(&moved.abs()), "{moved}");
                assert_eq!(moved.signum(), -g.signum());
            } else {
                assert_eq!(moved, 0.0);
            }
        }
    }

    #[test]
    fn divergence_leaves_state_untouched() {
        let mut model = AdaptiveModel::<f32>::without_predictor(1, 3).unwrap();
        let img = ImageBuffer::<f32>::filled(4, 4, [0.5; 3]).unwrap();
        let pair = SamplePair::new(img.clone(), img).unwrap();
        let config = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
        let mut adam = AdamState::for_tensors(config.adam, &model.tensors());
        // Two red-channel entries the image never touches, so only the
        // smoothness gradient overflows.
        model.luts[0].entries_mut()[0] = f32::MAX;
        model.luts[0].entries_mut()[9] = -f32::MAX;
        let snapshot = (model.clone(), adam.clone());
        let err = train_step(&mut model, &pair, &config, &mut adam, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Divergence { step: 1 }), "{err:?}");
        assert_eq!((model, adam), snapshot);
    }

    /// Finite-difference check of the full objective on a model with every
    /// term active and dropout off.
    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut model = AdaptiveModel::<f64>::new(2, 5, FcInit::Glorot, &mut rng).unwrap();
        // Small FC kernel keeps weights near 1 while still coupling them to the image.
        for v in &mut model.predictor.as_mut().unwrap().fc_kernel {
            *v *= 0.05;
        }
        model.predictor.as_mut().unwrap().mode = Mode::Eval;
        model.luts[1] = Lut3D::from_fn(5, |i, j, k| {
            [0.05 * (i + 2 * k) as f64 % 0.13, 0.04 * (j as f64).cos(), 0.03 * (i * j) as f64 / 16.0]
        })
        .unwrap();
        // Break the ties between neighbouring identity entries, where the
        // monotonicity penalty has a kink.
        for lut in &mut model.luts {
            for v in lut.entries_mut() {
                *v += rng.random_range(-1e-2..1e-2);
            }
        }
        let pair = SamplePair::new(random_image(24, 20, &mut rng), random_image(24, 20, &mut rng)).unwrap();
        let reg = RegConfig { lambda_s: 1e-2, lambda_m: 0.5 };
        let (_, grads) = compute_gradients(&model, &pair, &reg, &mut rng).unwrap();
        let grads = grads.tensors().concat();
        let total = |m: &AdaptiveModel<f64>| compute_gradients(m, &pair, &reg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().0.total;

        let lut_len = model.luts[0].param_count() * 2;
        let all = model.param_count();
        let mut picks: Vec<usize> = (0..10).map(|_| rng.random_range(0..lut_len)).collect();
        picks.extend((0..10).map(|_| rng.random_range(lut_len..all)));
        let h = 1e-6;
        for idx in picks {
            let eval_at = |delta: f64| {
                let mut m = model.clone();
                let mut flat = m.tensors_mut();
                let mut off = idx;
                for t in flat.iter_mut() {
                    if off < t.len() {
                        t[off] += delta;
                        break;
                    }
                    off -= t.len();
                }
                total(&m)
            };
            let fd = (eval_at(h) - eval_at(-h)) / (2.0 * h);
            let g = grads[idx];
            let err = (fd - g).abs() / fd.abs().max(g.abs()).max(1e-6);
            assert!(err < 1e-2, "param {idx}: analytic {g} vs numeric {fd}");
        }
    }

    fn toy_dataset(n: usize, rng: &mut ChaCha8Rng) -> Vec<SamplePair<f32>> {
        (0..n)
            .map(|_| {
                let input = random_image::<f32>(12, 10, rng);
                let target = ImageBuffer::from_fn(12, 10, |x, y| {
                    let p = input.pixel(x, y);
                    [p[0].sqrt(), p[1] * p[1], 1.0 - p[2]]
                })
                .unwrap();
                SamplePair::new(input, target).unwrap()
            })
            .collect()
    }

    #[test]
    fn training_is_reproducible_and_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = toy_dataset(6, &mut rng);
        let config = TrainConfig { epochs: 5, learning_rate: 5e-3, seed: 9, ..TrainConfig::default() };
        let run = || {
            let mut m = AdaptiveModel::<f32>::without_predictor(1, 9).unwrap();
            let r = train(&mut m, &data, &config).unwrap();
            (m, r.history)
        };
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1, m2);
        assert_eq!(h1, h2);
        assert_eq!(h1.len(), 30);
        assert!(h1.last().unwrap().loss.mse < h1[0].loss.mse);
    }

    #[test]
    fn max_steps_and_empty_dataset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = toy_dataset(4, &mut rng);
        let mut m = AdaptiveModel::<f32>::without_predictor(1, 5).unwrap();
        let config = TrainConfig { epochs: 10, max_steps: Some(7), ..TrainConfig::default() };
        let r = train(&mut m, &data, &config).unwrap();
        assert_eq!(r.steps(), 7);
        let before = m.clone();
        assert!(matches!(train(&mut m, &[], &config), Err(Error::EmptyDataset)));
        assert_eq!(m, before);
    }

    #[test]
    fn writes_checkpoints_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = toy_dataset(3, &mut rng);
        let mut m = AdaptiveModel::<f32>::without_predictor(2, 5).unwrap();
        let config = TrainConfig { epochs: 2, checkpoint_dir: Some(dir.path().to_path_buf()), ..TrainConfig::default() };
        let r = train(&mut m, &data, &config).unwrap();
        assert!(dir.path().join("latest.ckpt").exists() && dir.path().join("best.ckpt").exists());
        let (loaded, adam) = crate::io::checkpoint::read_checkpoint(&dir.path().join("latest.ckpt")).unwrap();
        assert_eq!(loaded, m);
        assert_eq!(adam.unwrap(), r.adam);
        let mut csv = Vec::new();
        write_history_csv(&r.history, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,step,mse,r_s,r_m,total,psnr");
        assert_eq!(lines.len(), 7);
        assert!(lines[1].starts_with("0,1,"));
    }
}
