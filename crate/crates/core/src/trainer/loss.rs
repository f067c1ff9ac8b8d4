use crate::error::Result;
use crate::image::ImageBuffer;
use crate::scalar::Real;

/// Mean squared error over every pixel channel, with its gradient
/// `2 (q − y) / count` with respect to `output`.
pub fn mse_loss<T: Real>(output: &ImageBuffer<T>, target: &ImageBuffer<T>) -> Result<(f64, Vec<T>)> {
    output.same_dims(target)?;
    let n = output.data().len();
    let scale = T::of(2.0 / n as f64);
    let mut sum = 0.0;
    let grad = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(&q, &y)| {
            let d = q - y;
            let d64 = d.to_f64_lossless();
            sum += d64 * d64;
            scale * d
        })
        .collect();
    Ok((sum / n as f64, grad))
}
