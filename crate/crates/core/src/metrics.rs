//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::Image;

/// Peak signal-to-noise ratio in dB against an 8-bit peak of 255.
/// Identical images return positive infinity.
pub fn psnr(reference: &Image, test: &Image) -> Result<f64> {
    if !reference.same_shape(test) {
        return Err(Error::ShapeMismatch(format!(
            "psnr needs equal shapes, got {}x{} vs {}x{}",
            reference.height(),
            reference.width(),
            test.height(),
            test.width()
        )));
    }
    let n = reference.len() as f64;
    let mse: f64 = reference
        .iter()
        .zip(test.iter())
        .map(|(&a, &b)| {
            let d = a - b;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}
