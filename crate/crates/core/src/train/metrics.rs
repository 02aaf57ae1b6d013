//! Image quality metrics.

use crate::imaging::Image;

use super::ssim::ssim;

pub const PSNR_CAP: f64 = 99.0;

pub fn mse(a: &Image, b: &Image) -> f64 {
    assert_eq!(a.data.len(), b.data.len(), "images differ in size");
    let n = a.data.len().max(1) as f64;
    a.data.iter().zip(&b.data).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n
}

/// Peak signal-to-noise ratio for unit peak, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let e = mse(a, b);
    if e <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * e.log10()).min(PSNR_CAP)
}

pub fn image_ssim(a: &Image, b: &Image) -> f64 {
    assert_eq!((a.width, a.height, a.channels), (b.width, b.height, b.channels));
    ssim(&a.to_f64(), &b.to_f64(), a.width, a.height, a.channels, None)
}
