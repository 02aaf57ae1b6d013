//! Structural similarity with an 11-tap Gaussian window (σ = 1.5), zero padding,
//! averaged over pixels and channels, with its analytic gradient.

use rayon::prelude::*;

const RADIUS: usize = 5;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; 2 * RADIUS + 1] {
    let mut k = [0.0; 2 * RADIUS + 1];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - RADIUS as f64;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "same" filtering with zero padding. The kernel is symmetric, so
/// this operator is its own adjoint.
fn blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let k = kernel();
    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let xx = x as isize + t as isize - RADIUS as isize;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            row[x] = acc;
        }
    });
    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let mut acc = 0.0;
            for (t, kv) in k.iter().enumerate() {
                let yy = y as isize + t as isize - RADIUS as isize;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            row[x] = acc;
        }
    });
    out
}

fn channel(data: &[f64], channels: usize, c: usize) -> Vec<f64> {
    data.iter().skip(c).step_by(channels).copied().collect()
}

/// Mean SSIM of interleaved images `x` and `y`. When `grad` is given, it
/// receives `d SSIM / d x` in the same layout.
pub fn ssim(x: &[f64], y: &[f64], w: usize, h: usize, channels: usize, grad: Option<&mut [f64]>) -> f64 {
    assert_eq!(x.len(), w * h * channels);
    assert_eq!(y.len(), x.len());
    let n = (w * h * channels) as f64;
    let mut total = 0.0;
    let mut grad = grad;
    for c in 0..channels {
        let xc = channel(x, channels, c);
        let yc = channel(y, channels, c);
        let mu_x = blur(&xc, w, h);
        let mu_y = blur(&yc, w, h);
        let xx = blur(&xc.iter().map(|v| v * v).collect::<Vec<_>>(), w, h);
        let yy = blur(&yc.iter().map(|v| v * v).collect::<Vec<_>>(), w, h);
        let xy = blur(&xc.iter().zip(&yc).map(|(a, b)| a * b).collect::<Vec<_>>(), w, h);

        let mut d_mu = vec![0.0; w * h];
        let mut d_xx = vec![0.0; w * h];
        let mut d_xy = vec![0.0; w * h];
        for p in 0..w * h {
            let (mx, my) = (mu_x[p], mu_y[p]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (xy[p] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (xx[p] - mx * mx) + (yy[p] - my * my) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            d_mu[p] = (2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2);
            d_xx[p] = -s / b2;
            d_xy[p] = 2.0 * a1 / (b1 * b2);
        }
        if let Some(g) = grad.as_deref_mut() {
            let g_mu = blur(&d_mu, w, h);
            let g_xx = blur(&d_xx, w, h);
            let g_xy = blur(&d_xy, w, h);
            for p in 0..w * h {
                g[p * channels + c] = (g_mu[p] + 2.0 * xc[p] * g_xx[p] + yc[p] * g_xy[p]) / n;
            }
        }
    }
    total / n
}
