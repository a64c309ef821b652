use super::ImageData;
use crate::downsample::Plane;
use crate::error::{shape_err, Error, Result};

/// Side of the SSIM window.
pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Mean squared difference, accumulated in f64.
pub fn mse(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(shape_err!("mse over {} vs {} samples", a.len(), b.len()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// `10·log10(range² / MSE)` in dB; `+∞` for identical inputs.
pub fn psnr_samples(a: &[f32], b: &[f32], data_range: f64) -> Result<f64> {
    if !(data_range.is_finite() && data_range > 0.0) {
        return Err(Error::InvalidInput(format!("data range must be positive, got {data_range}")));
    }
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (data_range * data_range / m).log10() })
}

pub fn psnr(a: &ImageData, b: &ImageData, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("psnr of {:?} vs {:?}", a.shape(), b.shape()));
    }
    psnr_samples(a.samples(), b.samples(), data_range)
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (k, v) in g.iter_mut().enumerate() {
        let d = k as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Weighted sums over every fully contained window, rows then columns.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g.iter().enumerate().map(|(k, &t)| t * src[y * w + x + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g.iter().enumerate().map(|(k, &t)| t * rows[(y + k) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, averaged over all fully contained windows.
pub fn ssim(a: &Plane<f32>, b: &Plane<f32>, data_range: f64) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(shape_err!("ssim of {:?} vs {:?}", a.dims(), b.dims()));
    }
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}")));
    }
    if !(data_range.is_finite() && data_range > 0.0) {
        return Err(Error::InvalidInput(format!("data range must be positive, got {data_range}")));
    }
    let g = gaussian_taps();
    let xa: Vec<f64> = a.data().iter().map(|&v| v as f64).collect();
    let xb: Vec<f64> = b.data().iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&xa, h, w, &g);
    let mu_b = filter_valid(&xb, h, w, &g);
    let e_aa = filter_valid(&prod(&xa, &xa), h, w, &g);
    let e_bb = filter_valid(&prod(&xb, &xb), h, w, &g);
    let e_ab = filter_valid(&prod(&xa, &xb), h, w, &g);
    let c1 = (K1 * data_range).powi(2);
    let c2 = (K2 * data_range).powi(2);
    let mut total = 0.0;
    for k in 0..mu_a.len() {
        let (ma, mb) = (mu_a[k], mu_b[k]);
        let va = e_aa[k] - ma * ma;
        let vb = e_bb[k] - mb * mb;
        let cov = e_ab[k] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Mean of [`ssim`] over every plane.
pub fn ssim_image(a: &ImageData, b: &ImageData, data_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(shape_err!("ssim of {:?} vs {:?}", a.shape(), b.shape()));
    }
    let pa = a.planes();
    let pb = b.planes();
    let mut total = 0.0;
    for (x, y) in pa.iter().zip(&pb) {
        total += ssim(x, y, data_range)?;
    }
    Ok(total / pa.len() as f64)
}
