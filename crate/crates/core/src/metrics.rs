//! Image quality metrics: PSNR and SSIM, plus the CSV report format.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Peak signal-to-noise ratio in dB: `10 log10(peak^2 / MSE)`. Identical
/// images return `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "psnr: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Parameter(format!("psnr peak {peak} must be > 0")));
    }
    let mut mse = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let d = Scalar::to_f64(x) - Scalar::to_f64(y);
        mse += d * d;
    }
    mse /= a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut one_d = [0.0f64; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in one_d.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut one_d {
        *v /= sum;
    }
    let mut out = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            out[y * SSIM_WINDOW + x] = one_d[y] * one_d[x];
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, window: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            let mut aa = 0.0;
            let mut bb = 0.0;
            let mut ab = 0.0;
            for ky in 0..SSIM_WINDOW {
                for kx in 0..SSIM_WINDOW {
                    let g = window[ky * SSIM_WINDOW + kx];
                    let va = a[(oy + ky) * w + ox + kx];
                    let vb = b[(oy + ky) * w + ox + kx];
                    mu_a += g * va;
                    mu_b += g * vb;
                    aa += g * va * va;
                    bb += g * vb * vb;
                    ab += g * va * vb;
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    total / (oh * ow) as f64
}

/// Mean local structural similarity over an 11x11 Gaussian window with
/// sigma 1.5, K1 = 0.01, K2 = 0.03 and peak 1. Multi-channel inputs are
/// scored per channel and averaged.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "ssim: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (planes, h, w) = match a.shape() {
        [h, w] => (1, *h, *w),
        [c, h, w] => (*c, *h, *w),
        [n, c, h, w] => (n * c, *h, *w),
        other => {
            return Err(Error::Dimension(format!(
                "ssim expects 2-D to 4-D tensors, got {other:?}"
            )))
        }
    };
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let window = gaussian_window();
    let ad: Vec<f64> = a.data().iter().map(|&v| Scalar::to_f64(v)).collect();
    let bd: Vec<f64> = b.data().iter().map(|&v| Scalar::to_f64(v)).collect();
    let mut total = 0.0;
    for p in 0..planes {
        let base = p * h * w;
        total += ssim_plane(
            &ad[base..base + h * w],
            &bd[base..base + h * w],
            h,
            w,
            &window,
        );
    }
    Ok(total / planes as f64)
}

/// Per-image PSNR/SSIM rows plus their means, serialized as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    rows: Vec<(String, f64, f64)>,
}

impl MetricsReport {
    pub fn new() -> Self {
        MetricsReport { rows: Vec::new() }
    }

    pub fn push(&mut self, image_id: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.rows.push((image_id.into(), psnr_db, ssim));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[(String, f64, f64)] {
        &self.rows
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.1).sum::<f64>() / self.rows.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.2).sum::<f64>() / self.rows.len().max(1) as f64
    }

    /// `image_id,psnr_db,ssim` rows followed by a mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image_id,psnr_db,ssim\n");
        for (id, p, s) in &self.rows {
            out.push_str(&format!("{id},{p},{s}\n"));
        }
        out.push_str(&format!("mean,{},{}\n", self.mean_psnr(), self.mean_ssim()));
        out
    }
}
