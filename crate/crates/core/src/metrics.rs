//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::GrayImage;

pub const PSNR_CAP_DB: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_dims(a: &GrayImage, b: &GrayImage) -> Result<()> {
    if !a.same_dims(b) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

pub fn mse(reference: &GrayImage, estimate: &GrayImage) -> Result<f64> {
    check_dims(reference, estimate)?;
    let n = reference.data().len().max(1) as f64;
    Ok(reference.data().iter().zip(estimate.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio in dB, capped for identical images.
pub fn psnr(reference: &GrayImage, estimate: &GrayImage, peak: f64) -> Result<f64> {
    let e = mse(reference, estimate)?;
    if e == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / e).log10()).min(PSNR_CAP_DB))
}

fn gaussian_kernel() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let x = i as f64 - half;
            (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a row-major `h x w` plane.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut tmp = vec![0.0; h * ow];
    for r in 0..h {
        let row = &data[r * w..(r + 1) * w];
        for c in 0..ow {
            tmp[r * ow + c] = k.iter().zip(&row[c..c + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for (t, kt) in k.iter().enumerate() {
            let src = &tmp[(r + t) * ow..(r + t + 1) * ow];
            for (o, s) in out[r * ow..(r + 1) * ow].iter_mut().zip(src) {
                *o += kt * s;
            }
        }
    }
    out
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5)
/// over the positions where the window fits inside the image.
pub fn ssim(reference: &GrayImage, estimate: &GrayImage, peak: f64) -> Result<f64> {
    check_dims(reference, estimate)?;
    let (h, w) = (reference.height(), reference.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h, min: SSIM_WINDOW });
    }
    let k = gaussian_kernel();
    let a = reference.data();
    let b = estimate.data();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &k);
    let mu_b = filter_valid(b, h, w, &k);
    let e_aa = filter_valid(&aa, h, w, &k);
    let e_bb = filter_valid(&bb, h, w, &k);
    let e_ab = filter_valid(&ab, h, w, &k);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub image: String,
    pub sigma: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn compute(image: &str, sigma: &str, reference: &GrayImage, estimate: &GrayImage, peak: f64) -> Result<Self> {
        Ok(Self {
            image: image.to_string(),
            sigma: sigma.to_string(),
            psnr_db: psnr(reference, estimate, peak)?,
            ssim: ssim(reference, estimate, peak)?,
        })
    }
}

pub const CSV_HEADER: &str = "image,sigma,psnr_db,ssim";

pub fn to_csv(reports: &[MetricReport]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in reports {
        w.write_record([r.image.clone(), r.sigma.clone(), format!("{:.4}", r.psnr_db), format!("{:.6}", r.ssim)])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}
