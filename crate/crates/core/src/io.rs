//! Grayscale and RGB image files (PGM/PPM and PNG).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn format_error(path: &Path, reason: impl ToString) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.to_string() }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let reader = image::ImageReader::open(path)?
        .with_guessed_format()
        .map_err(|e| format_error(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => return Err(format_error(path, format!("expected PGM/PPM or PNG, found {other:?}"))),
    }
    reader.decode().map_err(|e| format_error(path, e))
}

fn is_sixteen_bit(img: &DynamicImage) -> bool {
    matches!(
        img,
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) | DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_)
    )
}

/// Reads a grayscale image. Samples keep their stored integer values and
/// `peak` is the format maximum (255 or 65535). Color files are converted
/// to luma.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if is_sixteen_bit(&img) {
        let data = img.to_luma16().into_raw().into_iter().map(f64::from).collect();
        GrayImage::new(w, h, data, 65535.0)
    } else {
        let data = img.to_luma8().into_raw().into_iter().map(f64::from).collect();
        GrayImage::new(w, h, data, 255.0)
    }
}

/// Reads an RGB image as three planes scaled to `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<[GrayImage; 3]> {
    let img = open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (raw, scale): (Vec<f64>, f64) = if is_sixteen_bit(&img) {
        (img.to_rgb16().into_raw().into_iter().map(f64::from).collect(), 65535.0)
    } else {
        (img.to_rgb8().into_raw().into_iter().map(f64::from).collect(), 255.0)
    };
    let plane = |k: usize| GrayImage::new(w, h, raw.iter().skip(k).step_by(3).map(|v| v / scale).collect(), 1.0);
    Ok([plane(0)?, plane(1)?, plane(2)?])
}

/// Stored integer for a value: clamped to `[0, peak]`, rescaled to the
/// format maximum, rounded half away from zero.
pub fn quantize(value: f64, peak: f64, depth: BitDepth) -> u16 {
    let max = depth.max_value();
    (value.clamp(0.0, peak) * max / peak).round().min(max) as u16
}

/// Writes a grayscale image; the container is chosen by extension
/// (`.png`, anything else is binary PGM).
pub fn write_gray(img: &GrayImage, path: &Path, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let peak = img.peak();
    if !(peak > 0.0) {
        return Err(Error::InvalidParameter(format!("image peak must be positive, got {peak}")));
    }
    let format = match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => ImageFormat::Png,
        _ => ImageFormat::Pnm,
    };
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v, peak, depth) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size").save_with_format(path, format)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v, peak, depth)).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size").save_with_format(path, format)
        }
    };
    result.map_err(|e| format_error(path, e))
}
