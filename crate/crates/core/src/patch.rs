//! Window tiling, patch extraction and overlap-averaging aggregation.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// Positions `0, step, 2*step, ...` along one axis, with the last one clamped
/// to `len - size` so the far border is always covered.
fn axis_positions(len: usize, size: usize, step: usize) -> Vec<usize> {
    let last = len - size;
    let mut out: Vec<usize> = (0..=last).step_by(step).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Top-left corners `(row, col)` of the sliding windows, row-major.
pub fn tile_windows(
    height: usize,
    width: usize,
    window_size: usize,
    step: usize,
) -> Result<Vec<(usize, usize)>> {
    if window_size == 0 || window_size > height.min(width) {
        return Err(Error::WindowLargerThanImage { height, width, window: window_size });
    }
    if step == 0 || step > window_size {
        return Err(Error::InvalidParameter(format!(
            "window step must lie in 1..={window_size}, got {step}"
        )));
    }
    let rows = axis_positions(height, window_size, step);
    let cols = axis_positions(width, window_size, step);
    Ok(rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect())
}

/// Vectorized `d x d` patches of one window, stored column-major: column `j`
/// occupies `vectors[j*M .. (j+1)*M]` with `M = d*d`, pixels in row-major
/// patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub d: usize,
    pub vectors: Vec<f64>,
    /// Top-left corner of each patch, relative to the window.
    pub coords: Vec<(usize, usize)>,
    pub window_origin: (usize, usize),
    pub window_size: usize,
}

impl PatchSet {
    #[inline]
    pub fn dim(&self) -> usize {
        self.d * self.d
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    #[inline]
    pub fn column(&self, j: usize) -> &[f64] {
        let m = self.dim();
        &self.vectors[j * m..(j + 1) * m]
    }
}

pub fn extract_patches(
    img: &GrayImage,
    origin: (usize, usize),
    window_size: usize,
    d: usize,
    stride: usize,
) -> Result<PatchSet> {
    let (r0, c0) = origin;
    if d == 0 || d > window_size {
        return Err(Error::BadGeometry(format!("patch size {d} vs window {window_size}")));
    }
    if stride == 0 {
        return Err(Error::BadGeometry("patch stride must be at least 1".into()));
    }
    if r0 + window_size > img.height() || c0 + window_size > img.width() {
        return Err(Error::BadGeometry(format!(
            "window {window_size} at ({r0}, {c0}) exceeds {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let pos = axis_positions(window_size, d, stride);
    let m = d * d;
    let mut vectors = Vec::with_capacity(pos.len() * pos.len() * m);
    let mut coords = Vec::with_capacity(pos.len() * pos.len());
    let w = img.width();
    let data = img.data();
    for &pr in &pos {
        for &pc in &pos {
            for dr in 0..d {
                let start = (r0 + pr + dr) * w + c0 + pc;
                vectors.extend_from_slice(&data[start..start + d]);
            }
            coords.push((pr, pc));
        }
    }
    Ok(PatchSet { d, vectors, coords, window_origin: origin, window_size })
}

/// Running weighted sums of patch estimates and their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationBuffer {
    height: usize,
    width: usize,
    sum: Vec<f64>,
    weight: Vec<f64>,
}

impl AggregationBuffer {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, sum: vec![0.0; height * width], weight: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn weights(&self) -> &[f64] {
        &self.weight
    }

    /// Adds `weight * patch` over the `d x d` footprint at `coord`.
    pub fn deposit(&mut self, patch: &[f64], coord: (usize, usize), weight: f64) -> Result<()> {
        let d = (patch.len() as f64).sqrt() as usize;
        if d * d != patch.len() {
            return Err(Error::BadGeometry(format!("patch of {} values is not square", patch.len())));
        }
        let (row, col) = coord;
        if row + d > self.height || col + d > self.width {
            return Err(Error::OutOfBounds { row, col, size: d, height: self.height, width: self.width });
        }
        for dr in 0..d {
            let base = (row + dr) * self.width + col;
            let src = &patch[dr * d..(dr + 1) * d];
            for (k, v) in src.iter().enumerate() {
                self.sum[base + k] += weight * v;
                self.weight[base + k] += weight;
            }
        }
        Ok(())
    }

    /// Adds `other` into this buffer with its top-left corner at `offset`.
    pub fn merge_at(&mut self, other: &AggregationBuffer, offset: (usize, usize)) -> Result<()> {
        let (row, col) = offset;
        if row + other.height > self.height || col + other.width > self.width {
            return Err(Error::OutOfBounds {
                row,
                col,
                size: other.height.max(other.width),
                height: self.height,
                width: self.width,
            });
        }
        for r in 0..other.height {
            let dst = (row + r) * self.width + col;
            let src = r * other.width;
            for k in 0..other.width {
                self.sum[dst + k] += other.sum[src + k];
                self.weight[dst + k] += other.weight[src + k];
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &AggregationBuffer) -> Result<()> {
        if other.height != self.height || other.width != self.width {
            return Err(Error::DimensionMismatch("aggregation buffers differ in size".into()));
        }
        self.merge_at(other, (0, 0))
    }

    pub fn finalize(&self, peak: f64) -> Result<GrayImage> {
        if let Some(i) = self.weight.iter().position(|&w| w <= 0.0) {
            return Err(Error::UncoveredPixel { row: i / self.width, col: i % self.width });
        }
        let data = self.sum.iter().zip(&self.weight).map(|(s, w)| s / w).collect();
        GrayImage::new(self.width, self.height, data, peak)
    }
}

pub fn deposit(
    buffer: &mut AggregationBuffer,
    patch_values: &[f64],
    coord: (usize, usize),
    weight: f64,
) -> Result<()> {
    buffer.deposit(patch_values, coord, weight)
}

pub fn finalize(buffer: &AggregationBuffer, peak: f64) -> Result<GrayImage> {
    buffer.finalize(peak)
}
