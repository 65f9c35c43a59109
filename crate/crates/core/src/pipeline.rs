//! End-to-end denoising pipelines and camera-raw simulation.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{iterative_merge, label_image, merge_threshold, mix_seed, over_cluster, MergeConfig};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::io::{self, BitDepth};
use crate::metrics;
use crate::noise::{gat_forward_image, gat_inverse_image, synthesize_poisson_gaussian, GatTable, PoissonGaussianParams};
use crate::patch::{extract_patches, tile_windows, AggregationBuffer};
use crate::va_filter::{denoise_cluster, IciConfig, WienerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiseConfig {
    pub patch_size: usize,
    pub window_size: usize,
    pub window_step: usize,
    pub patch_stride: usize,
    pub mu: f64,
    pub ici: IciConfig,
    pub wiener: WienerConfig,
    pub size_gate: usize,
    pub rho_amp: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Directory receiving one cluster label map per window.
    pub dump_clusters: Option<PathBuf>,
}

impl Default for DenoiseConfig {
    fn default() -> Self {
        Self {
            patch_size: 8,
            window_size: 128,
            window_step: 96,
            patch_stride: 1,
            mu: 1.1,
            ici: IciConfig::default(),
            wiener: WienerConfig::default(),
            size_gate: 200,
            rho_amp: 0.7,
            epsilon: 1.3e-10,
            seed: 0,
            threads: None,
            dump_clusters: None,
        }
    }
}

impl DenoiseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.patch_size == 0 || self.patch_stride == 0 || self.window_step == 0 {
            return bad("patch size, patch stride and window step must be positive".into());
        }
        if self.window_size < self.patch_size {
            return bad(format!("window {} is smaller than the patch size {}", self.window_size, self.patch_size));
        }
        if !(self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.wiener.beta >= 0.0) {
            return bad(format!("beta must be non-negative, got {}", self.wiener.beta));
        }
        if !(self.ici.gamma > 0.0) {
            return bad(format!("ICI gamma must be positive, got {}", self.ici.gamma));
        }
        if self.ici.window_sizes.is_empty() || self.ici.window_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return bad("ICI window sizes must be non-empty and strictly increasing".into());
        }
        if self.threads == Some(0) {
            return bad("thread count must be at least 1".into());
        }
        Ok(())
    }
}

fn denoise_window(
    img: &GrayImage,
    index: usize,
    origin: (usize, usize),
    window: usize,
    sigma: f64,
    merge: &MergeConfig,
    cfg: &DenoiseConfig,
) -> Result<AggregationBuffer> {
    let d = cfg.patch_size;
    let m = d * d;
    let patches = extract_patches(img, origin, window, d, cfg.patch_stride)?;
    let clusters = over_cluster(&patches, (window, window), d, mix_seed(cfg.seed, index as u64));
    let clusters = iterative_merge(clusters, merge);

    if let Some(dir) = &cfg.dump_clusters {
        let labels = label_image(&clusters, &patches, (window, window));
        io::write_gray(&labels, &dir.join(format!("window_{index:04}.pgm")), BitDepth::Eight)?;
    }

    let estimates: Vec<Vec<f64>> = clusters
        .member_lists
        .par_iter()
        .map(|members| {
            let mut data = Vec::with_capacity(members.len() * m);
            for &j in members {
                data.extend_from_slice(patches.column(j));
            }
            denoise_cluster(&data, m, members.len(), sigma, cfg.mu, &cfg.ici, &cfg.wiener)
        })
        .collect::<Result<_>>()?;

    let mut buffer = AggregationBuffer::new(window, window);
    for (members, est) in clusters.member_lists.iter().zip(&estimates) {
        for (k, &j) in members.iter().enumerate() {
            buffer.deposit(&est[k * m..(k + 1) * m], patches.coords[j], 1.0)?;
        }
    }
    Ok(buffer)
}

fn run_in_pool<T: Send>(threads: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("cannot start {n} worker threads: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Denoises an image corrupted by white Gaussian noise of std `sigma`.
///
/// Images smaller than the window in either direction are processed as a
/// single square window of the smaller side.
pub fn denoise_gaussian(img: &GrayImage, sigma: f64, cfg: &DenoiseConfig) -> Result<GrayImage> {
    cfg.validate()?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let (h, w) = (img.height(), img.width());
    if h.min(w) < cfg.patch_size {
        return Err(Error::ImageTooSmall { width: w, height: h, min: cfg.patch_size });
    }
    if let Some(dir) = &cfg.dump_clusters {
        std::fs::create_dir_all(dir)?;
    }
    let window = cfg.window_size.min(h).min(w);
    let origins = tile_windows(h, w, window, cfg.window_step.min(window))?;
    let m = cfg.patch_size * cfg.patch_size;
    let merge = MergeConfig::new(merge_threshold(sigma, m, cfg.epsilon), cfg.size_gate, cfg.rho_amp, cfg.epsilon)?;

    let buffers = run_in_pool(cfg.threads, || {
        origins
            .par_iter()
            .enumerate()
            .map(|(i, &origin)| denoise_window(img, i, origin, window, sigma, &merge, cfg))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut total = AggregationBuffer::new(h, w);
    for (buffer, &origin) in buffers.iter().zip(&origins) {
        total.merge_at(buffer, origin)?;
    }
    total.finalize(img.peak())
}

/// Poisson-Gaussian denoising: variance stabilization, Gaussian denoising at
/// unit noise level, exact unbiased inverse. `table` is built from `params`
/// when not supplied.
pub fn denoise_poisson_gaussian(
    img: &GrayImage,
    params: &PoissonGaussianParams,
    cfg: &DenoiseConfig,
    table: Option<&GatTable>,
) -> Result<GrayImage> {
    let owned;
    let table = match table {
        Some(t) => t,
        None => {
            owned = GatTable::build(params);
            &owned
        }
    };
    let stabilized = gat_forward_image(img, params);
    let denoised = denoise_gaussian(&stabilized, 1.0, cfg)?;
    Ok(gat_inverse_image(&denoised, params, table).with_peak(img.peak()))
}

/// Single-plane RGGB mosaic with its noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMosaic {
    pub mosaic: GrayImage,
    pub r_max: f64,
    pub params: PoissonGaussianParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    cfa: String,
    alpha: f64,
    b: f64,
    p: f64,
    r_max: f64,
}

/// Subimage order: R, G1, G2, B.
pub const CFA_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

impl RawMosaic {
    pub fn new(mosaic: GrayImage, r_max: f64, params: PoissonGaussianParams) -> Result<Self> {
        if mosaic.width() % 2 != 0 || mosaic.height() % 2 != 0 {
            return Err(Error::OddDimensions { width: mosaic.width(), height: mosaic.height() });
        }
        if !(r_max > 0.0) {
            return Err(Error::InvalidParameter(format!("r_max must be positive, got {r_max}")));
        }
        Ok(Self { mosaic: mosaic.with_peak(r_max), r_max, params })
    }

    /// The R, G1, G2 and B planes.
    pub fn subimages(&self) -> [GrayImage; 4] {
        let (h, w) = (self.mosaic.height() / 2, self.mosaic.width() / 2);
        CFA_OFFSETS.map(|(dr, dc)| GrayImage::from_fn(w, h, self.r_max, |r, c| self.mosaic.get(2 * r + dr, 2 * c + dc)))
    }

    /// Interleaves four planes (R, G1, G2, B) back into a mosaic.
    pub fn from_subimages(planes: &[GrayImage; 4], r_max: f64, params: PoissonGaussianParams) -> Result<Self> {
        let (h, w) = (planes[0].height(), planes[0].width());
        if planes.iter().any(|p| p.height() != h || p.width() != w) {
            return Err(Error::DimensionMismatch("CFA planes differ in size".into()));
        }
        let mosaic = GrayImage::from_fn(2 * w, 2 * h, r_max, |r, c| {
            let k = 2 * (r % 2) + c % 2;
            planes[k].get(r / 2, c / 2)
        });
        Self::new(mosaic, r_max, params)
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("json")
    }

    /// Writes a 16-bit PGM (full scale = `r_max`) and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_gray(&self.mosaic, path, BitDepth::Sixteen)?;
        let sidecar = Sidecar {
            cfa: "RGGB".into(),
            alpha: self.params.alpha,
            b: self.params.b,
            p: self.params.p,
            r_max: self.r_max,
        };
        std::fs::write(Self::sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(Self::sidecar_path(path))?;
        let sidecar: Sidecar = serde_json::from_str(&text)?;
        if sidecar.cfa != "RGGB" {
            return Err(Error::Format { path: path.to_path_buf(), reason: format!("unsupported CFA {}", sidecar.cfa) });
        }
        let stored = io::read_gray(path)?;
        let scale = sidecar.r_max / stored.peak();
        let mosaic = stored.map(|v| v * scale);
        Self::new(mosaic, sidecar.r_max, PoissonGaussianParams::new(sidecar.alpha, sidecar.b, sidecar.p)?)
    }
}

/// Scales an RGB image to the raw range, subsamples it onto an RGGB mosaic
/// and adds Poisson-Gaussian noise. Returns `(noisy, clean)`.
pub fn simulate_raw(rgb: &[GrayImage; 3], r_max: f64, params: &PoissonGaussianParams, seed: u64) -> Result<(RawMosaic, RawMosaic)> {
    let (h, w) = (rgb[0].height(), rgb[0].width());
    if rgb.iter().any(|p| p.height() != h || p.width() != w) {
        return Err(Error::DimensionMismatch("RGB planes differ in size".into()));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddDimensions { width: w, height: h });
    }
    if let Some(&v) = rgb.iter().flat_map(|p| p.data()).find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::ValueOutOfRange(v));
    }
    // channel feeding each CFA position, in R, G1, G2, B order
    let source = [0, 1, 1, 2];
    let mosaic = GrayImage::from_fn(w, h, r_max, |r, c| r_max * rgb[source[2 * (r % 2) + c % 2]].get(r, c));
    let clean = RawMosaic::new(mosaic, r_max, *params)?;
    let noisy = RawMosaic::new(synthesize_poisson_gaussian(&clean.mosaic, params, seed)?, r_max, *params)?;
    Ok((noisy, clean))
}

/// Denoises each CFA plane separately with the Poisson-Gaussian pipeline.
pub fn denoise_raw(noisy: &RawMosaic, cfg: &DenoiseConfig) -> Result<RawMosaic> {
    let table = GatTable::build(&noisy.params);
    let planes = noisy.subimages();
    let mut out = Vec::with_capacity(4);
    for plane in &planes {
        out.push(denoise_poisson_gaussian(plane, &noisy.params, cfg, Some(&table))?);
    }
    let out: [GrayImage; 4] = out.try_into().expect("four planes");
    RawMosaic::from_subimages(&out, noisy.r_max, noisy.params)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragedMetrics {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Mean PSNR and SSIM over paired subimages.
pub fn evaluate_raw(denoised: &[GrayImage], clean: &[GrayImage], peak: f64) -> Result<AveragedMetrics> {
    if denoised.len() != clean.len() || clean.is_empty() {
        return Err(Error::DimensionMismatch(format!("{} denoised vs {} clean subimages", denoised.len(), clean.len())));
    }
    let mut psnr = 0.0;
    let mut ssim = 0.0;
    for (d, c) in denoised.iter().zip(clean) {
        psnr += metrics::psnr(c, d, peak)?;
        ssim += metrics::ssim(c, d, peak)?;
    }
    let n = clean.len() as f64;
    Ok(AveragedMetrics { psnr_db: psnr / n, ssim: ssim / n })
}
