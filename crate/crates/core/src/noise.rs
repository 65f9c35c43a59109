//! Noise synthesis, the generalized Anscombe transform and its exact
//! unbiased inverse, and simple noise-parameter estimators.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::image::{GrayImage, Region};

const THREE_EIGHTHS: f64 = 3.0 / 8.0;

/// Rates below this are sampled exactly by inversion.
const POISSON_INVERSION_LIMIT: f64 = 30.0;

/// Poisson tail mass allowed outside the summation window of the series.
const SERIES_TAIL: f64 = 1e-12;

pub const GAT_GRID_STEP: f64 = 0.05;
pub const GAT_GRID_MAX: f64 = 1000.0;

/// Gauss-Hermite nodes used to fold the Gaussian read noise into the series.
const HERMITE_NODES: usize = 48;

const MAD_TO_SIGMA: f64 = 1.0 / 0.6745;

/// Parameters of the signal-dependent model `x~ = rho/alpha + b*v`,
/// `rho ~ Poisson(alpha*(x - p))`, `v ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonGaussianParams {
    pub alpha: f64,
    pub b: f64,
    pub p: f64,
}

impl PoissonGaussianParams {
    pub fn new(alpha: f64, b: f64, p: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidParameter(format!("alpha must be positive and finite, got {alpha}")));
        }
        if !(b >= 0.0 && b.is_finite()) {
            return Err(Error::InvalidParameter(format!("b must be non-negative, got {b}")));
        }
        if !p.is_finite() {
            return Err(Error::InvalidParameter(format!("p must be finite, got {p}")));
        }
        Ok(Self { alpha, b, p })
    }

    /// Standard deviation of the Gaussian term in the scaled (count) domain.
    #[inline]
    pub fn sigma_prime(&self) -> f64 {
        self.alpha * self.b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl GaussianNoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be non-negative, got {sigma}")));
        }
        Ok(Self { sigma, seed })
    }
}

pub fn synthesize_awgn(img: &GrayImage, spec: &GaussianNoiseSpec) -> GrayImage {
    if spec.sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *v += spec.sigma * n;
    }
    out
}

/// Draws from Poisson(rate): inversion below 30, rounded normal above.
pub fn sample_poisson<R: Rng + ?Sized>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate < POISSON_INVERSION_LIMIT {
        let u: f64 = rng.random();
        let mut k = 0.0;
        let mut pmf = (-rate).exp();
        let mut cdf = pmf;
        while u > cdf {
            k += 1.0;
            pmf *= rate / k;
            cdf += pmf;
            if pmf < f64::MIN_POSITIVE && k > rate {
                break;
            }
        }
        k
    } else {
        let z: f64 = rng.sample(StandardNormal);
        (rate + rate.sqrt() * z + 0.5).floor().max(0.0)
    }
}

pub fn synthesize_poisson_gaussian(
    img: &GrayImage,
    params: &PoissonGaussianParams,
    seed: u64,
) -> Result<GrayImage> {
    if let Some(&v) = img.data().iter().find(|&&v| v < params.p) {
        return Err(Error::NegativeRate { value: v, pedestal: params.p });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for v in out.data_mut() {
        let counts = sample_poisson(params.alpha * (*v - params.p), &mut rng);
        let mut value = counts / params.alpha;
        if params.b > 0.0 {
            let n: f64 = rng.sample(StandardNormal);
            value += params.b * n;
        }
        *v = value;
    }
    Ok(out)
}

/// Forward generalized Anscombe transform of one observed sample.
#[inline]
pub fn gat_forward(value: f64, params: &PoissonGaussianParams) -> f64 {
    let sp = params.sigma_prime();
    let arg = params.alpha * value + THREE_EIGHTHS + sp * sp;
    if arg > 0.0 {
        2.0 * arg.sqrt()
    } else {
        0.0
    }
}

pub fn gat_forward_image(img: &GrayImage, params: &PoissonGaussianParams) -> GrayImage {
    img.map(|v| gat_forward(v, params))
}

/// Index window `[lo, hi]` around `y` holding all but `SERIES_TAIL` of the
/// Poisson(y) mass, together with the pmf values on it.
fn poisson_window(y: f64) -> (u64, Vec<f64>) {
    if y == 0.0 {
        return (0, vec![1.0]);
    }
    let mut w = (6.0 * y.sqrt() + 8.0).ceil();
    loop {
        let lo = (y - w).floor().max(0.0) as u64;
        let hi = (y + w).ceil() as u64;
        let ln_y = y.ln();
        let ln_first = lo as f64 * ln_y - y - ln_gamma(lo as f64 + 1.0);
        let mut pmf = Vec::with_capacity((hi - lo + 1) as usize);
        let mut cur = ln_first.exp();
        pmf.push(cur);
        for x in lo + 1..=hi {
            cur *= y / x as f64;
            pmf.push(cur);
        }
        let mass: f64 = pmf.iter().sum();
        if 1.0 - mass < SERIES_TAIL {
            return (lo, pmf);
        }
        w *= 1.5;
    }
}

/// `E[f(x) | y]` for `x ~ Poisson(y)`: `2 * sum sqrt(x + 3/8) * y^x e^-y / x!`.
pub fn gat_expected(y: f64) -> f64 {
    let (lo, pmf) = poisson_window(y.max(0.0));
    let mut acc = 0.0;
    for (i, w) in pmf.iter().enumerate() {
        acc += ((lo + i as u64) as f64 + THREE_EIGHTHS).sqrt() * w;
    }
    2.0 * acc
}

/// Probabilists' Gauss-Hermite rule (nodes, weights) for E over N(0, 1),
/// via the Golub-Welsch eigenproblem.
fn hermite_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut jacobi = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let off = (k as f64).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// `E[f(z) | y]` with `z = x + sigma_prime * v`, `x ~ Poisson(y)`, `v ~ N(0, 1)`,
/// where `f` is the forward transform in the count domain. Reduces to
/// [`gat_expected`] when `sigma_prime == 0`.
pub fn gat_expected_mixed(y: f64, sigma_prime: f64) -> f64 {
    if sigma_prime == 0.0 {
        return gat_expected(y);
    }
    let (nodes, weights) = hermite_rule(HERMITE_NODES);
    gat_expected_mixed_with_rule(y, sigma_prime, &nodes, &weights)
}

fn gat_expected_mixed_with_rule(y: f64, sigma_prime: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let (lo, pmf) = poisson_window(y.max(0.0));
    let shift = THREE_EIGHTHS + sigma_prime * sigma_prime;
    let mut acc = 0.0;
    for (i, w) in pmf.iter().enumerate() {
        let x = (lo + i as u64) as f64;
        let mut inner = 0.0;
        for (z, q) in nodes.iter().zip(weights) {
            let arg = x + sigma_prime * z + shift;
            if arg > 0.0 {
                inner += q * arg.sqrt();
            }
        }
        acc += inner * w;
    }
    2.0 * acc
}

/// Tabulated `G(y) = E[f(x) | y]` used to invert the transform without bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GatTable {
    y_grid: Vec<f64>,
    g_values: Vec<f64>,
    y_max: f64,
    sigma_prime: f64,
}

impl GatTable {
    /// Grid `[0, 1000]` at step 0.05.
    pub fn build(params: &PoissonGaussianParams) -> Self {
        Self::build_with_grid(params.sigma_prime(), GAT_GRID_STEP, GAT_GRID_MAX)
    }

    pub fn build_with_grid(sigma_prime: f64, step: f64, y_max: f64) -> Self {
        let n = (y_max / step).round() as usize + 1;
        let y_grid: Vec<f64> = (0..n).map(|i| i as f64 * step).collect();
        let g_values: Vec<f64> = if sigma_prime == 0.0 {
            y_grid.par_iter().map(|&y| gat_expected(y)).collect()
        } else {
            let (nodes, weights) = hermite_rule(HERMITE_NODES);
            y_grid
                .par_iter()
                .map(|&y| gat_expected_mixed_with_rule(y, sigma_prime, &nodes, &weights))
                .collect()
        };
        let y_max = *y_grid.last().unwrap_or(&0.0);
        Self { y_grid, g_values, y_max, sigma_prime }
    }

    pub fn y_grid(&self) -> &[f64] {
        &self.y_grid
    }

    pub fn g_values(&self) -> &[f64] {
        &self.g_values
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn sigma_prime(&self) -> f64 {
        self.sigma_prime
    }

    /// Poisson-domain mean `y` with `G(y) = d`.
    pub fn invert_counts(&self, d: f64) -> f64 {
        let g = &self.g_values;
        let n = g.len();
        if n == 0 || d <= g[0] {
            return self.y_grid.first().copied().unwrap_or(0.0);
        }
        if d > g[n - 1] {
            let half = 0.5 * d;
            return half * half - THREE_EIGHTHS - self.sigma_prime * self.sigma_prime;
        }
        // g[lo] < d <= g[hi]
        let (mut lo, mut hi) = (0usize, n - 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if g[mid] < d {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = (d - g[lo]) / (g[hi] - g[lo]);
        self.y_grid[lo] + t * (self.y_grid[hi] - self.y_grid[lo])
    }

    /// Writes one `y G(y)` pair per line with 9 significant digits, after a
    /// `#` header recording `sigma_prime`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# sigma_prime={:.8e}", self.sigma_prime)?;
        for (y, g) in self.y_grid.iter().zip(&self.g_values) {
            writeln!(w, "{y:.8e} {g:.8e}")?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
        let mut sigma_prime = 0.0;
        let mut y_grid = Vec::new();
        let mut g_values = Vec::new();
        for line in reader.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("sigma_prime=") {
                    sigma_prime = v.trim().parse().map_err(|e| bad(format!("{e}")))?;
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let (Some(y), Some(g), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad(format!("expected two columns, got `{line}`")));
            };
            y_grid.push(y.parse::<f64>().map_err(|e| bad(format!("{e}")))?);
            g_values.push(g.parse::<f64>().map_err(|e| bad(format!("{e}")))?);
        }
        if y_grid.len() < 2 || y_grid.windows(2).any(|p| p[1] <= p[0]) {
            return Err(bad("grid must hold at least two strictly ascending points".into()));
        }
        let y_max = *y_grid.last().unwrap();
        Ok(Self { y_grid, g_values, y_max, sigma_prime })
    }
}

/// Exact unbiased inverse, returned in signal units (`y / alpha + p`).
#[inline]
pub fn gat_inverse(d: f64, params: &PoissonGaussianParams, table: &GatTable) -> f64 {
    table.invert_counts(d) / params.alpha + params.p
}

pub fn gat_inverse_image(img: &GrayImage, params: &PoissonGaussianParams, table: &GatTable) -> GrayImage {
    img.map(|d| gat_inverse(d, params, table))
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    values.sort_by(|a, b| a.total_cmp(b));
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Noise std from the median absolute deviation of the finest diagonal
/// (Haar HH) subband.
pub fn estimate_sigma_mad(img: &GrayImage) -> Result<f64> {
    const MIN: usize = 16;
    if img.width() < MIN || img.height() < MIN {
        return Err(Error::ImageTooSmall { width: img.width(), height: img.height(), min: MIN });
    }
    let mut hh = Vec::with_capacity((img.width() / 2) * (img.height() / 2));
    for r in (0..img.height() - 1).step_by(2) {
        for c in (0..img.width() - 1).step_by(2) {
            let v = img.get(r, c) - img.get(r, c + 1) - img.get(r + 1, c) + img.get(r + 1, c + 1);
            hh.push(0.5 * v);
        }
    }
    let center = median(&mut hh.clone());
    let mut dev: Vec<f64> = hh.iter().map(|v| (v - center).abs()).collect();
    Ok(median(&mut dev) * MAD_TO_SIGMA)
}

/// Per-tile (mean, variance) pairs over `tile x tile` blocks of one CFA plane.
fn tile_stats(plane: &[f64], width: usize, height: usize, tile: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let n = (tile * tile) as f64;
    for tr in (0..height / tile).map(|t| t * tile) {
        for tc in (0..width / tile).map(|t| t * tile) {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for r in tr..tr + tile {
                for c in tc..tc + tile {
                    let v = plane[r * width + c];
                    sum += v;
                    sq += v * v;
                }
            }
            let mean = sum / n;
            let var = ((sq - n * mean * mean) / (n - 1.0)).max(0.0);
            out.push((mean, var));
        }
    }
    out
}

/// Fits `var = mean / alpha + b^2` for one plane. Returns `(alpha, b)`.
fn fit_plane(stats: &[(f64, f64)], tile_pixels: f64) -> Result<(f64, f64)> {
    let n = stats.len() as f64;
    let mean_m = stats.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_v = stats.iter().map(|s| s.1).sum::<f64>() / n;
    if mean_v <= 0.0 {
        return Err(Error::DegenerateFit("region has zero variance".into()));
    }
    let sxx: f64 = stats.iter().map(|s| (s.0 - mean_m).powi(2)).sum();
    let sxy: f64 = stats.iter().map(|s| (s.0 - mean_m) * (s.1 - mean_v)).sum();

    // Tile means scatter by about var/tile_pixels even on a flat signal; a
    // spread of levels well beyond that is needed to identify the slope.
    let spread = sxx / n;
    if spread > 16.0 * mean_v / tile_pixels {
        let slope = sxy / sxx;
        if slope <= 0.0 {
            return Err(Error::DegenerateFit(format!("variance-mean slope {slope:.3e} is not positive")));
        }
        let intercept = (mean_v - slope * mean_m).max(0.0);
        Ok((1.0 / slope, intercept.sqrt()))
    } else {
        // One signal level cannot separate the Poisson and Gaussian parts;
        // attribute the variance to the signal-dependent term.
        if mean_m <= 0.0 {
            return Err(Error::DegenerateFit("flat region with non-positive mean".into()));
        }
        Ok((mean_m / mean_v, 0.0))
    }
}

/// Estimates `(alpha, b)` from an RGGB mosaic region; `p` is fixed to 0.
///
/// Each CFA plane of the region is cut into 8x8 tiles and fitted on its own;
/// the minimum `alpha` and minimum `b` over the four planes are returned.
pub fn estimate_pg_params(img: &GrayImage, region: Region) -> Result<PoissonGaussianParams> {
    const MIN: usize = 64;
    const TILE: usize = 8;
    if region.width < MIN || region.height < MIN {
        return Err(Error::RegionTooSmall { width: region.width, height: region.height, min: MIN });
    }
    if region.row + region.height > img.height() || region.col + region.width > img.width() {
        return Err(Error::DimensionMismatch("flat region exceeds the image".into()));
    }
    let ph = region.height / 2;
    let pw = region.width / 2;
    let mut alpha_min = f64::INFINITY;
    let mut b_min = f64::INFINITY;
    for (dr, dc) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
        let mut plane = Vec::with_capacity(ph * pw);
        for r in 0..ph {
            for c in 0..pw {
                plane.push(img.get(region.row + 2 * r + dr, region.col + 2 * c + dc));
            }
        }
        let stats = tile_stats(&plane, pw, ph, TILE);
        let (alpha, b) = fit_plane(&stats, (TILE * TILE) as f64)?;
        alpha_min = alpha_min.min(alpha);
        b_min = b_min.min(b);
    }
    PoissonGaussianParams::new(alpha_min, b_min, 0.0)
}
