//! Variable-adaptive filtering of PCA coefficient sequences.
//!
//! Each retained principal direction yields a 1-D sequence of coefficients
//! (one per patch, in cluster member order). Its local second moment is
//! estimated over a window chosen per position by the intersection of
//! confidence intervals rule, then the coefficient is shrunk by a
//! suboptimal Wiener gain.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::spectral::{pca_decompose, select_rank};

#[derive(Debug, Clone, PartialEq)]
pub struct IciConfig {
    /// Candidate half-widths, ascending.
    pub window_sizes: Vec<usize>,
    pub gamma: f64,
}

impl Default for IciConfig {
    fn default() -> Self {
        Self { window_sizes: vec![1, 2, 3, 5, 8, 13, 21, 34, 55], gamma: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WienerConfig {
    pub beta: f64,
    pub alpha_step: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self { beta: 0.7, alpha_step: 0.005 }
    }
}

/// A coefficient sequence with its noise level.
#[derive(Debug, Clone)]
pub struct DimensionSignal {
    pub values: Vec<f64>,
    pub sigma: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl DimensionSignal {
    pub fn new(values: Vec<f64>, sigma: f64) -> Self {
        let mut sum = Vec::with_capacity(values.len() + 1);
        let mut sum_sq = Vec::with_capacity(values.len() + 1);
        let (mut s, mut q) = (0.0, 0.0);
        sum.push(0.0);
        sum_sq.push(0.0);
        for v in &values {
            s += v;
            q += v * v;
            sum.push(s);
            sum_sq.push(q);
        }
        Self { values, sigma, sum, sum_sq }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Inclusive index range `[n-h, n+h]` clipped to the sequence.
    fn span(&self, n: usize, h: usize) -> (usize, usize) {
        (n.saturating_sub(h), (n + h).min(self.len() - 1))
    }
}

/// Zero-order LPA estimate at `n` (0-based) with half-width `h`: the window
/// mean and its standard deviation `sigma / sqrt(N)`.
pub fn lpa_estimate(signal: &DimensionSignal, n: usize, h: usize) -> (f64, f64) {
    let (a, b) = signal.span(n, h);
    let count = (b - a + 1) as f64;
    let mean = (signal.sum[b + 1] - signal.sum[a]) / count;
    (mean, signal.sigma / count.sqrt())
}

/// Largest candidate half-width whose confidence intervals, intersected with
/// those of all smaller candidates, are still non-empty.
///
/// Candidates above `(L-1)/2` are discarded; when none remain the returned
/// half-width spans the whole sequence.
pub fn ici_select_window(signal: &DimensionSignal, n: usize, cfg: &IciConfig) -> usize {
    let cap = signal.len().saturating_sub(1) / 2;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    let mut best = None;
    for &h in cfg.window_sizes.iter().filter(|&&h| h <= cap) {
        let (mean, std) = lpa_estimate(signal, n, h);
        lo = lo.max(mean - cfg.gamma * std);
        hi = hi.min(mean + cfg.gamma * std);
        if lo > hi {
            break;
        }
        best = Some(h);
    }
    best.unwrap_or(signal.len())
}

/// Mean of squared coefficients over the window `[n-h, n+h]`.
pub fn local_autocov(signal: &DimensionSignal, n: usize, h: usize) -> f64 {
    let (a, b) = signal.span(n, h);
    (signal.sum_sq[b + 1] - signal.sum_sq[a]) / (b - a + 1) as f64
}

/// Maximizer over the alpha grid of the normalized-MSE gain minus the
/// `beta * alpha^2` penalty; ties go to the smaller alpha.
pub fn optimal_alpha(g: f64, cfg: &WienerConfig) -> f64 {
    let steps = (1.0 / cfg.alpha_step).round() as usize;
    let num = (1.0 - g) * (1.0 - g);
    let mut best_alpha = 0.0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..=steps {
        let alpha = k as f64 / steps as f64;
        let den = 1.0 - alpha * g;
        let j = num / (den * den) - cfg.beta * alpha * alpha;
        if j > best {
            best = j;
            best_alpha = alpha;
        }
    }
    best_alpha
}

pub fn shrink_coefficient(y: f64, r_y: f64, sigma: f64, cfg: &WienerConfig) -> f64 {
    let noise = sigma * sigma;
    if r_y <= noise {
        return 0.0;
    }
    if sigma == 0.0 {
        return y;
    }
    let g = noise / r_y;
    (1.0 - optimal_alpha(g, cfg) * g) * y
}

pub fn filter_dimension(signal: &DimensionSignal, ici: &IciConfig, wiener: &WienerConfig) -> Vec<f64> {
    (0..signal.len())
        .map(|n| {
            let h = ici_select_window(signal, n, ici);
            let r_y = local_autocov(signal, n, h);
            shrink_coefficient(signal.values[n], r_y, signal.sigma, wiener)
        })
        .collect()
}

/// Denoises an `M x L` cluster (column-major): PCA, rank truncation at
/// `mu` times the noise edge, per-dimension filtering, back-projection.
pub fn denoise_cluster(
    data: &[f64],
    m: usize,
    l: usize,
    sigma: f64,
    mu: f64,
    ici: &IciConfig,
    wiener: &WienerConfig,
) -> Result<Vec<f64>> {
    let pca = pca_decompose(data, m, l)?;
    let rank = select_rank(&pca.eigenvalues, sigma, m, l, mu).rank;
    let mut filtered = DMatrix::zeros(rank, l);
    for i in 0..rank {
        let row: Vec<f64> = pca.coeffs.row(i).iter().copied().collect();
        let out = filter_dimension(&DimensionSignal::new(row, sigma), ici, wiener);
        for (j, v) in out.into_iter().enumerate() {
            filtered[(i, j)] = v;
        }
    }
    Ok(pca.reconstruct(&filtered, rank).as_slice().to_vec())
}
