//! Adaptive patch clustering: two-stage K-means over-clustering followed by
//! iterative merging under a noise- and size-aware distance threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::patch::PatchSet;

pub const KMEANS_MAX_ITER: usize = 50;
pub const KMEANS_REL_TOL: f64 = 1e-4;

/// Partition of a set of M-dimensional vectors.
///
/// `member_lists[k]` is ordered so that members coming from one stage-2
/// sub-cluster stay contiguous; the coefficient filter relies on that order.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub dim: usize,
    pub assignments: Vec<usize>,
    /// Flattened, `dim` values per cluster.
    pub centroids: Vec<f64>,
    pub sizes: Vec<usize>,
    pub member_lists: Vec<Vec<usize>>,
}

impl ClusterSet {
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn centroid(&self, k: usize) -> &[f64] {
        &self.centroids[k * self.dim..(k + 1) * self.dim]
    }

    pub fn point_count(&self) -> usize {
        self.assignments.len()
    }

    /// Rebuilds `assignments` from `member_lists`.
    fn reassign(&mut self) {
        for (k, members) in self.member_lists.iter().enumerate() {
            for &i in members {
                self.assignments[i] = k;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergeConfig {
    pub xi: f64,
    pub size_gate: usize,
    pub rho_amp: f64,
    pub epsilon: f64,
}

impl MergeConfig {
    pub fn new(xi: f64, size_gate: usize, rho_amp: f64, epsilon: f64) -> Result<Self> {
        if !(xi > 0.0) {
            return Err(Error::InvalidParameter(format!("merge threshold must be positive, got {xi}")));
        }
        if !(rho_amp > 0.0 && rho_amp <= 1.0) {
            return Err(Error::InvalidParameter(format!("amplification must lie in (0, 1], got {rho_amp}")));
        }
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidParameter(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        Ok(Self { xi, size_gate, rho_amp, epsilon })
    }
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lloyd's algorithm on the points `data[idx[i]*dim ..]`. Returns per-point
/// labels in `0..k` (aligned with `idx`) and flattened centroids.
fn lloyd(
    data: &[f64],
    dim: usize,
    idx: &[usize],
    k: usize,
    rng: &mut ChaCha8Rng,
    max_iter: usize,
    rel_tol: f64,
) -> (Vec<usize>, Vec<f64>) {
    let n = idx.len();
    let point = |i: usize| &data[idx[i] * dim..(idx[i] + 1) * dim];

    if k == 1 {
        let mut c = vec![0.0; dim];
        for i in 0..n {
            for (acc, v) in c.iter_mut().zip(point(i)) {
                *acc += v;
            }
        }
        c.iter_mut().for_each(|v| *v /= n as f64);
        return (vec![0; n], c);
    }

    // scale of the data for the convergence tolerance
    let mut mean = vec![0.0; dim];
    for i in 0..n {
        for (acc, v) in mean.iter_mut().zip(point(i)) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= n as f64);
    let spread = (0..n).map(|i| sq_dist(point(i), &mean)).sum::<f64>() / (n * dim) as f64;
    let tol = rel_tol * spread.sqrt();

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(point(first));
    let mut nearest: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[0..dim])).collect();
    for c in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.extend_from_slice(point(pick));
        let new_c = &centroids[c * dim..(c + 1) * dim];
        for (i, d) in nearest.iter_mut().enumerate() {
            let dd = sq_dist(point(i), new_c);
            if dd < *d {
                *d = dd;
            }
        }
    }

    let norms: Vec<f64> = (0..n).map(|i| dot(point(i), point(i))).collect();
    let mut labels = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for _ in 0..max_iter {
        let c_norms: Vec<f64> = (0..k).map(|c| {
            let cc = &centroids[c * dim..(c + 1) * dim];
            dot(cc, cc)
        }).collect();
        let mut changed = false;
        for i in 0..n {
            let p = point(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = norms[i] - 2.0 * dot(p, &centroids[c * dim..(c + 1) * dim]) + c_norms[c];
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if labels[i] != best {
                labels[i] = best;
                changed = true;
            }
            dists[i] = best_d.max(0.0);
        }

        sums.iter_mut().for_each(|v| *v = 0.0);
        counts.iter_mut().for_each(|v| *v = 0);
        for i in 0..n {
            let c = labels[i];
            counts[c] += 1;
            for (acc, v) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *acc += v;
            }
        }
        // an emptied cluster takes over the point farthest from its centroid
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[labels[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                let old = labels[i];
                counts[old] -= 1;
                for (acc, v) in sums[old * dim..(old + 1) * dim].iter_mut().zip(point(i)) {
                    *acc -= v;
                }
                labels[i] = c;
                counts[c] = 1;
                dists[i] = 0.0;
                sums[c * dim..(c + 1) * dim].copy_from_slice(point(i));
                changed = true;
            }
        }

        let mut movement = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            let mut shift = 0.0;
            for (cv, sv) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..(c + 1) * dim]) {
                let nv = sv * inv;
                shift += (nv - *cv) * (nv - *cv);
                *cv = nv;
            }
            movement += shift.sqrt();
        }
        if !changed || movement < tol {
            break;
        }
    }
    (labels, centroids)
}

fn cluster_set_from_labels(data: &[f64], dim: usize, idx: &[usize], labels: &[usize], k: usize, total: usize) -> Vec<(Vec<usize>, Vec<f64>)> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(idx[i]);
    }
    let _ = total;
    members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let mut c = vec![0.0; dim];
            for &p in &m {
                for (acc, v) in c.iter_mut().zip(&data[p * dim..(p + 1) * dim]) {
                    *acc += v;
                }
            }
            let inv = 1.0 / m.len() as f64;
            c.iter_mut().for_each(|v| *v *= inv);
            (m, c)
        })
        .collect()
}

fn assemble(dim: usize, n_points: usize, groups: Vec<(Vec<usize>, Vec<f64>)>) -> ClusterSet {
    let mut set = ClusterSet {
        dim,
        assignments: vec![0; n_points],
        centroids: Vec::with_capacity(groups.len() * dim),
        sizes: Vec::with_capacity(groups.len()),
        member_lists: Vec::with_capacity(groups.len()),
    };
    for (members, centroid) in groups {
        set.sizes.push(members.len());
        set.centroids.extend_from_slice(&centroid);
        set.member_lists.push(members);
    }
    set.reassign();
    set
}

/// K-means (k-means++ seeding, Lloyd iterations) over column-major vectors.
pub fn kmeans(vectors: &[f64], dim: usize, k: usize, seed: u64, max_iter: usize, rel_tol: f64) -> Result<ClusterSet> {
    if dim == 0 || vectors.len() % dim != 0 {
        return Err(Error::DimensionMismatch(format!("{} values do not split into {dim}-vectors", vectors.len())));
    }
    let n = vectors.len() / dim;
    if k == 0 || k > n {
        return Err(Error::KExceedsPoints { k, points: n });
    }
    let idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (labels, _) = lloyd(vectors, dim, &idx, k, &mut rng, max_iter, rel_tol);
    let groups = cluster_set_from_labels(vectors, dim, &idx, &labels, k, n);
    Ok(assemble(dim, n, groups))
}

/// Number of first-stage clusters for an `s x t` window.
pub fn stage_one_count(window_h: usize, window_w: usize) -> usize {
    ((window_h * window_w) / (256 * 256)).max(4)
}

/// Number of second-stage sub-clusters for a first-stage cluster of `size` patches.
pub fn stage_two_count(size: usize, d: usize) -> usize {
    (size / (d * d)).max(1)
}

/// Derives an independent RNG seed for a sub-task.
pub fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Two-stage divide-and-conquer over-clustering of a window's patches.
pub fn over_cluster(patches: &PatchSet, window_dims: (usize, usize), d: usize, seed: u64) -> ClusterSet {
    let dim = patches.dim();
    let n = patches.len();
    let data = &patches.vectors;
    let all: Vec<usize> = (0..n).collect();
    let k1 = stage_one_count(window_dims.0, window_dims.1).min(n);

    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0));
    let (labels, _) = lloyd(data, dim, &all, k1, &mut rng, KMEANS_MAX_ITER, KMEANS_REL_TOL);
    let stage_one = cluster_set_from_labels(data, dim, &all, &labels, k1, n);

    let groups: Vec<Vec<(Vec<usize>, Vec<f64>)>> = stage_one
        .into_par_iter()
        .enumerate()
        .map(|(ci, (members, centroid))| {
            let k2 = stage_two_count(members.len(), d);
            if k2 == 1 {
                return vec![(members, centroid)];
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, ci as u64 + 1));
            let (labels, _) = lloyd(data, dim, &members, k2, &mut rng, KMEANS_MAX_ITER, KMEANS_REL_TOL);
            cluster_set_from_labels(data, dim, &members, &labels, k2, n)
        })
        .collect();
    assemble(dim, n, groups.into_iter().flatten().collect())
}

/// Merge threshold `sigma^2 * Q`, `Q` the lower `epsilon`-quantile of the
/// chi-squared law with `m` degrees of freedom.
pub fn merge_threshold(sigma: f64, m: usize, epsilon: f64) -> f64 {
    sigma * sigma * chi2_quantile(m, epsilon)
}

/// Inverts `P(m/2, q/2) = p` by bisection on the regularized lower
/// incomplete gamma function.
pub fn chi2_quantile(m: usize, p: f64) -> f64 {
    let a = 0.5 * m as f64;
    let cdf = |q: f64| gamma_lr(a, 0.5 * q);
    let mut lo = 0.0;
    let mut hi = (m as f64).max(1.0);
    while cdf(hi) < p {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-13 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Squared centroid distance, amplified by `1/rho_amp` when both clusters
/// are larger than the size gate.
pub fn effective_distance(a: &[f64], b: &[f64], size_a: usize, size_b: usize, cfg: &MergeConfig) -> f64 {
    let d2 = sq_dist(a, b);
    if size_a.min(size_b) > cfg.size_gate {
        d2 / cfg.rho_amp
    } else {
        d2
    }
}

/// Merges cluster pairs closer than `xi` round by round until none remain.
///
/// Each round sorts every qualifying pair by (distance, lower id, higher id)
/// and merges greedily, letting a cluster take part in one merge per round.
pub fn iterative_merge(mut clusters: ClusterSet, cfg: &MergeConfig) -> ClusterSet {
    let dim = clusters.dim;
    loop {
        let k = clusters.len();
        if k < 2 {
            return clusters;
        }
        let mut pairs: Vec<(f64, usize, usize)> = (0..k)
            .into_par_iter()
            .flat_map_iter(|i| {
                let cl = &clusters;
                (i + 1..k).filter_map(move |j| {
                    let d = effective_distance(cl.centroid(i), cl.centroid(j), cl.sizes[i], cl.sizes[j], cfg);
                    (d < cfg.xi).then_some((d, i, j))
                })
            })
            .collect();
        if pairs.is_empty() {
            return clusters;
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut used = vec![false; k];
        let mut absorbed_into: Vec<Option<usize>> = vec![None; k];
        for &(_, i, j) in &pairs {
            if used[i] || used[j] {
                continue;
            }
            used[i] = true;
            used[j] = true;
            absorbed_into[j] = Some(i);
        }

        let mut sizes = clusters.sizes.clone();
        let mut centroids = clusters.centroids.clone();
        let mut lists = std::mem::take(&mut clusters.member_lists);
        for j in 0..k {
            let Some(i) = absorbed_into[j] else { continue };
            let (si, sj) = (sizes[i] as f64, sizes[j] as f64);
            let total = si + sj;
            for t in 0..dim {
                centroids[i * dim + t] = (si * centroids[i * dim + t] + sj * centroids[j * dim + t]) / total;
            }
            sizes[i] += sizes[j];
            let tail = std::mem::take(&mut lists[j]);
            lists[i].extend(tail);
        }

        let mut next = ClusterSet {
            dim,
            assignments: std::mem::take(&mut clusters.assignments),
            centroids: Vec::with_capacity(k * dim),
            sizes: Vec::with_capacity(k),
            member_lists: Vec::with_capacity(k),
        };
        for c in 0..k {
            if absorbed_into[c].is_some() {
                continue;
            }
            next.sizes.push(sizes[c]);
            next.centroids.extend_from_slice(&centroids[c * dim..(c + 1) * dim]);
            next.member_lists.push(std::mem::take(&mut lists[c]));
        }
        next.reassign();
        clusters = next;
    }
}

/// Label map of a window: each patch's top-left pixel gets its cluster
/// label spread over the gray range. Pixels with no patch corner stay 0.
pub fn label_image(clusters: &ClusterSet, patches: &PatchSet, window_dims: (usize, usize)) -> GrayImage {
    let (h, w) = window_dims;
    let mut img = GrayImage::filled(w, h, 0.0, 255.0);
    let k = clusters.len().max(1);
    for (j, &(r, c)) in patches.coords.iter().enumerate() {
        let label = clusters.assignments[j];
        // spread consecutive labels apart with a multiplicative hash
        let level = ((label * 97) % k) as f64 * 255.0 / (k.max(2) - 1) as f64;
        img.set(r, c, level.min(255.0));
    }
    img
}
