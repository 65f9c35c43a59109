//! Per-cluster PCA and Marchenko-Pastur rank selection.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Clusters smaller than this skip rank truncation.
pub const TINY_CLUSTER: usize = 4;

#[derive(Debug, Clone)]
pub struct PcaDecomposition {
    pub mean: Vec<f64>,
    /// `M x R_full` orthonormal basis, columns sorted by decreasing eigenvalue.
    pub basis: DMatrix<f64>,
    /// `lambda_i = s_i^2 / L`, decreasing.
    pub eigenvalues: Vec<f64>,
    /// `R_full x L` principal coefficients.
    pub coeffs: DMatrix<f64>,
}

impl PcaDecomposition {
    pub fn full_rank(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Rebuilds the `M x L` data from the leading `rank` components and a
    /// (possibly modified) coefficient matrix with at least `rank` rows.
    pub fn reconstruct(&self, coeffs: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
        let basis = self.basis.columns(0, rank);
        let mut out = basis * coeffs.rows(0, rank);
        for mut col in out.column_iter_mut() {
            for (v, m) in col.iter_mut().zip(&self.mean) {
                *v += m;
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankSelection {
    pub rank: usize,
    pub lambda_edge: f64,
    pub mu: f64,
}

/// PCA of an `M x L` cluster matrix (column-major, one patch per column).
pub fn pca_decompose(data: &[f64], m: usize, l: usize) -> Result<PcaDecomposition> {
    if m == 0 || l == 0 || data.len() != m * l {
        return Err(Error::DimensionMismatch(format!("{} values for a {m}x{l} cluster", data.len())));
    }
    let mut x = DMatrix::from_column_slice(m, l, data);
    let mut mean = vec![0.0; m];
    for col in x.column_iter() {
        for (acc, v) in mean.iter_mut().zip(col.iter()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= l as f64);
    for mut col in x.column_iter_mut() {
        for (v, mu) in col.iter_mut().zip(&mean) {
            *v -= mu;
        }
    }

    let scatter = &x * x.transpose();
    let eig = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let r_full = m.min(l);
    let mut basis = DMatrix::zeros(m, r_full);
    let mut eigenvalues = Vec::with_capacity(r_full);
    for (k, &i) in order.iter().take(r_full).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        let lead = v.iter().copied().fold(0.0_f64, |acc, e| if e.abs() > acc.abs() { e } else { acc });
        if lead < 0.0 {
            v.neg_mut();
        }
        basis.set_column(k, &v);
        eigenvalues.push(eig.eigenvalues[i].max(0.0) / l as f64);
    }
    let coeffs = basis.transpose() * &x;
    Ok(PcaDecomposition { mean, basis, eigenvalues, coeffs })
}

/// Upper edge of the Marchenko-Pastur law for an `M x L` white-noise matrix.
pub fn mp_edge(sigma: f64, m: usize, l: usize) -> f64 {
    let ratio = (m as f64 / l as f64).sqrt();
    sigma * sigma * (1.0 + ratio) * (1.0 + ratio)
}

/// Keeps the eigenvalues above `mu` times the noise edge, at least one.
pub fn select_rank(eigenvalues: &[f64], sigma: f64, m: usize, l: usize, mu: f64) -> RankSelection {
    let lambda_edge = mp_edge(sigma, m, l);
    if l < TINY_CLUSTER {
        return RankSelection { rank: m.min(l).min(eigenvalues.len()).max(1), lambda_edge, mu };
    }
    let above = eigenvalues.iter().filter(|&&v| v > mu * lambda_edge).count();
    RankSelection { rank: above.max(1).min(eigenvalues.len().max(1)), lambda_edge, mu }
}
