use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};

use crate::{Error, Result};

/// A fitted projection onto the leading principal directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Array1<f64>,
    /// `D × k`, orthonormal columns in descending eigenvalue order.
    pub basis: Array2<f64>,
    /// Eigenvalues of the covariance `XᵀX / N` for the kept directions.
    pub eigenvalues: Array1<f64>,
    /// Trace of the covariance.
    pub total_variance: f64,
}

impl Pca {
    pub fn project(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean).dot(&self.basis)
    }
}

fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Eigenpairs sorted by descending eigenvalue (stable on index).
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Fits on mean-centered rows and projects them onto `out_dim` directions.
///
/// With fewer rows than columns the Gram matrix is decomposed instead of
/// the covariance; directions beyond its rank are completed to an
/// orthonormal set and carry eigenvalue 0. Each direction is signed so its
/// largest-magnitude coordinate is positive.
pub fn pca_fit_project(features: &Array2<f64>, out_dim: usize) -> Result<(Array2<f64>, Pca)> {
    let (n, d) = features.dim();
    if out_dim > d {
        return Err(Error::InvalidParameter(format!("cannot keep {out_dim} of {d} dimensions")));
    }
    if n < out_dim {
        return Err(Error::TooFewNodes { nodes: n, out_dim });
    }
    let mean = features.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(d));
    let x = features - &mean;
    let total_variance = x.iter().map(|v| v * v).sum::<f64>() / n as f64;

    let mut basis = Array2::zeros((d, out_dim));
    let mut eigenvalues = Array1::zeros(out_dim);
    if n >= d {
        let cov = x.t().dot(&x) / n as f64;
        let (values, vectors) = sorted_eigen(to_na(&cov));
        for k in 0..out_dim {
            eigenvalues[k] = values[k].max(0.0);
            for r in 0..d {
                basis[[r, k]] = vectors[(r, k)];
            }
        }
    } else {
        let gram = x.dot(&x.t()) / n as f64;
        let (values, vectors) = sorted_eigen(to_na(&gram));
        let scale = values.first().copied().unwrap_or(0.0).max(total_variance);
        let mut filled = 0;
        for (k, &lambda) in values.iter().enumerate().take(out_dim) {
            if lambda <= scale * 1e-12 {
                break;
            }
            let u = Array1::from_shape_fn(n, |i| vectors[(i, k)]);
            let v = x.t().dot(&u) / (n as f64 * lambda).sqrt();
            basis.column_mut(k).assign(&v);
            eigenvalues[k] = lambda;
            filled += 1;
        }
        // Complete with Gram-Schmidt over the standard basis.
        let mut candidate = 0;
        while filled < out_dim {
            let mut e = Array1::<f64>::zeros(d);
            e[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for k in 0..filled {
                    let b = basis.column(k);
                    let proj = b.dot(&e);
                    e.scaled_add(-proj, &b);
                }
            }
            let norm = e.dot(&e).sqrt();
            if norm > 1e-6 {
                basis.column_mut(filled).assign(&(e / norm));
                filled += 1;
            }
        }
    }
    for mut col in basis.columns_mut() {
        let mut best = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|v| -v);
        }
    }
    let projected = x.dot(&basis);
    Ok((
        projected,
        Pca {
            mean,
            basis,
            eigenvalues,
            total_variance,
        },
    ))
}
