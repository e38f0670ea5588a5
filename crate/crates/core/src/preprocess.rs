//! Centering and whitening of raw measurements.
//!
//! The transform is fitted once on normal training data and then reused,
//! unchanged, for every sample scored online.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest one are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Mean, eigenvectors and eigenvalues of the training covariance.
///
/// `x_white = diag(eigvals)^(-1/2) * eigvecs^T * (x - mean)`
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mean: DVector<f64>,
    /// Orthonormal columns, ordered to match `eigvals`.
    pub eigvecs: DMatrix<f64>,
    /// Nonnegative, sorted descending.
    pub eigvals: DVector<f64>,
}

impl WhiteningTransform {
    pub fn identity(m: usize) -> Self {
        WhiteningTransform {
            mean: DVector::zeros(m),
            eigvecs: DMatrix::identity(m, m),
            eigvals: DVector::from_element(m, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let mut z = self.eigvecs.tr_mul(&(x - &self.mean));
        for (zi, li) in z.iter_mut().zip(self.eigvals.iter()) {
            *zi /= li.sqrt();
        }
        Ok(z)
    }

    /// Whitens every row of `data`.
    pub fn apply_rows(&self, data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if data.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: data.ncols(),
            });
        }
        let centered = DMatrix::from_fn(data.nrows(), data.ncols(), |i, j| {
            data[(i, j)] - self.mean[j]
        });
        let mut out = centered * &self.eigvecs;
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col /= self.eigvals[j].sqrt();
        }
        Ok(out)
    }

    /// Maps a whitened vector back to measurement units.
    pub fn invert(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: z.len(),
            });
        }
        let scaled = DVector::from_iterator(
            z.len(),
            z.iter().zip(self.eigvals.iter()).map(|(zi, li)| zi * li.sqrt()),
        );
        Ok(&self.eigvecs * scaled + &self.mean)
    }
}

/// Fits the whitening transform on the rows of `data` (one row per time step).
///
/// Uses the unbiased `1/(N-1)` sample covariance of the centered data.
pub fn fit_whitening(data: &DMatrix<f64>) -> Result<WhiteningTransform> {
    let (n, m) = data.shape();
    if n < 2 {
        return Err(Error::config("data", "at least two rows are required"));
    }
    if m == 0 {
        return Err(Error::config("data", "at least one column is required"));
    }
    if let Some((i, j)) = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .find(|&(i, j)| !data[(i, j)].is_finite())
    {
        return Err(Error::Numeric(format!(
            "non-finite value at row {i}, column {j}"
        )));
    }

    let mean = DVector::from_iterator(m, data.column_iter().map(|c| c.mean()));
    let cov = sample_covariance(data, &mean);

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let eigvals = DVector::from_iterator(m, order.iter().map(|&i| eig.eigenvalues[i].max(0.0)));
    let mut eigvecs = DMatrix::zeros(m, m);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).clone_owned();
        // sign convention: largest-magnitude component positive
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        eigvecs.set_column(dst, &v);
    }

    let largest = eigvals[0];
    let deficient: Vec<usize> = (0..m)
        .filter(|&i| !(largest > 0.0) || eigvals[i] < RANK_TOLERANCE * largest)
        .collect();
    if !deficient.is_empty() {
        return Err(Error::RankDeficient {
            eigenvalues: deficient.iter().map(|&i| eigvals[i]).collect(),
            directions: deficient,
        });
    }

    Ok(WhiteningTransform {
        mean,
        eigvecs,
        eigvals,
    })
}

pub(crate) fn sample_covariance(data: &DMatrix<f64>, mean: &DVector<f64>) -> DMatrix<f64> {
    let (n, m) = data.shape();
    let centered = DMatrix::from_fn(n, m, |i, j| data[(i, j)] - mean[j]);
    let mut cov = centered.tr_mul(&centered) / (n as f64 - 1.0);
    symmetrize(&mut cov);
    cov
}

pub(crate) fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}
