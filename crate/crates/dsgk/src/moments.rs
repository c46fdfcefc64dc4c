//! Batch-wise and class-conditional Gaussian statistics and the
//! covariance-gap RBF kernel.
//!
//! A batch is summarized by its mean and population covariance
//! (`1/N`, not `1/(N-1)`); the kernel between two batches is
//! `exp(-kappa * ||Sigma_S - Sigma_T||_F^2)`, a value in (0, 1] that hits 1
//! exactly when the covariances coincide. Class-conditional variants slice
//! the batch by label first.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Classes with fewer samples than this (in either domain) are skipped
/// when forming class-conditional statistics.
pub const MIN_CLASS_COUNT: usize = 2;

/// Kernel values are floored here instead of underflowing to exactly 0.
pub const KERNEL_FLOOR: f64 = 1e-300;

/// An `N x d` matrix of per-sample feature (or probability) vectors,
/// optionally labeled.
#[derive(Debug, Clone)]
pub struct FeatureBatch {
    pub data: Array2<f64>,
    pub labels: Option<Vec<usize>>,
}

impl FeatureBatch {
    pub fn new(data: Array2<f64>) -> Self {
        Self { data, labels: None }
    }

    pub fn labeled(data: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        Ok(Self {
            data,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    /// Rows whose label equals `c`, order preserved. May be empty.
    pub fn class_slice(&self, c: usize) -> Result<FeatureBatch> {
        let labels = self.labels.as_ref().ok_or(Error::MissingLabels)?;
        let rows: Vec<usize> = labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect();
        let data = self.data.select(Axis(0), &rows);
        Ok(FeatureBatch {
            data,
            labels: Some(vec![c; rows.len()]),
        })
    }

    /// Row indices whose label equals `c`, in row order.
    pub fn class_indices(&self, c: usize) -> Result<Vec<usize>> {
        let labels = self.labels.as_ref().ok_or(Error::MissingLabels)?;
        Ok(labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == c)
            .map(|(i, _)| i)
            .collect())
    }
}

/// Mean vector and population covariance matrix of a batch.
#[derive(Debug, Clone)]
pub struct GaussianStats {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
}

/// Column mean and `1/N`-normalized covariance of the batch rows.
pub fn batch_stats(b: &FeatureBatch) -> Result<GaussianStats> {
    batch_stats_view(b.data.view())
}

/// [`batch_stats`] on a raw matrix view.
pub fn batch_stats_view(data: ArrayView2<'_, f64>) -> Result<GaussianStats> {
    let n = data.nrows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let mean = data.mean_axis(Axis(0)).expect("nonempty batch");
    let centered = &data - &mean.view().insert_axis(Axis(0));
    let cov = centered.t().dot(&centered) / n as f64;
    Ok(GaussianStats { mean, cov })
}

/// `exp(-kappa * ||a - b||_F^2)`, floored at [`KERNEL_FLOOR`].
pub fn gaussian_kernel(
    sigma_s: ArrayView2<'_, f64>,
    sigma_t: ArrayView2<'_, f64>,
    kappa: f64,
) -> Result<f64> {
    if sigma_s.shape() != sigma_t.shape() {
        return Err(Error::ShapeMismatch(format!(
            "covariance shapes {:?} vs {:?}",
            sigma_s.shape(),
            sigma_t.shape()
        )));
    }
    if kappa <= 0.0 {
        return Err(Error::NonPositiveKappa(kappa));
    }
    let gap = frobenius_gap_sq(sigma_s, sigma_t);
    Ok((-kappa * gap).exp().max(KERNEL_FLOOR))
}

/// Squared Frobenius norm of `a - b`.
pub fn frobenius_gap_sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Kernel between the class-`c` conditional covariances of two labeled batches.
///
/// Both class slices must hold at least `min_class_count` samples; otherwise
/// the class must be skipped for this batch and `InsufficientClassSamples`
/// is returned.
pub fn categorical_kernel(
    b_s: &FeatureBatch,
    b_t: &FeatureBatch,
    c: usize,
    kappa: f64,
    min_class_count: usize,
) -> Result<f64> {
    let slice_s = b_s.class_slice(c)?;
    let slice_t = b_t.class_slice(c)?;
    for len in [slice_s.len(), slice_t.len()] {
        if len < min_class_count {
            return Err(Error::InsufficientClassSamples {
                class: c,
                got: len,
                needed: min_class_count,
            });
        }
    }
    let stats_s = batch_stats(&slice_s)?;
    let stats_t = batch_stats(&slice_t)?;
    gaussian_kernel(stats_s.cov.view(), stats_t.cov.view(), kappa)
}
