//! Pairwise distances, Gaussian kernels and the MMD objective with its gradient.
//!
//! Data matrices store one point per column (`m` features × `n` points).

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column_sums, total_sum};
use crate::rng;

/// Squared Euclidean distances, `n_x × n_y`.
pub type SquaredDistanceMatrix = DMatrix<f64>;
/// Gaussian kernel values in `(0, 1]`, `n_x × n_y`.
pub type KernelMatrix = DMatrix<f64>;

/// A finite, non-empty `m × n` matrix whose columns are data points.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "data matrix entry {} (row {}, column {})",
                pos,
                pos % values.nrows(),
                pos / values.nrows()
            )));
        }
        Ok(Self(values))
    }

    /// Builds from column-major values (`values[j*m + i]` is feature `i` of point `j`).
    pub fn from_column_major(m: usize, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * n {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {m}x{n} matrix",
                values.len()
            )));
        }
        Self::new(DMatrix::from_vec(m, n, values))
    }

    /// Builds from a list of points, each of length `m`.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let m = points.first().map_or(0, Vec::len);
        if points.iter().any(|p| p.len() != m) {
            return Err(Error::DimensionMismatch("points of unequal length".into()));
        }
        Self::from_column_major(m, points.len(), points.concat())
    }

    pub(crate) fn from_matrix_unchecked(values: DMatrix<f64>) -> Self {
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self(values)
    }

    /// Feature dimension `m`.
    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    /// Number of points `n`.
    pub fn len(&self) -> usize {
        self.0.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn point(&self, j: usize) -> &[f64] {
        let m = self.dim();
        &self.0.as_slice()[j * m..(j + 1) * m]
    }

    /// Keeps the listed columns, in the given order.
    pub fn select_points(&self, idx: &[usize]) -> Result<Self> {
        let m = self.dim();
        let mut values = Vec::with_capacity(m * idx.len());
        for &j in idx {
            values.extend_from_slice(self.point(j));
        }
        Self::from_column_major(m, idx.len(), values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        crate::linalg::frobenius_sq(&self.0).sqrt()
    }
}

/// Gaussian bandwidth for `k(x, y) = exp(-γ‖x − y‖²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub gamma: f64,
}

impl KernelParams {
    /// `γ = 0` is accepted (all-ones kernel) so degenerate cases stay testable.
    pub fn new(gamma: f64) -> Result<Self> {
        if !gamma.is_finite() || gamma < 0.0 {
            return Err(Error::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    /// Median heuristic `γ = 1 / (2 · median ‖y_i − y_j‖²)` over at most
    /// `sample_size` points drawn from `points`.
    pub fn median_heuristic(points: &DataMatrix, sample_size: usize, seed: u64) -> Result<Self> {
        let n = points.len();
        let subset = if n > sample_size {
            let mut rng = rng::stream(seed, &[rng::purpose::GAMMA_SAMPLE]);
            let mut idx = sample(&mut rng, n, sample_size).into_vec();
            idx.sort_unstable();
            points.select_points(&idx)?
        } else {
            points.clone()
        };
        let d2 = self_sq_dist(&subset);
        let k = subset.len();
        let mut upper: Vec<f64> = (0..k)
            .flat_map(|j| (0..j).map(move |i| (i, j)))
            .map(|(i, j)| d2[(i, j)])
            .collect();
        if upper.is_empty() {
            return Err(Error::InvalidArgument("median heuristic needs at least two points".into()));
        }
        upper.sort_by(|a, b| a.total_cmp(b));
        let mid = upper.len() / 2;
        let median = if upper.len() % 2 == 0 {
            0.5 * (upper[mid - 1] + upper[mid])
        } else {
            upper[mid]
        };
        if median <= 0.0 {
            return Err(Error::Numerical(
                "median pairwise squared distance is zero; set gamma explicitly".into(),
            ));
        }
        Self::new(1.0 / (2.0 * median))
    }
}

fn check_same_dim(x: &DataMatrix, y: &DataMatrix) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(format!(
            "feature dimensions differ: {} vs {}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

fn sq_norms(x: &DataMatrix) -> Vec<f64> {
    (0..x.len())
        .map(|j| x.point(j).iter().map(|v| v * v).sum())
        .collect()
}

/// `‖x_i − y_j‖²` through the Gram expansion, negatives clamped to zero.
///
/// When `x` and `y` hold the same points the result is exactly symmetric with a
/// zero diagonal.
pub fn pairwise_sq_dist(x: &DataMatrix, y: &DataMatrix) -> Result<SquaredDistanceMatrix> {
    check_same_dim(x, y)?;
    if std::ptr::eq(x, y) || x == y {
        return Ok(self_sq_dist(x));
    }
    let gram = x.as_matrix().transpose() * y.as_matrix();
    let nx = sq_norms(x);
    let ny = sq_norms(y);
    Ok(DMatrix::from_fn(x.len(), y.len(), |i, j| {
        (nx[i] + ny[j] - 2.0 * gram[(i, j)]).max(0.0)
    }))
}

/// Squared distances of a point set to itself.
pub fn self_sq_dist(x: &DataMatrix) -> SquaredDistanceMatrix {
    let n = x.len();
    let gram = x.as_matrix().transpose() * x.as_matrix();
    let mut d2 = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..j {
            let v = (gram[(i, i)] + gram[(j, j)] - 2.0 * gram[(i, j)]).max(0.0);
            d2[(i, j)] = v;
            d2[(j, i)] = v;
        }
    }
    d2
}

/// Elementwise `exp(−γ · D²)`.
pub fn gaussian_kernel(d2: &SquaredDistanceMatrix, params: KernelParams) -> Result<KernelMatrix> {
    if let Some(v) = d2.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::NonFinite(format!(
            "squared distances must be finite and nonnegative, found {v}"
        )));
    }
    Ok(d2.map(|v| (-params.gamma * v).exp()))
}

/// Kernel matrix of two point sets.
pub fn kernel_between(x: &DataMatrix, y: &DataMatrix, params: KernelParams) -> Result<KernelMatrix> {
    gaussian_kernel(&pairwise_sq_dist(x, y)?, params)
}

fn check_mmd_inputs(xp: &DataMatrix, y: &DataMatrix) -> Result<()> {
    check_same_dim(xp, y)?;
    if xp.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "MMD estimator needs at least two points per side, got {} and {}",
            xp.len(),
            y.len()
        )));
    }
    Ok(())
}

/// `[1ᵀK1 − n] / (n(n−1))` for the kernel of a set with itself.
fn within_term(k: &KernelMatrix) -> f64 {
    let n = k.nrows() as f64;
    (total_sum(k) - n) / (n * (n - 1.0))
}

/// Empirical MMD between client data `xp` and landmarks `y`:
///
/// `[1ᵀK_XX1 − n_p]/(n_p(n_p−1)) − 2·1ᵀK_XY1/(n_p n_y) + [1ᵀK_YY1 − n_y]/(n_y(n_y−1))`.
///
/// The within-set terms exclude the diagonal, so the value can be slightly
/// negative.
pub fn mmd(xp: &DataMatrix, y: &DataMatrix, params: KernelParams) -> Result<f64> {
    check_mmd_inputs(xp, y)?;
    let kxx = gaussian_kernel(&self_sq_dist(xp), params)?;
    MmdObjective::with_within(xp, within_term(&kxx), params).value(y)
}

/// Gradient of [`mmd`] with respect to the landmarks `y` (an `m × n_y` matrix).
pub fn mmd_gradient(xp: &DataMatrix, y: &DataMatrix, params: KernelParams) -> Result<DataMatrix> {
    check_mmd_inputs(xp, y)?;
    MmdObjective::with_within(xp, 0.0, params).gradient(y)
}

/// A client's MMD objective `f_p(Y)` with the landmark-independent term cached.
#[derive(Debug, Clone)]
pub struct MmdObjective<'a> {
    data: &'a DataMatrix,
    within_data: f64,
    params: KernelParams,
}

impl<'a> MmdObjective<'a> {
    pub fn new(data: &'a DataMatrix, params: KernelParams) -> Result<Self> {
        if data.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "client shard needs at least two points, got {}",
                data.len()
            )));
        }
        let kxx = gaussian_kernel(&self_sq_dist(data), params)?;
        Ok(Self::with_within(data, within_term(&kxx), params))
    }

    fn with_within(data: &'a DataMatrix, within_data: f64, params: KernelParams) -> Self {
        Self {
            data,
            within_data,
            params,
        }
    }

    pub fn params(&self) -> KernelParams {
        self.params
    }

    pub fn value(&self, y: &DataMatrix) -> Result<f64> {
        check_mmd_inputs(self.data, y)?;
        let kxy = kernel_between(self.data, y, self.params)?;
        let kyy = gaussian_kernel(&self_sq_dist(y), self.params)?;
        let (np, ny) = (self.data.len() as f64, y.len() as f64);
        let cross = 2.0 * total_sum(&kxy) / (np * ny);
        Ok(self.within_data - cross + within_term(&kyy))
    }

    pub fn gradient(&self, y: &DataMatrix) -> Result<DataMatrix> {
        check_mmd_inputs(self.data, y)?;
        let gamma = self.params.gamma;
        let (np, ny) = (self.data.len() as f64, y.len() as f64);
        let ym = y.as_matrix();

        let kxy = kernel_between(self.data, y, self.params)?;
        let kyy = gaussian_kernel(&self_sq_dist(y), self.params)?;

        // X K_XY − Y Diag(1ᵀK_XY)
        let mut attract = self.data.as_matrix() * &kxy;
        for (j, s) in column_sums(&kxy).into_iter().enumerate() {
            attract.column_mut(j).axpy(-s, &ym.column(j), 1.0);
        }
        // Y K_YY − Y Diag(1ᵀK_YY)
        let mut repel = ym * &kyy;
        for (j, s) in column_sums(&kyy).into_iter().enumerate() {
            repel.column_mut(j).axpy(-s, &ym.column(j), 1.0);
        }

        let a = -4.0 * gamma / (np * ny);
        let b = 4.0 * gamma / (ny * (ny - 1.0));
        let grad = attract * a + repel * b;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MMD gradient".into()));
        }
        Ok(DataMatrix::from_matrix_unchecked(grad))
    }
}
