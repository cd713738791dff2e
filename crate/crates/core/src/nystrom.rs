//! Nyström completion `B W_k† Bᵀ` of a global distance or kernel matrix from
//! the landmark block `W` and the client-assembled cross block `B`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{gaussian_kernel, mmd, self_sq_dist, DataMatrix, KernelParams};
use crate::linalg::{frobenius_sq, sorted_eigen, symmetrize};
use crate::privacy::PrivacyMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixKind {
    /// Squared Euclidean distances.
    Distance,
    Kernel,
}

/// Landmark-to-landmark block `W` (`D_{Y,Y}` or `K_{Y,Y}`).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkBlock {
    w: DMatrix<f64>,
    kind: MatrixKind,
}

impl LandmarkBlock {
    pub fn new(w: DMatrix<f64>, kind: MatrixKind) -> Result<Self> {
        if !w.is_square() || w.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!("landmark block is {:?}", w.shape())));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("landmark block".into()));
        }
        let n = w.nrows();
        let scale = w.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..n {
            for j in 0..i {
                if (w[(i, j)] - w[(j, i)]).abs() > 1e-10 * scale {
                    return Err(Error::InvalidArgument(format!("landmark block asymmetric at ({i}, {j})")));
                }
            }
            let want = if kind == MatrixKind::Kernel { 1.0 } else { 0.0 };
            if (w[(i, i)] - want).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!(
                    "landmark block diagonal {} at {i}, expected {want}",
                    w[(i, i)]
                )));
            }
        }
        Ok(Self { w, kind })
    }

    /// Builds `W` directly from landmarks.
    pub fn from_landmarks(y: &DataMatrix, kind: MatrixKind, params: KernelParams) -> Result<Self> {
        let d2 = self_sq_dist(y);
        let w = match kind {
            MatrixKind::Distance => d2,
            MatrixKind::Kernel => gaussian_kernel(&d2, params)?,
        };
        Self::new(w, kind)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClientRows {
    pub client: usize,
    pub start: usize,
    pub end: usize,
}

/// Client blocks stacked in ascending client-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossBlock {
    b: DMatrix<f64>,
    ranges: Vec<ClientRows>,
}

impl CrossBlock {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn ranges(&self) -> &[ClientRows] {
        &self.ranges
    }

    pub fn rows(&self) -> usize {
        self.b.nrows()
    }

    /// Maps per-client local values (in client-local row order) to the
    /// assembled row order.
    pub fn rows_of(&self, client: usize) -> Option<std::ops::Range<usize>> {
        self.ranges.iter().find(|r| r.client == client).map(|r| r.start..r.end)
    }
}

/// Stacks `(client id, n_p × n_y block)` pairs, sorting by client id.
pub fn assemble_cross_block(blocks: &[(usize, DMatrix<f64>)]) -> Result<CrossBlock> {
    let first = blocks
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client blocks to assemble".into()))?;
    let cols = first.1.ncols();
    let mut order: Vec<usize> = (0..blocks.len()).collect();
    order.sort_by_key(|&i| blocks[i].0);
    if order.windows(2).any(|w| blocks[w[0]].0 == blocks[w[1]].0) {
        return Err(Error::InvalidArgument("duplicate client id in upload".into()));
    }
    let total: usize = blocks.iter().map(|(_, b)| b.nrows()).sum();
    let mut b = DMatrix::zeros(total, cols);
    let mut ranges = Vec::with_capacity(blocks.len());
    let mut start = 0;
    for i in order {
        let (client, block) = &blocks[i];
        if block.ncols() != cols {
            return Err(Error::DimensionMismatch(format!(
                "client {client} uploaded {} columns, expected {cols}",
                block.ncols()
            )));
        }
        let end = start + block.nrows();
        b.rows_mut(start, block.nrows()).copy_from(block);
        ranges.push(ClientRows {
            client: *client,
            start,
            end,
        });
        start = end;
    }
    Ok(CrossBlock { b, ranges })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionParams {
    /// `None` keeps all `n_y` eigenpairs.
    pub rank_k: Option<usize>,
    /// `None` applies the automatic ridge when `W` is near-singular.
    pub ridge_lambda: Option<f64>,
    /// Eigenvalues with `|λ| <= eigen_floor · max|λ|` are treated as zero.
    pub eigen_floor: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self {
            rank_k: None,
            ridge_lambda: None,
            eigen_floor: 1e-12,
        }
    }
}

impl CompletionParams {
    pub fn exact(rank_k: usize) -> Self {
        Self {
            rank_k: Some(rank_k),
            ridge_lambda: Some(0.0),
            eigen_floor: 1e-12,
        }
    }
}

/// What `rank_k_pinv` actually did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PinvInfo {
    pub k: usize,
    pub lambda: f64,
    pub kept: usize,
}

fn auto_ridge(w: &DMatrix<f64>) -> f64 {
    let n = w.nrows();
    if n < 2 {
        return 0.0;
    }
    let s: f64 = (0..n - 1).map(|i| w[(i, i + 1)].abs()).sum();
    1e-6 * s / (n - 1) as f64
}

fn pinv_from_eigen(values: &[f64], vectors: &DMatrix<f64>, k: usize, floor: f64) -> Result<(DMatrix<f64>, usize)> {
    let max = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    let kept: Vec<usize> = idx
        .into_iter()
        .take(k)
        .filter(|&i| max > 0.0 && values[i].abs() > floor * max)
        .collect();
    if kept.is_empty() {
        return Err(Error::Numerical("landmark block numerically rank-zero".into()));
    }
    let n = vectors.nrows();
    let mut scaled = DMatrix::zeros(n, kept.len());
    let mut basis = DMatrix::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        let col = vectors.column(i);
        basis.set_column(c, &col);
        scaled.set_column(c, &(col / values[i]));
    }
    let mut p = scaled * basis.transpose();
    symmetrize(&mut p);
    Ok((p, kept.len()))
}

/// `W_k†` of `W + λI`: keeps the `k` eigenvalues of largest magnitude above
/// the relative floor and inverts them with their sign.
pub fn rank_k_pinv(w: &LandmarkBlock, params: &CompletionParams) -> Result<(DMatrix<f64>, PinvInfo)> {
    let n = w.dim();
    let k = params.rank_k.unwrap_or(n);
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("rank k = {k} outside 1..={n}")));
    }
    if !(params.eigen_floor.is_finite() && params.eigen_floor >= 0.0) {
        return Err(Error::InvalidArgument(format!("eigen_floor {}", params.eigen_floor)));
    }
    let with_ridge = |lambda: f64| {
        let mut m = w.matrix().clone();
        for i in 0..n {
            m[(i, i)] += lambda;
        }
        sorted_eigen(m)
    };
    let (lambda, (values, vectors)) = match params.ridge_lambda {
        Some(l) if !(l.is_finite() && l >= 0.0) => {
            return Err(Error::InvalidArgument(format!("ridge lambda {l} must be >= 0")));
        }
        Some(l) => (l, with_ridge(l)),
        None => {
            let (values, vectors) = with_ridge(0.0);
            let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            let smallest_kept = mags[k - 1];
            if smallest_kept < 1e-10 * mags[0] {
                let l = auto_ridge(w.matrix());
                (l, with_ridge(l))
            } else {
                (0.0, (values, vectors))
            }
        }
    };
    let (p, kept) = pinv_from_eigen(&values, &vectors, k, params.eigen_floor)?;
    Ok((p, PinvInfo { k, lambda, kept }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub n_y: usize,
    pub k: usize,
    pub lambda: f64,
    pub kept_eigenpairs: usize,
    pub privacy_mode: PrivacyMode,
    /// Entries changed by clamping (off-diagonal only).
    pub clamped_entries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletedMatrix {
    pub values: DMatrix<f64>,
    pub kind: MatrixKind,
    pub provenance: Provenance,
    /// Per-client row ranges copied from the cross block.
    pub ranges: Vec<ClientRows>,
}

/// Raw symmetrized product `B W_k† Bᵀ` before any clamping.
pub fn nystrom_product(b: &CrossBlock, w: &LandmarkBlock, params: &CompletionParams) -> Result<(DMatrix<f64>, PinvInfo)> {
    if b.matrix().ncols() != w.dim() {
        return Err(Error::DimensionMismatch(format!(
            "cross block has {} columns, landmark block is {}x{}",
            b.matrix().ncols(),
            w.dim(),
            w.dim()
        )));
    }
    let (pinv, info) = rank_k_pinv(w, params)?;
    let left = b.matrix() * pinv;
    let mut m = left * b.matrix().transpose();
    symmetrize(&mut m);
    Ok((m, info))
}

/// Clamps to the kind's valid range and fixes the diagonal; returns the
/// number of off-diagonal entries changed.
pub fn post_process(m: &mut DMatrix<f64>, kind: MatrixKind) -> usize {
    let n = m.nrows();
    let mut clamped = 0;
    for j in 0..n {
        for i in 0..n {
            if i == j {
                m[(i, j)] = if kind == MatrixKind::Kernel { 1.0 } else { 0.0 };
                continue;
            }
            let v = m[(i, j)];
            let c = match kind {
                MatrixKind::Distance => v.max(0.0),
                MatrixKind::Kernel => v.clamp(0.0, 1.0),
            };
            if c != v {
                clamped += 1;
                m[(i, j)] = c;
            }
        }
    }
    clamped
}

pub fn nystrom_complete(
    b: &CrossBlock,
    w: &LandmarkBlock,
    params: &CompletionParams,
    privacy_mode: PrivacyMode,
) -> Result<CompletedMatrix> {
    let (mut values, info) = nystrom_product(b, w, params)?;
    let clamped = post_process(&mut values, w.kind());
    Ok(CompletedMatrix {
        values,
        kind: w.kind(),
        provenance: Provenance {
            n_y: w.dim(),
            k: info.k,
            lambda: info.lambda,
            kept_eigenpairs: info.kept,
            privacy_mode,
            clamped_entries: clamped,
        },
        ranges: b.ranges().to_vec(),
    })
}

/// Completion of the augmented matrix `H = [W Bᵀ; B Z]`: the known blocks are
/// kept verbatim and only `Z` is replaced by `B W_k† Bᵀ`.
pub fn nystrom_augmented(b: &CrossBlock, w: &LandmarkBlock, params: &CompletionParams) -> Result<DMatrix<f64>> {
    let (z, _) = nystrom_product(b, w, params)?;
    let (ny, nx) = (w.dim(), b.rows());
    let mut h = DMatrix::zeros(ny + nx, ny + nx);
    h.view_mut((0, 0), (ny, ny)).copy_from(w.matrix());
    h.view_mut((ny, 0), (nx, ny)).copy_from(b.matrix());
    h.view_mut((0, ny), (ny, nx)).copy_from(&b.matrix().transpose());
    h.view_mut((ny, ny), (nx, nx)).copy_from(&z);
    Ok(h)
}

/// `√(m + √(2mt) + 2t)`.
pub fn xi_m(m: usize, t: f64) -> f64 {
    let m = m as f64;
    (m + (2.0 * m * t).sqrt() + 2.0 * t).sqrt()
}

/// `2 k^{1/4} n_x √(1 + n_y/n_x)`.
pub fn rank_term(k: usize, n_x: usize, n_y: usize) -> f64 {
    let (k, nx, ny) = (k as f64, n_x as f64, n_y as f64);
    2.0 * k.powf(0.25) * nx * (1.0 + ny / nx).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub params: KernelParams,
    pub rank_k: usize,
    /// Confidence parameter of the data-perturbation bound.
    pub t: f64,
    /// Data-perturbation noise std (ignored in other modes).
    pub sigma: f64,
}

/// Computable terms of the kernel-completion error bounds. Fields that need
/// the raw data are `None` when it is not supplied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub cond_number: Option<f64>,
    pub mmd_term: Option<f64>,
    pub rank_term: f64,
    pub prefactor: f64,
    pub spectral_rho: f64,
    pub xi_m: f64,
    /// Extra data-perturbation term `√2 n_x γ [σ²ξ² + √2 ‖D‖_∞ σ ξ]`.
    pub noise_term: Option<f64>,
    pub bound_frobenius: Option<f64>,
    pub bound_spectral: Option<f64>,
    /// Realized `‖K̂ − K‖_F` when the true kernel is supplied.
    pub realized_frobenius: Option<f64>,
}

fn condition_number(m: DMatrix<f64>) -> f64 {
    let (values, _) = sorted_eigen(m);
    let max = values.first().copied().unwrap_or(0.0);
    let min = values.last().copied().unwrap_or(0.0);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Evaluates the bound terms for landmarks `y`, optionally with the data `x`
/// seen by the protocol, the completed kernel `k_hat` and the exact kernel.
pub fn evaluate_bounds(
    x: Option<&DataMatrix>,
    y: &DataMatrix,
    k_hat: Option<&DMatrix<f64>>,
    k_true: Option<&DMatrix<f64>>,
    mode: PrivacyMode,
    inputs: &BoundInputs,
) -> Result<BoundReport> {
    let n_y = y.len();
    let n_x = x
        .map(DataMatrix::len)
        .or_else(|| k_hat.map(|k| k.nrows()))
        .or_else(|| k_true.map(|k| k.nrows()))
        .ok_or_else(|| Error::InvalidArgument("bounds need the data, K̂ or K".into()))?;
    if inputs.rank_k == 0 || inputs.rank_k > n_x + n_y {
        return Err(Error::InvalidArgument(format!(
            "rank k = {} outside 1..={}",
            inputs.rank_k,
            n_x + n_y
        )));
    }
    let prefactor = ((n_x + n_y - inputs.rank_k) as f64).sqrt();
    let rank = rank_term(inputs.rank_k, n_x, n_y);
    let xi = xi_m(y.dim(), inputs.t);

    let mut report = BoundReport {
        cond_number: None,
        mmd_term: None,
        rank_term: rank,
        prefactor,
        spectral_rho: 1.0,
        xi_m: xi,
        noise_term: None,
        bound_frobenius: None,
        bound_spectral: None,
        realized_frobenius: None,
    };
    if let (Some(kh), Some(kt)) = (k_hat, k_true) {
        if kh.shape() != kt.shape() {
            return Err(Error::DimensionMismatch("K̂ and K differ in shape".into()));
        }
        report.realized_frobenius = Some(frobenius_sq(&(kh - kt)).sqrt());
    }
    let Some(x) = x else {
        return Ok(report);
    };
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch("data and landmarks differ in dimension".into()));
    }
    let mut aug = DMatrix::zeros(y.dim(), n_y + n_x);
    aug.columns_mut(0, n_y).copy_from(y.as_matrix());
    aug.columns_mut(n_y, n_x).copy_from(x.as_matrix());
    let aug_d2 = self_sq_dist(&DataMatrix::new(aug)?);
    let k_aug = gaussian_kernel(&aug_d2, inputs.params)?;
    report.spectral_rho = (0..k_aug.nrows()).map(|i| k_aug[(i, i)]).fold(0.0, f64::max);
    let cond = condition_number(k_aug);
    let mmd_term = if n_x >= 2 && n_y >= 2 {
        mmd(x, y, inputs.params)?.abs() / (n_x + n_y) as f64
    } else {
        0.0
    };
    let core = cond * (mmd_term + 1.0);
    let noise = if mode == PrivacyMode::DataPerturb {
        let d_inf = aug_d2
            .view((n_y, n_y), (n_x, n_x))
            .iter()
            .fold(0.0f64, |a, &v| a.max(v))
            .sqrt();
        let s = inputs.sigma;
        Some(2f64.sqrt() * n_x as f64 * inputs.params.gamma * (s * s * xi * xi + 2f64.sqrt() * d_inf * s * xi))
    } else {
        None
    };
    let extra = noise.unwrap_or(0.0);
    let frob_core = if prefactor == 0.0 { 0.0 } else { prefactor * core };
    report.cond_number = Some(cond);
    report.mmd_term = Some(mmd_term);
    report.noise_term = noise;
    report.bound_frobenius = Some(frob_core + rank + extra);
    report.bound_spectral = Some(core + 2.0 * n_x as f64 + extra);
    Ok(report)
}
