//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;

const LEAF: usize = 32;

/// Pairwise (cascade) summation with a fixed split pattern, so the result
/// depends only on the input order and never on threading.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// `1ᵀ M 1` over all entries in storage order.
pub fn total_sum(m: &DMatrix<f64>) -> f64 {
    pairwise_sum(m.as_slice())
}

/// Column sums `1ᵀ M`.
pub fn column_sums(m: &DMatrix<f64>) -> Vec<f64> {
    let rows = m.nrows();
    m.as_slice().chunks(rows.max(1)).map(pairwise_sum).collect()
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    let sq: Vec<f64> = m.iter().map(|v| v * v).collect();
    pairwise_sum(&sq)
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Symmetric eigendecomposition with eigenpairs sorted by descending eigenvalue.
pub fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Applies a row/column permutation: `out[a][b] = m[perm[a]][perm[b]]`.
pub fn permute_symmetric(m: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    let n = perm.len();
    DMatrix::from_fn(n, n, |a, b| m[(perm[a], perm[b])])
}

/// Top-`k` eigenpairs of a symmetric matrix by orthogonal (subspace)
/// iteration from a seeded random block, finished with a Rayleigh–Ritz step.
/// Eigenvalues are returned in descending order.
pub fn top_eigen(m: &DMatrix<f64>, k: usize, max_iter: usize, seed: u64) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let k = k.min(n);
    let shift = (0..n).map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut r = crate::rng::stream(seed, &[crate::rng::purpose::SUBSPACE]);
    let start = DMatrix::from_fn(n, k, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut q = start.qr().q();
    for _ in 0..max_iter {
        let z = m * &q + &q * shift;
        let next = z.qr().q();
        let overlap = next.transpose() * &q;
        let drift = (k as f64 - overlap.iter().map(|v| v * v).sum::<f64>()).abs();
        q = next;
        if drift < 1e-20 {
            break;
        }
    }
    let mut t = q.transpose() * m * &q;
    symmetrize(&mut t);
    let (values, u) = sorted_eigen(t);
    (values, q * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn sorted_eigen_orders_descending() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 4.0, -2.0]));
        let (vals, vecs) = sorted_eigen(m);
        assert_eq!(vals, vec![4.0, 1.0, -2.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn top_eigen_matches_full_decomposition() {
        let a = DMatrix::from_fn(12, 12, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let m = &a + a.transpose();
        let (full, _) = sorted_eigen(m.clone());
        let (top, vecs) = top_eigen(&m, 3, 5000, 1);
        for k in 0..3 {
            assert!((top[k] - full[k]).abs() < 1e-8, "{top:?} vs {full:?}");
            let v = vecs.column(k);
            assert!((&m * v - v * top[k]).norm() < 1e-6);
        }
    }
}
