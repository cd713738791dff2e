use nalgebra::DMatrix;

use super::kmeans::kmeans;
use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, permute_symmetric, sorted_eigen};

/// Ng–Jordan–Weiss spectral clustering on a similarity matrix.
///
/// Degrees use off-diagonal similarities. A point with zero similarity to
/// every other point cannot join any cluster and gets its own id
/// `c, c + 1, …`.
pub fn spectral_cluster(k: &DMatrix<f64>, c: usize, seed: u64) -> Result<ClusterAssignment> {
    let n = k.nrows();
    if !k.is_square() {
        return Err(Error::DimensionMismatch(format!("similarity matrix is {:?}", k.shape())));
    }
    if c < 2 || c > n {
        return Err(Error::InvalidArgument(format!("cluster count {c} outside 2..={n}")));
    }
    for i in 0..n {
        for j in 0..n {
            let v = k[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("similarity ({i}, {j}) = {v}")));
            }
            if j < i && (v - k[(j, i)]).abs() > 1e-10 {
                return Err(Error::InvalidArgument(format!("similarity matrix asymmetric at ({i}, {j})")));
            }
        }
    }
    let degree: Vec<f64> = (0..n)
        .map(|i| {
            let row: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| k[(i, j)]).collect();
            pairwise_sum(&row)
        })
        .collect();
    let connected: Vec<usize> = (0..n).filter(|&i| degree[i] > 0.0).collect();
    let isolated: Vec<usize> = (0..n).filter(|&i| degree[i] <= 0.0).collect();

    let mut labels = vec![usize::MAX; n];
    let mut inertia = 0.0;
    if connected.len() >= c {
        let sub = permute_symmetric(k, &connected);
        let m = connected.len();
        let inv_sqrt: Vec<f64> = connected.iter().map(|&i| 1.0 / degree[i].sqrt()).collect();
        let norm = DMatrix::from_fn(m, m, |a, b| if a == b { 0.0 } else { sub[(a, b)] * inv_sqrt[a] * inv_sqrt[b] });
        let (_, vectors) = sorted_eigen(norm);
        let mut rows = vectors.columns(0, c).into_owned();
        for mut r in rows.row_iter_mut() {
            let len = r.norm();
            if len > 0.0 {
                r /= len;
            }
        }
        let assignment = kmeans(&rows, c, seed)?;
        inertia = assignment.inertia;
        for (a, &i) in connected.iter().enumerate() {
            labels[i] = assignment.labels[a];
        }
    } else {
        for (a, &i) in connected.iter().enumerate() {
            labels[i] = a;
        }
    }
    let mut next = c;
    for &i in &isolated {
        labels[i] = next;
        next += 1;
    }
    Ok(ClusterAssignment { labels, c: next, inertia })
}
