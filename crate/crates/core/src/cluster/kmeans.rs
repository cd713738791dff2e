use nalgebra::DMatrix;
use rand::Rng as _;

use super::ClusterAssignment;
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::rng::{self, purpose};

const MAX_ITER: usize = 300;
const REL_TOL: f64 = 1e-6;
pub const DEFAULT_RESTARTS: usize = 10;

fn sq(points: &DMatrix<f64>, i: usize, centers: &DMatrix<f64>, c: usize) -> f64 {
    (0..points.ncols()).map(|k| (points[(i, k)] - centers[(c, k)]).powi(2)).sum()
}

fn plus_plus(points: &DMatrix<f64>, c: usize, r: &mut rng::Rng) -> DMatrix<f64> {
    let (n, d) = points.shape();
    let mut centers = DMatrix::<f64>::zeros(c, d);
    let mut chosen = vec![false; n];
    let first = r.random_range(0..n);
    chosen[first] = true;
    centers.set_row(0, &points.row(first));
    let mut best: Vec<f64> = (0..n).map(|i| sq(points, i, &centers, 0)).collect();
    for k in 1..c {
        let total = pairwise_sum(&best);
        let pick = if total > 0.0 {
            let mut u = r.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                if w > 0.0 && u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[r.random_range(0..free.len())]
        };
        chosen[pick] = true;
        centers.set_row(k, &points.row(pick));
        for (i, b) in best.iter_mut().enumerate() {
            *b = b.min(sq(points, i, &centers, k));
        }
    }
    centers
}

fn assign(points: &DMatrix<f64>, centers: &DMatrix<f64>, labels: &mut [usize], dists: &mut [f64]) -> f64 {
    for i in 0..points.nrows() {
        let mut best = (f64::INFINITY, 0);
        for c in 0..centers.nrows() {
            let v = sq(points, i, centers, c);
            if v < best.0 {
                best = (v, c);
            }
        }
        labels[i] = best.1;
        dists[i] = best.0;
    }
    pairwise_sum(dists)
}

/// Lloyd iterations; returns labels and the inertia after every assignment.
pub(crate) fn lloyd(points: &DMatrix<f64>, mut centers: DMatrix<f64>) -> (Vec<usize>, Vec<f64>) {
    let (n, d) = points.shape();
    let c = centers.nrows();
    let mut labels = vec![0; n];
    let mut dists = vec![0.0; n];
    let mut trace = vec![assign(points, &centers, &mut labels, &mut dists)];
    for _ in 0..MAX_ITER {
        let mut sums = DMatrix::<f64>::zeros(c, d);
        let mut counts = vec![0usize; c];
        for i in 0..n {
            counts[labels[i]] += 1;
            for k in 0..d {
                sums[(labels[i], k)] += points[(i, k)];
            }
        }
        for k in 0..c {
            if counts[k] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                centers.set_row(k, &points.row(far));
                dists[far] = 0.0;
            } else {
                for j in 0..d {
                    centers[(k, j)] = sums[(k, j)] / counts[k] as f64;
                }
            }
        }
        let prev = *trace.last().unwrap_or(&0.0);
        let inertia = assign(points, &centers, &mut labels, &mut dists);
        trace.push(inertia);
        if prev == 0.0 || (prev - inertia).abs() <= REL_TOL * prev {
            break;
        }
    }
    (labels, trace)
}

/// k-means++ with `restarts` independent seedings, keeping the lowest
/// inertia (first wins on ties). Rows of `points` are the samples.
pub fn kmeans_with(points: &DMatrix<f64>, c: usize, seed: u64, restarts: usize) -> Result<ClusterAssignment> {
    let n = points.nrows();
    if c == 0 || c > n {
        return Err(Error::InvalidArgument(format!("cluster count {c} outside 1..={n}")));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("k-means input".into()));
    }
    let mut best: Option<(Vec<usize>, f64)> = None;
    for run in 0..restarts.max(1) {
        let mut r = rng::stream(seed, &[purpose::KMEANS, run as u64]);
        let centers = plus_plus(points, c, &mut r);
        let (labels, trace) = lloyd(points, centers);
        let inertia = *trace.last().unwrap_or(&0.0);
        if best.as_ref().is_none_or(|b| inertia < b.1) {
            best = Some((labels, inertia));
        }
    }
    let (labels, inertia) = best.expect("at least one restart");
    Ok(ClusterAssignment { labels, c, inertia })
}

pub fn kmeans(points: &DMatrix<f64>, c: usize, seed: u64) -> Result<ClusterAssignment> {
    kmeans_with(points, c, seed, DEFAULT_RESTARTS)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn cloud(n: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, &[1]);
        DMatrix::from_fn(n, 2, |_, _| r.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn one_cluster_per_point() {
        let p = cloud(6, 1);
        let a = kmeans(&p, 6, 0).unwrap();
        let mut l = a.labels.clone();
        l.sort_unstable();
        l.dedup();
        assert_eq!(l.len(), 6);
        assert_eq!(a.inertia, 0.0);
    }

    #[test]
    fn two_points_two_clusters() {
        let p = DMatrix::from_row_slice(2, 1, &[0.0, 5.0]);
        let a = kmeans(&p, 2, 3).unwrap();
        assert_ne!(a.labels[0], a.labels[1]);
    }

    #[test]
    fn inertia_never_increases() {
        let p = cloud(200, 2);
        for s in 0..5 {
            let mut r = rng::stream(s, &[0]);
            let centers = plus_plus(&p, 5, &mut r);
            let (_, trace) = lloyd(&p, centers);
            assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn deterministic_and_rejects_bad_c() {
        let p = cloud(50, 3);
        assert_eq!(kmeans(&p, 3, 9).unwrap(), kmeans(&p, 3, 9).unwrap());
        assert!(kmeans(&p, 0, 9).is_err());
        assert!(kmeans(&p, 51, 9).is_err());
    }

    #[test]
    fn duplicates_fill_all_clusters() {
        let p = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let a = kmeans(&p, 3, 0).unwrap();
        assert!(a.labels.iter().all(|&l| l < 3));
        assert_eq!(a.inertia, 0.0);
    }
}
