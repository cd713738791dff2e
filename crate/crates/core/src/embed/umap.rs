use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{minimize, Schedule};
use super::{validate_distances, AffinityDiagnostics, AffinityMatrix, Embedding};
use crate::error::{Error, Result};
use crate::linalg::{pairwise_sum, top_eigen};
use crate::rng::{self, purpose};

const FLOOR: f64 = 1e-12;
const MAX_SEARCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UmapInit {
    /// Leading nontrivial eigenvectors of the normalized membership graph.
    #[default]
    Spectral,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UmapConfig {
    pub out_dim: usize,
    pub n_neighbors: usize,
    pub a: f64,
    pub b: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub init: UmapInit,
    /// Initial coordinates span `[-init_range, init_range]`.
    pub init_range: f64,
    /// Per-coordinate gradient clip applied by the optimizer.
    pub gradient_clip: f64,
    pub seed: u64,
}

impl Default for UmapConfig {
    fn default() -> Self {
        Self {
            out_dim: 2,
            n_neighbors: 15,
            a: 1.0,
            b: 1.0,
            iterations: 500,
            learning_rate: 1.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 100,
            init: UmapInit::Spectral,
            init_range: 10.0,
            gradient_clip: 4.0,
            seed: 0,
        }
    }
}

/// `a + b − ab`, evaluated as `hi + lo(1 − hi)` so that it is symmetric
/// and exact when either side is 1.
pub fn fuzzy_union(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + lo * (1.0 - hi)
}

/// Returns `(σ, converged)` with `Σ_j exp(−max(0, d_j − ρ)/σ) = target`.
fn calibrate_sigma(dists: &[f64], rho: f64, target: f64) -> (f64, bool) {
    let mass = |sigma: f64| -> f64 { dists.iter().map(|&d| (-((d - rho).max(0.0)) / sigma).exp()).sum() };
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut sigma = 1.0;
    for _ in 0..MAX_SEARCH {
        let m = mass(sigma);
        if (m - target).abs() < 1e-5 {
            return (sigma, true);
        }
        if m > target {
            hi = sigma;
            sigma = 0.5 * (lo + hi);
        } else {
            lo = sigma;
            sigma = if hi.is_infinite() { sigma * 2.0 } else { 0.5 * (lo + hi) };
        }
    }
    (sigma, false)
}

/// Smooth k-NN memberships on Euclidean distances `√d2`, symmetrized by
/// fuzzy union. Ties between equidistant neighbors go to the lower index.
pub fn umap_graph(d2: &DMatrix<f64>, n_neighbors: usize) -> Result<AffinityMatrix> {
    validate_distances(d2, 2)?;
    let n = d2.nrows();
    if n_neighbors == 0 || n_neighbors >= n {
        return Err(Error::InvalidArgument(format!("n_neighbors {n_neighbors} outside 1..{n}")));
    }
    let target = (n_neighbors as f64).log2();
    let rows: Vec<(Vec<(usize, f64)>, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(usize, f64)> = (0..n).filter(|&j| j != i).map(|j| (j, d2[(i, j)].sqrt())).collect();
            cand.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            cand.truncate(n_neighbors);
            let rho = cand[0].1;
            let dists: Vec<f64> = cand.iter().map(|c| c.1).collect();
            let mean = dists.iter().sum::<f64>() / dists.len() as f64;
            let (sigma, ok) = calibrate_sigma(&dists, rho, target);
            let sigma = sigma.max(1e-3 * mean).max(f64::MIN_POSITIVE);
            let memberships = cand
                .iter()
                .map(|&(j, d)| (j, (-((d - rho).max(0.0)) / sigma).exp()))
                .collect();
            (memberships, sigma, ok || n_neighbors == 1)
        })
        .collect();
    let mut cond = DMatrix::zeros(n, n);
    let mut diagnostics = AffinityDiagnostics::default();
    for (i, (m, sigma, ok)) in rows.into_iter().enumerate() {
        for (j, v) in m {
            cond[(i, j)] = v;
        }
        if !ok {
            diagnostics.unconverged_rows.push(i);
        }
        diagnostics.per_row.push(sigma);
    }
    let mu = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { fuzzy_union(cond[(i, j)], cond[(j, i)]) });
    Ok(AffinityMatrix { values: mu, diagnostics })
}

pub(crate) struct CrossEntropy<'a> {
    mu: &'a DMatrix<f64>,
    n: usize,
    d: usize,
    a: f64,
    b: f64,
}

fn xlogx_over(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        x * (x / y).ln()
    } else {
        0.0
    }
}

impl<'a> CrossEntropy<'a> {
    pub(crate) fn new(mu: &'a DMatrix<f64>, d: usize, a: f64, b: f64) -> Self {
        Self {
            mu,
            n: mu.nrows(),
            d,
            a,
            b,
        }
    }

    pub(crate) fn eval(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let (n, d, a, b) = (self.n, self.d, self.a, self.b);
        let rows: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let zi = &z[i * d..(i + 1) * d];
                let mut g = vec![0.0; d];
                let mut losses = Vec::with_capacity(n);
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let zj = &z[j * d..(j + 1) * d];
                    let s: f64 = zi.iter().zip(zj).map(|(x, y)| (x - y) * (x - y)).sum();
                    let sb = if b == 1.0 { s } else { s.powf(b) };
                    let q = 1.0 / (1.0 + a * sb);
                    let one_minus_q = a * sb * q;
                    let m = self.mu[(i, j)];
                    losses.push(xlogx_over(m, q.max(FLOOR)) + xlogx_over(1.0 - m, one_minus_q.max(FLOOR)));
                    if s == 0.0 {
                        continue;
                    }
                    let mut dl_ds = 0.0;
                    if q > FLOOR {
                        dl_ds += m * a * b * sb / s * q;
                    }
                    if one_minus_q > FLOOR {
                        dl_ds -= (1.0 - m) * (b / s - a * b * sb / s * q);
                    }
                    for k in 0..d {
                        g[k] += 4.0 * dl_ds * (zi[k] - zj[k]);
                    }
                }
                (g, pairwise_sum(&losses))
            })
            .collect();
        let mut losses = Vec::with_capacity(n);
        for (i, (g, l)) in rows.into_iter().enumerate() {
            grad[i * d..(i + 1) * d].copy_from_slice(&g);
            losses.push(l);
        }
        pairwise_sum(&losses)
    }
}

fn to_rows(z: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = z.shape();
    (0..n).flat_map(|i| (0..d).map(move |k| z[(i, k)])).collect()
}

fn objective<'a>(mu: &'a AffinityMatrix, z: &DMatrix<f64>, a: f64, b: f64) -> Result<CrossEntropy<'a>> {
    if !mu.values.is_square() || mu.values.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "memberships {:?} vs embedding {:?}",
            mu.values.shape(),
            z.shape()
        )));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::InvalidArgument(format!("curve parameters a = {a}, b = {b} must be > 0")));
    }
    Ok(CrossEntropy::new(&mu.values, z.ncols(), a, b))
}

/// Fuzzy cross-entropy summed over ordered pairs `i ≠ j`.
pub fn umap_loss(mu: &AffinityMatrix, z: &DMatrix<f64>, a: f64, b: f64) -> Result<f64> {
    let obj = objective(mu, z, a, b)?;
    let mut g = vec![0.0; z.len()];
    Ok(obj.eval(&to_rows(z), &mut g))
}

pub fn umap_gradient(mu: &AffinityMatrix, z: &DMatrix<f64>, a: f64, b: f64) -> Result<DMatrix<f64>> {
    let obj = objective(mu, z, a, b)?;
    let mut g = vec![0.0; z.len()];
    obj.eval(&to_rows(z), &mut g);
    Ok(DMatrix::from_row_slice(z.nrows(), z.ncols(), &g))
}

fn random_init(n: usize, d: usize, config: &UmapConfig) -> Vec<f64> {
    let mut r = rng::stream(config.seed, &[purpose::EMBED_INIT]);
    (0..n * d).map(|_| config.init_range * (2.0 * r.random::<f64>() - 1.0)).collect()
}

/// Eigenvectors `2..=d+1` of `D^{-1/2} μ D^{-1/2}`, scaled to `init_range`
/// with a little seeded jitter. `None` when the graph has an isolated point
/// or fewer than `d + 2` points.
fn spectral_init(mu: &DMatrix<f64>, d: usize, config: &UmapConfig) -> Option<Vec<f64>> {
    let n = mu.nrows();
    if n < d + 2 {
        return None;
    }
    let degree: Vec<f64> = (0..n).map(|i| pairwise_sum(&mu.column(i).iter().copied().collect::<Vec<_>>())).collect();
    if degree.iter().any(|&g| g <= 0.0) {
        return None;
    }
    let m = DMatrix::from_fn(n, n, |i, j| mu[(i, j)] / (degree[i] * degree[j]).sqrt());
    let (_, vectors) = top_eigen(&m, d + 1, 2000, config.seed);
    let coords = vectors.columns(1, d);
    let max = coords.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if !(max > 0.0) {
        return None;
    }
    let mut r = rng::stream(config.seed, &[purpose::EMBED_INIT]);
    let scale = config.init_range / max;
    Some(
        (0..n)
            .flat_map(|i| (0..d).map(move |k| (i, k)))
            .map(|(i, k)| scale * coords[(i, k)] + 1e-4 * r.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

/// Full-batch descent on the fuzzy cross-entropy.
pub fn umap_embed(mu: &AffinityMatrix, config: &UmapConfig) -> Result<Embedding> {
    let n = mu.values.nrows();
    let d = config.out_dim;
    if d == 0 {
        return Err(Error::InvalidArgument("out_dim must be >= 1".into()));
    }
    if !(config.learning_rate > 0.0 && config.init_range >= 0.0 && config.gradient_clip > 0.0) {
        return Err(Error::InvalidArgument("invalid UMAP optimizer settings".into()));
    }
    let z0 = match config.init {
        UmapInit::Random => random_init(n, d, config),
        UmapInit::Spectral => spectral_init(&mu.values, d, config).unwrap_or_else(|| random_init(n, d, config)),
    };
    let obj = objective(mu, &DMatrix::zeros(n, d), config.a, config.b)?;
    let schedule = Schedule {
        iterations: config.iterations,
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        final_momentum: config.final_momentum,
        momentum_switch: config.momentum_switch_iter,
        exaggeration: 1.0,
        exaggeration_iters: 0,
        monotone_from: 0,
        clip: Some(config.gradient_clip),
    };
    let (z, trace) = minimize(z0, &schedule, |z, _, g| obj.eval(z, g))?;
    Ok(Embedding {
        z: DMatrix::from_row_slice(n, d, &z),
        objective_trace: trace,
        point_ids: (0..n).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::testutil;

    #[test]
    fn fuzzy_union_truth_table() {
        assert_eq!(fuzzy_union(1.0, 1.0), 1.0);
        assert_eq!(fuzzy_union(1.0, 0.0), 1.0);
        assert_eq!(fuzzy_union(0.0, 0.0), 0.0);
    }

    #[test]
    fn graph_is_symmetric_with_unit_nearest_neighbor() {
        let d = testutil::random_sym(30, 3);
        let mu = umap_graph(&d, 5).unwrap();
        for i in 0..30 {
            assert_eq!(mu.values[(i, i)], 0.0);
            let nn = (0..30)
                .filter(|&j| j != i)
                .min_by(|&a, &b| d[(i, a)].total_cmp(&d[(i, b)]).then(a.cmp(&b)))
                .unwrap();
            assert_eq!(mu.values[(i, nn)], 1.0);
            for j in 0..30 {
                assert_eq!(mu.values[(i, j)], mu.values[(j, i)]);
                assert!((0.0..=1.0).contains(&mu.values[(i, j)]));
            }
        }
    }

    #[test]
    fn duplicate_ties_go_to_lower_index() {
        let d = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 4.0, 1.0, 4.0, 0.0]);
        let mu = umap_graph(&d, 1).unwrap();
        assert_eq!(mu.values[(0, 1)], 1.0);
        assert_eq!(mu.values[(0, 2)], 1.0);
        assert!(umap_graph(&d, 3).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mu = umap_graph(&testutil::random_sym(10, 4), 3).unwrap();
        let mut r = rng::stream(11, &[0]);
        let z = DMatrix::from_fn(10, 2, |_, _| r.sample::<f64, _>(StandardNormal));
        for (a, b) in [(1.0, 1.0), (1.577, 0.895)] {
            let g = umap_gradient(&mu, &z, a, b).unwrap();
            let h = 1e-6;
            for i in 0..10 {
                for k in 0..2 {
                    let mut zp = z.clone();
                    zp[(i, k)] += h;
                    let mut zm = z.clone();
                    zm[(i, k)] -= h;
                    let fd = (umap_loss(&mu, &zp, a, b).unwrap() - umap_loss(&mu, &zm, a, b).unwrap()) / (2.0 * h);
                    let rel = (fd - g[(i, k)]).abs() / g[(i, k)].abs().max(1e-6);
                    assert!(rel < 1e-4, "({i},{k}) fd {fd} analytic {}", g[(i, k)]);
                }
            }
        }
    }

    #[test]
    fn descends_on_random_memberships() {
        let mu = umap_graph(&testutil::random_sym(50, 6), 10).unwrap();
        let out = umap_embed(&mu, &UmapConfig { iterations: 200, ..UmapConfig::default() }).unwrap();
        assert!(out.objective_trace.last().unwrap() < &out.objective_trace[0]);
        assert!(out.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn attractive_pair_contracts() {
        let mu = AffinityMatrix {
            values: DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            diagnostics: AffinityDiagnostics::default(),
        };
        let cfg = UmapConfig {
            iterations: 100,
            init: UmapInit::Random,
            ..UmapConfig::default()
        };
        let out = umap_embed(&mu, &cfg).unwrap();
        let mut r = rng::stream(cfg.seed, &[purpose::EMBED_INIT]);
        let z0: Vec<f64> = (0..4).map(|_| cfg.init_range * (2.0 * r.random::<f64>() - 1.0)).collect();
        let before = ((z0[0] - z0[2]).powi(2) + (z0[1] - z0[3]).powi(2)).sqrt();
        let after = (out.z.row(0) - out.z.row(1)).norm();
        assert!(after < before);
    }
}
