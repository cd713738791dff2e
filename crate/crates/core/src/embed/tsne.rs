use std::borrow::Cow;

use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optim::{minimize, Schedule};
use super::{validate_distances, AffinityDiagnostics, AffinityMatrix, Embedding};
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::rng::{self, purpose};

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_SEARCH: usize = 200;
const P_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub out_dim: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub exaggeration: f64,
    pub exaggeration_iters: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            out_dim: 2,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            exaggeration: 12.0,
            exaggeration_iters: 250,
            init_std: 1e-4,
            seed: 0,
        }
    }
}

struct RowFit {
    p: Vec<f64>,
    perplexity: f64,
    uniform: bool,
    converged: bool,
}

fn fit_row(d: &[f64], i: usize, target: f64) -> RowFit {
    let n = d.len();
    let others = (0..n).filter(|&j| j != i);
    let dmin = others.clone().map(|j| d[j]).fold(f64::INFINITY, f64::min);
    let dmax = others.clone().map(|j| d[j]).fold(f64::NEG_INFINITY, f64::max);
    let uniform_row = || {
        let mut p = vec![1.0 / (n - 1) as f64; n];
        p[i] = 0.0;
        p
    };
    if dmax - dmin <= 1e-12 * dmax.abs().max(1.0) {
        return RowFit {
            p: uniform_row(),
            perplexity: (n - 1) as f64,
            uniform: true,
            converged: (target - (n - 1) as f64).abs() <= PERPLEXITY_TOL,
        };
    }
    let shifted: Vec<f64> = (0..n).map(|j| if j == i { 0.0 } else { d[j] - dmin }).collect();
    let mut e = vec![0.0; n];
    let eval = |beta: f64, e: &mut [f64]| -> f64 {
        for j in 0..n {
            e[j] = if j == i { 0.0 } else { (-beta * shifted[j]).exp() };
        }
        let s = pairwise_sum(e);
        let weighted: Vec<f64> = (0..n).map(|j| shifted[j] * e[j]).collect();
        let h = s.ln() + beta * pairwise_sum(&weighted) / s;
        h.exp()
    };
    let mean: f64 = shifted.iter().sum::<f64>() / (n - 1) as f64;
    let mut beta = 1.0 / mean;
    let (mut lo, mut hi) = (0.0, f64::INFINITY);
    let mut perp = eval(beta, &mut e);
    let mut converged = false;
    for _ in 0..MAX_SEARCH {
        if (perp - target).abs() <= PERPLEXITY_TOL {
            converged = true;
            break;
        }
        if perp > target {
            lo = beta;
            beta = if hi.is_infinite() { beta * 2.0 } else { 0.5 * (beta + hi) };
        } else {
            hi = beta;
            beta = 0.5 * (lo + beta);
        }
        perp = eval(beta, &mut e);
    }
    let s = pairwise_sum(&e);
    RowFit {
        p: e.iter().map(|v| v / s).collect(),
        perplexity: perp,
        uniform: false,
        converged,
    }
}

/// Joint probabilities `p_ij = (p_{j|i} + p_{i|j}) / 2n` with per-row
/// bandwidths calibrated to `perplexity` (`2^H`, `H` in bits).
pub fn tsne_affinities(d2: &DMatrix<f64>, perplexity: f64) -> Result<AffinityMatrix> {
    validate_distances(d2, 3)?;
    let n = d2.nrows();
    if !(perplexity > 0.0 && perplexity < n as f64) {
        return Err(Error::InvalidArgument(format!("perplexity {perplexity} outside (0, {n})")));
    }
    let fits: Vec<RowFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row: Vec<f64> = d2.column(i).iter().copied().collect();
            fit_row(&row, i, perplexity)
        })
        .collect();
    let mut diagnostics = AffinityDiagnostics::default();
    for (i, f) in fits.iter().enumerate() {
        if f.uniform {
            diagnostics.uniform_rows.push(i);
        } else if !f.converged {
            diagnostics.unconverged_rows.push(i);
        }
        diagnostics.per_row.push(f.perplexity);
    }
    let mut p = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            ((fits[i].p[j] + fits[j].p[i]) / (2.0 * n as f64)).max(P_FLOOR)
        }
    });
    let total = pairwise_sum(p.as_slice());
    p /= total;
    Ok(AffinityMatrix { values: p, diagnostics })
}

/// Row-major `n × d` loss with the joint probabilities `p`.
pub(crate) struct KlObjective<'a> {
    /// `Pᵀ`, so row `i` of `P` is a contiguous column.
    pt: Cow<'a, DMatrix<f64>>,
    n: usize,
    d: usize,
    p_log_p: f64,
}

impl<'a> KlObjective<'a> {
    pub(crate) fn new(p: &'a DMatrix<f64>, d: usize) -> Self {
        let terms: Vec<f64> = p.iter().map(|&v| if v > 0.0 { v * v.ln() } else { 0.0 }).collect();
        let pt = if p == &p.transpose() {
            Cow::Borrowed(p)
        } else {
            Cow::Owned(p.transpose())
        };
        Self {
            pt,
            n: p.nrows(),
            d,
            p_log_p: pairwise_sum(&terms),
        }
    }

    /// KL(P‖Q); fills `grad` with the gradient for `exaggeration · P`.
    ///
    /// With `w = 1/(1+‖zᵢ−zⱼ‖²)` and `Z = Σw`, the gradient splits into
    /// `4 Σ pw(zᵢ−zⱼ) − (4/Z) Σ w²(zᵢ−zⱼ)`, so one pass per row suffices.
    pub(crate) fn eval(&self, z: &[f64], exaggeration: f64, grad: &mut [f64]) -> f64 {
        let (n, d) = (self.n, self.d);
        let coords: Vec<Vec<f64>> = (0..d).map(|k| (0..n).map(|j| z[j * d + k]).collect()).collect();
        let pt = self.pt.as_slice();
        let rows: Vec<RowTerms> = (0..n)
            .into_par_iter()
            .map_init(
                || (vec![0.0; n], vec![0.0; n]),
                |(w, pw), i| {
                    let p_row = &pt[i * n..(i + 1) * n];
                    w.fill(1.0);
                    for c in &coords {
                        let zi = c[i];
                        for (wj, &zj) in w.iter_mut().zip(c) {
                            *wj += (zi - zj) * (zi - zj);
                        }
                    }
                    for wj in w.iter_mut() {
                        *wj = 1.0 / *wj;
                    }
                    w[i] = 0.0;
                    for ((o, &p), &wj) in pw.iter_mut().zip(p_row).zip(w.iter()) {
                        *o = p * wj;
                    }
                    let mut attract = vec![0.0; d];
                    let mut repel = vec![0.0; d];
                    for (k, c) in coords.iter().enumerate() {
                        let zi = c[i];
                        let (mut a, mut r) = (0.0, 0.0);
                        for ((&zj, &pwj), &wj) in c.iter().zip(pw.iter()).zip(w.iter()) {
                            let diff = zi - zj;
                            a += pwj * diff;
                            r += wj * wj * diff;
                        }
                        attract[k] = a;
                        repel[k] = r;
                    }
                    let w_sum = pairwise_sum(w);
                    for ((o, &p), &wj) in pw.iter_mut().zip(p_row).zip(w.iter()) {
                        *o = if p > 0.0 { p * wj.ln() } else { 0.0 };
                    }
                    pw[i] = 0.0;
                    RowTerms {
                        attract,
                        repel,
                        w_sum,
                        cross: pairwise_sum(pw),
                    }
                },
            )
            .collect();
        let total = pairwise_sum(&rows.iter().map(|t| t.w_sum).collect::<Vec<_>>());
        for (i, t) in rows.iter().enumerate() {
            for k in 0..d {
                grad[i * d + k] = 4.0 * (exaggeration * t.attract[k] - t.repel[k] / total);
            }
        }
        let cross = pairwise_sum(&rows.iter().map(|t| t.cross).collect::<Vec<_>>());
        let p_sum = pairwise_sum(pt);
        self.p_log_p - cross + p_sum * total.ln()
    }
}

struct RowTerms {
    attract: Vec<f64>,
    repel: Vec<f64>,
    w_sum: f64,
    cross: f64,
}

fn to_rows(z: &DMatrix<f64>) -> Vec<f64> {
    let (n, d) = z.shape();
    (0..n).flat_map(|i| (0..d).map(move |k| (i, k))).map(|(i, k)| z[(i, k)]).collect()
}

fn check_p(p: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<()> {
    if !p.is_square() || p.nrows() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "affinities {:?} vs embedding {:?}",
            p.shape(),
            z.shape()
        )));
    }
    Ok(())
}

/// KL(P‖Q) at the embedding `z` (`n × d`).
pub fn tsne_loss(p: &AffinityMatrix, z: &DMatrix<f64>) -> Result<f64> {
    check_p(&p.values, z)?;
    let obj = KlObjective::new(&p.values, z.ncols());
    let mut g = vec![0.0; z.len()];
    Ok(obj.eval(&to_rows(z), 1.0, &mut g))
}

/// `4 Σ_j (p_ij − q_ij)(1 + ‖z_i − z_j‖²)^{-1}(z_i − z_j)`.
pub fn tsne_gradient(p: &AffinityMatrix, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_p(&p.values, z)?;
    let obj = KlObjective::new(&p.values, z.ncols());
    let mut g = vec![0.0; z.len()];
    obj.eval(&to_rows(z), 1.0, &mut g);
    Ok(DMatrix::from_row_slice(z.nrows(), z.ncols(), &g))
}

pub fn tsne_embed(p: &AffinityMatrix, config: &TsneConfig) -> Result<Embedding> {
    let n = p.values.nrows();
    if config.out_dim == 0 {
        return Err(Error::InvalidArgument("out_dim must be >= 1".into()));
    }
    if !(config.learning_rate > 0.0 && config.exaggeration >= 1.0 && config.init_std >= 0.0) {
        return Err(Error::InvalidArgument("invalid t-SNE optimizer settings".into()));
    }
    let d = config.out_dim;
    let mut r = rng::stream(config.seed, &[purpose::EMBED_INIT]);
    let z0: Vec<f64> = (0..n * d).map(|_| config.init_std * r.sample::<f64, _>(StandardNormal)).collect();
    let obj = KlObjective::new(&p.values, d);
    let schedule = Schedule {
        iterations: config.iterations,
        learning_rate: config.learning_rate,
        momentum: config.momentum,
        final_momentum: config.final_momentum,
        momentum_switch: config.momentum_switch_iter,
        exaggeration: config.exaggeration,
        exaggeration_iters: config.exaggeration_iters,
        monotone_from: config.exaggeration_iters,
        clip: None,
    };
    let (z, trace) = minimize(z0, &schedule, |z, e, g| obj.eval(z, e, g))?;
    Ok(Embedding {
        z: DMatrix::from_row_slice(n, d, &z),
        objective_trace: trace,
        point_ids: (0..n).collect(),
    })
}
