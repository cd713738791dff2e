use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::kmeans::kmeans;
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum;
use crate::rng::{self, purpose};

fn row_dist(z: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..z.ncols()).map(|k| (z[(i, k)] - z[(j, k)]).powi(2)).sum::<f64>().sqrt()
}

/// Indices of the `k` nearest points to `i` (self excluded, ties by index).
fn knn_by<F: Fn(usize) -> f64>(n: usize, i: usize, k: usize, dist: F) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(j), j)).collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.truncate(k);
    cand.into_iter().map(|c| c.1).collect()
}

fn check_labels(z: &DMatrix<f64>, labels: &[usize]) -> Result<()> {
    if labels.len() != z.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} points",
            labels.len(),
            z.nrows()
        )));
    }
    Ok(())
}

/// Stratified `train_ratio` split, `k`-NN majority vote (ties to the smaller
/// label), accuracy on the held-out side. Rows of `z` are points.
pub fn ca_knn(z: &DMatrix<f64>, labels: &[usize], k: usize, train_ratio: f64, seed: u64) -> Result<f64> {
    check_labels(z, labels)?;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("train ratio {train_ratio} outside (0, 1)")));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut r = rng::stream(seed, &[purpose::SPLIT]);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for idx in by_class.values_mut() {
        idx.shuffle(&mut r);
        let cut = (train_ratio * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..cut]);
        test.extend_from_slice(&idx[cut..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InvalidArgument("split leaves one side empty".into()));
    }
    if k > train.len() {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {} training points",
            train.len()
        )));
    }
    let correct: usize = test
        .par_iter()
        .map(|&i| {
            let mut cand: Vec<(f64, usize)> = train.iter().map(|&j| (row_dist(z, i, j), j)).collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
            for &(_, j) in cand.iter().take(k) {
                *votes.entry(labels[j]).or_default() += 1;
            }
            let best = votes.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&l, _)| l);
            usize::from(best == Some(labels[i]))
        })
        .sum();
    Ok(correct as f64 / test.len() as f64)
}

/// Mean overlap `|kNN_high(i) ∩ kNN_low(i)| / k`; `d_high` may hold squared
/// or plain distances since only the ordering matters.
pub fn npa_knn(d_high: &DMatrix<f64>, z: &DMatrix<f64>, k: usize) -> Result<f64> {
    let n = z.nrows();
    if d_high.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "distance matrix {:?} for {n} embedded points",
            d_high.shape()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..{n}")));
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let high: BTreeSet<usize> = knn_by(n, i, k, |j| d_high[(i, j)]).into_iter().collect();
            let low = knn_by(n, i, k, |j| row_dist(z, i, j));
            low.iter().filter(|j| high.contains(j)).count() as f64 / k as f64
        })
        .collect();
    Ok(pairwise_sum(&scores) / n as f64)
}

/// Label-agreement reading: mean fraction of each point's `k` embedding
/// neighbors that share its label.
pub fn npa_knn_labels(z: &DMatrix<f64>, labels: &[usize], k: usize) -> Result<f64> {
    check_labels(z, labels)?;
    let n = z.nrows();
    if k == 0 || k >= n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..{n}")));
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let low = knn_by(n, i, k, |j| row_dist(z, i, j));
            low.iter().filter(|&&j| labels[j] == labels[i]).count() as f64 / k as f64
        })
        .collect();
    Ok(pairwise_sum(&scores) / n as f64)
}

struct Contingency {
    table: BTreeMap<(usize, usize), usize>,
    rows: BTreeMap<usize, usize>,
    cols: BTreeMap<usize, usize>,
    n: usize,
}

fn contingency(a: &[usize], b: &[usize]) -> Result<Contingency> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("labelings of length {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("empty labelings".into()));
    }
    let mut c = Contingency {
        table: BTreeMap::new(),
        rows: BTreeMap::new(),
        cols: BTreeMap::new(),
        n: a.len(),
    };
    for (&x, &y) in a.iter().zip(b) {
        *c.table.entry((x, y)).or_default() += 1;
        *c.rows.entry(x).or_default() += 1;
        *c.cols.entry(y).or_default() += 1;
    }
    Ok(c)
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    let terms: Vec<f64> = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .collect();
    pairwise_sum(&terms)
}

/// `I(a; b) / √(H(a) H(b))`.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = contingency(a, b)?;
    let n = c.n as f64;
    let (ha, hb) = (entropy(&c.rows, n), entropy(&c.cols, n));
    if ha == 0.0 && hb == 0.0 {
        return Ok(1.0);
    }
    if ha == 0.0 || hb == 0.0 {
        return Ok(0.0);
    }
    let terms: Vec<f64> = c
        .table
        .iter()
        .map(|(&(x, y), &nxy)| {
            let pxy = nxy as f64 / n;
            pxy * (pxy * n * n / (c.rows[&x] as f64 * c.cols[&y] as f64)).ln()
        })
        .collect();
    let mi = pairwise_sum(&terms).max(0.0);
    Ok((mi / (ha * hb).sqrt()).clamp(0.0, 1.0))
}

/// Adjusted Rand index; two identical partitions score 1 even when the
/// adjustment is degenerate.
pub fn ari(a: &[usize], b: &[usize]) -> Result<f64> {
    let c = contingency(a, b)?;
    let comb = |x: usize| (x * x.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = c.table.values().map(|&v| comb(v)).sum();
    let sa: f64 = c.rows.values().map(|&v| comb(v)).sum();
    let sb: f64 = c.cols.values().map(|&v| comb(v)).sum();
    let expected = sa * sb / comb(c.n).max(f64::MIN_POSITIVE);
    let max = 0.5 * (sa + sb);
    if max == expected {
        let same = c.table.len() == c.rows.len() && c.table.len() == c.cols.len();
        return Ok(if same { 1.0 } else { 0.0 });
    }
    Ok((index - expected) / (max - expected))
}

/// Mean silhouette with Euclidean distances between rows of `z`.
/// Singleton clusters and `0/0` score 0.
pub fn silhouette(z: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(z, labels)?;
    let n = z.nrows();
    if n == 0 {
        return Err(Error::InvalidArgument("no points".into()));
    }
    let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
    for &l in labels {
        *sizes.entry(l).or_default() += 1;
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            if sizes[&labels[i]] == 1 || sizes.len() < 2 {
                return 0.0;
            }
            let mut sums: BTreeMap<usize, f64> = BTreeMap::new();
            for j in 0..n {
                if j != i {
                    *sums.entry(labels[j]).or_default() += row_dist(z, i, j);
                }
            }
            let a = sums.get(&labels[i]).copied().unwrap_or(0.0) / (sizes[&labels[i]] - 1) as f64;
            let b = sums
                .iter()
                .filter(|(&l, _)| l != labels[i])
                .map(|(l, s)| s / sizes[l] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect();
    Ok(pairwise_sum(&scores) / n as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ca_knn: BTreeMap<usize, f64>,
    pub npa_knn: BTreeMap<usize, f64>,
    pub nmi: f64,
    pub ari: f64,
    pub sc: Option<f64>,
}

/// Embedding metrics: CA and NPA for each `k` that fits, plus NMI, ARI and
/// silhouette of a k-means clustering (as many clusters as classes).
pub fn evaluate(
    z: &DMatrix<f64>,
    labels: &[usize],
    d_high: Option<&DMatrix<f64>>,
    ks: &[usize],
    seed: u64,
) -> Result<MetricsReport> {
    check_labels(z, labels)?;
    let classes: BTreeSet<usize> = labels.iter().copied().collect();
    let clusters = kmeans(z, classes.len().min(z.nrows()).max(1), seed)?;
    let mut report = MetricsReport {
        nmi: nmi(&clusters.labels, labels)?,
        ari: ari(&clusters.labels, labels)?,
        sc: Some(silhouette(z, &clusters.labels)?),
        ..MetricsReport::default()
    };
    for &k in ks {
        if let Ok(v) = ca_knn(z, labels, k, 0.7, seed) {
            report.ca_knn.insert(k, v);
        }
        if let Some(d) = d_high {
            if k < z.nrows() {
                report.npa_knn.insert(k, npa_knn(d, z, k)?);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation (0 for a single run).
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std: f64::NAN };
        }
        let mean = pairwise_sum(values) / n as f64;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean).powi(2)).collect();
        let std = if n > 1 { (pairwise_sum(&dev) / (n - 1) as f64).sqrt() } else { 0.0 };
        Self { mean, std }
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.4}±{:.4}", self.mean, self.std)
    }
}

/// Mean ± sample std over seeds of one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSummary {
    pub method: String,
    pub runs: usize,
    pub ca_knn: BTreeMap<usize, Stat>,
    pub npa_knn: BTreeMap<usize, Stat>,
    pub nmi: Stat,
    pub ari: Stat,
    pub sc: Option<Stat>,
}

impl MetricsSummary {
    pub fn from_reports(method: &str, reports: &[MetricsReport]) -> Self {
        let per_k = |get: fn(&MetricsReport) -> &BTreeMap<usize, f64>| {
            let ks: BTreeSet<usize> = reports.iter().flat_map(|r| get(r).keys().copied()).collect();
            ks.into_iter()
                .map(|k| {
                    let v: Vec<f64> = reports.iter().filter_map(|r| get(r).get(&k).copied()).collect();
                    (k, Stat::of(&v))
                })
                .collect()
        };
        let scs: Vec<f64> = reports.iter().filter_map(|r| r.sc).collect();
        Self {
            method: method.to_string(),
            runs: reports.len(),
            ca_knn: per_k(|r| &r.ca_knn),
            npa_knn: per_k(|r| &r.npa_knn),
            nmi: Stat::of(&reports.iter().map(|r| r.nmi).collect::<Vec<_>>()),
            ari: Stat::of(&reports.iter().map(|r| r.ari).collect::<Vec<_>>()),
            sc: (!scs.is_empty()).then(|| Stat::of(&scs)),
        }
    }

    /// Long-format CSV: `method, metric, k, mean, std, runs`.
    pub fn write_csv<W: Write>(summaries: &[MetricsSummary], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["method", "metric", "k", "mean", "std", "runs"]).map_err(err)?;
        for s in summaries {
            let mut row = |metric: &str, k: Option<usize>, st: &Stat| {
                w.write_record([
                    s.method.clone(),
                    metric.to_string(),
                    k.map(|k| k.to_string()).unwrap_or_default(),
                    format!("{:e}", st.mean),
                    format!("{:e}", st.std),
                    s.runs.to_string(),
                ])
                .map_err(err)
            };
            for (k, st) in &s.ca_knn {
                row("ca", Some(*k), st)?;
            }
            for (k, st) in &s.npa_knn {
                row("npa", Some(*k), st)?;
            }
            row("nmi", None, &s.nmi)?;
            if let Some(sc) = &s.sc {
                row("sc", None, sc)?;
            }
            row("ari", None, &s.ari)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Plain-text table with one row per method and `mean±std` cells.
    pub fn table(summaries: &[MetricsSummary]) -> String {
        let ks: BTreeSet<usize> = summaries.iter().flat_map(|s| s.ca_knn.keys().chain(s.npa_knn.keys()).copied()).collect();
        let mut header = vec!["Method".to_string()];
        header.extend(ks.iter().map(|k| format!("CA k={k}")));
        header.extend(ks.iter().map(|k| format!("NPA k={k}")));
        header.extend(["NMI", "SC", "ARI"].map(String::from));
        let mut rows = vec![header];
        for s in summaries {
            let cell = |m: &BTreeMap<usize, Stat>, k: &usize| m.get(k).map(|v| v.to_string()).unwrap_or_else(|| "-".into());
            let mut row = vec![s.method.clone()];
            row.extend(ks.iter().map(|k| cell(&s.ca_knn, k)));
            row.extend(ks.iter().map(|k| cell(&s.npa_knn, k)));
            row.push(s.nmi.to_string());
            row.push(s.sc.map(|v| v.to_string()).unwrap_or_else(|| "-".into()));
            row.push(s.ari.to_string());
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, r) in rows.iter().enumerate() {
            let cells: Vec<String> = r
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
            }
        }
        out
    }
}
