//! t-SNE and UMAP on a precomputed squared-distance matrix.
//!
//! The top-level [`tsne`] and [`umap`] reorder points by their ids before
//! doing anything seed-dependent, so permuting the input permutes the output
//! rows and nothing else.

mod optim;
pub mod tsne;
pub mod umap;

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::permute_symmetric;

pub use tsne::{tsne_affinities, tsne_embed, tsne_gradient, tsne_loss, TsneConfig};
pub use umap::{fuzzy_union, umap_embed, umap_gradient, umap_graph, umap_loss, UmapConfig, UmapInit};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AffinityDiagnostics {
    /// Rows whose distances were all equal; given a uniform conditional row.
    pub uniform_rows: Vec<usize>,
    /// Rows where the bandwidth search ran out of iterations.
    pub unconverged_rows: Vec<usize>,
    /// t-SNE: realized `2^H` per row. UMAP: calibrated σ per row.
    pub per_row: Vec<f64>,
}

/// Joint probabilities (t-SNE) or fuzzy memberships (UMAP).
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub values: DMatrix<f64>,
    pub diagnostics: AffinityDiagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `n × d`, row `i` embeds point `point_ids[i]`.
    pub z: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub point_ids: Vec<usize>,
}

impl Embedding {
    pub fn len(&self) -> usize {
        self.z.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.z.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.z.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.z.row(i).iter().copied().collect()
    }

    /// CSV with columns `point_id, z1..zd[, label]`.
    pub fn write_csv<W: Write>(&self, out: W, labels: Option<&[usize]>) -> Result<()> {
        if let Some(l) = labels {
            if l.len() != self.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} embedded points",
                    l.len(),
                    self.len()
                )));
            }
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["point_id".to_string()];
        header.extend((1..=self.dim()).map(|k| format!("z{k}")));
        if labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec = vec![self.point_ids[i].to_string()];
            rec.extend(self.z.row(i).iter().map(|v| format!("{v:e}")));
            if let Some(l) = labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub(crate) fn validate_distances(d2: &DMatrix<f64>, min_n: usize) -> Result<()> {
    let n = d2.nrows();
    if !d2.is_square() {
        return Err(Error::DimensionMismatch(format!("distance matrix is {:?}", d2.shape())));
    }
    if n < min_n {
        return Err(Error::InvalidArgument(format!("need at least {min_n} points, got {n}")));
    }
    let scale = d2.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    for i in 0..n {
        if d2[(i, i)] != 0.0 {
            return Err(Error::InvalidArgument(format!("nonzero diagonal at {i}")));
        }
        for j in 0..n {
            let v = d2[(i, j)];
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("distance ({i}, {j}) = {v}")));
            }
            if j < i && (v - d2[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!("distance matrix asymmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// `order[c]` is the input index of the point with the `c`-th smallest id.
pub(crate) fn canonical_order(ids: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (ids[i], i));
    order
}

fn run_canonical<F>(d2: &DMatrix<f64>, point_ids: &[usize], f: F) -> Result<(Embedding, AffinityDiagnostics)>
where
    F: FnOnce(&DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>, AffinityDiagnostics)>,
{
    if point_ids.len() != d2.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{} point ids for {} rows",
            point_ids.len(),
            d2.nrows()
        )));
    }
    let order = canonical_order(point_ids);
    let canon = permute_symmetric(d2, &order);
    let (zc, trace, mut diag) = f(&canon)?;
    let mut z = DMatrix::zeros(zc.nrows(), zc.ncols());
    for (c, &i) in order.iter().enumerate() {
        z.set_row(i, &zc.row(c));
    }
    for r in diag.uniform_rows.iter_mut().chain(diag.unconverged_rows.iter_mut()) {
        *r = order[*r];
    }
    diag.uniform_rows.sort_unstable();
    diag.unconverged_rows.sort_unstable();
    let mut per_row = vec![0.0; diag.per_row.len()];
    for (c, &i) in order.iter().enumerate() {
        if let Some(v) = diag.per_row.get(c) {
            per_row[i] = *v;
        }
    }
    diag.per_row = per_row;
    Ok((
        Embedding {
            z,
            objective_trace: trace,
            point_ids: point_ids.to_vec(),
        },
        diag,
    ))
}

/// Affinities plus t-SNE optimization on squared distances `d2`.
pub fn tsne(d2: &DMatrix<f64>, point_ids: &[usize], config: &TsneConfig) -> Result<(Embedding, AffinityDiagnostics)> {
    run_canonical(d2, point_ids, |d| {
        let p = tsne_affinities(d, config.perplexity)?;
        let e = tsne_embed(&p, config)?;
        Ok((e.z, e.objective_trace, p.diagnostics))
    })
}

/// Fuzzy graph plus UMAP optimization on squared distances `d2`.
pub fn umap(d2: &DMatrix<f64>, point_ids: &[usize], config: &UmapConfig) -> Result<(Embedding, AffinityDiagnostics)> {
    run_canonical(d2, point_ids, |d| {
        let mu = umap_graph(d, config.n_neighbors)?;
        let e = umap_embed(&mu, config)?;
        Ok((e.z, e.objective_trace, mu.diagnostics))
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::permute_symmetric;

    #[test]
    fn tsne_is_equivariant_to_reordering() {
        let d = testutil::random_sym(30, 4);
        let ids: Vec<usize> = (0..30).collect();
        let cfg = TsneConfig {
            iterations: 120,
            perplexity: 5.0,
            ..TsneConfig::default()
        };
        let (base, _) = tsne(&d, &ids, &cfg).unwrap();
        let perm: Vec<usize> = (0..30).map(|i| (i * 7 + 3) % 30).collect();
        let dp = permute_symmetric(&d, &perm);
        let idp: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
        let (moved, _) = tsne(&dp, &idp, &cfg).unwrap();
        for (a, &i) in perm.iter().enumerate() {
            assert_eq!(moved.row(a), base.row(i));
        }
    }

    #[test]
    fn umap_is_equivariant_to_reordering() {
        let d = testutil::random_sym(25, 5);
        let ids: Vec<usize> = (100..125).collect();
        let cfg = UmapConfig {
            iterations: 60,
            n_neighbors: 5,
            ..UmapConfig::default()
        };
        let (base, _) = umap(&d, &ids, &cfg).unwrap();
        let perm: Vec<usize> = (0..25).rev().collect();
        let dp = permute_symmetric(&d, &perm);
        let idp: Vec<usize> = perm.iter().map(|&i| ids[i]).collect();
        let (moved, _) = umap(&dp, &idp, &cfg).unwrap();
        for (a, &i) in perm.iter().enumerate() {
            assert_eq!(moved.row(a), base.row(i));
        }
    }

    #[test]
    fn csv_layout() {
        let e = Embedding {
            z: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]),
            objective_trace: vec![],
            point_ids: vec![5, 9],
        };
        let mut buf = Vec::new();
        e.write_csv(&mut buf, Some(&[0, 1])).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next(), Some("point_id,z1,z2,label"));
        assert!(text.contains("\n9,3e0,4e0,1\n"));
    }
}
