use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DataMatrix;
use crate::rng::{self, purpose};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalize {
    #[default]
    None,
    /// Per feature to `[0, 1]`; constant features become 0.
    MinMax01,
    /// Per feature to zero mean and unit population std; constant features become 0.
    ZScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub blobs: usize,
    pub per_blob: usize,
    /// Feature dimension; must be at least `blobs`.
    pub dim: usize,
    pub std: f64,
    /// Blob `k` is centred at `separation · e_k`.
    pub separation: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            blobs: 3,
            per_blob: 100,
            dim: 5,
            std: 1.0,
            separation: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// IDX image and label files; relative paths resolve against the data directory.
    Idx { images: PathBuf, labels: PathBuf },
    /// Header row, one point per row; `label_column` names the class column.
    Csv {
        path: PathBuf,
        #[serde(default)]
        label_column: Option<String>,
    },
    Blobs(BlobSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub normalize: Normalize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            source: DataSource::Idx {
                images: "mnist/images-idx3-ubyte".into(),
                labels: "mnist/labels-idx1-ubyte".into(),
            },
            subsample: Some(2000),
            normalize: Normalize::None,
        }
    }
}

/// A loaded dataset: columns of `x` are points, `labels[j]` is the class of
/// point `j` (all zero when the source has none).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DataMatrix,
    pub labels: Vec<usize>,
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Data(format!("{what}: truncated header at byte {offset}")))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Parses an IDX3 image file; returns `(count, rows·cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "images")?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Data(format!(
            "images: magic 0x{magic:08x} at byte 0, expected 0x{IMAGES_MAGIC:08x}"
        )));
    }
    let n = be_u32(bytes, 4, "images")? as usize;
    let rows = be_u32(bytes, 8, "images")? as usize;
    let cols = be_u32(bytes, 12, "images")? as usize;
    let m = rows * cols;
    let need = 16 + n * m;
    if bytes.len() < need {
        return Err(Error::Data(format!(
            "images: truncated at byte {}, header promises {need} bytes",
            bytes.len()
        )));
    }
    Ok((n, m, &bytes[16..need]))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "labels")?;
    if magic != LABELS_MAGIC {
        return Err(Error::Data(format!(
            "labels: magic 0x{magic:08x} at byte 0, expected 0x{LABELS_MAGIC:08x}"
        )));
    }
    let n = be_u32(bytes, 4, "labels")? as usize;
    if bytes.len() < 8 + n {
        return Err(Error::Data(format!(
            "labels: truncated at byte {}, header promises {} bytes",
            bytes.len(),
            8 + n
        )));
    }
    Ok(&bytes[8..8 + n])
}

/// Loads IDX images and labels; pixels are scaled to `[0, 1]` and each image
/// becomes one column.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = read(images_path)?;
    let labels = read(labels_path)?;
    let (n, m, pixels) = parse_idx_images(&images)?;
    let labels = parse_idx_labels(&labels)?;
    if labels.len() != n {
        return Err(Error::Data(format!(
            "{n} images but {} labels (count field at byte 4)",
            labels.len()
        )));
    }
    let values = pixels.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(Dataset {
        x: DataMatrix::from_column_major(m, n, values)?,
        labels: labels.iter().map(|&l| usize::from(l)).collect(),
    })
}

/// Loads a CSV with a header row. Every column except `label_column` must be
/// numeric; labels may be any strings and are numbered in sorted order.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let header = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .clone();
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("{}: no column named {name:?}", path.display())))?,
        ),
        None => None,
    };
    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    let mut n = 0;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        for (col, field) in record.iter().enumerate() {
            if Some(col) == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!("{}: row {}, column {col}: {field:?} is not a number", path.display(), row + 1))
            })?;
            values.push(v);
        }
        n += 1;
    }
    let m = header.len() - usize::from(label_idx.is_some());
    let x = DataMatrix::from_column_major(m, n, values).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let labels = if label_idx.is_some() {
        let mut names = raw_labels.clone();
        names.sort();
        names.dedup();
        raw_labels
            .iter()
            .map(|l| names.binary_search(l).expect("label present"))
            .collect()
    } else {
        vec![0; n]
    };
    Ok(Dataset { x, labels })
}

/// Isotropic Gaussian blobs, blob by blob.
pub fn generate_blobs(spec: &BlobSpec, seed: u64) -> Result<Dataset> {
    if spec.blobs == 0 || spec.per_blob == 0 || spec.dim < spec.blobs {
        return Err(Error::Config(format!(
            "blobs need blobs >= 1, per_blob >= 1 and dim >= blobs; got {} x {} in {} dimensions",
            spec.blobs, spec.per_blob, spec.dim
        )));
    }
    if !(spec.std.is_finite() && spec.std >= 0.0 && spec.separation.is_finite() && spec.separation > 0.0) {
        return Err(Error::Config(format!(
            "blob std must be >= 0 and separation > 0, got {} and {}",
            spec.std, spec.separation
        )));
    }
    let mut r = rng::stream(seed, &[purpose::BLOBS]);
    let n = spec.blobs * spec.per_blob;
    let mut values = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    for k in 0..spec.blobs {
        for _ in 0..spec.per_blob {
            for i in 0..spec.dim {
                let centre = if i == k { spec.separation } else { 0.0 };
                values.push(centre + spec.std * r.sample::<f64, _>(StandardNormal));
            }
            labels.push(k);
        }
    }
    Ok(Dataset {
        x: DataMatrix::from_column_major(spec.dim, n, values)?,
        labels,
    })
}

pub fn normalize(x: &DataMatrix, mode: Normalize) -> Result<DataMatrix> {
    let mut m = x.as_matrix().clone();
    match mode {
        Normalize::None => return Ok(x.clone()),
        Normalize::MinMax01 => {
            for mut row in m.row_iter_mut() {
                let (lo, hi) = row.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
                let span = hi - lo;
                row.apply(|v| *v = if span > 0.0 { (*v - lo) / span } else { 0.0 });
            }
        }
        Normalize::ZScore => {
            for mut row in m.row_iter_mut() {
                let vals: Vec<f64> = row.iter().copied().collect();
                let mean = crate::linalg::pairwise_sum(&vals) / vals.len() as f64;
                let sd = crate::privacy::population_std(&vals);
                row.apply(|v| *v = if sd > 0.0 { (*v - mean) / sd } else { 0.0 });
            }
        }
    }
    DataMatrix::new(m)
}

/// Uniform subsample without replacement, kept in original order.
pub fn subsample(data: &Dataset, count: usize, seed: u64) -> Result<Dataset> {
    let n = data.x.len();
    if count > n {
        return Err(Error::Config(format!("subsample of {count} from {n} points")));
    }
    if count == n {
        return Ok(data.clone());
    }
    let mut r = rng::stream(seed, &[purpose::SUBSAMPLE]);
    let mut idx = sample(&mut r, n, count).into_vec();
    idx.sort_unstable();
    Ok(Dataset {
        x: data.x.select_points(&idx)?,
        labels: idx.iter().map(|&i| data.labels[i]).collect(),
    })
}

fn resolve(path: &Path, data_dir: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_dir.join(path)
    }
}

/// Loads or generates, subsamples, then normalizes.
pub fn load_dataset(spec: &DatasetSpec, data_dir: &Path, seed: u64) -> Result<Dataset> {
    let full = match &spec.source {
        DataSource::Idx { images, labels } => load_idx(&resolve(images, data_dir), &resolve(labels, data_dir))?,
        DataSource::Csv { path, label_column } => load_csv(&resolve(path, data_dir), label_column.as_deref())?,
        DataSource::Blobs(b) => generate_blobs(b, seed)?,
    };
    let data = match spec.subsample {
        Some(k) => subsample(&full, k, seed)?,
        None => full,
    };
    Ok(Dataset {
        x: normalize(&data.x, spec.normalize)?,
        labels: data.labels,
    })
}
