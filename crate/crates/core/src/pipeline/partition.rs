use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::Dataset;
use crate::error::{Error, Result};
use crate::feddl::ClientShard;
use crate::rng::{self, purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionMode {
    #[default]
    Iid,
    /// Client `p` holds every point of the `p`-th class.
    NonIidOneClass,
    /// Client `p` holds classes `2p` and `2p + 1` (in sorted label order).
    NonIidTwoClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartitionSpec {
    pub clients: usize,
    pub mode: PartitionMode,
}

impl Default for PartitionSpec {
    fn default() -> Self {
        Self {
            clients: 10,
            mode: PartitionMode::Iid,
        }
    }
}

/// Splits the dataset column-wise into client shards with `ω_p = n_p / n_x`.
/// Shard points keep ascending dataset order; `point_ids` are dataset
/// column indices.
pub fn partition(data: &Dataset, spec: &PartitionSpec, seed: u64) -> Result<Vec<ClientShard>> {
    let n = data.x.len();
    let p = spec.clients;
    if p == 0 {
        return Err(Error::Config("partition needs at least one client".into()));
    }
    let classes: Vec<usize> = data.labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let groups: Vec<Vec<usize>> = match spec.mode {
        PartitionMode::Iid => {
            if n < 2 * p {
                return Err(Error::Config(format!("{n} points cannot give {p} clients two points each")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(seed, &[purpose::PARTITION]));
            let (base, extra) = (n / p, n % p);
            let mut start = 0;
            (0..p)
                .map(|c| {
                    let len = base + usize::from(c < extra);
                    let mut g = order[start..start + len].to_vec();
                    g.sort_unstable();
                    start += len;
                    g
                })
                .collect()
        }
        PartitionMode::NonIidOneClass | PartitionMode::NonIidTwoClass => {
            let per = if spec.mode == PartitionMode::NonIidOneClass { 1 } else { 2 };
            if classes.len() != per * p {
                return Err(Error::Config(format!(
                    "{:?} with {p} clients needs {} classes, data has {}",
                    spec.mode,
                    per * p,
                    classes.len()
                )));
            }
            classes
                .chunks(per)
                .map(|owned| (0..n).filter(|&j| owned.contains(&data.labels[j])).collect())
                .collect()
        }
    };
    groups
        .into_iter()
        .enumerate()
        .map(|(id, idx)| {
            let x = data.x.select_points(&idx)?;
            ClientShard::new(id, x, idx.len() as f64 / n as f64, idx)
        })
        .collect()
}
