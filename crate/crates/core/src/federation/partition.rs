use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{keyed_rng, DOMAIN_DATA};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionMode {
    #[default]
    Iid,
    /// Every client holds examples of a single label.
    SingleClass,
}

impl PartitionMode {
    pub fn name(self) -> &'static str {
        match self {
            PartitionMode::Iid => "iid",
            PartitionMode::SingleClass => "single-class",
        }
    }
}

impl fmt::Display for PartitionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PartitionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(PartitionMode::Iid),
            "single-class" => Ok(PartitionMode::SingleClass),
            other => Err(Error::config(
                "partition",
                format!("unknown partition `{other}` (expected iid or single-class)"),
            )),
        }
    }
}

/// Assignment of training examples to clients.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataPartition {
    mode: PartitionMode,
    shards: Vec<Vec<usize>>,
    /// The oracle has no data; every client is eligible with an empty batch.
    data_free: bool,
}

impl DataPartition {
    /// Splits the examples with the given labels over `num_clients` clients.
    ///
    /// IID deals a seeded shuffle round-robin. Single-class gives client `c`
    /// the label `c mod C` and deals that label's shuffled examples
    /// round-robin over the clients sharing it.
    pub fn new(mode: PartitionMode, labels: &[usize], num_clients: usize, seed: u64) -> Result<Self> {
        if num_clients == 0 {
            return Err(Error::config("clients", "need at least one client"));
        }
        let mut rng = keyed_rng(seed, &[DOMAIN_DATA]);
        let mut shards = vec![Vec::new(); num_clients];
        match mode {
            PartitionMode::Iid => {
                let mut order: Vec<usize> = (0..labels.len()).collect();
                order.shuffle(&mut rng);
                for (pos, i) in order.into_iter().enumerate() {
                    shards[pos % num_clients].push(i);
                }
            }
            PartitionMode::SingleClass => {
                let classes = labels.iter().max().map_or(0, |m| m + 1);
                if classes > num_clients {
                    return Err(Error::config(
                        "partition",
                        format!("single-class split needs at least {classes} clients, got {num_clients}"),
                    ));
                }
                let mut by_class = vec![Vec::new(); classes];
                for (i, &l) in labels.iter().enumerate() {
                    by_class[l].push(i);
                }
                for (class, mut examples) in by_class.into_iter().enumerate() {
                    examples.shuffle(&mut rng);
                    let owners: Vec<usize> = (class..num_clients).step_by(classes).collect();
                    for (pos, i) in examples.into_iter().enumerate() {
                        shards[owners[pos % owners.len()]].push(i);
                    }
                }
            }
        }
        for s in &mut shards {
            s.sort_unstable();
        }
        Ok(Self {
            mode,
            shards,
            data_free: false,
        })
    }

    /// Partition for an oracle without training data.
    pub fn data_free(num_clients: usize) -> Self {
        Self {
            mode: PartitionMode::Iid,
            shards: vec![Vec::new(); num_clients],
            data_free: true,
        }
    }

    pub fn mode(&self) -> PartitionMode {
        self.mode
    }

    pub fn num_clients(&self) -> usize {
        self.shards.len()
    }

    pub fn shard(&self, client: usize) -> &[usize] {
        &self.shards[client]
    }

    pub fn is_data_free(&self) -> bool {
        self.data_free
    }

    /// Clients that can compute a gradient, in id order.
    pub fn eligible(&self) -> Vec<usize> {
        (0..self.shards.len())
            .filter(|&c| self.data_free || !self.shards[c].is_empty())
            .collect()
    }

    /// A batch of up to `size` distinct examples from the client's shard;
    /// the whole shard when it is not larger than `size`.
    pub fn batch(&self, client: usize, size: usize, rng: &mut dyn RngCore) -> Vec<usize> {
        let shard = &self.shards[client];
        if shard.len() <= size {
            return shard.clone();
        }
        let mut picked: Vec<usize> = index::sample(rng, shard.len(), size)
            .into_iter()
            .map(|j| shard[j])
            .collect();
        picked.sort_unstable();
        picked
    }
}

/// `w` distinct client ids from `0..n`, uniformly without replacement,
/// sorted ascending.
pub fn sample_clients(rng: &mut dyn RngCore, n: usize, w: usize) -> Result<Vec<usize>> {
    if w > n {
        return Err(Error::config(
            "per_round",
            format!("cannot sample {w} clients from {n}"),
        ));
    }
    let mut ids = index::sample(rng, n, w).into_vec();
    ids.sort_unstable();
    Ok(ids)
}
