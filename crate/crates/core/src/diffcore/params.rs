//! Named parameter collections and checkpoint serialization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::node::Node;
use crate::diffcore::tensor::Tensor;
use crate::error::{Error, Result};

/// A named collection of leaf nodes. Registration order is preserved so
/// checkpoints and optimizer state are byte-stable across runs.
#[derive(Default)]
pub struct ModelParameters {
    names: Vec<String>,
    trainable: Vec<bool>,
    nodes: HashMap<String, Node>,
}

impl ModelParameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, data: Tensor, trainable: bool) -> Node {
        assert!(
            !self.nodes.contains_key(name),
            "duplicate parameter name {name}"
        );
        let node = Node::leaf(data);
        self.names.push(name.to_string());
        self.trainable.push(trainable);
        self.nodes.insert(name.to_string(), node.clone());
        node
    }

    pub fn get(&self, name: &str) -> Option<&Node> {
        self.nodes.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.trainable[i])
            .unwrap_or(false)
    }

    /// Iterate (name, node, trainable) in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Node, bool)> {
        self.names
            .iter()
            .zip(&self.trainable)
            .map(move |(n, &t)| (n.as_str(), &self.nodes[n], t))
    }

    pub fn zero_grads(&self) {
        for node in self.nodes.values() {
            node.zero_grad();
        }
    }

    pub fn to_checkpoint(&self, seed: u64, config_hash: &str) -> Checkpoint {
        let arrays = self
            .iter()
            .map(|(name, node, trainable)| {
                let t = node.value();
                NamedArray {
                    name: name.to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    trainable,
                    data: t.as_slice().to_vec(),
                }
            })
            .collect();
        Checkpoint {
            version: CHECKPOINT_VERSION,
            seed,
            config_hash: config_hash.to_string(),
            arrays,
        }
    }

    /// Overwrite parameter values from a checkpoint. Every checkpoint array
    /// must match a registered parameter of the same shape.
    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for arr in &ckpt.arrays {
            let node = self.nodes.get(&arr.name).ok_or_else(|| {
                Error::InvalidConfig(format!("checkpoint has unknown parameter `{}`", arr.name))
            })?;
            if node.shape() != (arr.rows, arr.cols) {
                return Err(Error::Shape {
                    op: "load_checkpoint",
                    lhs: node.shape(),
                    rhs: (arr.rows, arr.cols),
                });
            }
            node.set_data(Tensor::from_vec(arr.rows, arr.cols, arr.data.clone())?);
        }
        Ok(())
    }

    /// Deep copy of the current values, for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.iter()
            .map(|(n, node, _)| (n.to_string(), node.value()))
            .collect()
    }

    pub fn restore(&self, snapshot: &[(String, Tensor)]) {
        for (name, tensor) in snapshot {
            if let Some(node) = self.nodes.get(name) {
                node.set_data(tensor.clone());
            }
        }
    }
}

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub trainable: bool,
    pub data: Vec<f64>,
}

/// Versioned parameter checkpoint: named arrays with shape metadata plus the
/// global seed and config hash that produced them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = crate::util::read_file(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&raw)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Content digest; identical training runs produce identical digests.
    pub fn digest(&self) -> String {
        crate::util::sha256_hex(serde_json::to_string(self).expect("serialize").as_bytes())
    }
}
