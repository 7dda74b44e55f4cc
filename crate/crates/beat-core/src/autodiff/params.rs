//! Named, ordered parameter blocks with persistence and digests.

use super::array::DenseArray;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Current on-disk format version for serialized parameter vectors.
pub const PARAM_FORMAT_VERSION: u32 = 1;

/// An ordered collection of named [`DenseArray`] blocks.
///
/// Block order is part of the identity: iteration, flattening, and digests all
/// follow insertion order, which keeps training and serialization
/// deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    blocks: Vec<(String, DenseArray)>,
}

#[derive(Serialize, Deserialize)]
struct BlockFile {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamFile {
    version: u32,
    blocks: Vec<BlockFile>,
}

impl Default for ParamVector {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamVector {
    pub fn new() -> Self {
        ParamVector { blocks: Vec::new() }
    }

    /// Appends a named block; duplicate names are rejected.
    pub fn insert(&mut self, name: &str, array: DenseArray) -> Result<()> {
        if self.blocks.iter().any(|(n, _)| n == name) {
            return Err(Error::InvalidArgument(format!("duplicate parameter block '{name}'")));
        }
        self.blocks.push((name.to_string(), array));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&DenseArray> {
        self.blocks.iter().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DenseArray> {
        self.blocks.iter_mut().find(|(n, _)| n == name).map(|(_, a)| a)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &DenseArray)> {
        self.blocks.iter().map(|(n, a)| (n.as_str(), a))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut DenseArray)> {
        self.blocks.iter_mut().map(|(n, a)| (n.as_str(), a))
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Total number of scalars across all blocks.
    pub fn scalar_count(&self) -> usize {
        self.blocks.iter().map(|(_, a)| a.len()).sum()
    }

    /// True when the two vectors have the same block names and shapes in the
    /// same order.
    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|((na, a), (nb, b))| na == nb && a.shape() == b.shape())
    }

    /// A vector with the same layout and all scalars set to `fill`.
    pub fn filled_like(&self, fill: f64) -> ParamVector {
        let blocks = self
            .blocks
            .iter()
            .map(|(n, a)| {
                let mut z = DenseArray::zeros(a.shape());
                z.data_mut().iter_mut().for_each(|v| *v = fill);
                (n.clone(), z)
            })
            .collect();
        ParamVector { blocks }
    }

    /// `self += factor * other`; layouts must match.
    pub fn add_scaled(&mut self, other: &ParamVector, factor: f64) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::ShapeMismatch {
                op: "param add_scaled",
                details: "parameter layouts differ".into(),
            });
        }
        for ((_, a), (_, b)) in self.blocks.iter_mut().zip(&other.blocks) {
            a.add_scaled(b, factor)?;
        }
        Ok(())
    }

    /// `self *= factor` on every scalar.
    pub fn scale(&mut self, factor: f64) {
        for (_, a) in &mut self.blocks {
            a.scale(factor);
        }
    }

    /// Sets every scalar to zero.
    pub fn fill_zero(&mut self) {
        for (_, a) in &mut self.blocks {
            a.fill_zero();
        }
    }

    /// True when every scalar in every block is finite.
    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|(_, a)| a.all_finite())
    }

    /// Euclidean norm over all scalars.
    pub fn norm(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|(_, a)| a.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Applies `f(param, aux)` scalar-by-scalar across two layout-matched
    /// vectors, mutating `self`.
    pub fn zip_apply(&mut self, other: &ParamVector, mut f: impl FnMut(&mut f64, f64)) -> Result<()> {
        if !self.same_layout(other) {
            return Err(Error::ShapeMismatch {
                op: "param zip_apply",
                details: "parameter layouts differ".into(),
            });
        }
        for ((_, a), (_, b)) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                f(x, *y);
            }
        }
        Ok(())
    }

    /// Serializes to versioned JSON. `f64` values survive the round trip
    /// bit-exactly (non-finite values are rejected).
    pub fn to_json(&self) -> Result<String> {
        if !self.all_finite() {
            return Err(Error::NonFinite("parameter serialization"));
        }
        let file = ParamFile {
            version: PARAM_FORMAT_VERSION,
            blocks: self
                .blocks
                .iter()
                .map(|(n, a)| BlockFile {
                    name: n.clone(),
                    shape: a.shape().to_vec(),
                    data: a.data().to_vec(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    /// Parses the versioned JSON produced by [`ParamVector::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ParamFile = serde_json::from_str(text)?;
        if file.version != PARAM_FORMAT_VERSION {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "unsupported parameter format version {} (expected {})",
                    file.version, PARAM_FORMAT_VERSION
                ),
            });
        }
        let mut pv = ParamVector::new();
        for b in file.blocks {
            let arr = DenseArray::from_vec(&b.shape, b.data)?;
            if !arr.all_finite() {
                return Err(Error::NonFinite("parameter deserialization"));
            }
            pv.insert(&b.name, arr)?;
        }
        Ok(pv)
    }

    /// Hex SHA-256 over block names, shapes, and the exact bit patterns of the
    /// scalars, in block order. Identical parameters always produce identical
    /// digests, on any platform.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, arr) in &self.blocks {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((arr.shape().len() as u64).to_le_bytes());
            for d in arr.shape() {
                hasher.update((*d as u64).to_le_bytes());
            }
            for v in arr.data() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        to_hex(&hasher.finalize())
    }
}

/// Lowercase hex encoding.
pub fn to_hex(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        use std::fmt::Write;
        write!(out, "{b:02x}").expect("writing to a String cannot fail");
    }
    out
}
