//! Named parameter sets, their on-disk format, and content digests.
//!
//! File format (one parameter block):
//!
//! ```text
//! {"format_version":1,"dtype":"f32","tensors":{"l00.conv.b":[64],…}}\n
//! <little-endian raw floats, tensors concatenated in name (BTreeMap) order>
//! ```
//!
//! The header line is JSON with sorted keys, the payload is exactly
//! `Σ product(shape) · sizeof(dtype)` bytes. Optimizer state (Adam moments,
//! step counter) is deliberately *not* stored: files carry inference-ready
//! weights plus batch-norm running statistics. By convention, parameter names
//! ending in `.rmean` / `.rvar` are non-trainable running statistics; loaders
//! restore the trainable flag from that convention.

use super::{NnError, Scalar, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::{BufRead, Write};

/// Current parameter-block format version.
pub const PARAM_FORMAT_VERSION: u32 = 1;

/// One named parameter: its tensor, trainability, and lazily allocated Adam
/// moment estimates.
#[derive(Clone, Debug)]
pub struct ParamEntry<T> {
    pub tensor: Tensor<T>,
    pub trainable: bool,
    pub(crate) m: Option<Tensor<T>>,
    pub(crate) v: Option<Tensor<T>>,
}

/// A named, deterministically ordered map of parameters plus shared
/// optimizer step count.
#[derive(Clone, Debug, Default)]
pub struct ParamSet<T> {
    entries: BTreeMap<String, ParamEntry<T>>,
    pub(crate) step: u64,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: BTreeMap::new(), step: 0 }
    }

    /// Insert a tensor; replaces any previous entry of the same name.
    pub fn insert(&mut self, name: String, tensor: Tensor<T>, trainable: bool) {
        self.entries.insert(name, ParamEntry { tensor, trainable, m: None, v: None });
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>, NnError> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| NnError::MisalignedGrads(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>, NnError> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| NnError::MisalignedGrads(format!("unknown parameter {name}")))
    }

    pub(crate) fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry<T>, NnError> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NnError::MisalignedGrads(format!("unknown parameter {name}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<T>)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of optimizer steps applied so far.
    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Total number of scalar parameters.
    pub fn n_scalars(&self) -> usize {
        self.entries.values().map(|e| e.tensor.len()).sum()
    }

    /// Convert every tensor to another scalar type (drops optimizer state).
    pub fn cast<U: Scalar>(&self) -> ParamSet<U> {
        let mut out = ParamSet::new();
        for (name, e) in &self.entries {
            out.insert(name.clone(), e.tensor.cast(), e.trainable);
        }
        out.step = self.step;
        out
    }

    /// SHA-256 over the serialized block (header + payload): a stable
    /// content identity for freeze checks and model metadata.
    pub fn digest(&self) -> String {
        let mut buf = Vec::new();
        self.save(&mut buf).expect("in-memory write cannot fail");
        let mut h = Sha256::new();
        h.update(&buf);
        hex_string(&h.finalize())
    }

    /// Write one parameter block (header line + payload) to `w`.
    pub fn save<W: Write>(&self, w: &mut W) -> Result<(), NnError> {
        let manifest: BTreeMap<&String, &[usize]> =
            self.entries.iter().map(|(n, e)| (n, e.tensor.shape())).collect();
        let header = Header { format_version: PARAM_FORMAT_VERSION, dtype: T::DTYPE.to_string(), tensors: manifest };
        let line = serde_json::to_string(&header).expect("header serializes");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
        for e in self.entries.values() {
            for v in e.tensor.data() {
                // payload is always little-endian f32/f64 per the dtype tag
                match T::DTYPE {
                    "f32" => w.write_all(&(v.to_f32().unwrap()).to_le_bytes())?,
                    _ => w.write_all(&(v.to_f64().unwrap()).to_le_bytes())?,
                }
            }
        }
        Ok(())
    }

    /// Read one parameter block from `r` (leaves the reader positioned just
    /// past the payload, so blocks can be concatenated in one file).
    pub fn load<R: BufRead>(r: &mut R) -> Result<Self, NnError> {
        let mut line = String::new();
        let n = r.read_line(&mut line)?;
        if n == 0 {
            return Err(NnError::Corrupt("missing parameter header".into()));
        }
        let header: Header2 =
            serde_json::from_str(line.trim_end()).map_err(|e| NnError::Corrupt(format!("bad header: {e}")))?;
        if header.format_version != PARAM_FORMAT_VERSION {
            return Err(NnError::Incompatible(format!(
                "format_version {} (supported: {PARAM_FORMAT_VERSION})",
                header.format_version
            )));
        }
        if header.dtype != T::DTYPE {
            return Err(NnError::Incompatible(format!("dtype {} (expected {})", header.dtype, T::DTYPE)));
        }
        let elem = if header.dtype == "f32" { 4 } else { 8 };
        let mut out = ParamSet::new();
        for (name, shape) in header.tensors {
            let count: usize = shape.iter().product();
            let mut bytes = vec![0u8; count * elem];
            r.read_exact(&mut bytes)
                .map_err(|e| NnError::Corrupt(format!("truncated payload for {name}: {e}")))?;
            let data: Vec<T> = bytes
                .chunks_exact(elem)
                .map(|c| {
                    if elem == 4 {
                        T::from_f(f32::from_le_bytes(c.try_into().unwrap()) as f64)
                    } else {
                        T::from_f(f64::from_le_bytes(c.try_into().unwrap()))
                    }
                })
                .collect();
            let trainable = !(name.ends_with(".rmean") || name.ends_with(".rvar"));
            out.insert(name, Tensor::from_vec(&shape, data)?, trainable);
        }
        Ok(out)
    }
}

#[derive(Serialize)]
struct Header<'a> {
    format_version: u32,
    dtype: String,
    tensors: BTreeMap<&'a String, &'a [usize]>,
}

#[derive(Deserialize)]
struct Header2 {
    format_version: u32,
    dtype: String,
    tensors: BTreeMap<String, Vec<usize>>,
}

pub(crate) fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}
