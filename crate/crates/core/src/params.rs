//! Named parameter tensors and the binary model file.
//!
//! Model file layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "AHEADMDL"
//! version      u32       FORMAT_VERSION
//! header_len   u32       byte length of the JSON header
//! header       UTF-8 JSON {"format_version", "schema_hash", "config"}
//! count        u32       number of arrays
//! per array:
//!   name_len   u32
//!   name       UTF-8 parameter path
//!   rows       u64
//!   cols       u64
//!   values     rows * cols f64, row-major, IEEE-754 little-endian
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{AheadError, Result};
use crate::hetgraph::Matrix;
use crate::tape::{Tape, Var};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"AHEADMDL";

/// Every learnable tensor, keyed by a stable path such as
/// `encoder.layer0.rel:writes.W_att.head1`. Iteration order is insertion
/// order, which is fixed by initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    tensors: IndexMap<String, Matrix>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Matrix) {
        let path = path.into();
        let prev = self.tensors.insert(path.clone(), value);
        assert!(prev.is_none(), "duplicate parameter path {path}");
    }

    pub fn get(&self, path: &str) -> Result<&Matrix> {
        self.tensors
            .get(path)
            .ok_or_else(|| AheadError::Model(format!("missing parameter '{path}'")))
    }

    pub fn get_mut(&mut self, path: &str) -> Result<&mut Matrix> {
        self.tensors
            .get_mut(path)
            .ok_or_else(|| AheadError::Model(format!("missing parameter '{path}'")))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.tensors.contains_key(path)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|m| m.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Parameters placed on a tape, either as differentiable leaves or as
/// constants.
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    pub fn new(tape: &mut Tape, params: &ModelParams, differentiable: bool) -> Self {
        let vars = params
            .iter()
            .map(|(k, m)| {
                let v = if differentiable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                };
                (k.to_string(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn var(&self, path: &str) -> Result<Var> {
        self.vars
            .get(path)
            .copied()
            .ok_or_else(|| AheadError::Model(format!("missing parameter '{path}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub format_version: u32,
    pub schema_hash: String,
    /// Echo of the model configuration used to build and train the params.
    pub config: serde_json::Value,
}

pub fn save_model(path: impl AsRef<Path>, header: &ModelHeader, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_vec(header).expect("header serializes");
    let mut buf = Vec::with_capacity(64 + json.len() + params.num_scalars() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, m) in params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
        buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| AheadError::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| AheadError::Model(format!("truncated model file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(ModelHeader, ModelParams)> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| AheadError::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(AheadError::Model("not a model file (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(AheadError::Model(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = r.u32()? as usize;
    let header: ModelHeader = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| AheadError::Model(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(AheadError::Model(format!(
            "header version {} does not match container version {FORMAT_VERSION}",
            header.format_version
        )));
    }
    let count = r.u32()?;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| AheadError::Model("parameter name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64()? as usize;
        let cols = r.u64()? as usize;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| AheadError::Model(format!("'{name}': shape overflow")))?;
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| AheadError::Model("size overflow".into()))?)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let m = Matrix::from_shape_vec((rows, cols), values).expect("length checked");
        if params.contains(&name) {
            return Err(AheadError::Model(format!("duplicate parameter '{name}'")));
        }
        params.insert(name, m);
    }
    if r.pos != buf.len() {
        return Err(AheadError::Model("trailing bytes after last array".into()));
    }
    Ok((header, params))
}
