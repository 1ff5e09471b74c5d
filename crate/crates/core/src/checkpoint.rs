//! Binary model checkpoints.
//!
//! Layout: magic `HMFCKPT\0`, `u32` version, `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::UserItemIndex;
use crate::error::{Error, Result};
use crate::model::{HierarchySpec, ModelParameters, SideParameters};
use crate::numerics::DenseMatrix;

const MAGIC: &[u8; 8] = b"HMFCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    spec: HierarchySpec,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    /// `(rows, cols)` per tensor: user logits, user root, item logits, item root.
    shapes: Vec<(usize, usize)>,
}

/// A trained model with the id mapping needed to score external ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters,
    pub index: UserItemIndex,
}

fn tensors(params: &ModelParameters) -> impl Iterator<Item = &DenseMatrix> {
    params.user.tensors().chain(params.item.tensors())
}

pub fn encode(params: &ModelParameters, index: &UserItemIndex) -> Result<Vec<u8>> {
    let header = Header {
        spec: params.spec.clone(),
        user_ids: index.user_ids().to_vec(),
        item_ids: index.item_ids().to_vec(),
        shapes: tensors(params).map(DenseMatrix::shape).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let payload: usize = tensors(params).map(|t| t.as_slice().len() * 8).sum();
    let mut out = Vec::with_capacity(MAGIC.len() + 12 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for t in tensors(params) {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!("truncated {what}")));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn decode(mut bytes: &[u8]) -> Result<Checkpoint> {
    if take(&mut bytes, MAGIC.len(), "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let len = u64::from_le_bytes(take(&mut bytes, 8, "header length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let header: Header = serde_json::from_slice(take(&mut bytes, len, "header")?)?;

    let mut mats = Vec::with_capacity(header.shapes.len());
    for &(rows, cols) in &header.shapes {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let raw = take(&mut bytes, n, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        mats.push(DenseMatrix::from_vec(rows, cols, data)?);
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }

    let spec = header.spec;
    let user_depth = spec.user_depth();
    if mats.len() != user_depth + spec.item_depth() + 2 {
        return Err(Error::Checkpoint(format!("expected {} tensors, found {}", user_depth + spec.item_depth() + 2, mats.len())));
    }
    let mut item_mats = mats.split_off(user_depth + 1);
    let user_root = mats.pop().expect("non-empty");
    let item_root = item_mats.pop().expect("non-empty");
    let params = ModelParameters {
        spec,
        user: SideParameters { logits: mats, root: user_root },
        item: SideParameters { logits: item_mats, root: item_root },
    };
    params.validate()?;
    let index = UserItemIndex::from_ids(header.user_ids, header.item_ids)?;
    if index.num_users() != params.spec.num_users || index.num_items() != params.spec.num_items {
        return Err(Error::Checkpoint("id lists disagree with model shape".into()));
    }
    Ok(Checkpoint { params, index })
}

/// Writes via a temporary sibling file and a rename.
pub fn save(path: &Path, params: &ModelParameters, index: &UserItemIndex) -> Result<()> {
    let bytes = encode(params, index)?;
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::File::create(&tmp)
        .and_then(|mut f| {
            f.write_all(bytes)?;
            f.sync_all()
        })
        .map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
