//! Checkpoint container and parameter-space arithmetic.
//!
//! A [`Checkpoint`] is an ordered map of named flat `f32` tensors plus a
//! string metadata map. Every merge works elementwise over the canonical
//! (lexicographic) name order, accumulates in `f64` and rounds once.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! "CAPE" 0x01
//! u64 header_len
//! header: JSON array of {name, shape, offset, length}, sorted by name
//! data:   raw f32 values, tensors contiguous in header order
//! meta:   JSON object of string -> string, until end of file
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CAPE";
pub const VERSION: u8 = 0x01;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn element_count(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected = element_count(&shape);
        if expected != data.len() {
            return Err(Error::ShapeMismatch {
                name: String::new(),
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: f32) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = element_count(&shape);
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Bitwise equality, so NaN payloads and signed zeros are compared too.
    pub fn bit_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    entries: BTreeMap<String, Tensor>,
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace a tensor. Names must be non-empty.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidName(name));
        }
        self.entries.insert(name, tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    /// Tensors in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn bit_eq(&self, other: &Checkpoint) -> bool {
        self.metadata == other.metadata
            && self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }

    /// Check merge-compatibility: identical name sets and per-name shapes.
    pub fn check_compatible(&self, other: &Checkpoint) -> Result<()> {
        let mut a = self.entries.iter().peekable();
        let mut b = other.entries.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (None, None) => return Ok(()),
                (Some((na, _)), None) => {
                    return Err(incompatible(na, "missing from second checkpoint"))
                }
                (None, Some((nb, _))) => {
                    return Err(incompatible(nb, "missing from first checkpoint"))
                }
                (Some((na, ta)), Some((nb, tb))) => {
                    if na < nb {
                        return Err(incompatible(na, "missing from second checkpoint"));
                    }
                    if nb < na {
                        return Err(incompatible(nb, "missing from first checkpoint"));
                    }
                    if ta.shape != tb.shape {
                        return Err(incompatible(
                            na,
                            &format!("shape {:?} vs {:?}", ta.shape, tb.shape),
                        ));
                    }
                    a.next();
                    b.next();
                }
            }
        }
    }
}

fn incompatible(name: &str, reason: &str) -> Error {
    Error::Incompatible {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

/// Finite mixing coefficient. Values outside `[0, 1]` are allowed.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Alpha(f64);

impl Alpha {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() {
            Ok(Alpha(value))
        } else {
            Err(Error::NonFiniteAlpha(value))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Alpha {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Alpha::new(value)
    }
}

impl From<Alpha> for f64 {
    fn from(a: Alpha) -> f64 {
        a.0
    }
}

fn label(ckpt: &Checkpoint, fallback: &str) -> String {
    ckpt.meta("name").unwrap_or(fallback).to_string()
}

/// Apply `f` elementwise over compatible checkpoints, inputs widened to f64.
fn zip_map<F>(inputs: &[&Checkpoint], f: F) -> Result<Checkpoint>
where
    F: Fn(&[f64]) -> f64,
{
    let first = inputs[0];
    for other in &inputs[1..] {
        first.check_compatible(other)?;
    }
    let mut out = Checkpoint::new();
    let mut scratch = vec![0.0f64; inputs.len()];
    for (name, tensor) in &first.entries {
        let sources: Vec<&[f32]> = inputs.iter().map(|c| c.entries[name].data()).collect();
        let data = (0..tensor.len())
            .map(|i| {
                for (slot, src) in scratch.iter_mut().zip(&sources) {
                    *slot = src[i] as f64;
                }
                f(&scratch) as f32
            })
            .collect();
        out.entries.insert(
            name.clone(),
            Tensor {
                shape: tensor.shape.clone(),
                data,
            },
        );
    }
    out.metadata = first.metadata.clone();
    Ok(out)
}

/// `base + alpha * (expert - anti)`, elementwise.
pub fn cape_merge(
    base: &Checkpoint,
    expert: &Checkpoint,
    anti: &Checkpoint,
    alpha: Alpha,
) -> Result<Checkpoint> {
    base.check_compatible(expert)?;
    base.check_compatible(anti)?;
    let a = alpha.value();
    let mut out = if a == 0.0 {
        base.clone()
    } else {
        zip_map(&[base, expert, anti], |v| v[0] + a * (v[1] - v[2]))?
    };
    out.set_meta("merge.strategy", "cape");
    out.set_meta("merge.alpha", a.to_string());
    out.set_meta("merge.base", label(base, "base"));
    out.set_meta("merge.expert", label(expert, "expert"));
    out.set_meta("merge.anti", label(anti, "anti"));
    out.set_meta("parent", label(base, "base"));
    out.metadata.remove("name");
    Ok(out)
}

/// `(1 - alpha) * base + alpha * expert`, elementwise.
pub fn wise_ft_merge(base: &Checkpoint, expert: &Checkpoint, alpha: Alpha) -> Result<Checkpoint> {
    let a = alpha.value();
    let mut out = zip_map(&[base, expert], |v| (1.0 - a) * v[0] + a * v[1])?;
    out.set_meta("merge.strategy", "wiseft");
    out.set_meta("merge.alpha", a.to_string());
    out.set_meta("merge.base", label(base, "base"));
    out.set_meta("merge.expert", label(expert, "expert"));
    out.set_meta("parent", label(base, "base"));
    out.metadata.remove("name");
    Ok(out)
}

/// Elementwise arithmetic mean.
pub fn average_merge(ckpts: &[&Checkpoint]) -> Result<Checkpoint> {
    if ckpts.is_empty() {
        return Err(Error::EmptyMerge);
    }
    let k = ckpts.len() as f64;
    let mut out = zip_map(ckpts, |v| v.iter().sum::<f64>() / k)?;
    let parents: Vec<String> = ckpts
        .iter()
        .enumerate()
        .map(|(i, c)| label(c, &format!("input{i}")))
        .collect();
    out.set_meta("merge.strategy", "average");
    out.set_meta("merge.inputs", parents.join(","));
    out.set_meta("parent", parents[0].clone());
    out.metadata.remove("name");
    Ok(out)
}

/// Euclidean norm of all elementwise differences, summed in canonical order.
pub fn diff_norm(a: &Checkpoint, b: &Checkpoint) -> Result<f64> {
    a.check_compatible(b)?;
    let mut sum = 0.0f64;
    for (name, ta) in &a.entries {
        let tb = &b.entries[name];
        for (x, y) in ta.data.iter().zip(&tb.data) {
            let d = *x as f64 - *y as f64;
            sum += d * d;
        }
    }
    Ok(sum.sqrt())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    length: u64,
}

/// Serialize to the container byte layout.
pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut header = Vec::with_capacity(ckpt.entries.len());
    let mut offset = 0u64;
    for (name, t) in &ckpt.entries {
        if name.is_empty() {
            return Err(Error::InvalidName(name.clone()));
        }
        let expected = element_count(&t.shape);
        if expected != t.data.len() {
            return Err(Error::ShapeMismatch {
                name: name.clone(),
                shape: t.shape.clone(),
                expected,
                actual: t.data.len(),
            });
        }
        header.push(HeaderEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            offset,
            length: t.data.len() as u64,
        });
        offset += 4 * t.data.len() as u64;
    }
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let meta_json =
        serde_json::to_vec(&ckpt.metadata).map_err(|e| Error::MalformedMetadata(e.to_string()))?;

    let mut out = Vec::with_capacity(13 + header_json.len() + offset as usize + meta_json.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for t in ckpt.entries.values() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.extend_from_slice(&meta_json);
    Ok(out)
}

/// Parse the container byte layout.
pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 5 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    if bytes.len() < 13 {
        return Err(Error::MalformedHeader("missing header length".into()));
    }
    let header_len = u64::from_le_bytes(bytes[5..13].try_into().unwrap());
    let header_end = 13u64
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len() as u64)
        .ok_or_else(|| {
            Error::MalformedHeader(format!(
                "header length {header_len} exceeds file size {}",
                bytes.len()
            ))
        })? as usize;
    let header: Vec<HeaderEntry> = serde_json::from_slice(&bytes[13..header_end])
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;

    let mut expected_offset = 0u64;
    let mut prev_name: Option<&str> = None;
    for h in &header {
        if h.name.is_empty() {
            return Err(Error::InvalidName(h.name.clone()));
        }
        if let Some(prev) = prev_name {
            if prev == h.name {
                return Err(Error::DuplicateName(h.name.clone()));
            }
            if prev > h.name.as_str() {
                return Err(Error::MalformedHeader(format!(
                    "entries not sorted: {prev:?} before {:?}",
                    h.name
                )));
            }
        }
        prev_name = Some(&h.name);
        let expected = element_count(&h.shape);
        if expected as u64 != h.length {
            return Err(Error::ShapeMismatch {
                name: h.name.clone(),
                shape: h.shape.clone(),
                expected,
                actual: h.length as usize,
            });
        }
        if h.offset != expected_offset {
            return Err(Error::MalformedHeader(format!(
                "tensor {:?} at offset {} but expected {expected_offset}",
                h.name, h.offset
            )));
        }
        expected_offset = h
            .length
            .checked_mul(4)
            .and_then(|n| n.checked_add(expected_offset))
            .ok_or_else(|| Error::MalformedHeader("data section overflows".into()))?;
    }

    let data_size = expected_offset;
    let available = bytes.len() as u64 - header_end as u64;
    if available < data_size {
        return Err(Error::TruncatedData {
            needed: data_size,
            found: available,
        });
    }
    let data_end = header_end + data_size as usize;
    let data = &bytes[header_end..data_end];

    let mut ckpt = Checkpoint::new();
    for h in header {
        let start = h.offset as usize;
        let end = start + 4 * h.length as usize;
        let values = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        ckpt.entries.insert(
            h.name,
            Tensor {
                shape: h.shape,
                data: values,
            },
        );
    }
    ckpt.metadata = serde_json::from_slice(&bytes[data_end..])
        .map_err(|e| Error::MalformedMetadata(e.to_string()))?;
    Ok(ckpt)
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = to_bytes(ckpt)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
