//! Versioned binary model file shared by the classifier and the BiLSTM
//! baseline.
//!
//! Layout (little endian):
//!
//! ```text
//! magic    8 bytes  "QWFMODEL"
//! version  u32
//! hdr_len  u64
//! header   hdr_len bytes of JSON {"kind": .., "body": ..}
//! n        u64      parameter count
//! params   n * f64
//! ```

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"QWFMODEL";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header<T> {
    kind: String,
    body: T,
}

pub fn encode<T: Serialize>(kind: &str, body: &T, params: &[f64]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(&Header { kind: kind.to_string(), body })?;
    let mut out = Vec::with_capacity(8 + 4 + 8 + header.len() + 8 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    Ok(out)
}

/// Reads only the `kind` field.
pub fn peek_kind(bytes: &[u8]) -> Result<String> {
    let (header, _) = split(bytes)?;
    let v: Header<serde::de::IgnoredAny> = serde_json::from_slice(header)?;
    Ok(v.kind)
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8], expected_kind: &str) -> Result<(T, Vec<f64>)> {
    let (header, rest) = split(bytes)?;
    let header: Header<serde_json::Value> = serde_json::from_slice(header)?;
    if header.kind != expected_kind {
        return Err(Error::Format(format!(
            "model kind {:?}, expected {expected_kind:?}",
            header.kind
        )));
    }
    let body: T = serde_json::from_value(header.body)?;
    let (n, rest) = take_u64(rest)?;
    let n = usize::try_from(n).map_err(|_| Error::Format("parameter count overflow".into()))?;
    if rest.len() != n.checked_mul(8).ok_or_else(|| Error::Format("parameter count overflow".into()))? {
        return Err(Error::Format(format!(
            "truncated or oversized parameter block: {} bytes for {n} parameters",
            rest.len()
        )));
    }
    let params = rest
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((body, params))
}

fn split(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let rest = &bytes[8..];
    if rest.len() < 4 {
        return Err(Error::Format("truncated header".into()));
    }
    let version = u32::from_le_bytes(rest[..4].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("format version {version}, expected {VERSION}")));
    }
    let (len, rest) = take_u64(&rest[4..])?;
    let len = usize::try_from(len).map_err(|_| Error::Format("header length overflow".into()))?;
    if rest.len() < len {
        return Err(Error::Format("truncated header".into()));
    }
    Ok(rest.split_at(len))
}

fn take_u64(bytes: &[u8]) -> Result<(u64, &[u8])> {
    if bytes.len() < 8 {
        return Err(Error::Format("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(8);
    Ok((u64::from_le_bytes(head.try_into().unwrap()), rest))
}
