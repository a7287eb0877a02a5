// SPDX-License-Identifier: MIT OR Apache-2.0

//! Shared framing for the `.fbank` and `.nbasis` files.
//!
//! Layout: 4 magic bytes, a little-endian `u32` header length, a compact
//! UTF-8 JSON header with sorted keys, then a row-major little-endian
//! IEEE-754 payload.

use crate::error::{Error, Result};

pub(crate) const PREFIX_LEN: usize = 8;

/// A parsed container split into header and payload slices.
pub(crate) struct Frame<'a> {
    pub header: &'a [u8],
    pub payload: &'a [u8],
    pub payload_offset: usize,
}

pub(crate) fn split<'a>(bytes: &'a [u8], magic: &'static str) -> Result<Frame<'a>> {
    let found = bytes.get(..4).unwrap_or(bytes);
    if found != magic.as_bytes() {
        return Err(Error::BadMagic {
            expected: magic,
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    let len_bytes: [u8; 4] = bytes
        .get(4..PREFIX_LEN)
        .and_then(|s| s.try_into().ok())
        .ok_or(Error::HeaderLength {
            offset: 4,
            declared: 4,
            available: bytes.len().saturating_sub(4),
        })?;
    let declared = u32::from_le_bytes(len_bytes) as usize;
    let available = bytes.len() - PREFIX_LEN;
    if declared > available {
        return Err(Error::HeaderLength {
            offset: PREFIX_LEN,
            declared,
            available,
        });
    }
    let payload_offset = PREFIX_LEN + declared;
    Ok(Frame {
        header: &bytes[PREFIX_LEN..payload_offset],
        payload: &bytes[payload_offset..],
        payload_offset,
    })
}

pub(crate) fn join(magic: &'static str, header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREFIX_LEN + header.len() + payload.len());
    out.extend_from_slice(magic.as_bytes());
    // headers are a few MB at most (ids dominate); u32 is plenty
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

pub(crate) fn parse_header<T: serde::de::DeserializeOwned>(header: &[u8]) -> Result<T> {
    serde_json::from_slice(header).map_err(|e| Error::InvalidHeader {
        offset: PREFIX_LEN,
        reason: e.to_string(),
    })
}

pub(crate) fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn encode_f32(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub(crate) fn decode_f64(payload: &[u8]) -> Vec<f64> {
    payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect()
}

pub(crate) fn decode_f32(payload: &[u8]) -> Vec<f64> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
        .collect()
}
