//! Model checkpoints: a JSON architecture header followed by a flat f32
//! little-endian parameter blob.
//!
//! Layout: `u32` header length (LE), UTF-8 JSON header, then parameters in
//! [`Mlp::params_flat`] order. Different model kinds share this container
//! and are told apart by the header's `kind` field.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

use super::mlp::{Activation, Mlp};

/// Serializes a header and parameter blob into the checkpoint container.
pub(crate) fn write_container<W: Write>(
    mut w: W,
    header: &impl Serialize,
    params: &[f32],
) -> Result<()> {
    let header_bytes = serde_json::to_vec(header)?;
    if header_bytes.len() > u32::MAX as usize {
        return Err(domain("checkpoint header too large"));
    }
    w.write_u32::<LittleEndian>(header_bytes.len() as u32)?;
    w.write_all(&header_bytes)?;
    for &p in params {
        w.write_f32::<LittleEndian>(p)?;
    }
    Ok(())
}

/// Splits a checkpoint into its JSON header and parameter blob, checking
/// framing and that every parameter is finite.
pub(crate) fn read_container(bytes: &[u8]) -> Result<(String, Vec<f32>)> {
    let mut r = std::io::Cursor::new(bytes);
    let header_len = r
        .read_u32::<LittleEndian>()
        .map_err(|_| domain("checkpoint shorter than its length prefix"))? as usize;
    let body = &bytes[4..];
    if body.len() < header_len {
        return Err(domain(format!(
            "checkpoint header truncated: declared {header_len} bytes, found {}",
            body.len()
        )));
    }
    let header = std::str::from_utf8(&body[..header_len])
        .map_err(|_| domain("checkpoint header is not UTF-8"))?
        .to_string();
    let blob = &body[header_len..];
    if blob.len() % 4 != 0 {
        return Err(domain(format!(
            "checkpoint parameter blob length {} is not a multiple of 4",
            blob.len()
        )));
    }
    let params: Vec<f32> = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(domain("checkpoint contains non-finite parameters"));
    }
    Ok((header, params))
}

/// Peeks at the `kind` field so callers can dispatch on model type.
pub(crate) fn header_kind(header: &str) -> Result<String> {
    #[derive(Deserialize)]
    struct Kind {
        kind: String,
    }
    let k: Kind = serde_json::from_str(header)?;
    Ok(k.kind)
}

#[derive(Serialize, Deserialize)]
struct MlpHeader {
    kind: String,
    dims: Vec<usize>,
    activations: Vec<Activation>,
}

impl Mlp<f32> {
    /// Writes the network to a checkpoint file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = MlpHeader {
            kind: "mlp".to_string(),
            dims: self.dims(),
            activations: self.activations().to_vec(),
        };
        let mut buf = Vec::new();
        write_container(&mut buf, &header, &self.params_flat())?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Reads a network from a checkpoint file, validating architecture
    /// against the stored parameter count.
    pub fn load(path: impl AsRef<Path>) -> Result<Mlp<f32>> {
        let bytes = fs::read(path)?;
        let (header, params) = read_container(&bytes)?;
        let kind = header_kind(&header)?;
        if kind != "mlp" {
            return Err(domain(format!("expected an mlp checkpoint, found kind {kind:?}")));
        }
        let h: MlpHeader = serde_json::from_str(&header)?;
        Mlp::from_parts(&h.dims, &h.activations, &params)
    }
}
