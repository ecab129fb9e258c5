//! `θ₀` checkpoints: a little-endian `u64` element count followed by that many
//! little-endian `f32` values.

use std::path::Path;

use crate::error::{Error, Result};

pub fn write_checkpoint(path: &Path, theta: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + 4 * theta.len());
    bytes.extend_from_slice(&(theta.len() as u64).to_le_bytes());
    for &v in theta {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    decode(&std::fs::read(path)?)
}

fn decode(bytes: &[u8]) -> Result<Vec<f64>> {
    let Some(header) = bytes.get(..8) else {
        return Err(Error::ingestion(bytes.len(), "truncated checkpoint header"));
    };
    let len = u64::from_le_bytes(header.try_into().expect("8-byte slice")) as usize;
    let body = &bytes[8..];
    if body.len() != len.saturating_mul(4) {
        return Err(Error::ingestion(
            bytes.len(),
            format!("checkpoint declares {len} values but carries {} bytes", body.len()),
        ));
    }
    Ok(body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
        .collect())
}
