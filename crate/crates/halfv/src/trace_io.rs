//! HVTD, the binary hidden-state trace format.
//!
//! ```text
//! magic      4 bytes   "HVTD"
//! version    u32 LE    1
//! num_layers u32 LE
//! num_tokens u32 LE
//! dim        u32 LE
//! modality   num_tokens × u8   0 = visual, 1 = text
//! payload    num_layers × num_tokens × dim × f32 LE, layer-major then row-major
//! ```
//!
//! States are held as `f64` in memory and narrowed to `f32` on write, so a
//! read → write → read cycle is lossless and write → read → write reproduces
//! the same bytes.

use std::fs;
use std::path::Path;

use halfv_core::{DenseMatrix, LayerTrace, Modality};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"HVTD";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

fn invalid(msg: String) -> Error {
    Error::Core(halfv_core::Error::Validation(msg))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Parses an HVTD image.
pub fn decode_trace(bytes: &[u8]) -> Result<LayerTrace> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing HVTD magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corrupt(format!("header truncated at {} bytes", bytes.len())));
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let layers = u32_at(bytes, 8) as usize;
    let tokens = u32_at(bytes, 12) as usize;
    let dim = u32_at(bytes, 16) as usize;
    let values = layers
        .checked_mul(tokens)
        .and_then(|x| x.checked_mul(dim))
        .ok_or_else(|| Error::Corrupt("declared dimensions overflow".into()))?;
    let expected = values
        .checked_mul(4)
        .and_then(|x| x.checked_add(HEADER_LEN + tokens))
        .ok_or_else(|| Error::Corrupt("declared dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Corrupt(format!(
            "declared {layers}x{tokens}x{dim} needs {expected} bytes, file has {}",
            bytes.len()
        )));
    }
    let modality = bytes[HEADER_LEN..HEADER_LEN + tokens]
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(Modality::Visual),
            1 => Ok(Modality::Text),
            _ => Err(Error::Corrupt(format!("token {i} has modality byte {b}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    let payload = &bytes[HEADER_LEN + tokens..];
    let per_layer = tokens * dim;
    let mut states = Vec::with_capacity(layers);
    for l in 0..layers {
        let data: Vec<f64> = payload[l * per_layer * 4..(l + 1) * per_layer * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")) as f64)
            .collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Corrupt(format!("layer {l} holds non-finite values")));
        }
        states.push(DenseMatrix::new(tokens, dim, data)?);
    }
    Ok(LayerTrace::new(modality, states)?)
}

/// Serializes `trace` as an HVTD image.
pub fn encode_trace(trace: &LayerTrace) -> Result<Vec<u8>> {
    let dims = [trace.num_layers(), trace.num_tokens(), trace.dim()];
    let mut header = [0u32; 3];
    for (slot, &d) in header.iter_mut().zip(&dims) {
        *slot = u32::try_from(d).map_err(|_| invalid(format!("dimension {d} exceeds u32")))?;
    }
    let values = dims.iter().product::<usize>();
    let mut out = Vec::with_capacity(HEADER_LEN + trace.num_tokens() + 4 * values);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in header {
        out.extend_from_slice(&d.to_le_bytes());
    }
    out.extend(trace.modality().iter().map(|m| match m {
        Modality::Visual => 0u8,
        Modality::Text => 1u8,
    }));
    for (l, m) in trace.states().iter().enumerate() {
        for &x in m.data() {
            let narrow = x as f32;
            if !narrow.is_finite() {
                return Err(invalid(format!("layer {l} value {x} does not fit in f32")));
            }
            out.extend_from_slice(&narrow.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<LayerTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_trace(&bytes)
}

pub fn write_trace(trace: &LayerTrace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_trace(trace)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
