//! Headered raw dump: `u32` width, `u32` height (both little endian), then
//! `width * height` little-endian `f32` values in top-down row order. NaN marks
//! invalid pixels.

use super::{FormatError, Result};
use crate::grid::DepthGrid;

pub fn write_raw_f32le(grid: &DepthGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + grid.len() * 4);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for (i, &v) in grid.values().iter().enumerate() {
        let v = if grid.is_valid_index(i) || v.is_nan() { v } else { f32::NAN };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_raw_f32le(bytes: &[u8]) -> Result<DepthGrid> {
    if bytes.len() < 8 {
        return Err(FormatError::Truncated {
            expected: 8,
            actual: bytes.len(),
        });
    }
    let width = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
    let height = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if width == 0 || height == 0 {
        return Err(FormatError::Header(format!("invalid dimensions {width}x{height}")));
    }
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::Header("dimensions overflow".into()))?;
    let data = &bytes[8..];
    if data.len() != expected {
        return Err(FormatError::Truncated {
            expected,
            actual: data.len(),
        });
    }
    let values: Vec<f32> = data
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mask = values
        .iter()
        .any(|v| v.is_nan())
        .then(|| values.iter().map(|v| !v.is_nan()).collect());
    Ok(DepthGrid::with_mask(width, height, values, mask)?)
}
