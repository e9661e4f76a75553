//! 16-bit grayscale PNG depth with a JSON sidecar holding the dequantization
//! `value = offset + scale * code`. When the grid has invalid pixels, code 0 is
//! reserved for them and valid values use codes 1..=65535.

use std::io::Cursor;

use serde::{Deserialize, Serialize};

use super::{FormatError, Result};
use crate::grid::{self, DepthGrid, GridError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Png16Sidecar {
    pub scale: f64,
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_code: Option<u16>,
}

pub fn write_png16(grid: &DepthGrid) -> Result<(Vec<u8>, Png16Sidecar)> {
    let (lo, hi) = grid::valid_range(grid).ok_or(GridError::EmptyInput)?;
    let holes = !grid.is_fully_valid();
    let first = if holes { 1u32 } else { 0 };
    let levels = (65535 - first) as f64;
    let scale = (hi - lo) / levels;
    let offset = lo - first as f64 * scale;
    let codes: Vec<u16> = grid
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if !grid.is_valid_index(i) {
                0
            } else if scale == 0.0 {
                first as u16
            } else {
                let q = ((v as f64 - lo) / scale).round().clamp(0.0, levels);
                (q as u32 + first) as u16
            }
        })
        .collect();
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, grid.width() as u32, grid.height() as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().map_err(|e| FormatError::Png(e.to_string()))?;
        let data: Vec<u8> = codes.iter().flat_map(|c| c.to_be_bytes()).collect();
        w.write_image_data(&data)
            .map_err(|e| FormatError::Png(e.to_string()))?;
    }
    let sidecar = Png16Sidecar {
        scale,
        offset,
        invalid_code: holes.then_some(0),
    };
    Ok((bytes, sidecar))
}

pub fn read_png16(bytes: &[u8], sidecar: &Png16Sidecar) -> Result<DepthGrid> {
    let dec = png::Decoder::new(Cursor::new(bytes));
    let mut reader = dec.read_info().map_err(|e| FormatError::Png(e.to_string()))?;
    let (color, depth) = reader.output_color_type();
    if color != png::ColorType::Grayscale || depth != png::BitDepth::Sixteen {
        return Err(FormatError::Unsupported(format!(
            "depth PNG must be 16-bit grayscale, found {color:?} {depth:?}"
        )));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FormatError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| FormatError::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let line = info.line_size;
    let mut values = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * line..y * line + 2 * w];
        for c in row.chunks_exact(2) {
            let code = u16::from_be_bytes([c[0], c[1]]);
            let invalid = sidecar.invalid_code == Some(code);
            mask.push(!invalid);
            values.push(if invalid {
                f32::NAN
            } else {
                (sidecar.offset + sidecar.scale * code as f64) as f32
            });
        }
    }
    let mask = mask.iter().any(|v| !v).then_some(mask);
    Ok(DepthGrid::with_mask(w, h, values, mask)?)
}
