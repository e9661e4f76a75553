//! Portable float map codec.
//!
//! Layout: a magic token (`Pf` gray, `PF` RGB), whitespace, width and height,
//! whitespace, a scale whose sign selects the byte order (negative = little
//! endian), exactly one whitespace byte, then rows of `f32` stored bottom-up.
//! Mixture-parameter fields use the same layout with the magic `PB` and five
//! interleaved planes `(pi, mu1, b1, mu2, b2)` per pixel.

use super::{FormatError, Result};
use crate::bimodal::BimodalField;
use crate::grid::{DepthGrid, Image};

const GRAY: &str = "Pf";
const COLOR: &str = "PF";
const BIMODAL: &str = "PB";

struct Header {
    magic: String,
    width: usize,
    height: usize,
    little_endian: bool,
    data_offset: usize,
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::Header("unexpected end of header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos])
        .map(str::to_owned)
        .map_err(|_| FormatError::Header("non-ASCII header token".into()))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if ![GRAY, COLOR, BIMODAL].contains(&magic.as_str()) {
        return Err(FormatError::Header(format!("unknown magic {magic:?}")));
    }
    let mut dim = |name: &str| -> Result<usize> {
        let t = next_token(bytes, &mut pos)?;
        match t.parse::<usize>() {
            Ok(v) if v > 0 => Ok(v),
            _ => Err(FormatError::Header(format!("invalid {name} {t:?}"))),
        }
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let scale_tok = next_token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| FormatError::Header(format!("invalid scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(FormatError::Header(format!("invalid scale {scale_tok:?}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(FormatError::Header("missing separator after scale".into())),
    }
    Ok(Header {
        magic,
        width,
        height,
        little_endian: scale < 0.0,
        data_offset: pos,
    })
}

/// Decodes `channels` interleaved planes into top-down row-major order.
fn read_payload(bytes: &[u8], h: &Header, channels: usize) -> Result<Vec<f32>> {
    let row_len = h
        .width
        .checked_mul(channels)
        .ok_or_else(|| FormatError::Header("dimensions overflow".into()))?;
    let expected = row_len
        .checked_mul(h.height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::Header("dimensions overflow".into()))?;
    let data = &bytes[h.data_offset..];
    if data.len() < expected {
        return Err(FormatError::Truncated {
            expected,
            actual: data.len(),
        });
    }
    let mut out = vec![0f32; row_len * h.height];
    for (file_row, chunk) in data[..expected].chunks_exact(row_len * 4).enumerate() {
        let y = h.height - 1 - file_row;
        let dst = &mut out[y * row_len..(y + 1) * row_len];
        for (d, b) in dst.iter_mut().zip(chunk.chunks_exact(4)) {
            let b = [b[0], b[1], b[2], b[3]];
            *d = if h.little_endian {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(out)
}

fn write_payload(magic: &str, width: usize, height: usize, channels: usize, data: &[f32]) -> Vec<u8> {
    let mut out = format!("{magic}\n{width} {height}\n-1.0\n").into_bytes();
    out.reserve(data.len() * 4);
    let row_len = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads a single-channel PFM; NaN pixels become invalid.
pub fn read_pfm(bytes: &[u8]) -> Result<DepthGrid> {
    let h = parse_header(bytes)?;
    match h.magic.as_str() {
        GRAY => {}
        COLOR => return Err(FormatError::ColorPfm),
        m => return Err(FormatError::Header(format!("{m:?} is not a depth grid"))),
    }
    let values = read_payload(bytes, &h, 1)?;
    let mask = values.iter().any(|v| v.is_nan()).then(|| values.iter().map(|v| !v.is_nan()).collect());
    Ok(DepthGrid::with_mask(h.width, h.height, values, mask)?)
}

/// Writes a little-endian single-channel PFM; invalid pixels are written as NaN.
pub fn write_pfm(grid: &DepthGrid) -> Vec<u8> {
    let data: Vec<f32> = grid
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            if grid.is_valid_index(i) || v.is_nan() {
                v
            } else {
                f32::NAN
            }
        })
        .collect();
    write_payload(GRAY, grid.width(), grid.height(), 1, &data)
}

/// Reads a `Pf` or `PF` file as an image without range checks.
pub fn read_pfm_image(bytes: &[u8]) -> Result<Image> {
    let h = parse_header(bytes)?;
    let channels = match h.magic.as_str() {
        GRAY => 1,
        COLOR => 3,
        m => return Err(FormatError::Header(format!("{m:?} is not an image"))),
    };
    let data = read_payload(bytes, &h, channels)?;
    Ok(Image::new(h.width, h.height, channels, data)?)
}

pub fn write_pfm_image(image: &Image) -> Vec<u8> {
    let magic = if image.channels() == 1 { GRAY } else { COLOR };
    write_payload(magic, image.width(), image.height(), image.channels(), image.data())
}

pub fn read_bimodal(bytes: &[u8]) -> Result<BimodalField> {
    let h = parse_header(bytes)?;
    if h.magic != BIMODAL {
        return Err(FormatError::Header(format!(
            "expected {BIMODAL:?} mixture field, found {:?}",
            h.magic
        )));
    }
    let data = read_payload(bytes, &h, 5)?;
    let raw: Vec<[f32; 5]> = data
        .chunks_exact(5)
        .map(|c| [c[0], c[1], c[2], c[3], c[4]])
        .collect();
    Ok(BimodalField::from_raw(h.width, h.height, &raw)?)
}

pub fn write_bimodal(field: &BimodalField) -> Vec<u8> {
    let data: Vec<f32> = field.params().iter().flat_map(|p| p.to_array()).collect();
    write_payload(BIMODAL, field.width(), field.height(), 5, &data)
}
