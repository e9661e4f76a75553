use std::io::Cursor;
use std::path::Path;

use super::{read_file, FormatError, Result};
use crate::grid::Image;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes a PNG or binary PPM/PGM (`P6`/`P5`) into channel values in `[0, 1]`.
/// Alpha is dropped; gray stays single-channel.
pub fn read_image(bytes: &[u8]) -> Result<Image> {
    if bytes.starts_with(PNG_SIGNATURE) {
        read_png(bytes)
    } else if bytes.starts_with(b"P6") || bytes.starts_with(b"P5") {
        read_pnm(bytes)
    } else {
        let tag: String = bytes.iter().take(4).map(|&b| b as char).collect();
        Err(FormatError::Unsupported(format!("image format tag {tag:?}")))
    }
}

pub fn read_image_file(path: &Path) -> Result<Image> {
    read_image(&read_file(path)?)
}

fn read_png(bytes: &[u8]) -> Result<Image> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(|e| FormatError::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| FormatError::Png("image too large".into()))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| FormatError::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (in_ch, out_ch) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(FormatError::Unsupported(format!("PNG color type {other:?}"))),
    };
    let (bps, max) = match info.bit_depth {
        png::BitDepth::Sixteen => (2, 65535.0),
        _ => (1, 255.0),
    };
    let mut data = Vec::with_capacity(w * h * out_ch);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * in_ch * bps];
        for px in row.chunks_exact(in_ch * bps) {
            for c in 0..out_ch {
                let v = if bps == 2 {
                    u16::from_be_bytes([px[2 * c], px[2 * c + 1]]) as f32
                } else {
                    px[c] as f32
                };
                data.push(v / max);
            }
        }
    }
    Ok(Image::new(w, h, out_ch, data)?)
}

fn pnm_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(FormatError::Header("unexpected end of PNM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn read_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = pnm_token(bytes, &mut pos)?;
    let channels = if magic == "P6" { 3 } else { 1 };
    let mut num = |what: &str| -> Result<usize> {
        let t = pnm_token(bytes, &mut pos)?;
        t.parse::<usize>()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| FormatError::Header(format!("invalid {what} {t:?}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if maxval > 65535 {
        return Err(FormatError::Header(format!("maxval {maxval} out of range")));
    }
    pos += 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let n = w
        .checked_mul(h)
        .and_then(|v| v.checked_mul(channels * bps))
        .ok_or_else(|| FormatError::Header("dimensions overflow".into()))?;
    let data = bytes.get(pos..).unwrap_or(&[]);
    if data.len() < n {
        return Err(FormatError::Truncated {
            expected: n,
            actual: data.len(),
        });
    }
    let values = data[..n]
        .chunks_exact(bps)
        .map(|c| {
            let v = if bps == 2 {
                u16::from_be_bytes([c[0], c[1]]) as f32
            } else {
                c[0] as f32
            };
            v / maxval as f32
        })
        .collect();
    Ok(Image::new(w, h, channels, values)?)
}

/// Encodes an image as an 8-bit PNG, clamping values to `[0, 1]`.
pub fn write_png8(image: &Image) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, image.width() as u32, image.height() as u32);
        enc.set_color(if image.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| FormatError::Png(e.to_string()))?;
        let data: Vec<u8> = image
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        w.write_image_data(&data)
            .map_err(|e| FormatError::Png(e.to_string()))?;
    }
    Ok(bytes)
}
