//! Class maps rendered as palette PNGs.

use std::path::Path;

use waferseg_core::{Error, Result};

/// Background blue, in-spec turquoise, defect yellow.
pub const PALETTE: [[u8; 3]; 3] = [[0, 0, 255], [64, 224, 208], [255, 255, 0]];

pub fn encode_png(height: usize, width: usize, labels: &[u8]) -> Result<Vec<u8>> {
    if labels.len() != height * width {
        return Err(Error::shape(format!(
            "class map has {} pixels, expected {height}x{width}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c as usize >= PALETTE.len()) {
        return Err(Error::validation(format!("class index {bad} has no colour")));
    }
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(png::ColorType::Indexed);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_palette(PALETTE.concat());
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(labels).map_err(png_err)?;
    }
    Ok(bytes)
}

pub fn write_png(path: &Path, height: usize, width: usize, labels: &[u8]) -> Result<()> {
    std::fs::write(path, encode_png(height, width, labels)?)?;
    Ok(())
}

/// Reads back an indexed PNG as `(height, width, class indices)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(png_err)?;
    let info = reader.info();
    if info.color_type != png::ColorType::Indexed || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format("expected an 8-bit indexed PNG"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size().ok_or_else(|| Error::format("PNG too large"))?];
    let frame = reader.next_frame(&mut buf).map_err(png_err)?;
    buf.truncate(frame.buffer_size());
    if buf.len() != h * w {
        return Err(Error::format("unexpected PNG row layout"));
    }
    Ok((h, w, buf))
}

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format(format!("png: {e}"))
}
