//! Chip-brightness list files: one `col,row,brightness` record per line,
//! `#` starts a comment line.

use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChipRecord {
    pub col: usize,
    pub row: usize,
    pub brightness: u8,
}

impl ChipRecord {
    pub const fn new(col: usize, row: usize, brightness: u8) -> Self {
        Self { col, row, brightness }
    }
}

/// Parses and validates a chip list against image dims `(height, width)`.
pub fn parse_chip_list(text: &str, dims: (usize, usize)) -> Result<Vec<ChipRecord>> {
    let mut records = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [col, row, value] = fields[..] else {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 'col,row,brightness', got '{line}'"),
            });
        };
        let num = |s: &str, what: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("{what} '{s}' is not an integer"),
            })
        };
        let (col, row, value) = (num(col, "col")?, num(row, "row")?, num(value, "brightness")?);
        if !(0..=255).contains(&value) {
            return Err(Error::validation(format!(
                "line {line_no}: brightness {value} outside 0..=255"
            )));
        }
        if col < 0 || row < 0 {
            return Err(Error::validation(format!("line {line_no}: negative coordinate")));
        }
        records.push(ChipRecord::new(col as usize, row as usize, value as u8));
    }
    validate_records(&records, dims)?;
    Ok(records)
}

pub fn validate_records(records: &[ChipRecord], (height, width): (usize, usize)) -> Result<()> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if r.col >= width || r.row >= height {
            return Err(Error::validation(format!(
                "chip ({}, {}) outside {height}x{width} image",
                r.col, r.row
            )));
        }
        if !seen.insert((r.col, r.row)) {
            return Err(Error::validation(format!("duplicate chip at ({}, {})", r.col, r.row)));
        }
    }
    Ok(())
}

/// Zero image of `(height, width)` with each record's brightness placed at
/// `(row, col)`, row-major.
pub fn assemble_image(records: &[ChipRecord], dims: (usize, usize)) -> Result<Vec<u8>> {
    validate_records(records, dims)?;
    let mut img = vec![0u8; dims.0 * dims.1];
    for r in records {
        img[r.row * dims.1 + r.col] = r.brightness;
    }
    Ok(img)
}

/// Records for every nonzero pixel, in row-major order.
pub fn extract_records(image: &[u8], width: usize) -> Vec<ChipRecord> {
    image
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, &v)| ChipRecord::new(i % width, i / width, v))
        .collect()
}

pub fn format_chip_list(records: &[ChipRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 12);
    for r in records {
        out.push_str(&format!("{},{},{}\n", r.col, r.row, r.brightness));
    }
    out
}
