//! Sample files: binary PGM (`P5`, maxval 255) for the image and the label
//! map, plus a `key=value` metadata sidecar.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::sample::{Augmentation, SampleMeta, WaferSample};
use crate::error::{Error, Result};

pub fn encode_pgm(height: usize, width: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != height * width {
        return Err(Error::shape(format!(
            "{} pixels for a {height}x{width} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Decodes a binary PGM with maxval 255, returning `(height, width, pixels)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::format("not a binary PGM (expected P5)"));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::format(format!("bad PGM {what} '{t}'")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let end = start + width * height;
    if end > bytes.len() {
        return Err(Error::format(format!(
            "PGM raster truncated: need {} bytes, have {}",
            width * height,
            bytes.len().saturating_sub(start)
        )));
    }
    Ok((height, width, bytes[start..end].to_vec()))
}

pub fn write_pgm(path: &Path, height: usize, width: usize, pixels: &[u8]) -> Result<()> {
    fs::write(path, encode_pgm(height, width, pixels)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    decode_pgm(&fs::read(path)?)
}

pub struct SamplePaths {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub meta: PathBuf,
}

pub fn sample_paths(dir: &Path, stem: &str) -> SamplePaths {
    SamplePaths {
        image: dir.join(format!("{stem}_image.pgm")),
        labels: dir.join(format!("{stem}_label.pgm")),
        meta: dir.join(format!("{stem}.meta")),
    }
}

pub fn save_sample(dir: &Path, stem: &str, s: &WaferSample) -> Result<SamplePaths> {
    let paths = sample_paths(dir, stem);
    write_pgm(&paths.image, s.height, s.width, &s.image)?;
    write_pgm(&paths.labels, s.height, s.width, &s.labels)?;
    let meta = format!(
        "source={}\naugmentation={}\nheight={}\nwidth={}\n",
        s.meta.source, s.meta.augmentation, s.height, s.width
    );
    fs::write(&paths.meta, meta)?;
    Ok(paths)
}

fn parse_meta(text: &str) -> Result<SampleMeta> {
    let mut meta = SampleMeta::default();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("metadata line '{line}' has no '='")))?;
        match key.trim() {
            "source" => meta.source = value.trim().to_string(),
            "augmentation" => meta.augmentation = value.trim().parse::<Augmentation>()?,
            _ => {}
        }
    }
    Ok(meta)
}

pub fn load_sample(dir: &Path, stem: &str) -> Result<WaferSample> {
    let paths = sample_paths(dir, stem);
    let (h, w, image) = read_pgm(&paths.image)?;
    let (lh, lw, labels) = read_pgm(&paths.labels)?;
    if (h, w) != (lh, lw) {
        return Err(Error::shape(format!(
            "{stem}: image {h}x{w} but label map {lh}x{lw}"
        )));
    }
    let meta = match fs::read_to_string(&paths.meta) {
        Ok(text) => parse_meta(&text)?,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => SampleMeta {
            source: stem.to_string(),
            augmentation: Augmentation::Original,
        },
        Err(e) => return Err(e.into()),
    };
    WaferSample::new(h, w, image, labels, meta)
}

/// Stems of every `*_image.pgm` in `dir`, sorted.
pub fn list_samples(dir: &Path) -> Result<Vec<String>> {
    let mut stems = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix("_image.pgm") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    Ok(stems)
}

pub fn load_dataset(dir: &Path) -> Result<Vec<WaferSample>> {
    let stems = list_samples(dir)?;
    if stems.is_empty() {
        return Err(Error::config(format!("no samples found in {}", dir.display())));
    }
    stems.iter().map(|s| load_sample(dir, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_with_comment() {
        let px: Vec<u8> = (0..12).map(|i| i * 20).collect();
        let bytes = encode_pgm(3, 4, &px).unwrap();
        assert_eq!(decode_pgm(&bytes).unwrap(), (3, 4, px.clone()));
        let mut commented = b"P5\n# note\n4 3\n255\n".to_vec();
        commented.extend_from_slice(&px);
        assert_eq!(decode_pgm(&commented).unwrap(), (3, 4, px));
    }

    #[test]
    fn pgm_errors() {
        assert!(matches!(decode_pgm(b"P2\n1 1\n255\n0"), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x01"), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n65535\n"), Err(Error::Format(_))));
        assert!(matches!(decode_pgm(b"P5\n2"), Err(Error::Format(_))));
    }

    #[test]
    fn sample_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let meta = SampleMeta {
            source: "w7".into(),
            augmentation: Augmentation::Rotate90,
        };
        let s = WaferSample::new(2, 3, vec![0, 9, 8, 7, 6, 0], vec![0, 1, 2, 1, 1, 0], meta).unwrap();
        save_sample(dir.path(), "w7", &s).unwrap();
        assert_eq!(load_sample(dir.path(), "w7").unwrap(), s);
        assert_eq!(list_samples(dir.path()).unwrap(), vec!["w7".to_string()]);
    }
}
