use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Shape4, Tensor4};

/// Pixel classes. Ids are fixed: 0 background/functional, 1 in-spec, 2 defect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    InSpec = 1,
    Defect = 2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Augmentation {
    #[default]
    Original,
    Rotate45,
    Rotate90,
    Rotate135,
}

impl Augmentation {
    pub fn from_angle(angle: u32) -> Result<Self> {
        match angle {
            45 => Ok(Self::Rotate45),
            90 => Ok(Self::Rotate90),
            135 => Ok(Self::Rotate135),
            other => Err(Error::config(format!("unsupported rotation angle {other}"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Original => "none",
            Self::Rotate45 => "rot45",
            Self::Rotate90 => "rot90",
            Self::Rotate135 => "rot135",
        }
    }
}

impl fmt::Display for Augmentation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Augmentation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::Original),
            "rot45" => Ok(Self::Rotate45),
            "rot90" => Ok(Self::Rotate90),
            "rot135" => Ok(Self::Rotate135),
            other => Err(Error::format(format!("unknown augmentation tag '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleMeta {
    pub source: String,
    pub augmentation: Augmentation,
}

/// A brightness image and its per-pixel class map, both row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaferSample {
    pub height: usize,
    pub width: usize,
    pub image: Vec<u8>,
    pub labels: Vec<u8>,
    pub meta: SampleMeta,
}

impl WaferSample {
    pub fn new(height: usize, width: usize, image: Vec<u8>, labels: Vec<u8>, meta: SampleMeta) -> Result<Self> {
        let s = Self {
            height,
            width,
            image,
            labels,
            meta,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.image.len() != n || self.labels.len() != n {
            return Err(Error::validation(format!(
                "sample {} has {} image / {} label values for {}x{}",
                self.meta.source,
                self.image.len(),
                self.labels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(bad) = self.labels.iter().find(|&&l| l > Class::Defect as u8) {
            return Err(Error::validation(format!("label {bad} outside {{0, 1, 2}}")));
        }
        Ok(())
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn count(&self, class: Class) -> usize {
        self.labels.iter().filter(|&&l| l == class as u8).count()
    }

    /// Brightness as a `(1, h, w, 1)` tensor on the raw 0-255 scale.
    pub fn image_tensor<T: Scalar>(&self) -> Tensor4<T> {
        let data = self.image.iter().map(|&v| T::of(v as f64)).collect();
        Tensor4::from_vec(Shape4::new(1, self.height, self.width, 1), data).expect("validated dims")
    }
}

/// Stacks sample images into one batch tensor and concatenates their labels.
pub fn batch<T: Scalar>(samples: &[&WaferSample]) -> Result<(Tensor4<T>, Vec<u8>)> {
    let first = samples.first().ok_or_else(|| Error::config("empty batch"))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(samples.len() * h * w);
    let mut labels = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if s.dims() != (h, w) {
            return Err(Error::shape(format!(
                "batch mixes {h}x{w} and {}x{} samples",
                s.height, s.width
            )));
        }
        data.extend(s.image.iter().map(|&v| T::of(v as f64)));
        labels.extend_from_slice(&s.labels);
    }
    Ok((Tensor4::from_vec(Shape4::new(samples.len(), h, w, 1), data)?, labels))
}
