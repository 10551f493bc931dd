use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::rotate::rotate_sample;
use crate::data::sample::{Augmentation, WaferSample};
use crate::error::{Error, Result};

pub const AUGMENTATION_ANGLES: [u32; 3] = [45, 90, 135];

/// Seeded shuffle-and-cut into `(train, val)`. The train count is
/// `round(n * train_fraction)` and both sides must be non-empty.
pub fn dataset_split(
    samples: &[WaferSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<WaferSample>, Vec<WaferSample>)> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::config(format!("need at least 2 samples to split, got {n}")));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::config(format!(
            "train fraction {train_fraction} leaves an empty split of {n} samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (train_idx, val_idx) = order.split_at(n_train);
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((take(train_idx), take(val_idx)))
}

/// Originals followed by their 45°, 90° and 135° rotations.
pub fn augment(train: &[WaferSample]) -> Result<Vec<WaferSample>> {
    let mut out = Vec::with_capacity(train.len() * 4);
    for s in train {
        if s.meta.augmentation != Augmentation::Original {
            return Err(Error::config(format!(
                "sample {} is already augmented ({})",
                s.meta.source, s.meta.augmentation
            )));
        }
        out.push(s.clone());
    }
    for s in train {
        for angle in AUGMENTATION_ANGLES {
            out.push(rotate_sample(s, angle)?);
        }
    }
    Ok(out)
}

/// Split, then augment the training side only.
pub fn split_and_augment(
    samples: &[WaferSample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<WaferSample>, Vec<WaferSample>)> {
    let (train, val) = dataset_split(samples, train_fraction, seed)?;
    Ok((augment(&train)?, val))
}
