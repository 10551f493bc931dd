use crate::data::sample::{Augmentation, WaferSample};
use crate::error::Result;

/// Rotates image and labels clockwise by `angle` degrees (45, 90 or 135)
/// about the canvas center, using nearest-neighbour inverse mapping. Pixels
/// whose source falls off the canvas become background (0 / label 0).
///
/// On a square canvas, 90° is the exact permutation `(r, c) -> (c, H-1-r)`.
pub fn rotate_sample(s: &WaferSample, angle: u32) -> Result<WaferSample> {
    let augmentation = Augmentation::from_angle(angle)?;
    let (cos, sin) = match angle {
        90 => (0.0, 1.0),
        45 => (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
        _ => (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    };
    let (h, w) = s.dims();
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    let mut image = vec![0u8; h * w];
    let mut labels = vec![0u8; h * w];
    for r in 0..h {
        let dr = r as f64 - cr;
        for c in 0..w {
            let dc = c as f64 - cc;
            let sr = (cr + dr * cos - dc * sin).round();
            let sc = (cc + dr * sin + dc * cos).round();
            if sr < 0.0 || sc < 0.0 || sr >= h as f64 || sc >= w as f64 {
                continue;
            }
            let src = sr as usize * w + sc as usize;
            image[r * w + c] = s.image[src];
            labels[r * w + c] = s.labels[src];
        }
    }
    let mut meta = s.meta.clone();
    meta.augmentation = augmentation;
    WaferSample::new(h, w, image, labels, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::SampleMeta;
    use crate::error::Error;

    fn marked(h: usize, w: usize, r: usize, c: usize) -> WaferSample {
        let mut image = vec![0u8; h * w];
        let mut labels = vec![0u8; h * w];
        image[r * w + c] = 200;
        labels[r * w + c] = 2;
        WaferSample::new(h, w, image, labels, SampleMeta::default()).unwrap()
    }

    #[test]
    fn quarter_turn_moves_marked_pixel() {
        for &(r, c) in &[(0, 0), (1, 4), (6, 2), (8, 8)] {
            let out = rotate_sample(&marked(9, 9, r, c), 90).unwrap();
            assert_eq!(out.image[c * 9 + (9 - 1 - r)], 200, "({r}, {c})");
            assert_eq!(out.count(crate::data::Class::Defect), 1);
        }
        let even = rotate_sample(&marked(10, 10, 3, 7), 90).unwrap();
        assert_eq!(even.labels[7 * 10 + 6], 2);
    }

    #[test]
    fn two_quarter_turns_reverse_indices() {
        let h = 12;
        let image: Vec<u8> = (0..h * h).map(|i| (i % 251) as u8).collect();
        let labels: Vec<u8> = (0..h * h).map(|i| (i % 3) as u8).collect();
        let s = WaferSample::new(h, h, image.clone(), labels.clone(), SampleMeta::default()).unwrap();
        let twice = rotate_sample(&rotate_sample(&s, 90).unwrap(), 90).unwrap();
        let reversed: Vec<u8> = image.iter().rev().copied().collect();
        assert_eq!(twice.image, reversed);
        assert_eq!(twice.labels, labels.iter().rev().copied().collect::<Vec<_>>());
    }

    #[test]
    fn unsupported_angle_is_config_error() {
        assert!(matches!(rotate_sample(&marked(4, 4, 0, 0), 30), Err(Error::Config(_))));
    }

    #[test]
    fn augmentation_tag_is_set() {
        let out = rotate_sample(&marked(5, 5, 2, 2), 135).unwrap();
        assert_eq!(out.meta.augmentation, Augmentation::Rotate135);
        assert_eq!(out.labels[2 * 5 + 2], 2);
    }
}
