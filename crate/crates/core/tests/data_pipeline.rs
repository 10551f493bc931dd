use std::collections::BTreeSet;

use proptest::prelude::*;
use waferseg_core::data::{
    assemble_image, augment, dataset_split, extract_records, format_chip_list, parse_chip_list,
    rotate_sample, synthesize, synthesize_with_mask, Augmentation, ChipRecord, Class, SampleMeta,
    SynthConfig, WaferSample,
};

fn defect_fraction(s: &WaferSample) -> f64 {
    let inside = s.labels.iter().filter(|&&l| l != 0).count();
    s.count(Class::Defect) as f64 / inside as f64
}

/// Fraction bounds frozen after measuring the default generator.
#[test]
fn defect_fraction_over_100_seeds_desk_scale() {
    let (mut lo, mut hi) = (f64::MAX, 0.0f64);
    for seed in 0..100 {
        let f = defect_fraction(&synthesize(&SynthConfig::for_dims(112, 112, seed)).unwrap());
        lo = lo.min(f);
        hi = hi.max(f);
    }
    println!("112x112 defect fraction range: {lo:.4} .. {hi:.4}");
    assert!(lo >= 0.005 && hi <= 0.10, "{lo} .. {hi}");
}

#[test]
fn defect_fraction_over_100_seeds_full_scale() {
    let (mut lo, mut hi) = (f64::MAX, 0.0f64);
    for seed in 0..100 {
        let f = defect_fraction(&synthesize(&SynthConfig::for_dims(442, 440, seed)).unwrap());
        lo = lo.min(f);
        hi = hi.max(f);
    }
    println!("442x440 defect fraction range: {lo:.4} .. {hi:.4}");
    assert!(lo >= 0.005 && hi <= 0.10, "{lo} .. {hi}");
}

/// Round defect blob of about 2000 pixels on an in-spec background.
fn disc_cluster(h: usize, radius: f64, center: (f64, f64)) -> WaferSample {
    let mut labels = vec![1u8; h * h];
    let mut image = vec![150u8; h * h];
    for r in 0..h {
        for c in 0..h {
            let d2 = (r as f64 - center.0).powi(2) + (c as f64 - center.1).powi(2);
            if d2 <= radius * radius {
                labels[r * h + c] = 2;
                image[r * h + c] = 40;
            }
        }
    }
    WaferSample::new(h, h, image, labels, SampleMeta::default()).unwrap()
}

#[test]
fn rotation_45_preserves_cluster_area() {
    let h = 101;
    for (radius, center) in [(25.2, (50.0, 50.0)), (25.3, (47.3, 55.1)), (25.25, (52.0, 44.0))] {
        let s = disc_cluster(h, radius, center);
        let before = s.count(Class::Defect);
        assert!((1950..=2050).contains(&before), "cluster size {before}");
        for angle in [45, 135] {
            let after = rotate_sample(&s, angle).unwrap().count(Class::Defect);
            let rel = (after as f64 - before as f64).abs() / before as f64;
            assert!(rel <= 0.02, "angle {angle}: {before} -> {after}");
        }
    }
}

#[test]
fn rotated_synthetic_wafer_keeps_classes_and_disc() {
    let s = synthesize(&SynthConfig::for_dims(112, 110, 4)).unwrap();
    for angle in [45, 90, 135] {
        let r = rotate_sample(&s, angle).unwrap();
        assert_eq!(r.dims(), s.dims());
        assert!(r.labels.iter().all(|&l| l <= 2));
        for i in 0..r.labels.len() {
            assert_eq!(r.labels[i] == 0, r.image[i] == 0, "angle {angle}, pixel {i}");
        }
        let rel = |a: usize, b: usize| (a as f64 - b as f64).abs() / b as f64;
        assert!(rel(r.count(Class::InSpec), s.count(Class::InSpec)) < 0.05);
        assert_eq!(r.meta.augmentation, Augmentation::from_angle(angle).unwrap());
    }
}

#[test]
fn full_wafer_chip_list_is_accepted() {
    // 133717 chips inside a disc on the 442x440 grid
    let (h, w) = (442usize, 440usize);
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let d = ((r as f64 - cy).powi(2) + (c as f64 - cx).powi(2)).sqrt();
            candidates.push((d, r, c));
        }
    }
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let records: Vec<ChipRecord> = candidates[..133_717]
        .iter()
        .enumerate()
        .map(|(i, &(_, r, c))| ChipRecord::new(c, r, (1 + i % 255) as u8))
        .collect();
    let text = format!("# col,row,brightness\n{}", format_chip_list(&records));
    let parsed = parse_chip_list(&text, (h, w)).unwrap();
    assert_eq!(parsed.len(), 133_717);
    assert_eq!(parsed, records);
    let img = assemble_image(&parsed, (h, w)).unwrap();
    assert_eq!(img.iter().filter(|&&v| v != 0).count(), 133_717);
}

#[test]
fn augmented_samples_never_reach_validation() {
    let samples: Vec<WaferSample> = (0..12)
        .map(|seed| synthesize(&SynthConfig::for_dims(32, 32, seed)).unwrap())
        .collect();
    let (train, val) = dataset_split(&samples, 0.75, 3).unwrap();
    let augmented = augment(&train).unwrap();
    assert_eq!(augmented.len(), 4 * train.len());
    assert!(val.iter().all(|s| s.meta.augmentation == Augmentation::Original));
    let val_sources: BTreeSet<_> = val.iter().map(|s| s.meta.source.clone()).collect();
    assert!(augmented.iter().all(|s| !val_sources.contains(&s.meta.source)));
}

fn record_set(max_h: usize, max_w: usize) -> impl Strategy<Value = (usize, usize, Vec<ChipRecord>)> {
    (1..=max_h, 1..=max_w).prop_flat_map(|(h, w)| {
        let cells = proptest::collection::btree_map((0..h, 0..w), 1u8..=255, 0..(h * w).min(40));
        cells.prop_map(move |m| {
            let recs = m.into_iter().map(|((r, c), v)| ChipRecord::new(c, r, v)).collect();
            (h, w, recs)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assemble_then_extract_recovers_records((h, w, recs) in record_set(20, 20)) {
        let text = format_chip_list(&recs);
        let parsed = parse_chip_list(&text, (h, w)).unwrap();
        let img = assemble_image(&parsed, (h, w)).unwrap();
        let mut back = extract_records(&img, w);
        let mut want = recs.clone();
        back.sort();
        want.sort();
        prop_assert_eq!(back, want);
    }

    #[test]
    fn distinct_record_sets_give_distinct_images(
        (h, w, a) in record_set(8, 8),
        b in proptest::collection::btree_map((0usize..8, 0usize..8), 1u8..=255, 0..10),
    ) {
        let b: Vec<ChipRecord> = b.into_iter()
            .filter(|((r, c), _)| *r < h && *c < w)
            .map(|((r, c), v)| ChipRecord::new(c, r, v))
            .collect();
        let sa: BTreeSet<_> = a.iter().copied().collect();
        let sb: BTreeSet<_> = b.iter().copied().collect();
        let ia = assemble_image(&a, (h, w)).unwrap();
        let ib = assemble_image(&b, (h, w)).unwrap();
        prop_assert_eq!(sa == sb, ia == ib);
    }

    #[test]
    fn synthetic_samples_respect_value_ranges(seed in 0u64..1000, h in 24usize..72, w in 24usize..72) {
        let out = synthesize_with_mask(&SynthConfig::for_dims(h, w, seed)).unwrap();
        let s = &out.sample;
        prop_assert!(s.labels.iter().all(|&l| l <= 2));
        for i in 0..s.labels.len() {
            prop_assert_eq!(s.labels[i] == 2, out.defect_mask[i]);
        }
        for angle in [45u32, 90, 135] {
            let r = rotate_sample(s, angle).unwrap();
            prop_assert!(r.labels.iter().all(|&l| l <= 2));
        }
    }

    #[test]
    fn split_is_a_partition(n in 2usize..60, frac in 0.1f64..0.9, seed in any::<u64>()) {
        let samples: Vec<WaferSample> = (0..n)
            .map(|i| {
                let meta = SampleMeta { source: format!("s{i}"), augmentation: Augmentation::Original };
                WaferSample::new(1, 1, vec![1], vec![1], meta).unwrap()
            })
            .collect();
        match dataset_split(&samples, frac, seed) {
            Ok((train, val)) => {
                prop_assert_eq!(train.len() + val.len(), n);
                let mut ids: Vec<_> = train.iter().chain(&val).map(|s| s.meta.source.clone()).collect();
                ids.sort();
                ids.dedup();
                prop_assert_eq!(ids.len(), n);
                let again = dataset_split(&samples, frac, seed).unwrap();
                prop_assert_eq!(again.0, train);
            }
            Err(e) => {
                let t = (n as f64 * frac).round() as usize;
                prop_assert!(t == 0 || t == n, "{e}");
            }
        }
    }
}
