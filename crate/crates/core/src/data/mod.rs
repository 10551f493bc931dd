//! Wafer images: chip lists, synthetic generation, augmentation, file I/O.

pub mod chips;
pub mod io;
pub mod rotate;
pub mod sample;
pub mod split;
pub mod synth;

pub use chips::{assemble_image, extract_records, format_chip_list, parse_chip_list, ChipRecord};
pub use rotate::rotate_sample;
pub use sample::{batch, Augmentation, Class, SampleMeta, WaferSample};
pub use split::{augment, dataset_split, split_and_augment, AUGMENTATION_ANGLES};
pub use synth::{synthesize, synthesize_with_mask, SynthConfig, Synthesized};
