//! Run configuration, read from TOML. Every section is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use waferseg_core::data::SynthConfig;
use waferseg_core::train::{RateSweep, TrainConfig};
use waferseg_core::{Error, ModelConfig, Result, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub height: usize,
    pub width: usize,
    /// Synthetic originals generated for training and validation.
    pub count: usize,
    /// Fraction of originals used for training; 1.0 trains on everything
    /// without a validation split.
    pub train_fraction: f64,
    /// Rotate training samples by 45, 90 and 135 degrees.
    pub augment: bool,
    /// Held-out synthetic wafers for the test columns of the ablation.
    pub test_count: usize,
    /// Directory of saved samples used instead of generating data.
    pub dataset: Option<PathBuf>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            height: 112,
            width: 112,
            count: 32,
            train_fraction: 111.0 / 136.0,
            augment: true,
            test_count: 16,
            dataset: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub encoder_aspp_rates: Vec<usize>,
    pub decoder_aspp_rates: Vec<usize>,
    /// Per-block kernel counts; the variant's plan when absent.
    pub encoder_kernel_plan: Option<Vec<Vec<usize>>>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: Variant::DenseAspp2,
            encoder_aspp_rates: vec![1, 2, 6, 12],
            decoder_aspp_rates: vec![2, 4],
            encoder_kernel_plan: None,
        }
    }
}

/// Ends training early once the unaugmented training samples, evaluated in
/// inference mode, reach every given threshold.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopSection {
    pub pixel_accuracy: Option<f64>,
    pub dca: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub variants: Vec<Variant>,
    pub sweep: bool,
    pub rates: RateSweep,
}

impl Default for AblationSection {
    fn default() -> Self {
        Self {
            variants: Variant::ALL.to_vec(),
            sweep: true,
            rates: RateSweep::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub stop: StopSection,
    pub synth: SynthConfig,
    pub ablation: AblationSection,
}

/// Offset between training and held-out test sample seeds.
pub const TEST_SEED_OFFSET: u64 = 1_000_000;

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::config(format!("invalid TOML: {e}")))?;
        // a run manifest carries its resolved config under [config]
        let table = match (table.get("command"), table.get("config")) {
            (Some(_), Some(toml::Value::Table(inner))) => inner.clone(),
            _ => table,
        };
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file. A relative dataset path is taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        if let (Some(dir), Some(parent)) = (&cfg.data.dataset, path.parent()) {
            if dir.is_relative() {
                cfg.data.dataset = Some(parent.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        if d.height == 0 || d.width == 0 {
            return Err(Error::config("data dims must be positive"));
        }
        if !(d.train_fraction > 0.0 && d.train_fraction <= 1.0) {
            return Err(Error::config(format!("train_fraction {} outside (0, 1]", d.train_fraction)));
        }
        for v in [self.stop.pixel_accuracy, self.stop.dca].into_iter().flatten() {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(format!("stop threshold {v} outside [0, 1]")));
            }
        }
        self.train.validate()?;
        self.model_config().validate()?;
        self.synth_for(0).validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        let mut cfg = ModelConfig::new(m.variant, self.data.height, self.data.width).with_seed(self.seed);
        cfg.encoder_aspp_rates = m.encoder_aspp_rates.clone();
        cfg.decoder_aspp_rates = m.decoder_aspp_rates.clone();
        if let Some(plan) = &m.encoder_kernel_plan {
            cfg.encoder_kernel_plan = plan.clone();
        }
        cfg
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    /// Generator settings for the sample with the given seed.
    pub fn synth_for(&self, seed: u64) -> SynthConfig {
        self.synth.clone().with_dims(self.data.height, self.data.width).with_seed(seed)
    }
}

/// Parses `HxW` or a single number for a square size.
pub fn parse_input_size(s: &str) -> Result<(usize, usize)> {
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config(format!("invalid input size '{s}'")))
    };
    match s.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse(h)?, parse(w)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}
