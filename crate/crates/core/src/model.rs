//! The five ablation architectures and their declarative configuration.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{upsample_and_merge, AsppModule, DenseBlock, MergeKind, PlainBlock, SkipReducer, UpsampleLayer};
use crate::ops::pooled_dims;
use crate::params::{ConvKernel, KernelShape, Mode};
use crate::registry::{ParamId, Registry};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape4, Tensor4};

pub const NUM_CLASSES: usize = 3;
/// Channels produced by every upsampling layer and skip reducer.
pub const DECODER_WIDTH: usize = 64;
pub const ENCODER_ASPP_WIDTH: usize = 128;
pub const DECODER_ASPP_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Basic,
    Dense,
    DenseAsppEncoder,
    DenseAsppDecoder,
    DenseAspp2,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Basic,
        Variant::Dense,
        Variant::DenseAsppEncoder,
        Variant::DenseAspp2,
        Variant::DenseAsppDecoder,
    ];

    pub fn is_dense(self) -> bool {
        self != Variant::Basic
    }

    pub fn has_encoder_aspp(self) -> bool {
        matches!(self, Variant::DenseAsppEncoder | Variant::DenseAspp2)
    }

    pub fn has_decoder_aspp(self) -> bool {
        matches!(self, Variant::DenseAsppDecoder | Variant::DenseAspp2)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::Dense => "dense",
            Variant::DenseAsppEncoder => "dense_aspp_encoder",
            Variant::DenseAsppDecoder => "dense_aspp_decoder",
            Variant::DenseAspp2 => "dense_aspp2",
        }
    }

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            Variant::Basic => "basic model",
            Variant::Dense => "dense model",
            Variant::DenseAsppEncoder => "1 module (encoder)",
            Variant::DenseAsppDecoder => "1 module (decoder)",
            Variant::DenseAspp2 => "dense ASPP2",
        }
    }

    pub fn default_kernel_plan(self) -> Vec<Vec<usize>> {
        match self {
            Variant::Basic => vec![
                vec![64, 64],
                vec![128, 128],
                vec![256, 256, 256],
                vec![512, 512, 512],
                vec![512, 512, 64],
            ],
            _ => vec![vec![32, 32], vec![64, 64], vec![64, 64, 64], vec![128, 128, 128]],
        }
    }

    fn expected_blocks(self) -> usize {
        if self.is_dense() {
            4
        } else {
            5
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown model variant '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Input `(height, width)`.
    pub input_dims: (usize, usize),
    pub encoder_kernel_plan: Vec<Vec<usize>>,
    pub encoder_aspp_rates: Vec<usize>,
    pub decoder_aspp_rates: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(variant: Variant, height: usize, width: usize) -> Self {
        Self {
            variant,
            input_dims: (height, width),
            encoder_kernel_plan: variant.default_kernel_plan(),
            encoder_aspp_rates: vec![1, 2, 6, 12],
            decoder_aspp_rates: vec![2, 4],
            num_classes: NUM_CLASSES,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes != NUM_CLASSES {
            return Err(Error::config(format!(
                "num_classes must be {NUM_CLASSES}, got {}",
                self.num_classes
            )));
        }
        let (h, w) = self.input_dims;
        if h == 0 || w == 0 {
            return Err(Error::config("input dims must be positive"));
        }
        let blocks = self.variant.expected_blocks();
        if self.encoder_kernel_plan.len() != blocks {
            return Err(Error::config(format!(
                "{} expects {blocks} encoder blocks, plan has {}",
                self.variant,
                self.encoder_kernel_plan.len()
            )));
        }
        if self.encoder_kernel_plan.iter().any(|b| b.is_empty() || b.contains(&0)) {
            return Err(Error::config("every encoder block needs at least one non-empty layer"));
        }
        let rates_ok = |r: &[usize]| r.iter().all(|&v| v > 0);
        if !rates_ok(&self.encoder_aspp_rates) || !rates_ok(&self.decoder_aspp_rates) {
            return Err(Error::config("dilation rates must be positive"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("model config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(format!("bad model config: {e}")))
    }
}

#[derive(Debug, Clone)]
enum Encoder {
    Dense(Vec<DenseBlock>),
    Plain(Vec<PlainBlock>),
}

#[derive(Debug, Clone)]
struct DecoderStage {
    up: UpsampleLayer,
    skip: SkipReducer,
}

/// Result of one forward pass recorded on a tape.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Var,
    pub probs: Var,
    /// Named intermediate shapes in execution order.
    pub trace: Vec<(String, Shape4)>,
}

impl ForwardPass {
    pub fn shape_of(&self, name: &str) -> Option<Shape4> {
        self.trace.iter().find(|(n, _)| n == name).map(|(_, s)| *s)
    }
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    config: ModelConfig,
    registry: Registry<T>,
    input_bn: ParamId,
    encoder: Encoder,
    /// Pre-pool spatial dims of encoder stages 1..=3.
    stage_dims: Vec<(usize, usize)>,
    encoder_aspp: Option<AsppModule>,
    decoder: Vec<DecoderStage>,
    decoder_aspp: Option<AsppModule>,
    merge: MergeKind,
    head: ParamId,
}

impl<T: Scalar> Model<T> {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        Self::build_with_aspp(config, config.variant.has_encoder_aspp(), config.variant.has_decoder_aspp())
    }

    /// Builds `config` with each ASPP module switched on or off explicitly,
    /// regardless of what the variant would include.
    pub fn build_with_aspp(config: &ModelConfig, encoder_aspp: bool, decoder_aspp: bool) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut reg = Registry::new();
        let variant = config.variant;
        let input_bn = reg.add_norm("input_bn", crate::params::BatchNormState::new(1))?;

        let (h, w) = config.input_dims;
        let mut stage_dims = vec![(h, w)];
        for _ in 0..2 {
            let (ph, pw) = *stage_dims.last().unwrap();
            stage_dims.push(pooled_dims(ph, pw));
        }

        let plan = &config.encoder_kernel_plan;
        let mut skip_channels = Vec::with_capacity(3);
        let (encoder, mut channels) = if variant.is_dense() {
            let mut blocks = Vec::with_capacity(4);
            let mut c = 1;
            for (b, kernels) in plan.iter().enumerate() {
                let block = DenseBlock::build(&mut reg, &mut rng, &format!("block{}", b + 1), c, kernels, b > 0)?;
                c = block.out_channels();
                if b < 3 {
                    skip_channels.push(c);
                }
                blocks.push(block);
            }
            (Encoder::Dense(blocks), c)
        } else {
            let mut blocks = Vec::with_capacity(5);
            let mut c = 1;
            for (b, kernels) in plan.iter().enumerate() {
                let block = PlainBlock::build(&mut reg, &mut rng, &format!("block{}", b + 1), c, kernels)?;
                c = block.out_channels();
                if b < 3 {
                    skip_channels.push(c);
                }
                blocks.push(block);
            }
            (Encoder::Plain(blocks), c)
        };

        let encoder_aspp = if encoder_aspp {
            let m = AsppModule::build(&mut reg, &mut rng, "aspp_enc", channels, &config.encoder_aspp_rates, ENCODER_ASPP_WIDTH)?;
            channels = m.out_channels();
            Some(m)
        } else {
            None
        };

        let merge = if variant.is_dense() {
            MergeKind::Concat
        } else {
            MergeKind::Add
        };
        let merged_channels = match merge {
            MergeKind::Concat => 2 * DECODER_WIDTH,
            MergeKind::Add => DECODER_WIDTH,
        };

        let mut decoder = Vec::with_capacity(3);
        let mut decoder_module = None;
        for stage in 0..3 {
            let level = 2 - stage;
            let name = stage + 1;
            let up = UpsampleLayer::build(&mut reg, &mut rng, &format!("up{name}"), channels, DECODER_WIDTH, stage_dims[level])?;
            let skip = SkipReducer::build(&mut reg, &mut rng, &format!("skip{name}"), skip_channels[level], DECODER_WIDTH)?;
            decoder.push(DecoderStage { up, skip });
            channels = merged_channels;
            if stage == 1 && decoder_aspp {
                let m = AsppModule::build(&mut reg, &mut rng, "aspp_dec", channels, &config.decoder_aspp_rates, DECODER_ASPP_WIDTH)?;
                channels = m.out_channels();
                decoder_module = Some(m);
            }
        }

        let head = reg.add_conv(
            "head.conv",
            ConvKernel::he_normal(KernelShape::new(1, 1, channels, config.num_classes), true, &mut rng),
        )?;

        Ok(Self {
            config: config.clone(),
            registry: reg,
            input_bn,
            encoder,
            stage_dims,
            encoder_aspp,
            decoder,
            decoder_aspp: decoder_module,
            merge,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn registry(&self) -> &Registry<T> {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut Registry<T> {
        &mut self.registry
    }

    pub fn parameter_count(&self) -> usize {
        self.registry.parameter_count()
    }

    /// Pre-pool spatial dims of the first three encoder stages.
    pub fn stage_dims(&self) -> &[(usize, usize)] {
        &self.stage_dims
    }

    pub fn expected_input(&self, batch: usize) -> Shape4 {
        Shape4::new(batch, self.config.input_dims.0, self.config.input_dims.1, 1)
    }

    fn check_input(&self, s: Shape4) -> Result<()> {
        let (h, w) = self.config.input_dims;
        if s.h != h || s.w != w || s.c != 1 || s.n == 0 {
            return Err(Error::shape(format!(
                "model expects input (n, {h}, {w}, 1), got {s}"
            )));
        }
        Ok(())
    }

    /// Records the network on `tape` without touching model state.
    pub fn record(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<ForwardPass> {
        self.check_input(tape.shape(x))?;
        let reg = &self.registry;
        let mut trace = Vec::new();
        let mut note = |tape: &Tape<T>, name: &str, v: Var| trace.push((name.to_string(), tape.shape(v)));

        let mut h = tape
            .batchnorm(reg, x, self.input_bn, mode)
            .map_err(|e| e.in_layer("input_bn"))?;
        note(tape, "input_bn", h);

        let mut skips = Vec::with_capacity(3);
        let n_blocks = match &self.encoder {
            Encoder::Dense(b) => b.len(),
            Encoder::Plain(b) => b.len(),
        };
        for b in 0..n_blocks {
            h = match &self.encoder {
                Encoder::Dense(blocks) => blocks[b].forward(tape, reg, h, mode)?,
                Encoder::Plain(blocks) => blocks[b].forward(tape, reg, h, mode)?,
            };
            note(tape, &format!("block{}", b + 1), h);
            if b < 3 {
                skips.push(h);
                h = tape.maxpool(h).map_err(|e| e.in_layer(&format!("pool{}", b + 1)))?;
                note(tape, &format!("pool{}", b + 1), h);
            }
        }

        if let Some(m) = &self.encoder_aspp {
            h = m.forward(tape, reg, h, mode)?;
            note(tape, "aspp_enc", h);
        }

        for (stage, d) in self.decoder.iter().enumerate() {
            let skip = skips[2 - stage];
            h = upsample_and_merge(tape, reg, &d.up, &d.skip, self.merge, h, skip, mode)?;
            note(tape, &format!("merge{}", stage + 1), h);
            if stage == 1 {
                if let Some(m) = &self.decoder_aspp {
                    h = m.forward(tape, reg, h, mode)?;
                    note(tape, "aspp_dec", h);
                }
            }
        }

        let logits = tape.conv(reg, h, self.head, 1).map_err(|e| e.in_layer("head"))?;
        note(tape, "logits", logits);
        let probs = tape.softmax(logits).map_err(|e| e.in_layer("softmax"))?;
        note(tape, "probs", probs);
        Ok(ForwardPass { logits, probs, trace })
    }

    /// Forward pass; in training mode the batch-norm running statistics are
    /// updated from the recorded batch statistics.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<ForwardPass> {
        let start = tape.len();
        let pass = self.record(tape, x, mode)?;
        if mode == Mode::Training {
            for (id, mean, var) in tape.batch_statistics(start) {
                self.registry.norm_mut(id).update_running(mean, var);
            }
        }
        Ok(pass)
    }

    /// Per-pixel class probabilities, `(n, h, w, 3)`.
    pub fn predict(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let mut tape = Tape::without_grad();
        let v = tape.leaf(x.clone(), false);
        let pass = self.forward(&mut tape, v, mode)?;
        Ok(tape.into_value(pass.probs))
    }

    /// Inference-mode probabilities; never alters model state.
    pub fn infer(&self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mut tape = Tape::without_grad();
        let v = tape.leaf(x.clone(), false);
        let pass = self.record(&mut tape, v, Mode::Inference)?;
        Ok(tape.into_value(pass.probs))
    }

    /// Inference-mode shape trace for a zero batch-of-one input.
    pub fn shape_trace(&self) -> Result<Vec<(String, Shape4)>> {
        let mut tape = Tape::without_grad();
        let v = tape.leaf(Tensor4::zeros(self.expected_input(1)), false);
        Ok(self.record(&mut tape, v, Mode::Inference)?.trace)
    }

    /// Element type conversion of every parameter and buffer.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let mut out = Model::<U>::build(&self.config).expect("config was valid");
        crate::checkpoint::copy_registry(&self.registry, &mut out.registry);
        out
    }
}
