//! Architectural building blocks assembled by the model builder.
//!
//! Every block registers its kernels and batch norms in a [`Registry`]
//! at construction time and records its forward pass on a [`Tape`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{BatchNormState, ConvKernel, KernelShape, Mode};
use crate::registry::{ParamId, Registry};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};

fn add_conv<T: Scalar, R: Rng + ?Sized>(
    reg: &mut Registry<T>,
    rng: &mut R,
    name: &str,
    shape: KernelShape,
    bias: bool,
) -> Result<ParamId> {
    reg.add_conv(name, ConvKernel::he_normal(shape, bias, rng))
}

fn add_bn<T: Scalar>(reg: &mut Registry<T>, name: &str, channels: usize) -> Result<ParamId> {
    reg.add_norm(name, BatchNormState::new(channels))
}

/// 3x3 (optionally dilated) convolution, batch normalisation, ReLU.
#[derive(Debug, Clone)]
pub struct CompositeLayer {
    pub name: String,
    pub conv: ParamId,
    pub bn: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub rate: usize,
}

impl CompositeLayer {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        reg: &mut Registry<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        rate: usize,
    ) -> Result<Self> {
        let conv = add_conv(reg, rng, &format!("{name}.conv"), KernelShape::new(3, 3, in_channels, out_channels), false)?;
        let bn = add_bn(reg, &format!("{name}.bn"), out_channels)?;
        Ok(Self {
            name: name.to_string(),
            conv,
            bn,
            in_channels,
            out_channels,
            rate,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, reg: &Registry<T>, x: Var, mode: Mode) -> Result<Var> {
        let run = |tape: &mut Tape<T>| -> Result<Var> {
            let y = tape.conv(reg, x, self.conv, self.rate)?;
            let y = tape.batchnorm(reg, y, self.bn, mode)?;
            tape.relu(y)
        };
        run(tape).map_err(|e| e.in_layer(&self.name))
    }
}

/// Layers where each one consumes the concatenation of the block input and
/// all earlier layer outputs.
#[derive(Debug, Clone)]
pub struct DenseBlock {
    pub layers: Vec<CompositeLayer>,
    pub input_channels: usize,
    /// Whether the block input is part of the block output concat. The
    /// first block of the encoder forwards only its layer outputs.
    pub keep_input: bool,
}

impl DenseBlock {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        reg: &mut Registry<T>,
        rng: &mut R,
        name: &str,
        input_channels: usize,
        kernels: &[usize],
        keep_input: bool,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::config(format!("dense block {name} has no layers")));
        }
        let mut layers = Vec::with_capacity(kernels.len());
        let mut channels = input_channels;
        for (l, &k) in kernels.iter().enumerate() {
            layers.push(CompositeLayer::build(reg, rng, &format!("{name}.layer{}", l + 1), channels, k, 1)?);
            channels += k;
        }
        Ok(Self {
            layers,
            input_channels,
            keep_input,
        })
    }

    pub fn out_channels(&self) -> usize {
        let grown: usize = self.layers.iter().map(|l| l.out_channels).sum();
        if self.keep_input {
            self.input_channels + grown
        } else {
            grown
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, reg: &Registry<T>, x: Var, mode: Mode) -> Result<Var> {
        let c = tape.shape(x).c;
        if c != self.input_channels {
            return Err(Error::config(format!(
                "dense block expects {} channels, got {c}",
                self.input_channels
            )));
        }
        let mut feats = vec![x];
        for layer in &self.layers {
            let input = if feats.len() == 1 { x } else { tape.concat(&feats)? };
            feats.push(layer.forward(tape, reg, input, mode)?);
        }
        let outs = if self.keep_input { &feats[..] } else { &feats[1..] };
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            tape.concat(outs)
        }
    }
}

/// Plain sequential stack of composite layers (the non-dense baseline).
#[derive(Debug, Clone)]
pub struct PlainBlock {
    pub layers: Vec<CompositeLayer>,
}

impl PlainBlock {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        reg: &mut Registry<T>,
        rng: &mut R,
        name: &str,
        input_channels: usize,
        kernels: &[usize],
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(Error::config(format!("block {name} has no layers")));
        }
        let mut layers = Vec::with_capacity(kernels.len());
        let mut channels = input_channels;
        for (l, &k) in kernels.iter().enumerate() {
            layers.push(CompositeLayer::build(reg, rng, &format!("{name}.layer{}", l + 1), channels, k, 1)?);
            channels = k;
        }
        Ok(Self { layers })
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, reg: &Registry<T>, x: Var, mode: Mode) -> Result<Var> {
        self.layers
            .iter()
            .try_fold(x, |h, layer| layer.forward(tape, reg, h, mode))
    }
}

/// Image-level branch: global average pool, 1x1 conv, batch norm,
/// bilinear restore to the input size, ReLU.
#[derive(Debug, Clone)]
pub struct PoolingBranch {
    pub conv: ParamId,
    pub bn: ParamId,
}

/// Parallel dilated branches plus an image-pooling branch, concatenated
/// after the module input.
#[derive(Debug, Clone)]
pub struct AsppModule {
    pub name: String,
    pub in_channels: usize,
    pub branch_out_channels: usize,
    pub branches: Vec<CompositeLayer>,
    pub pooling: PoolingBranch,
}

impl AsppModule {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        reg: &mut Registry<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        rates: &[usize],
        branch_out_channels: usize,
    ) -> Result<Self> {
        if let Some(r) = rates.iter().find(|&&r| r == 0) {
            return Err(Error::config(format!("{name}: dilation rate {r} must be positive")));
        }
        let mut branches = Vec::with_capacity(rates.len());
        for (b, &rate) in rates.iter().enumerate() {
            let bname = format!("{name}.branch{}", b + 1);
            branches.push(CompositeLayer::build(reg, rng, &bname, in_channels, branch_out_channels, rate)?);
        }
        let conv = add_conv(
            reg,
            rng,
            &format!("{name}.pool.conv"),
            KernelShape::new(1, 1, in_channels, branch_out_channels),
            false,
        )?;
        let bn = add_bn(reg, &format!("{name}.pool.bn"), branch_out_channels)?;
        Ok(Self {
            name: name.to_string(),
            in_channels,
            branch_out_channels,
            branches,
            pooling: PoolingBranch { conv, bn },
        })
    }

    pub fn rates(&self) -> Vec<usize> {
        self.branches.iter().map(|b| b.rate).collect()
    }

    pub fn out_channels(&self) -> usize {
        self.in_channels + (self.branches.len() + 1) * self.branch_out_channels
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, reg: &Registry<T>, x: Var, mode: Mode) -> Result<Var> {
        let s = tape.shape(x);
        if s.c != self.in_channels {
            return Err(Error::config(format!(
                "{} expects {} channels, got {}",
                self.name, self.in_channels, s.c
            )));
        }
        let mut parts = vec![x];
        for branch in &self.branches {
            parts.push(branch.forward(tape, reg, x, mode)?);
        }
        let pooled = (|| {
            let g = tape.global_avg_pool(x)?;
            let g = tape.conv(reg, g, self.pooling.conv, 1)?;
            let g = tape.batchnorm(reg, g, self.pooling.bn, mode)?;
            let g = tape.resize(g, s.h, s.w)?;
            tape.relu(g)
        })()
        .map_err(|e| e.in_layer(&format!("{}.pool", self.name)))?;
        parts.push(pooled);
        tape.concat(&parts)
    }
}

/// Bilinear resize to a recorded encoder size, 3x3 conv, batch norm.
#[derive(Debug, Clone)]
pub struct UpsampleLayer {
    pub name: String,
    pub target: (usize, usize),
    pub conv: ParamId,
    pub bn: ParamId,
    pub out_channels: usize,
}

impl UpsampleLayer {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        reg: &mut Registry<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        target: (usize, usize),
    ) -> Result<Self> {
        let conv = add_conv(reg, rng, &format!("{name}.conv"), KernelShape::new(3, 3, in_channels, out_channels), false)?;
        let bn = add_bn(reg, &format!("{name}.bn"), out_channels)?;
        Ok(Self {
            name: name.to_string(),
            target,
            conv,
            bn,
            out_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, reg: &Registry<T>, x: Var, mode: Mode) -> Result<Var> {
        (|| {
            let y = tape.resize(x, self.target.0, self.target.1)?;
            let y = tape.conv(reg, y, self.conv, 1)?;
            tape.batchnorm(reg, y, self.bn, mode)
        })()
        .map_err(|e| e.in_layer(&self.name))
    }
}

/// 3x3 conv and batch norm reducing a bypassed encoder tensor.
#[derive(Debug, Clone)]
pub struct SkipReducer {
    pub name: String,
    pub conv: ParamId,
    pub bn: ParamId,
    pub out_channels: usize,
}

impl SkipReducer {
    pub fn build<T: Scalar, R: Rng + ?Sized>(
        reg: &mut Registry<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let conv = add_conv(reg, rng, &format!("{name}.conv"), KernelShape::new(3, 3, in_channels, out_channels), false)?;
        let bn = add_bn(reg, &format!("{name}.bn"), out_channels)?;
        Ok(Self {
            name: name.to_string(),
            conv,
            bn,
            out_channels,
        })
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, reg: &Registry<T>, x: Var, mode: Mode) -> Result<Var> {
        (|| {
            let y = tape.conv(reg, x, self.conv, 1)?;
            tape.batchnorm(reg, y, self.bn, mode)
        })()
        .map_err(|e| e.in_layer(&self.name))
    }
}

/// How upsampled and bypassed feature maps are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MergeKind {
    Concat,
    Add,
}

/// `relu(merge(up(deep), skip_reduce(skip)))`.
#[allow(clippy::too_many_arguments)]
pub fn upsample_and_merge<T: Scalar>(
    tape: &mut Tape<T>,
    reg: &Registry<T>,
    up: &UpsampleLayer,
    reducer: &SkipReducer,
    merge: MergeKind,
    deep: Var,
    skip: Var,
    mode: Mode,
) -> Result<Var> {
    let ss = tape.shape(skip);
    if (ss.h, ss.w) != up.target {
        return Err(Error::config(format!(
            "{}: skip tensor {ss} does not match upsample target {}x{}",
            up.name, up.target.0, up.target.1
        )));
    }
    let u = up.forward(tape, reg, deep, mode)?;
    let s = reducer.forward(tape, reg, skip, mode)?;
    let merged = match merge {
        MergeKind::Concat => tape.concat(&[u, s])?,
        MergeKind::Add => tape.add(u, s)?,
    };
    tape.relu(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape4, Tensor4};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    fn input(tape: &mut Tape<f32>, shape: Shape4) -> Var {
        let t = Tensor4::randn(shape, 1.0, &mut rng());
        tape.leaf(t, false)
    }

    #[test]
    fn block_two_forwards_192_maps() {
        let mut reg = Registry::<f32>::new();
        let b = DenseBlock::build(&mut reg, &mut rng(), "block2", 64, &[64, 64], true).unwrap();
        assert_eq!(b.out_channels(), 192);
        let mut tape = Tape::without_grad();
        let x = input(&mut tape, Shape4::new(1, 4, 3, 64));
        let y = b.forward(&mut tape, &reg, x, Mode::Training).unwrap();
        assert_eq!(tape.shape(y), Shape4::new(1, 4, 3, 192));
    }

    #[test]
    fn block_four_forwards_768_maps() {
        let mut reg = Registry::<f32>::new();
        let b = DenseBlock::build(&mut reg, &mut rng(), "block4", 384, &[128, 128, 128], true).unwrap();
        assert_eq!(b.out_channels(), 768);
        assert_eq!(b.layers[2].in_channels, 384 + 256);
    }

    #[test]
    fn single_layer_block_adds_its_kernels() {
        let mut reg = Registry::<f32>::new();
        let b = DenseBlock::build(&mut reg, &mut rng(), "b", 5, &[7], true).unwrap();
        let mut tape = Tape::without_grad();
        let x = input(&mut tape, Shape4::new(2, 3, 3, 5));
        let y = b.forward(&mut tape, &reg, x, Mode::Training).unwrap();
        assert_eq!(tape.shape(y).c, 12);
    }

    #[test]
    fn dense_block_rejects_wrong_channels() {
        let mut reg = Registry::<f32>::new();
        let b = DenseBlock::build(&mut reg, &mut rng(), "b", 4, &[2], true).unwrap();
        let mut tape = Tape::without_grad();
        let x = input(&mut tape, Shape4::new(1, 3, 3, 3));
        assert!(matches!(b.forward(&mut tape, &reg, x, Mode::Training), Err(Error::Config(_))));
    }

    #[test]
    fn encoder_aspp_reaches_1408_maps() {
        let mut reg = Registry::<f32>::new();
        let m = AsppModule::build(&mut reg, &mut rng(), "aspp_enc", 768, &[1, 2, 6, 12], 128).unwrap();
        assert_eq!(m.out_channels(), 1408);
        let mut tape = Tape::without_grad();
        let x = input(&mut tape, Shape4::new(1, 7, 6, 768));
        let y = m.forward(&mut tape, &reg, x, Mode::Inference).unwrap();
        assert_eq!(tape.shape(y), Shape4::new(1, 7, 6, 1408));
    }

    #[test]
    fn decoder_aspp_adds_three_branches_of_32() {
        let mut reg = Registry::<f32>::new();
        let m = AsppModule::build(&mut reg, &mut rng(), "aspp_dec", 128, &[2, 4], 32).unwrap();
        assert_eq!(m.out_channels(), 224);
        let mut tape = Tape::without_grad();
        let x = input(&mut tape, Shape4::new(1, 5, 4, 128));
        let y = m.forward(&mut tape, &reg, x, Mode::Training).unwrap();
        assert_eq!(tape.shape(y), Shape4::new(1, 5, 4, 224));
    }

    #[test]
    fn pooling_branch_is_uniform_and_matches_pointwise_path() {
        let mut reg = Registry::<f64>::new();
        let m = AsppModule::build(&mut reg, &mut rng(), "aspp", 3, &[2], 4).unwrap();
        {
            let bn = reg.norm_mut(m.pooling.bn);
            bn.running_mean = vec![0.1, -0.2, 0.3, 0.0];
            bn.running_var = vec![0.5, 2.0, 1.0, 0.25];
            bn.beta = vec![0.2, 0.1, -0.3, 0.05];
        }
        let consts = [0.5, -1.0, 2.0];
        let mut data = Vec::new();
        for _ in 0..5 * 6 {
            data.extend_from_slice(&consts);
        }
        let mut tape = Tape::without_grad();
        let x = tape.leaf(Tensor4::from_vec(Shape4::new(1, 5, 6, 3), data).unwrap(), false);
        let y = m.forward(&mut tape, &reg, x, Mode::Inference).unwrap();
        let out = tape.value(y);
        let k = reg.conv(m.pooling.conv);
        let bn = reg.norm(m.pooling.bn);
        for f in 0..4 {
            let z: f64 = (0..3).map(|c| consts[c] * k.weights[c * 4 + f]).sum();
            let z = (z - bn.running_mean[f]) / (bn.running_var[f] + 1e-5).sqrt() * bn.gamma[f] + bn.beta[f];
            let expect = z.max(0.0);
            for i in 0..5 {
                for j in 0..6 {
                    assert!((out.at(0, i, j, 3 + 4 + f) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn merge_produces_128_maps_at_skip_resolution() {
        let mut reg = Registry::<f32>::new();
        let mut r = rng();
        let up = UpsampleLayer::build(&mut reg, &mut r, "up1", 16, 64, (7, 6)).unwrap();
        let sk = SkipReducer::build(&mut reg, &mut r, "skip1", 8, 64).unwrap();
        let mut tape = Tape::without_grad();
        let deep = input(&mut tape, Shape4::new(1, 4, 3, 16));
        let skip = input(&mut tape, Shape4::new(1, 7, 6, 8));
        let y = upsample_and_merge(&mut tape, &reg, &up, &sk, MergeKind::Concat, deep, skip, Mode::Training).unwrap();
        assert_eq!(tape.shape(y), Shape4::new(1, 7, 6, 128));
        let bad = input(&mut tape, Shape4::new(1, 6, 6, 8));
        assert!(upsample_and_merge(&mut tape, &reg, &up, &sk, MergeKind::Concat, deep, bad, Mode::Training).is_err());
    }

    #[test]
    fn identity_scale_merge_still_gives_128_maps() {
        let mut reg = Registry::<f32>::new();
        let mut r = rng();
        let up = UpsampleLayer::build(&mut reg, &mut r, "up", 4, 64, (5, 5)).unwrap();
        let sk = SkipReducer::build(&mut reg, &mut r, "skip", 4, 64).unwrap();
        let mut tape = Tape::without_grad();
        let deep = input(&mut tape, Shape4::new(1, 5, 5, 4));
        let skip = input(&mut tape, Shape4::new(1, 5, 5, 4));
        let y = upsample_and_merge(&mut tape, &reg, &up, &sk, MergeKind::Concat, deep, skip, Mode::Inference).unwrap();
        assert_eq!(tape.shape(y).c, 128);
    }
}
