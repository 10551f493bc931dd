//! Central finite-difference checks of every differentiable op's backward
//! pass, in double precision.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{upsample_and_merge, MergeKind, SkipReducer, UpsampleLayer};
use crate::params::{BatchNormState, ConvKernel, KernelShape, Mode};
use crate::registry::Registry;
use crate::tape::{Tape, Var};
use crate::tensor::{Shape4, Tensor4};
use crate::train::loss::weighted_ce_loss;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so entries whose true gradient
/// is zero are compared in absolute terms.
pub const RELATIVE_FLOOR: f64 = 1e-6;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckResult {
    pub name: String,
    pub seed: u64,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    pub max_rel_error: f64,
}

impl GradCheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < FD_TOLERANCE
    }
}

impl fmt::Display for GradCheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<22} seed {} derivatives {:>5} max rel err {:.3e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.seed,
            self.checked,
            self.max_rel_error
        )
    }
}

type Build<'a> = dyn Fn(&mut Tape<f64>, &Registry<f64>, &[Var]) -> Result<Var> + 'a;

/// A differentiable computation with its inputs and parameters. The scalar
/// under test is `sum(r * out)` for a fixed random projection `r`.
struct Case<'a> {
    inputs: Vec<Tensor4<f64>>,
    reg: Registry<f64>,
    build: Box<Build<'a>>,
}

impl Case<'_> {
    fn forward(&self, reg: &Registry<f64>, inputs: &[Tensor4<f64>], grad: bool) -> Result<(Tape<f64>, Var, Vec<Var>)> {
        let mut tape = if grad { Tape::new() } else { Tape::without_grad() };
        let leaves: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), grad)).collect();
        let out = (self.build)(&mut tape, reg, &leaves)?;
        Ok((tape, out, leaves))
    }

    fn objective(&self, reg: &Registry<f64>, inputs: &[Tensor4<f64>], proj: &[f64]) -> Result<f64> {
        let (tape, out, _) = self.forward(reg, inputs, false)?;
        Ok(tape.value(out).data().iter().zip(proj).map(|(y, r)| y * r).sum())
    }

    fn check(mut self, name: &str, seed: u64, rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
        let (mut tape, out, leaves) = self.forward(&self.reg, &self.inputs, true)?;
        let proj: Vec<f64> = (0..tape.shape(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        self.reg.zero_grad();
        tape.backward(out, &proj, &mut self.reg)?;

        let mut worst = 0.0f64;
        let mut checked = 0;
        for (k, leaf) in leaves.iter().enumerate() {
            let analytic = tape.grad(*leaf).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; self.inputs[k].data().len()]);
            for (j, &a) in analytic.iter().enumerate() {
                let mut inputs = self.inputs.clone();
                let x0 = inputs[k].data()[j];
                inputs[k].data_mut()[j] = x0 + FD_STEP;
                let up = self.objective(&self.reg, &inputs, &proj)?;
                inputs[k].data_mut()[j] = x0 - FD_STEP;
                let down = self.objective(&self.reg, &inputs, &proj)?;
                worst = worst.max(relative_error(a, (up - down) / (2.0 * FD_STEP)));
                checked += 1;
            }
        }

        let analytic: Vec<Vec<f64>> = self.reg.clone().slices_mut().iter().map(|s| s.grads.to_vec()).collect();
        for (si, grads) in analytic.iter().enumerate() {
            for (j, &a) in grads.iter().enumerate() {
                let mut reg = self.reg.clone();
                reg.slices_mut()[si].values[j] += FD_STEP;
                let up = self.objective(&reg, &self.inputs, &proj)?;
                reg.slices_mut()[si].values[j] -= 2.0 * FD_STEP;
                let down = self.objective(&reg, &self.inputs, &proj)?;
                worst = worst.max(relative_error(a, (up - down) / (2.0 * FD_STEP)));
                checked += 1;
            }
        }
        Ok(GradCheckResult {
            name: name.to_string(),
            seed,
            checked,
            max_rel_error: worst,
        })
    }
}

fn randn(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor4<f64> {
    Tensor4::randn(Shape4::new(n, h, w, c), 1.0, rng)
}

/// Random values kept at least `gap` away from zero.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: Shape4, gap: f64) -> Tensor4<f64> {
    let data = (0..shape.len())
        .map(|_| {
            let v: f64 = rng.random_range(gap..1.0 + gap);
            if rng.random_bool(0.5) { v } else { -v }
        })
        .collect();
    Tensor4::from_vec(shape, data).expect("sized")
}

fn conv_case<'a>(rng: &mut ChaCha8Rng, size: usize, cin: usize, cout: usize, kernel: usize, rate: usize) -> Case<'a> {
    let mut reg = Registry::new();
    let mut k = ConvKernel::he_normal(KernelShape::new(kernel, kernel, cin, cout), true, rng);
    if let Some(b) = k.bias.as_mut() {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    let id = reg.add_conv("k", k).expect("fresh registry");
    Case {
        inputs: vec![randn(rng, 1, size, size, cin)],
        reg,
        build: Box::new(move |t, r, x| t.conv(r, x[0], id, rate)),
    }
}

fn norm_case<'a>(rng: &mut ChaCha8Rng, mode: Mode) -> Case<'a> {
    let mut reg = Registry::new();
    let mut s = BatchNormState::new(2);
    for c in 0..2 {
        s.gamma[c] = rng.random_range(0.5..1.5);
        s.beta[c] = rng.random_range(-0.5..0.5);
        s.running_mean[c] = rng.random_range(-0.5..0.5);
        s.running_var[c] = rng.random_range(0.5..2.0);
    }
    let id = reg.add_norm("bn", s).expect("fresh registry");
    Case {
        inputs: vec![randn(rng, 2, 3, 3, 2)],
        reg,
        build: Box::new(move |t, r, x| t.batchnorm(r, x[0], id, mode)),
    }
}

/// Max pooling input whose entries are pairwise at least 0.01 apart, so no
/// finite-difference step can change an argmax.
fn distinct_values(rng: &mut ChaCha8Rng, shape: Shape4) -> Tensor4<f64> {
    let mut data: Vec<f64> = (0..shape.len()).map(|i| i as f64 * 0.01).collect();
    for i in (1..data.len()).rev() {
        let j = rng.random_range(0..=i);
        data.swap(i, j);
    }
    Tensor4::from_vec(shape, data).expect("sized")
}

fn op_cases<'a>(rng: &mut ChaCha8Rng) -> Vec<(String, Case<'a>)> {
    let mut cases = vec![
        ("conv_4x4_r1".to_string(), conv_case(rng, 4, 1, 1, 3, 1)),
        ("conv_7x7_r2".to_string(), conv_case(rng, 7, 2, 3, 3, 2)),
    ];
    for (rate, size) in [(1, 7), (2, 7), (6, 13), (12, 15)] {
        cases.push((format!("conv_r{rate}"), conv_case(rng, size, 2, 2, 3, rate)));
    }
    cases.push(("conv_1x1_head".into(), conv_case(rng, 5, 3, 3, 1, 1)));
    cases.push(("batchnorm_training".into(), norm_case(rng, Mode::Training)));
    cases.push(("batchnorm_inference".into(), norm_case(rng, Mode::Inference)));
    cases.push((
        "maxpool".into(),
        Case {
            inputs: vec![distinct_values(rng, Shape4::new(1, 5, 7, 2))],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.maxpool(x[0])),
        },
    ));
    cases.push((
        "relu".into(),
        Case {
            inputs: vec![away_from_zero(rng, Shape4::new(1, 4, 4, 2), 0.01)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.relu(x[0])),
        },
    ));
    cases.push((
        "resize_up".into(),
        Case {
            inputs: vec![randn(rng, 1, 3, 4, 2)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.resize(x[0], 7, 9)),
        },
    ));
    cases.push((
        "resize_down".into(),
        Case {
            inputs: vec![randn(rng, 1, 8, 9, 2)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.resize(x[0], 3, 4)),
        },
    ));
    cases.push((
        "global_avg_pool".into(),
        Case {
            inputs: vec![randn(rng, 2, 3, 4, 3)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.global_avg_pool(x[0])),
        },
    ));
    cases.push((
        "concat".into(),
        Case {
            inputs: vec![randn(rng, 1, 3, 3, 1), randn(rng, 1, 3, 3, 2), randn(rng, 1, 3, 3, 3)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.concat(x)),
        },
    ));
    cases.push((
        "softmax".into(),
        Case {
            inputs: vec![randn(rng, 1, 3, 3, 4)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.softmax(x[0])),
        },
    ));
    cases.push((
        "add".into(),
        Case {
            inputs: vec![randn(rng, 1, 3, 3, 2), randn(rng, 1, 3, 3, 2)],
            reg: Registry::new(),
            build: Box::new(|t, _, x| t.add(x[0], x[1])),
        },
    ));
    cases.push(("upsample_merge".into(), merge_case(rng)));
    cases
}

/// Upsample 2x2 -> 4x4, reduce a 4x4 skip, concatenate, ReLU.
fn merge_case<'a>(rng: &mut ChaCha8Rng) -> Case<'a> {
    let mut reg = Registry::new();
    let up = UpsampleLayer::build(&mut reg, rng, "up", 3, 2, (4, 4)).expect("fresh registry");
    let skip = SkipReducer::build(&mut reg, rng, "skip", 2, 2).expect("fresh registry");
    Case {
        inputs: vec![randn(rng, 1, 2, 2, 3), randn(rng, 1, 4, 4, 2)],
        reg,
        build: Box::new(move |t, r, x| upsample_and_merge(t, r, &up, &skip, MergeKind::Concat, x[0], x[1], Mode::Training)),
    }
}

/// Softmax followed by the class-weighted loss, differentiated with respect
/// to the logits.
fn check_weighted_ce(seed: u64, rng: &mut ChaCha8Rng) -> Result<GradCheckResult> {
    let shape = Shape4::new(2, 3, 3, 3);
    let logits = Tensor4::<f64>::randn(shape, 2.0, rng);
    let labels: Vec<u8> = (0..shape.pixels()).map(|_| rng.random_range(0..3u8)).collect();
    let weights = [100.0, 100.0, 2000.0];
    let loss_of = |z: &Tensor4<f64>| -> Result<(f64, Tensor4<f64>)> {
        let mut tape = Tape::without_grad();
        let v = tape.leaf(z.clone(), false);
        let p = tape.softmax(v)?;
        weighted_ce_loss(tape.value(p), &labels, &weights)
    };
    let (_, grad) = loss_of(&logits)?;
    let mut worst = 0.0f64;
    for j in 0..shape.len() {
        let mut z = logits.clone();
        z.data_mut()[j] += FD_STEP;
        let (up, _) = loss_of(&z)?;
        z.data_mut()[j] -= 2.0 * FD_STEP;
        let (down, _) = loss_of(&z)?;
        worst = worst.max(relative_error(grad.data()[j], (up - down) / (2.0 * FD_STEP)));
    }
    Ok(GradCheckResult {
        name: "softmax_weighted_ce".into(),
        seed,
        checked: shape.len(),
        max_rel_error: worst,
    })
}

/// Runs every check for every seed.
pub fn run_suite(seeds: &[u64]) -> Result<Vec<GradCheckResult>> {
    let mut results = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, case) in op_cases(&mut rng) {
            results.push(case.check(&name, seed, &mut rng)?);
        }
        results.push(check_weighted_ce(seed, &mut rng)?);
    }
    Ok(results)
}
