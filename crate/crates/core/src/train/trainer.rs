use std::fmt::Write as _;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{batch, WaferSample};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::Mode;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor4;
use crate::train::loss::weighted_ce_loss;
use crate::train::metrics::{Confusion, EvalReport};
use crate::train::optim::RmsProp;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate factor applied after every epoch.
    pub lr_decay: f64,
    pub l2_strength: f64,
    /// Loss weights for background, in-spec and defect pixels.
    pub class_weights: [f64; 3],
    pub rmsprop_decay: f64,
    pub rmsprop_epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 80,
            base_lr: 5e-4,
            lr_decay: 0.97,
            l2_strength: 5e-4,
            class_weights: [100.0, 100.0, 2000.0],
            rmsprop_decay: 0.9,
            rmsprop_epsilon: 1e-8,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("base_lr", self.base_lr),
            ("lr_decay", self.lr_decay),
            ("rmsprop_epsilon", self.rmsprop_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.l2_strength >= 0.0 && self.l2_strength.is_finite()) {
            return Err(Error::config(format!("l2_strength must be non-negative, got {}", self.l2_strength)));
        }
        if !(self.rmsprop_decay > 0.0 && self.rmsprop_decay < 1.0) {
            return Err(Error::config(format!("rmsprop_decay {} outside (0, 1)", self.rmsprop_decay)));
        }
        if self.class_weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::config(format!("class weights must be positive: {:?}", self.class_weights)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        Ok(())
    }

    /// Learning rate after `epochs` completed epochs.
    pub fn lr_after(&self, epochs: usize) -> f64 {
        self.base_lr * self.lr_decay.powi(epochs as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_pixel_accuracy: f64,
    pub train_mpa: f64,
    pub train_dca: f64,
    pub val_mpa: Option<f64>,
    pub val_dca: Option<f64>,
}

pub const EPOCH_CSV_HEADER: &str = "epoch,lr,train_loss,train_mpa,train_dca,val_mpa,val_dca";

pub fn epochs_to_csv(log: &[EpochLog]) -> String {
    let mut out = format!("{EPOCH_CSV_HEADER}\n");
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for e in log {
        let _ = writeln!(
            out,
            "{},{:e},{:.8},{:.6},{:.6},{},{}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_mpa,
            e.train_dca,
            opt(e.val_mpa),
            opt(e.val_dca)
        );
    }
    out
}

/// Epochs `e > start` at which the 5-epoch moving average of the loss is
/// higher than it was `window` epochs earlier.
pub fn rising_loss_epochs(losses: &[f64], start: usize, window: usize) -> Vec<usize> {
    let smooth: Vec<f64> = (0..losses.len())
        .map(|i| {
            let lo = i.saturating_sub(4);
            losses[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64
        })
        .collect();
    (start + window..smooth.len())
        .filter(|&i| smooth[i] > smooth[i - window])
        .map(|i| i + 1)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub log: Vec<EpochLog>,
    /// Best model by validation defect-class accuracy, with its epoch.
    pub best: Option<(usize, f64, Model<T>)>,
}

type EpochHook<'a, T> = Box<dyn FnMut(&EpochLog, &Model<T>) -> Control + 'a>;

pub struct Trainer<'a, T> {
    cfg: TrainConfig,
    hook: Option<EpochHook<'a, T>>,
    diagnostics: Option<PathBuf>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(cfg: TrainConfig) -> Self {
        Self {
            cfg,
            hook: None,
            diagnostics: None,
        }
    }

    /// Called after every epoch; returning [`Control::Stop`] ends training.
    pub fn on_epoch(mut self, hook: impl FnMut(&EpochLog, &Model<T>) -> Control + 'a) -> Self {
        self.hook = Some(Box::new(hook));
        self
    }

    /// Where to save the model if a numeric error stops training.
    pub fn diagnostics(mut self, path: impl Into<PathBuf>) -> Self {
        self.diagnostics = Some(path.into());
        self
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn run(&mut self, model: &mut Model<T>, train: &[WaferSample], val: &[WaferSample]) -> Result<TrainOutcome<T>> {
        self.cfg.validate()?;
        if train.is_empty() {
            return Err(Error::config("empty training split"));
        }
        let mut optimizer = RmsProp::<T>::new(self.cfg.rmsprop_decay, self.cfg.rmsprop_epsilon, self.cfg.l2_strength);
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut outcome = TrainOutcome { log: Vec::new(), best: None };

        for epoch in 0..self.cfg.epochs {
            let lr = self.cfg.lr_after(epoch);
            order.shuffle(&mut rng);
            let mut confusion = Confusion::default();
            let mut loss_sum = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(self.cfg.batch_size) {
                let samples: Vec<&WaferSample> = chunk.iter().map(|&i| &train[i]).collect();
                let step = train_step(model, &mut optimizer, &samples, &self.cfg.class_weights, lr);
                let (loss, predicted, labels) = match step {
                    Ok(v) => v,
                    Err(e) => return Err(self.fail(model, epoch + 1, e)),
                };
                confusion.record_all(&labels, &predicted);
                loss_sum += loss;
                batches += 1;
            }
            let train_report = EvalReport::from_confusion(confusion)?;
            let val_report = if val.is_empty() {
                None
            } else {
                Some(evaluate(model, val, self.cfg.batch_size)?)
            };
            let entry = EpochLog {
                epoch: epoch + 1,
                lr,
                train_loss: loss_sum / batches as f64,
                train_pixel_accuracy: train_report.pixel_accuracy(),
                train_mpa: train_report.mpa,
                train_dca: train_report.dca,
                val_mpa: val_report.as_ref().map(|r| r.mpa),
                val_dca: val_report.as_ref().map(|r| r.dca),
            };
            if let Some(dca) = entry.val_dca {
                if outcome.best.as_ref().is_none_or(|(_, best, _)| dca > *best) {
                    outcome.best = Some((entry.epoch, dca, model.clone()));
                }
            }
            let control = match self.hook.as_mut() {
                Some(hook) => hook(&entry, model),
                None => Control::Continue,
            };
            outcome.log.push(entry);
            if control == Control::Stop {
                break;
            }
        }
        Ok(outcome)
    }

    fn fail(&self, model: &Model<T>, epoch: usize, err: Error) -> Error {
        let err = match err {
            Error::Numeric { context, detail } => Error::Numeric {
                context: format!("epoch {epoch}: {context}"),
                detail,
            },
            other => return other,
        };
        if let Some(path) = &self.diagnostics {
            if let Err(save_err) = crate::checkpoint::save(model, path) {
                return Error::Numeric {
                    context: format!("{err}"),
                    detail: format!("diagnostics checkpoint failed: {save_err}"),
                };
            }
        }
        err
    }
}

/// One forward/backward/update on a batch. Returns the loss, the training-mode
/// argmax predictions and the labels.
pub fn train_step<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut RmsProp<T>,
    samples: &[&WaferSample],
    class_weights: &[f64; 3],
    lr: f64,
) -> Result<(f64, Vec<u8>, Vec<u8>)> {
    let (x, labels) = batch::<T>(samples)?;
    let mut tape = Tape::new();
    let input = tape.leaf(x, false);
    let pass = model.forward(&mut tape, input, Mode::Training)?;
    let probs = tape.value(pass.probs);
    let predicted = argmax_labels(probs);
    let (loss, dlogits) = weighted_ce_loss(probs, &labels, class_weights)?;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            context: "loss".into(),
            detail: format!("loss is {loss}"),
        });
    }
    model.registry_mut().zero_grad();
    tape.backward(pass.logits, dlogits.data(), model.registry_mut())?;
    optimizer.step(model.registry_mut(), lr)?;
    Ok((loss, predicted, labels))
}

/// Per-pixel argmax over channels; ties go to the lowest class id.
pub fn argmax_labels<T: Scalar>(probs: &Tensor4<T>) -> Vec<u8> {
    probs
        .data()
        .chunks_exact(probs.shape().c)
        .map(|p| {
            let mut best = 0;
            for k in 1..p.len() {
                if p[k] > p[best] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

/// Inference-mode class map of one sample.
pub fn predict_labels<T: Scalar>(model: &Model<T>, sample: &WaferSample) -> Result<Vec<u8>> {
    Ok(argmax_labels(&model.infer(&sample.image_tensor::<T>())?))
}

/// Inference-mode confusion matrix and metrics over `samples`.
pub fn evaluate<T: Scalar>(model: &Model<T>, samples: &[WaferSample], batch_size: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::config("no samples to evaluate"));
    }
    let mut confusion = Confusion::default();
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&WaferSample> = chunk.iter().collect();
        let (x, labels) = batch::<T>(&refs)?;
        let predicted = argmax_labels(&model.infer(&x)?);
        confusion.record_all(&labels, &predicted);
    }
    EvalReport::from_confusion(confusion)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_after(0), 5e-4);
        for e in [1, 10, 79] {
            assert!((cfg.lr_after(e) - 5e-4 * 0.97f64.powi(e as i32)).abs() < 1e-18);
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig { base_lr: 0.0, ..Default::default() },
            TrainConfig { class_weights: [1.0, 0.0, 1.0], ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { rmsprop_decay: 1.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn argmax_prefers_lowest_on_ties() {
        let t = Tensor4::from_vec(crate::tensor::Shape4::new(1, 1, 2, 3), vec![0.2f64, 0.2, 0.6, 0.4, 0.4, 0.2]).unwrap();
        assert_eq!(argmax_labels(&t), vec![2, 0]);
    }

    #[test]
    fn rising_loss_detection() {
        let falling: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert!(rising_loss_epochs(&falling, 20, 10).is_empty());
        let mut bump = falling.clone();
        for v in &mut bump[40..] {
            *v += 1.0;
        }
        assert!(!rising_loss_epochs(&bump, 20, 10).is_empty());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let e = EpochLog {
            epoch: 1,
            lr: 5e-4,
            train_loss: 0.5,
            train_pixel_accuracy: 0.9,
            train_mpa: 0.8,
            train_dca: 0.7,
            val_mpa: None,
            val_dca: Some(0.6),
        };
        let csv = epochs_to_csv(&[e]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], EPOCH_CSV_HEADER);
        assert_eq!(lines[1].split(',').count(), 7);
        assert!(lines[1].ends_with(",,0.600000"));
    }
}
