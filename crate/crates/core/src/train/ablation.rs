//! Trains every model variant on the same data and seed, plus an optional
//! sweep over ASPP dilation rates, and tabulates validation/test metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::WaferSample;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::train::metrics::EvalReport;
use crate::train::trainer::{evaluate, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSweep {
    pub encoder: Vec<Vec<usize>>,
    pub decoder: Vec<Vec<usize>>,
}

impl Default for RateSweep {
    fn default() -> Self {
        Self {
            encoder: vec![vec![1, 2, 4, 8], vec![1, 2, 6, 12], vec![1, 4, 8, 16], vec![1, 6, 12, 18]],
            decoder: vec![vec![2, 1], vec![2, 4], vec![4, 8], vec![6, 12]],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct AblationData {
    pub train: Vec<WaferSample>,
    pub val: Vec<WaferSample>,
    pub test: Vec<WaferSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub val: EvalReport,
    pub test: Option<EvalReport>,
    /// Epoch of the checkpoint that was evaluated.
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRow {
    pub variant: Variant,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepTarget {
    Encoder,
    Decoder,
}

impl SweepTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepTarget::Encoder => "encoder",
            SweepTarget::Decoder => "decoder",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub target: SweepTarget,
    pub rates: Vec<usize>,
    pub outcome: std::result::Result<RunMetrics, String>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationReport {
    pub rows: Vec<VariantRow>,
    pub sweep: Vec<SweepRow>,
}

/// Trains `cfg` and evaluates its best-validation checkpoint.
pub fn run_one(cfg: &ModelConfig, data: &AblationData, train_cfg: &TrainConfig) -> Result<RunMetrics> {
    let mut model = Model::<f32>::build(cfg)?;
    let outcome = Trainer::new(train_cfg.clone()).run(&mut model, &data.train, &data.val)?;
    let (epoch, best) = match outcome.best {
        Some((epoch, _, best)) => (epoch, best),
        None => (outcome.log.len(), model),
    };
    let batch = train_cfg.batch_size;
    let val = evaluate(&best, &data.val, batch)?;
    let test = if data.test.is_empty() {
        None
    } else {
        Some(evaluate(&best, &data.test, batch)?)
    };
    Ok(RunMetrics { val, test, epoch })
}

/// One row per entry of `variants`, then the rate sweep on `dense_aspp2`.
/// A failing configuration is recorded in its row and the run continues.
pub fn ablate(
    data: &AblationData,
    base: &ModelConfig,
    train_cfg: &TrainConfig,
    variants: &[Variant],
    sweep: Option<&RateSweep>,
) -> Result<AblationReport> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::config("ablation needs non-empty training and validation splits"));
    }
    train_cfg.validate()?;
    let mut done: Vec<(ModelConfig, std::result::Result<RunMetrics, String>)> = Vec::new();
    let mut run = |cfg: ModelConfig| {
        if let Some((_, hit)) = done.iter().find(|(c, _)| *c == cfg) {
            return hit.clone();
        }
        let out = run_one(&cfg, data, train_cfg).map_err(|e| e.to_string());
        done.push((cfg, out.clone()));
        out
    };
    let config_for = |variant: Variant| ModelConfig {
        variant,
        encoder_kernel_plan: if variant.is_dense() == base.variant.is_dense() {
            base.encoder_kernel_plan.clone()
        } else {
            variant.default_kernel_plan()
        },
        ..base.clone()
    };

    let mut report = AblationReport::default();
    for &variant in variants {
        let outcome = run(config_for(variant));
        report.rows.push(VariantRow { variant, outcome });
    }
    if let Some(sweep) = sweep {
        let reference = config_for(Variant::DenseAspp2);
        for rates in &sweep.encoder {
            let cfg = ModelConfig {
                encoder_aspp_rates: rates.clone(),
                ..reference.clone()
            };
            let outcome = run(cfg);
            report.sweep.push(SweepRow {
                target: SweepTarget::Encoder,
                rates: rates.clone(),
                outcome,
            });
        }
        for rates in &sweep.decoder {
            let cfg = ModelConfig {
                decoder_aspp_rates: rates.clone(),
                ..reference.clone()
            };
            let outcome = run(cfg);
            report.sweep.push(SweepRow {
                target: SweepTarget::Decoder,
                rates: rates.clone(),
                outcome,
            });
        }
    }
    Ok(report)
}

fn rates_str(rates: &[usize]) -> String {
    rates.iter().map(usize::to_string).collect::<Vec<_>>().join(" ")
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{:.4}", x)).unwrap_or_else(|| "-".into())
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn variants_csv(&self) -> String {
        let mut out = String::from("model,variant,val_mpa,val_dca,test_mpa,test_dca,error\n");
        for r in &self.rows {
            let name = r.variant.label();
            match &r.outcome {
                Ok(m) => {
                    let test = m.test.as_ref();
                    let _ = writeln!(
                        out,
                        "{name},{},{:.6},{:.6},{},{},",
                        r.variant,
                        m.val.mpa,
                        m.val.dca,
                        test.map(|t| format!("{:.6}", t.mpa)).unwrap_or_default(),
                        test.map(|t| format!("{:.6}", t.dca)).unwrap_or_default()
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{name},{},,,,,\"{}\"", r.variant, e.replace('"', "'"));
                }
            }
        }
        out
    }

    pub fn sweep_csv(&self) -> String {
        let mut out = String::from("module,rates,val_dca,error\n");
        for r in &self.sweep {
            let rates = rates_str(&r.rates);
            match &r.outcome {
                Ok(m) => {
                    let _ = writeln!(out, "{},{rates},{:.6},", r.target.as_str(), m.val.dca);
                }
                Err(e) => {
                    let _ = writeln!(out, "{},{rates},,\"{}\"", r.target.as_str(), e.replace('"', "'"));
                }
            }
        }
        out
    }

    /// Aligned plain-text tables.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>9} {:>9} {:>9}",
            "model", "val MPA", "val DCA", "test MPA", "test DCA"
        );
        for r in &self.rows {
            match &r.outcome {
                Ok(m) => {
                    let _ = writeln!(
                        out,
                        "{:<20} {:>9} {:>9} {:>9} {:>9}",
                        r.variant.label(),
                        cell(Some(m.val.mpa)),
                        cell(Some(m.val.dca)),
                        cell(m.test.as_ref().map(|t| t.mpa)),
                        cell(m.test.as_ref().map(|t| t.dca))
                    );
                }
                Err(e) => {
                    let _ = writeln!(out, "{:<20} failed: {e}", r.variant.label());
                }
            }
        }
        if !self.sweep.is_empty() {
            let _ = writeln!(out, "\n{:<8} {:<14} {:>9}", "module", "rates", "val DCA");
            for r in &self.sweep {
                let value = match &r.outcome {
                    Ok(m) => cell(Some(m.val.dca)),
                    Err(e) => format!("failed: {e}"),
                };
                let _ = writeln!(out, "{:<8} {:<14} {:>9}", r.target.as_str(), rates_str(&r.rates), value);
            }
        }
        out
    }
}
