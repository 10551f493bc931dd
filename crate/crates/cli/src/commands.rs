//! Subcommand implementations. Each returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use waferseg_core::data::io::{load_dataset, read_pgm, save_sample};
use waferseg_core::data::{augment, dataset_split, parse_chip_list, synthesize, Augmentation, SampleMeta, WaferSample};
use waferseg_core::gradcheck::run_suite;
use waferseg_core::train::{
    ablate, epochs_to_csv, evaluate, predict_labels, rising_loss_epochs, AblationData, Control, Trainer,
};
use waferseg_core::{checkpoint, Error, Model, Result};

use crate::config::{RunConfig, TEST_SEED_OFFSET};
use crate::defect_map::write_png;
use crate::manifest::ManifestBuilder;

/// Everything a command needs besides its own flags.
pub struct Context {
    pub argv: Vec<String>,
    pub config: RunConfig,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

impl Context {
    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    fn manifest(&self) -> ManifestBuilder {
        ManifestBuilder::new(&self.argv, &self.config)
    }

    fn require_checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| Error::config("--checkpoint is required"))
    }
}

/// `count` synthetic wafers with seeds `first_seed`, `first_seed + 1`, ...
pub fn synthesize_set(cfg: &RunConfig, count: usize, first_seed: u64) -> Result<Vec<WaferSample>> {
    (0..count as u64)
        .map(|i| {
            let mut s = synthesize(&cfg.synth_for(first_seed + i))?;
            s.meta.source = format!("synthetic seed {}", first_seed + i);
            Ok(s)
        })
        .collect()
}

pub struct PreparedData {
    /// Unaugmented training samples.
    pub originals: Vec<WaferSample>,
    pub train: Vec<WaferSample>,
    pub val: Vec<WaferSample>,
}

/// Loads or generates the originals, splits them and augments the training side.
pub fn prepare_data(cfg: &RunConfig, manifest: &mut ManifestBuilder) -> Result<PreparedData> {
    let samples = match &cfg.data.dataset {
        Some(dir) => {
            manifest.input(dir);
            let samples = load_dataset(dir)?;
            let want = (cfg.data.height, cfg.data.width);
            if let Some(s) = samples.iter().find(|s| s.dims() != want) {
                return Err(Error::shape(format!(
                    "{}: sample is {}x{} but the configured input is {}x{}",
                    s.meta.source, s.height, s.width, want.0, want.1
                )));
            }
            samples
        }
        None => synthesize_set(cfg, cfg.data.count, cfg.seed)?,
    };
    let (originals, val) = if cfg.data.train_fraction >= 1.0 {
        (samples, Vec::new())
    } else {
        dataset_split(&samples, cfg.data.train_fraction, cfg.seed)?
    };
    let train = if cfg.data.augment { augment(&originals)? } else { originals.clone() };
    Ok(PreparedData { originals, train, val })
}

pub fn generate(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let dir = ctx.out_dir()?;
    let mut manifest = ctx.manifest();
    for i in 0..cfg.data.count {
        let seed = cfg.seed + i as u64;
        let mut sample = synthesize(&cfg.synth_for(seed))?;
        sample.meta.source = format!("synthetic seed {seed}");
        let paths = save_sample(&dir, &format!("wafer_{i:04}"), &sample)?;
        for p in [&paths.image, &paths.labels, &paths.meta] {
            manifest.output(p);
        }
    }
    let mut written = manifest.outputs();
    written.push(manifest.write(&dir.join("manifest.toml"))?);
    eprintln!("generated {} wafers in {}", cfg.data.count, dir.display());
    Ok(written)
}

pub fn train(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let dir = ctx.out_dir()?;
    let mut manifest = ctx.manifest();
    let data = prepare_data(cfg, &mut manifest)?;
    let mut model = Model::<f32>::build(&cfg.model_config())?;
    eprintln!(
        "training {} ({} parameters) on {} samples, validating on {}",
        cfg.model.variant,
        model.parameter_count(),
        data.train.len(),
        data.val.len()
    );
    let train_cfg = cfg.train_config();
    let batch_size = train_cfg.batch_size;
    let stop = cfg.stop.clone();
    let originals = &data.originals;
    let mut stop_error = None;
    let outcome = Trainer::new(train_cfg)
        .diagnostics(dir.join("diagnostics.ckpt"))
        .on_epoch(|log, model| {
            let val = log
                .val_dca
                .map(|d| format!(" val_mpa {:.4} val_dca {:.4}", log.val_mpa.unwrap_or(0.0), d))
                .unwrap_or_default();
            eprintln!(
                "epoch {:>3} lr {:.3e} loss {:.5} acc {:.4} mpa {:.4} dca {:.4}{val}",
                log.epoch, log.lr, log.train_loss, log.train_pixel_accuracy, log.train_mpa, log.train_dca
            );
            if stop.pixel_accuracy.is_none() && stop.dca.is_none() {
                return Control::Continue;
            }
            match evaluate(model, originals, batch_size) {
                Ok(r) => {
                    let reached = stop.pixel_accuracy.is_none_or(|t| r.pixel_accuracy() >= t)
                        && stop.dca.is_none_or(|t| r.dca >= t);
                    if reached {
                        eprintln!(
                            "stopping: inference accuracy {:.4}, defect-class accuracy {:.4}",
                            r.pixel_accuracy(),
                            r.dca
                        );
                        Control::Stop
                    } else {
                        Control::Continue
                    }
                }
                Err(e) => {
                    stop_error = Some(e);
                    Control::Stop
                }
            }
        })
        .run(&mut model, &data.train, &data.val)?;
    if let Some(e) = stop_error {
        return Err(e);
    }

    let losses: Vec<f64> = outcome.log.iter().map(|e| e.train_loss).collect();
    let rising = rising_loss_epochs(&losses, 5, 5);
    if !rising.is_empty() {
        eprintln!("warning: smoothed training loss rose at epochs {rising:?}");
    }

    let model_path = dir.join("model.ckpt");
    checkpoint::save(&model, &model_path)?;
    manifest.output(&model_path);
    if let Some((epoch, dca, best)) = &outcome.best {
        let best_path = dir.join("best.ckpt");
        checkpoint::save(best, &best_path)?;
        manifest.output(&best_path);
        eprintln!("best validation defect-class accuracy {dca:.4} at epoch {epoch}");
    }
    let csv_path = dir.join("epochs.csv");
    fs::write(&csv_path, epochs_to_csv(&outcome.log))?;
    manifest.output(&csv_path);
    let mut written = manifest.outputs();
    written.push(manifest.write(&dir.join("manifest.toml"))?);
    Ok(written)
}

/// Samples for `eval`: a saved dataset from `--input`, else held-out synthetic wafers.
fn eval_samples(ctx: &Context, model: &Model<f32>, manifest: &mut ManifestBuilder) -> Result<Vec<WaferSample>> {
    if let Some(dir) = &ctx.input {
        manifest.input(dir);
        return load_dataset(dir);
    }
    let mc = model.config();
    let mut cfg = ctx.config.clone();
    (cfg.data.height, cfg.data.width) = mc.input_dims;
    synthesize_set(&cfg, cfg.data.test_count.max(1), cfg.seed + TEST_SEED_OFFSET)
}

pub fn eval(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ckpt = ctx.require_checkpoint()?;
    let mut manifest = ctx.manifest();
    manifest.input(ckpt);
    let model = checkpoint::load::<f32>(ckpt)?;
    let samples = eval_samples(ctx, &model, &mut manifest)?;
    let report = evaluate(&model, &samples, ctx.config.train.batch_size)?;
    println!("{} samples, model {}", samples.len(), model.config().variant);
    println!("{report}");
    let Some(_) = &ctx.out else { return Ok(Vec::new()) };
    let dir = ctx.out_dir()?;
    let text_path = dir.join("eval.txt");
    fs::write(&text_path, format!("{report}\n"))?;
    manifest.output(&text_path);
    let toml_path = dir.join("eval.toml");
    fs::write(&toml_path, toml::to_string(&report).expect("report serialises"))?;
    manifest.output(&toml_path);
    let mut written = manifest.outputs();
    written.push(manifest.write(&dir.join("manifest.toml"))?);
    Ok(written)
}

pub fn predict(ctx: &Context) -> Result<Vec<PathBuf>> {
    let ckpt = ctx.require_checkpoint()?;
    let input = ctx.input.as_deref().ok_or_else(|| Error::config("--input is required"))?;
    let mut manifest = ctx.manifest();
    manifest.input(ckpt);
    manifest.input(input);
    let model = checkpoint::load::<f32>(ckpt)?;
    let (h, w) = model.config().input_dims;
    let is_pgm = input.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let image = if is_pgm {
        let (ih, iw, pixels) = read_pgm(input)?;
        if (ih, iw) != (h, w) {
            return Err(Error::shape(format!(
                "{}: image is {ih}x{iw} but the model expects {h}x{w}",
                input.display()
            )));
        }
        pixels
    } else {
        let records = parse_chip_list(&fs::read_to_string(input)?, (h, w))?;
        waferseg_core::data::assemble_image(&records, (h, w))?
    };
    let meta = SampleMeta {
        source: input.display().to_string(),
        augmentation: Augmentation::Original,
    };
    let sample = WaferSample::new(h, w, image, vec![0; h * w], meta)?;
    let labels = predict_labels(&model, &sample)?;

    let dir = ctx.out_dir()?;
    let stem = input.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
    let png_path = dir.join(format!("{stem}.png"));
    write_png(&png_path, h, w, &labels)?;
    manifest.output(&png_path);
    let counts: Vec<usize> = (0..3u8).map(|k| labels.iter().filter(|&&c| c == k).count()).collect();
    println!(
        "{}: background {} in-spec {} defect {} pixels",
        png_path.display(),
        counts[0],
        counts[1],
        counts[2]
    );
    let mut written = manifest.outputs();
    written.push(manifest.write(&dir.join(format!("{stem}.manifest.toml")))?);
    Ok(written)
}

pub fn ablation(ctx: &Context) -> Result<Vec<PathBuf>> {
    let cfg = &ctx.config;
    let dir = ctx.out_dir()?;
    let mut manifest = ctx.manifest();
    let prepared = prepare_data(cfg, &mut manifest)?;
    let test = if cfg.data.dataset.is_none() {
        synthesize_set(cfg, cfg.data.test_count, cfg.seed + TEST_SEED_OFFSET)?
    } else {
        Vec::new()
    };
    let data = AblationData {
        train: prepared.train,
        val: prepared.val,
        test,
    };
    let sweep = cfg.ablation.sweep.then_some(&cfg.ablation.rates);
    let report = ablate(&data, &cfg.model_config(), &cfg.train_config(), &cfg.ablation.variants, sweep)?;
    let text = report.to_text();
    println!("{text}");
    for (name, body) in [
        ("ablation.csv", report.variants_csv()),
        ("rate_sweep.csv", report.sweep_csv()),
        ("ablation.txt", text),
    ] {
        let path = dir.join(name);
        fs::write(&path, body)?;
        manifest.output(&path);
    }
    let mut written = manifest.outputs();
    written.push(manifest.write(&dir.join("manifest.toml"))?);
    Ok(written)
}

pub fn gradcheck(ctx: &Context) -> Result<Vec<PathBuf>> {
    let s = ctx.config.seed;
    let results = run_suite(&[s, s + 1, s + 2])?;
    let mut lines = String::new();
    for r in &results {
        println!("{r}");
        lines.push_str(&format!("{r}\n"));
    }
    let mut written = Vec::new();
    if ctx.out.is_some() {
        let dir = ctx.out_dir()?;
        let path = dir.join("gradcheck.txt");
        fs::write(&path, &lines)?;
        written.push(path);
    }
    let failed = results.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(Error::Numeric {
            context: "gradient check".into(),
            detail: format!("{failed} of {} checks exceeded the tolerance", results.len()),
        });
    }
    println!("all {} gradient checks passed", results.len());
    Ok(written)
}
