//! Command-line front end: synthetic data generation, training, evaluation,
//! prediction, ablation studies and gradient checks.

pub mod commands;
pub mod config;
pub mod defect_map;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use waferseg_core::{Error, Variant};

use crate::commands::Context;
use crate::config::{parse_input_size, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "waferseg", version, about = "Chip-level defect segmentation of photoluminescence wafer images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration (a run manifest also works).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Input image (PGM or chip list) for predict, sample directory for eval.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    /// `HxW`, or `N` for a square input.
    #[arg(long, global = true)]
    pub input_size: Option<String>,
    /// Number of wafers to generate or train on.
    #[arg(long, global = true)]
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Write synthetic wafers with label maps.
    Generate,
    /// Train a model and save checkpoints.
    Train,
    /// Confusion matrix and accuracies of a checkpoint.
    Eval,
    /// Defect map of one wafer image.
    Predict,
    /// Train every variant and sweep ASPP rates.
    Ablate,
    /// Compare analytic and finite-difference gradients of every layer.
    Gradcheck,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric { .. } => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

impl Cli {
    pub fn resolve_config(&self) -> waferseg_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
            cfg.model.encoder_kernel_plan = None;
        }
        if let Some(size) = &self.input_size {
            (cfg.data.height, cfg.data.width) = parse_input_size(size)?;
        }
        if let Some(n) = self.count {
            cfg.data.count = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status.
pub fn run(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = cli.resolve_config().and_then(|config| {
        let ctx = Context {
            argv: args.clone(),
            config,
            out: cli.out.clone(),
            checkpoint: cli.checkpoint.clone(),
            input: cli.input.clone(),
        };
        match cli.command {
            Command::Generate => commands::generate(&ctx),
            Command::Train => commands::train(&ctx),
            Command::Eval => commands::eval(&ctx),
            Command::Predict => commands::predict(&ctx),
            Command::Ablate => commands::ablation(&ctx),
            Command::Gradcheck => commands::gradcheck(&ctx),
        }
    });
    match result {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(args).unwrap()
    }

    #[test]
    fn overrides_apply() {
        let cli = parse(&["waferseg", "train", "--seed", "9", "--variant", "basic", "--input-size", "64x48", "--count", "3"]);
        let cfg = cli.resolve_config().unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.model.variant, Variant::Basic);
        assert_eq!((cfg.data.height, cfg.data.width), (64, 48));
        assert_eq!(cfg.data.count, 3);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("x")), 1);
        assert_eq!(exit_code(&Error::shape("x")), 1);
        assert_eq!(exit_code(&Error::Numeric { context: "a".into(), detail: "b".into() }), 2);
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 3);
        assert_eq!(run(vec!["waferseg".into(), "frobnicate".into()]), 1);
        assert_eq!(run(vec!["waferseg".into(), "--help".into()]), 0);
        assert_eq!(run(vec!["waferseg".into(), "train".into(), "--variant".into(), "huge".into()]), 1);
    }
}
