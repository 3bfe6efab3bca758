//! Config file loading and flag > file > default resolution.

use std::path::{Path, PathBuf};

use acbias::decoder::DecodeOptions;
use acbias::graph_builder::BiasingConfig;
use anyhow::{Context, Result};
use serde::Deserialize;

use crate::args::{BiasArgs, SearchArgs};
use crate::error::UsageError;

pub const DEFAULT_FRAME_SHIFT_S: f64 = 0.01;
pub const DEFAULT_SEED: u64 = 42;

/// Every key is optional. Relative paths are taken relative to the config
/// file's directory.
#[derive(Debug, Clone, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub arpa: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub keywords: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub emissions: Option<PathBuf>,
    pub nbest: Option<PathBuf>,
    pub refs: Option<PathBuf>,
    pub hyps: Option<PathBuf>,
    pub entities: Option<PathBuf>,
    pub known_vocab: Option<PathBuf>,
    pub timing: Option<PathBuf>,

    pub alpha_in_lm: Option<f64>,
    pub alpha_out_lm: Option<f64>,
    pub exp_base: Option<f64>,
    pub lm_min_order: Option<usize>,
    pub lm_max_order: Option<usize>,
    pub divide_by_pieces: Option<bool>,

    pub lambda: Option<f64>,
    pub beam: Option<usize>,
    pub bias_in_pruning: Option<bool>,
    pub frame_shift_s: Option<f64>,
    pub jobs: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        for p in [
            &mut self.arpa,
            &mut self.vocab,
            &mut self.keywords,
            &mut self.graph,
            &mut self.emissions,
            &mut self.nbest,
            &mut self.refs,
            &mut self.hyps,
            &mut self.entities,
            &mut self.known_vocab,
            &mut self.timing,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }

    pub fn biasing(&self, flags: &BiasArgs) -> Result<BiasingConfig> {
        let d = BiasingConfig::default();
        let cfg = BiasingConfig {
            alpha_in_lm: flags.alpha_in_lm.or(self.alpha_in_lm).unwrap_or(d.alpha_in_lm),
            alpha_out_lm: flags.alpha_out_lm.or(self.alpha_out_lm).unwrap_or(d.alpha_out_lm),
            exp_base: flags.exp_base.or(self.exp_base).unwrap_or(d.exp_base),
            lm_min_order: flags.lm_min_order.or(self.lm_min_order).unwrap_or(d.lm_min_order),
            lm_max_order: flags.lm_max_order.or(self.lm_max_order).or(d.lm_max_order),
            divide_by_pieces: flags
                .divide_by_pieces
                .or(self.divide_by_pieces)
                .unwrap_or(d.divide_by_pieces),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn search(&self, flags: &SearchArgs, nbest: usize) -> Result<DecodeOptions> {
        let d = DecodeOptions::default();
        let opts = DecodeOptions {
            beam: flags.beam.or(self.beam).unwrap_or(d.beam),
            lambda: flags.lambda.or(self.lambda).unwrap_or(d.lambda),
            bias_in_pruning: flags
                .bias_in_pruning
                .or(self.bias_in_pruning)
                .unwrap_or(d.bias_in_pruning),
            nbest,
        };
        opts.validate()?;
        Ok(opts)
    }

    /// `None` means "use the value stored in each emission file".
    pub fn frame_shift(&self, flags: &SearchArgs) -> Result<Option<f64>> {
        match flags.frame_shift_s.or(self.frame_shift_s) {
            Some(s) if !(s.is_finite() && s > 0.0) => {
                Err(UsageError(format!("frame shift must be positive, got {s}")).into())
            }
            other => Ok(other),
        }
    }

    pub fn jobs(&self, flags: &SearchArgs) -> Result<Option<usize>> {
        match flags.jobs.or(self.jobs) {
            Some(0) => Err(UsageError("--jobs must be at least 1".into()).into()),
            other => Ok(other),
        }
    }

    pub fn seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).unwrap_or(DEFAULT_SEED)
    }
}

/// Flag value, else config value; the file must exist.
pub fn input(flag: &Option<PathBuf>, file: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    optional_input(flag, file, what)?
        .ok_or_else(|| UsageError(format!("missing required input: --{what}")).into())
}

pub fn optional_input(
    flag: &Option<PathBuf>,
    file: &Option<PathBuf>,
    what: &str,
) -> Result<Option<PathBuf>> {
    match flag.as_ref().or(file.as_ref()) {
        Some(p) if !p.exists() => {
            Err(UsageError(format!("--{what}: {} does not exist", p.display())).into())
        }
        other => Ok(other.cloned()),
    }
}

pub fn output(flag: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    flag.clone()
        .ok_or_else(|| UsageError(format!("missing required output: --{what}")).into())
}
