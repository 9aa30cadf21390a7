//! Run configuration: one TOML file, then `NOTASIGN_SEED`, then flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use notasign::data::{PartGrouping, DEFAULT_MIN_CONFIDENCE};
use notasign::encoder::FfnKind;
use notasign::hamnosys::Vocabulary;
use notasign::model::ModelConfig;
use notasign::training::TrainConfig;

use crate::UsageError;

pub const SEED_ENV: &str = "NOTASIGN_SEED";
pub const ECHO_FILE: &str = "config.toml";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Hex codepoint list; the bundled HamNoSys inventory when absent.
    pub vocabulary: Option<PathBuf>,
    /// 25-part grouping JSON; the bundled grouping when absent.
    pub grouping: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub min_confidence: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            min_confidence: DEFAULT_MIN_CONFIDENCE,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FfnArg {
    Mlp,
    Kan,
}

impl From<FfnArg> for FfnKind {
    fn from(f: FfnArg) -> Self {
        match f {
            FfnArg::Mlp => FfnKind::Mlp,
            FfnArg::Kan => FfnKind::Kan,
        }
    }
}

/// Flags shared by `train` and `ablate`; each one wins over the file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub vocabulary: Option<PathBuf>,
    #[arg(long)]
    pub grouping: Option<PathBuf>,
    /// Feed-forward kind in the text-pose encoder.
    #[arg(long, value_enum)]
    pub ffn: Option<FfnArg>,
    /// Coarse pose pathway and its supervision.
    #[arg(long, value_enum)]
    pub multiscale: Option<Switch>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Text-pose encoder depth.
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub kan_hidden: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("config {}: {e}", path.display())).into())
    }

    /// File (or defaults), then the seed variable, then flags.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.train.seed = v
                .trim()
                .parse()
                .map_err(|_| UsageError(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        macro_rules! set {
            ($flag:expr => $slot:expr) => {
                if let Some(v) = $flag {
                    $slot = v.into();
                }
            };
        }
        set!(o.manifest.clone() => cfg.paths.manifest);
        set!(o.out.clone() => cfg.paths.output_dir);
        set!(o.vocabulary.clone() => cfg.paths.vocabulary);
        set!(o.grouping.clone() => cfg.paths.grouping);
        set!(o.ffn => cfg.model.encoder.ffn_kind);
        set!(o.multiscale.map(|s| s == Switch::On) => cfg.model.multiscale);
        set!(o.epochs => cfg.train.epochs);
        set!(o.seed => cfg.train.seed);
        set!(o.batch_size => cfg.train.batch_size);
        set!(o.learning_rate => cfg.train.learning_rate);
        set!(o.d_model => cfg.model.encoder.d_model);
        set!(o.layers => cfg.model.encoder.n_layers_text_pose);
        set!(o.kan_hidden => cfg.model.encoder.kan_hidden);
        set!(o.steps => cfg.model.refinement_steps);
        set!(o.min_confidence => cfg.data.min_confidence);
        Ok(cfg)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Ok(match &self.paths.vocabulary {
            Some(p) => Vocabulary::load(p)?,
            None => Vocabulary::default_hamnosys(),
        })
    }

    pub fn grouping(&self) -> Result<PartGrouping> {
        Ok(match &self.paths.grouping {
            Some(p) => PartGrouping::load(p)?,
            None => PartGrouping::default(),
        })
    }

    pub fn manifest(&self) -> Result<&Path> {
        self.paths
            .manifest
            .as_deref()
            .ok_or_else(|| UsageError("no manifest: pass --manifest or set paths.manifest".into()).into())
    }

    pub fn output_dir(&self) -> Result<&Path> {
        self.paths
            .output_dir
            .as_deref()
            .ok_or_else(|| UsageError("no output directory: pass --out or set paths.output_dir".into()).into())
    }

    /// Checks every section, sizing the embedding table to `vocab`.
    pub fn finalize(&mut self, vocab: &Vocabulary) -> Result<()> {
        self.model.vocab_size = vocab.embedding_size();
        self.model.validate().map_err(|e| UsageError(e.to_string()))?;
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.data.min_confidence) {
            return Err(UsageError(format!("min_confidence {} not in [0, 1]", self.data.min_confidence)).into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join(ECHO_FILE), self.to_toml()?)?;
        Ok(())
    }
}
