//! TOML run configuration. Relative paths resolve against the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoding::{EmbeddingProvider, FileProvider, HashProvider, DEFAULT_HASH_DIM, HASH_SEED};
use crate::error::{Error, Result};
use crate::gateway::GatewayConfig;
use crate::model::ModelShape;
use crate::prompt::Variant;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kg: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    #[default]
    Hash,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    /// Output width of the hash encoder.
    pub dim: usize,
    pub seed: u64,
    /// Precomputed embedding table for the file encoder.
    pub path: Option<PathBuf>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            kind: EncoderKind::Hash,
            dim: DEFAULT_HASH_DIM,
            seed: HASH_SEED,
            path: None,
        }
    }
}

impl EncoderConfig {
    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        match self.kind {
            EncoderKind::Hash => {
                if self.dim == 0 {
                    return Err(Error::Config("encoder.dim must be positive".into()));
                }
                Ok(Box::new(HashProvider::with_seed(self.dim, self.seed)))
            }
            EncoderKind::File => {
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Config("encoder.kind = \"file\" requires encoder.path".into()))?;
                Ok(Box::new(FileProvider::load(path)?))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d: usize,
    pub steps: usize,
    pub top_k: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 256,
            steps: 3,
            top_k: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    #[serde(flatten)]
    pub params: TrainConfig,
    /// Where the trained checkpoint is written.
    pub output: PathBuf,
    /// Checkpoint to start from (finetuning).
    pub init: Option<PathBuf>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            params: TrainConfig::default(),
            output: PathBuf::from("model.ckpt"),
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub variant: Variant,
    /// Number of reference answers offered to the language model.
    pub top_n: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mcp,
            top_n: 3,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtdConfig {
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub llm: GatewayConfig,
    pub prompt: PromptConfig,
}

impl EtdConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [&mut d.kg, &mut d.train, &mut d.valid, &mut d.test].into_iter().flatten() {
            fix(p);
        }
        if let Some(p) = &mut self.encoder.path {
            fix(p);
        }
        fix(&mut self.train.output);
        if let Some(p) = &mut self.train.init {
            fix(p);
        }
        if let Some(p) = &mut self.llm.mock_responses {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.prompt.top_n == 0 || self.prompt.top_n > crate::prompt::MAX_CANDIDATES {
            return Err(Error::Config(format!(
                "prompt.top_n must be between 1 and {}",
                crate::prompt::MAX_CANDIDATES
            )));
        }
        self.train.params.validate()?;
        self.llm.validate()?;
        ModelShape {
            d: self.model.d,
            d_l: 1,
            steps: self.model.steps,
            top_k: self.model.top_k,
        }
        .validate()
    }

    /// Model shape for an encoder producing `d_l`-wide raw embeddings.
    pub fn shape(&self, d_l: usize) -> ModelShape {
        ModelShape {
            d: self.model.d,
            d_l,
            steps: self.model.steps,
            top_k: self.model.top_k,
        }
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        field
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{name}` is not set in the configuration")))
    }
}
