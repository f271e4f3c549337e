//! The gateway configuration file.

use std::path::{Path, PathBuf};

use mirror_core::affect::{AffectParams, Lexicon};
use mirror_core::detect::DetectParams;
use mirror_core::engine::{EngineConfig, EngineSettings};
use mirror_core::poem::PoemConfig;
use mirror_core::sampling::SamplingParams;
use serde::{Deserialize, Serialize};

use crate::assets;
use crate::source::SourceSpec;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "MIRROR_CONFIG";
/// Value of `lm` that selects the template backend.
pub const TEMPLATE_LM: &str = "template";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenizerPaths {
    pub vocab: PathBuf,
    pub merges: PathBuf,
}

/// Relative paths are resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    pub cascade: PathBuf,
    pub classifier: PathBuf,
    /// Path of an MRW1 language model, or `"template"`.
    #[serde(default = "default_lm")]
    pub lm: String,
    #[serde(default)]
    pub tokenizer: Option<TokenizerPaths>,
    /// Lexicon file; the built-in lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub engine: EngineConfig,
    #[serde(default)]
    pub affect: AffectParams,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub poem: PoemConfig,
    #[serde(default)]
    pub detect: DetectParams,
    #[serde(default = "default_bind")]
    pub bind: String,
    #[serde(default = "default_log_dir")]
    pub log_dir: PathBuf,
    #[serde(default = "default_archive_dir")]
    pub archive_dir: PathBuf,
    #[serde(default = "default_source")]
    pub source: SourceSpec,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_ms: u64,
}

fn default_lm() -> String {
    TEMPLATE_LM.into()
}

fn default_bind() -> String {
    "127.0.0.1:8080".into()
}

fn default_log_dir() -> PathBuf {
    "var/log".into()
}

fn default_archive_dir() -> PathBuf {
    "var/archive".into()
}

fn default_source() -> SourceSpec {
    SourceSpec::synthetic("visit", 15.0)
}

fn default_heartbeat() -> u64 {
    5000
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid JSON for this schema: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {} does not exist", path.display())]
    MissingFile { field: &'static str, path: PathBuf },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

impl GatewayConfig {
    /// A config using the given cascade and classifier and defaults for
    /// everything else.
    pub fn new(cascade: impl Into<PathBuf>, classifier: impl Into<PathBuf>) -> Self {
        Self {
            cascade: cascade.into(),
            classifier: classifier.into(),
            lm: default_lm(),
            tokenizer: None,
            lexicon: None,
            engine: EngineConfig::default(),
            affect: AffectParams::default(),
            sampling: SamplingParams::default(),
            poem: PoemConfig::default(),
            detect: DetectParams::default(),
            bind: default_bind(),
            log_dir: default_log_dir(),
            archive_dir: default_archive_dir(),
            source: default_source(),
            heartbeat_ms: default_heartbeat(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: GatewayConfig = serde_json::from_slice(&bytes)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn lm_path(&self) -> Option<&Path> {
        (self.lm != TEMPLATE_LM).then(|| Path::new(&self.lm))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.cascade);
        fix(&mut self.classifier);
        if self.lm != TEMPLATE_LM {
            self.lm = base.join(&self.lm).to_string_lossy().into_owned();
        }
        if let Some(t) = &mut self.tokenizer {
            fix(&mut t.vocab);
            fix(&mut t.merges);
        }
        if let Some(l) = &mut self.lexicon {
            fix(l);
        }
        fix(&mut self.log_dir);
        fix(&mut self.archive_dir);
        if matches!(self.source.kind, crate::source::SourceKind::ImageDir | crate::source::SourceKind::VideoFile) {
            let mut p = PathBuf::from(&self.source.locator);
            fix(&mut p);
            self.source.locator = p.to_string_lossy().into_owned();
        }
    }

    /// Checks value invariants and that every referenced file exists.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |field: &str, message: String| ConfigError::Invalid {
            field: field.into(),
            message,
        };
        let mut files: Vec<(&'static str, &Path)> = vec![("cascade", &self.cascade), ("classifier", &self.classifier)];
        if let Some(lm) = self.lm_path() {
            files.push(("lm", lm));
        }
        if let Some(t) = &self.tokenizer {
            files.push(("tokenizer.vocab", &t.vocab));
            files.push(("tokenizer.merges", &t.merges));
        }
        if let Some(l) = &self.lexicon {
            files.push(("lexicon", l));
        }
        for (field, path) in files {
            if !path.is_file() {
                return Err(ConfigError::MissingFile {
                    field,
                    path: path.to_path_buf(),
                });
            }
        }
        self.engine.validate().map_err(|e| invalid("engine", e.to_string()))?;
        self.affect.validate().map_err(|e| invalid("affect", e.to_string()))?;
        self.sampling.validate().map_err(|e| invalid("sampling", e.to_string()))?;
        self.poem.validate().map_err(|e| invalid("poem", e.to_string()))?;
        self.source.validate().map_err(|e| invalid("source", e.to_string()))?;
        if self.heartbeat_ms == 0 {
            return Err(invalid("heartbeat_ms", "must be positive".into()));
        }
        Ok(())
    }

    pub fn load_lexicon(&self) -> Result<Lexicon, assets::AssetError> {
        match &self.lexicon {
            Some(path) => assets::load_lexicon(path),
            None => Ok(Lexicon::builtin()),
        }
    }

    pub fn engine_settings(&self) -> Result<EngineSettings, assets::AssetError> {
        Ok(EngineSettings {
            timing: self.engine,
            affect: self.affect,
            sampling: self.sampling,
            poem: self.poem.clone(),
            lexicon: self.load_lexicon()?,
        })
    }
}
