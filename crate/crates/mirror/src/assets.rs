//! Loading model and data files from disk.

use std::path::{Path, PathBuf};

use mirror_core::affect::{AffectError, Lexicon};
use mirror_core::classifier::{ClassifierError, ClassifierModel};
use mirror_core::container::{ContainerError, WeightContainer};
use mirror_core::detect::{CascadeError, CascadeModel};
use mirror_core::lm::{LmError, LmModel};
use mirror_core::tokenizer::{Tokenizer, TokenizerError};

use crate::cascade_xml;

#[derive(Debug, thiserror::Error)]
pub enum AssetError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {source}", path.display())]
    Container { path: PathBuf, source: ContainerError },
    #[error("{}: {source}", path.display())]
    Cascade { path: PathBuf, source: CascadeError },
    #[error("{}: {source}", path.display())]
    Classifier { path: PathBuf, source: ClassifierError },
    #[error("{}: {source}", path.display())]
    Lm { path: PathBuf, source: LmError },
    #[error("tokenizer: {0}")]
    Tokenizer(#[from] TokenizerError),
    #[error("{}: {source}", path.display())]
    Lexicon { path: PathBuf, source: AffectError },
    #[error("the model expects {model} tokens but the tokenizer has {tokenizer}")]
    VocabMismatch { model: usize, tokenizer: usize },
}

pub fn read(path: &Path) -> Result<Vec<u8>, AssetError> {
    std::fs::read(path).map_err(|source| AssetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_container(path: &Path) -> Result<WeightContainer, AssetError> {
    WeightContainer::from_bytes(&read(path)?).map_err(|source| AssetError::Container {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_cascade(path: &Path) -> Result<CascadeModel, AssetError> {
    cascade_xml::load_cascade(&read(path)?).map_err(|source| AssetError::Cascade {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_classifier(path: &Path) -> Result<ClassifierModel, AssetError> {
    ClassifierModel::load(&load_container(path)?).map_err(|source| AssetError::Classifier {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_lm(path: &Path) -> Result<LmModel, AssetError> {
    LmModel::load(&load_container(path)?).map_err(|source| AssetError::Lm {
        path: path.to_path_buf(),
        source,
    })
}

/// GPT-2 style `vocab.json` and `merges.txt`.
pub fn load_tokenizer(vocab: &Path, merges: &Path) -> Result<Tokenizer, AssetError> {
    Ok(Tokenizer::from_assets(&read(vocab)?, &read(merges)?)?)
}

pub fn load_lexicon(path: &Path) -> Result<Lexicon, AssetError> {
    let bytes = read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    Lexicon::parse(&text).map_err(|source| AssetError::Lexicon {
        path: path.to_path_buf(),
        source,
    })
}

/// A language model with the tokenizer it will be driven by. Without
/// tokenizer files the byte-level tokenizer is used, which only fits
/// 256-token models such as the bundled fixture.
pub fn load_lm_with_tokenizer(
    model: &Path,
    tokenizer: Option<(&Path, &Path)>,
) -> Result<(LmModel, Tokenizer), AssetError> {
    let lm = load_lm(model)?;
    let tok = match tokenizer {
        Some((vocab, merges)) => load_tokenizer(vocab, merges)?,
        None => Tokenizer::byte_level(),
    };
    if tok.vocab_size() > lm.config().vocab_size {
        return Err(AssetError::VocabMismatch {
            model: lm.config().vocab_size,
            tokenizer: tok.vocab_size(),
        });
    }
    Ok((lm, tok))
}
