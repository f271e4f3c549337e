//! Poem generation from a seed word, with a transformer backend and a
//! deterministic template backend.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affect::SeedSelection;
use crate::emotion::EmotionCategory;
use crate::lm::{LmError, LmModel};
use crate::sampling::{sample_next, SamplingParams};
use crate::tokenizer::{Tokenizer, TokenizerError};

pub const WORD_PLACEHOLDER: &str = "{word}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Transformer,
    Template,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Transformer => "transformer",
            BackendKind::Template => "template",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Poem {
    pub id: String,
    pub text: String,
    pub emotion: EmotionCategory,
    pub seed_word: String,
    pub params: SamplingParams,
    pub created_at: u64,
    pub backend: BackendKind,
}

impl Poem {
    pub fn line_count(&self) -> usize {
        self.text.lines().count()
    }
}

/// `p<created_at, 13 digits>-<rng_seed, 16 hex digits>`.
pub fn poem_id(created_at: u64, rng_seed: u64) -> String {
    format!("p{created_at:013}-{rng_seed:016x}")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PoemError {
    #[error("generation produced no usable text")]
    EmptyGeneration,
    #[error("prompt of {needed} tokens does not fit the {n_ctx}-token context")]
    ContextOverflow { needed: usize, n_ctx: usize },
    #[error("prompt template must contain \"{{word}}\"")]
    MissingPlaceholder,
    #[error("invalid poem settings: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Lm(LmError),
}

impl From<LmError> for PoemError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::ContextOverflow { needed, n_ctx } => PoemError::ContextOverflow { needed, n_ctx },
            other => PoemError::Lm(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoemConfig {
    pub prompt_template: String,
    pub min_lines: usize,
    pub max_lines: usize,
}

impl Default for PoemConfig {
    fn default() -> Self {
        Self {
            prompt_template: "A poem about {word}:\n".into(),
            min_lines: 2,
            max_lines: 6,
        }
    }
}

impl PoemConfig {
    pub fn validate(&self) -> Result<(), PoemError> {
        if !self.prompt_template.contains(WORD_PLACEHOLDER) {
            return Err(PoemError::MissingPlaceholder);
        }
        if self.min_lines == 0 || self.min_lines > self.max_lines {
            return Err(PoemError::InvalidConfig("line bounds must satisfy 1 <= min_lines <= max_lines"));
        }
        Ok(())
    }

    pub fn prompt(&self, word: &str) -> String {
        self.prompt_template.replace(WORD_PLACEHOLDER, word)
    }
}

/// Trims lines, collapses whitespace and control characters to single
/// spaces and drops empty lines.
pub fn normalize_lines(raw: &str) -> Vec<String> {
    raw.lines()
        .map(|line| {
            line.split(|c: char| c.is_whitespace() || c.is_control())
                .filter(|w| !w.is_empty())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .filter(|l| !l.is_empty())
        .collect()
}

/// Fits normalised lines into `[min_lines, max_lines]`: extra lines are
/// dropped, and too few lines are re-flowed word by word into `min_lines`
/// lines of near-equal length.
pub fn shape_lines(mut lines: Vec<String>, min_lines: usize, max_lines: usize) -> Result<Vec<String>, PoemError> {
    lines.truncate(max_lines);
    if lines.len() >= min_lines {
        return Ok(lines);
    }
    let words: Vec<String> = lines.iter().flat_map(|l| l.split(' ')).map(String::from).collect();
    if words.len() < min_lines {
        return Err(PoemError::EmptyGeneration);
    }
    let mut out = Vec::with_capacity(min_lines);
    let mut start = 0;
    for i in 0..min_lines {
        let end = words.len() * (i + 1) / min_lines;
        out.push(words[start..end].join(" "));
        start = end;
    }
    Ok(out)
}

/// Completed non-empty lines in `text` (the trailing partial line excluded).
fn finished_lines(text: &str) -> usize {
    let mut parts: Vec<&str> = text.split('\n').collect();
    parts.pop();
    parts.iter().filter(|l| !l.trim().is_empty()).count()
}

/// Autoregressive sampling after the prompt until `max_tokens`, the
/// end-of-text token, `max_lines` finished lines or a full context.
/// Returns the raw continuation with the prompt stripped.
pub fn sample_continuation(
    model: &LmModel,
    tokenizer: &Tokenizer,
    prompt: &str,
    params: &SamplingParams,
    max_lines: usize,
) -> Result<String, PoemError> {
    let prompt_ids = tokenizer.encode(prompt)?;
    let prompt_ids = if prompt_ids.is_empty() {
        match tokenizer.end_of_text() {
            Some(eot) => alloc::vec![eot],
            None => return Err(PoemError::EmptyGeneration),
        }
    } else {
        prompt_ids
    };
    let n_ctx = model.config().n_ctx;
    let mut cache = model.new_cache();
    let mut logits = model.forward(&prompt_ids, &mut cache)?;
    let vocab = model.config().vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut generated = Vec::new();
    for _ in 0..params.max_tokens {
        let rows = logits.shape()[0];
        let last = &logits.data()[(rows - 1) * vocab..rows * vocab];
        let next = sample_next(last, params, &mut rng);
        if Some(next) == tokenizer.end_of_text() {
            break;
        }
        generated.push(next);
        if finished_lines(&tokenizer.decode(&generated)?) >= max_lines || cache.len() >= n_ctx {
            break;
        }
        logits = model.forward(&[next], &mut cache)?;
    }
    Ok(tokenizer.decode(&generated)?)
}

pub fn generate_transformer(
    model: &LmModel,
    tokenizer: &Tokenizer,
    sel: &SeedSelection,
    params: &SamplingParams,
    config: &PoemConfig,
    created_at: u64,
) -> Result<Poem, PoemError> {
    config.validate()?;
    let raw = sample_continuation(model, tokenizer, &config.prompt(&sel.word), params, config.max_lines)?;
    let lines = shape_lines(normalize_lines(&raw), config.min_lines, config.max_lines)?;
    Ok(Poem {
        id: poem_id(created_at, params.rng_seed),
        text: lines.join("\n"),
        emotion: sel.label,
        seed_word: sel.word.clone(),
        params: *params,
        created_at,
        backend: BackendKind::Transformer,
    })
}

const OPENERS: [&str; 8] = [
    "{word} rises where the glass remembers you",
    "I hold your {word} in a silver frame",
    "There is {word} behind the face you bring",
    "The mirror learns your {word} by heart",
    "Tonight the glass is written in {word}",
    "{word}, and the room grows quiet around it",
    "You arrive carrying {word} like a lantern",
    "Somewhere in the reflection, {word} waits",
];

const MIDDLES: [&str; 12] = [
    "a small weather moves across your brow",
    "the light leans closer to listen",
    "every line of you is a sentence half spoken",
    "the silence keeps its own slow time",
    "your eyes hold rooms I cannot enter",
    "a tide turns somewhere under the skin",
    "the hours fold like paper in a drawer",
    "there is a name for this, and it is yours",
    "the glass does not flinch, it only keeps",
    "a breath, a pause, a door left open",
    "the city hums a little out of tune",
    "what you feel is older than your face",
];

const CLOSERS: [&str; 6] = [
    "stay a moment, and let it be named",
    "and the mirror gives it back to you",
    "carry it gently when you turn away",
    "this poem is the shape it leaves",
    "look again: it has already changed",
    "and you are more than what the glass can hold",
];

/// Slot-filled poem drawn from a fixed line bank with `params.rng_seed`:
/// an opener containing the word, two distinct middle lines and a closer,
/// trimmed to `max_lines`.
pub fn generate_template(sel: &SeedSelection, params: &SamplingParams, config: &PoemConfig, created_at: u64) -> Poem {
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let opener = OPENERS[rng.random_range(0..OPENERS.len())].replace(WORD_PLACEHOLDER, &sel.word);
    let first = rng.random_range(0..MIDDLES.len());
    let second = (first + rng.random_range(1..MIDDLES.len())) % MIDDLES.len();
    let closer = CLOSERS[rng.random_range(0..CLOSERS.len())];
    let mut lines = alloc::vec![capitalize(&opener), MIDDLES[first].to_string(), MIDDLES[second].to_string()];
    lines.truncate(config.max_lines.max(2) - 1);
    lines.push(closer.to_string());
    Poem {
        id: poem_id(created_at, params.rng_seed),
        text: lines.join("\n"),
        emotion: sel.label,
        seed_word: sel.word.clone(),
        params: *params,
        created_at,
        backend: BackendKind::Template,
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Either generator behind one call.
#[derive(Debug, Clone, Copy)]
pub enum Generator<'a> {
    Transformer { model: &'a LmModel, tokenizer: &'a Tokenizer },
    Template,
}

impl Generator<'_> {
    pub fn kind(&self) -> BackendKind {
        match self {
            Generator::Transformer { .. } => BackendKind::Transformer,
            Generator::Template => BackendKind::Template,
        }
    }

    /// Generates a poem; an empty transformer generation falls back to the
    /// template backend.
    pub fn generate(
        &self,
        sel: &SeedSelection,
        params: &SamplingParams,
        config: &PoemConfig,
        created_at: u64,
    ) -> Result<Poem, PoemError> {
        match self {
            Generator::Template => Ok(generate_template(sel, params, config, created_at)),
            Generator::Transformer { model, tokenizer } => {
                match generate_transformer(model, tokenizer, sel, params, config, created_at) {
                    Err(PoemError::EmptyGeneration) => Ok(generate_template(sel, params, config, created_at)),
                    other => other,
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affect::Intensity;
    use crate::fixtures;
    use alloc::vec;

    fn sel(word: &str) -> SeedSelection {
        SeedSelection {
            label: EmotionCategory::Happiness,
            intensity: Intensity::High,
            word: word.into(),
            rng_seed: 7,
        }
    }

    #[test]
    fn template_is_deterministic_and_contains_word() {
        let params = SamplingParams { rng_seed: 7, ..Default::default() };
        let cfg = PoemConfig::default();
        let a = generate_template(&sel("joy"), &params, &cfg, 1000);
        let b = generate_template(&sel("joy"), &params, &cfg, 1000);
        assert_eq!(a, b);
        assert!(a.text.to_lowercase().contains("joy"));
        assert_eq!(a.line_count(), 4);
        assert_eq!(a.backend, BackendKind::Template);
        assert_eq!(a.id, "p0000000001000-0000000000000007");
        let short = generate_template(&sel("joy"), &params, &PoemConfig { max_lines: 2, ..cfg }, 0);
        assert_eq!(short.line_count(), 2);
        assert!(short.text.to_lowercase().contains("joy"));
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_lines("  a  b \n\n\t c\u{7}d \n"), vec!["a b", "c d"]);
        assert_eq!(normalize_lines(" \n "), Vec::<String>::new());
    }

    #[test]
    fn reflow() {
        let one = vec!["the quiet glass".to_string()];
        assert_eq!(shape_lines(one, 2, 6).unwrap(), vec!["the", "quiet glass"]);
        assert_eq!(shape_lines(vec!["alone".into()], 2, 6), Err(PoemError::EmptyGeneration));
        let many: Vec<String> = (0..9).map(|i| format!("l{i}")).collect();
        assert_eq!(shape_lines(many, 2, 6).unwrap().len(), 6);
    }

    #[test]
    fn placeholder_required() {
        let cfg = PoemConfig { prompt_template: "no slot".into(), ..Default::default() };
        assert_eq!(cfg.validate(), Err(PoemError::MissingPlaceholder));
        assert_eq!(PoemConfig::default().prompt("joy"), "A poem about joy:\n");
    }

    #[test]
    fn tiny_lm_is_deterministic() {
        let model = LmModel::load(&fixtures::tiny_lm()).unwrap();
        let tok = Tokenizer::byte_level();
        let g = Generator::Transformer { model: &model, tokenizer: &tok };
        let params = SamplingParams { rng_seed: 1, ..Default::default() };
        let a = g.generate(&sel("joy"), &params, &PoemConfig::default(), 5).unwrap();
        let b = g.generate(&sel("joy"), &params, &PoemConfig::default(), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.backend, BackendKind::Transformer);
        assert!((2..=6).contains(&a.line_count()), "{:?}", a.text);
        let c = g
            .generate(&sel("joy"), &SamplingParams { rng_seed: 2, ..params }, &PoemConfig::default(), 5)
            .unwrap();
        assert_ne!(a.text, c.text);
    }

    #[test]
    fn prompt_too_long() {
        let model = LmModel::load(&fixtures::tiny_lm()).unwrap();
        let tok = Tokenizer::byte_level();
        let long = "x".repeat(200);
        let err = generate_transformer(&model, &tok, &sel(&long), &SamplingParams::default(), &PoemConfig::default(), 0);
        assert!(matches!(err, Err(PoemError::ContextOverflow { .. })));
    }
}
