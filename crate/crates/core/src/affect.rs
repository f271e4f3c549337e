//! Temporal smoothing of the classifier stream and seed-word selection.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::emotion::{argmax, EmotionCategory, EmotionDistribution, NUM_CATEGORIES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intensity {
    Low,
    High,
}

impl Intensity {
    pub const ALL: [Intensity; 2] = [Intensity::Low, Intensity::High];

    pub fn name(self) -> &'static str {
        match self {
            Intensity::Low => "low",
            Intensity::High => "high",
        }
    }
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AffectError {
    #[error("lexicon line {line}: {reason}")]
    LexiconParse { line: usize, reason: String },
    #[error("lexicon bucket {0}:{1} is missing or empty")]
    EmptyBucket(EmotionCategory, Intensity),
    #[error("invalid affect parameter: {0}")]
    InvalidParams(&'static str),
}

/// Tunable smoothing and hysteresis parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AffectParams {
    /// EMA weight of each new classified frame.
    pub alpha: f64,
    /// Lead the candidate needs over the current label.
    pub margin: f64,
    /// How long the lead must hold before the label switches.
    pub dwell_ms: u64,
    /// `ema[label]` at or above this selects the high-intensity bucket.
    pub intensity_threshold: f64,
}

impl Default for AffectParams {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            margin: 0.15,
            dwell_ms: 1200,
            intensity_threshold: 0.6,
        }
    }
}

impl AffectParams {
    pub fn validate(&self) -> Result<(), AffectError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AffectError::InvalidParams("alpha must lie in [0, 1]"));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(AffectError::InvalidParams("margin must be a non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.intensity_threshold) {
            return Err(AffectError::InvalidParams("intensity_threshold must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Smoothed affect of the current viewer. Transitions are pure: every
/// operation consumes a state and returns the next one.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AffectState {
    ema: Option<[f64; NUM_CATEGORIES]>,
    current_label: Option<EmotionCategory>,
    label_since: u64,
    last_update: u64,
    /// Candidate currently leading by at least the margin, and since when.
    pending: Option<(EmotionCategory, u64)>,
}

impl AffectState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ema(&self) -> Option<&[f64; NUM_CATEGORIES]> {
        self.ema.as_ref()
    }

    pub fn current_label(&self) -> Option<EmotionCategory> {
        self.current_label
    }

    pub fn label_since(&self) -> u64 {
        self.label_since
    }

    pub fn last_update(&self) -> u64 {
        self.last_update
    }

    /// `ema' = alpha * dist + (1 - alpha) * ema`; the first observation
    /// initialises `ema` to `dist`.
    pub fn smooth_ema(self, dist: &EmotionDistribution, alpha: f64) -> Self {
        let ema = match self.ema {
            None => dist.probs,
            Some(old) => {
                let mut next = [0.0; NUM_CATEGORIES];
                for i in 0..NUM_CATEGORIES {
                    next[i] = alpha * dist.probs[i] + (1.0 - alpha) * old[i];
                }
                next
            }
        };
        Self {
            ema: Some(ema),
            last_update: self.last_update.max(dist.source_timestamp),
            ..self
        }
    }

    /// Hysteresis on the EMA argmax.
    ///
    /// The candidate (argmax, lowest index on ties) replaces the current
    /// label once it has led it by at least `margin` at every observation
    /// over `dwell_ms`. With no label yet, the same candidate must stay on
    /// top for `dwell_ms`.
    pub fn stable_label(self, margin: f64, dwell_ms: u64, now: u64) -> (Self, Option<EmotionCategory>) {
        let Some(ema) = self.ema else {
            return (self, self.current_label);
        };
        let candidate = argmax(&ema);
        let leads = match self.current_label {
            Some(current) if current == candidate => false,
            Some(current) => ema[candidate.index()] - ema[current.index()] >= margin,
            None => true,
        };
        if !leads {
            let next = Self { pending: None, ..self };
            return (next, next.current_label);
        }
        let since = match self.pending {
            Some((c, since)) if c == candidate => since,
            _ => now,
        };
        if now.saturating_sub(since) >= dwell_ms {
            let next = Self {
                current_label: Some(candidate),
                label_since: now,
                pending: None,
                ..self
            };
            (next, Some(candidate))
        } else {
            let next = Self {
                pending: Some((candidate, since)),
                ..self
            };
            (next, next.current_label)
        }
    }

    /// Applies one classified frame: smooth, then update the stable label.
    pub fn observe(self, dist: &EmotionDistribution, params: &AffectParams) -> (Self, Option<EmotionCategory>) {
        let next = self.smooth_ema(dist, params.alpha);
        let now = next.last_update;
        next.stable_label(params.margin, params.dwell_ms, now)
    }
}

/// Seed vocabulary: one non-empty word list per (category, intensity).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    buckets: Vec<Vec<String>>,
}

const BUILTIN_LEXICON: &str = include_str!("../data/lexicon.txt");

fn bucket_index(category: EmotionCategory, intensity: Intensity) -> usize {
    category.index() * 2 + intensity as usize
}

impl Lexicon {
    /// Parses `<category>:<intensity>:<word>,<word>,...` lines. Blank lines
    /// and lines starting with `#` are ignored. Every bucket must appear
    /// exactly once with at least one word.
    pub fn parse(text: &str) -> Result<Self, AffectError> {
        let mut buckets: Vec<Option<Vec<String>>> = (0..NUM_CATEGORIES * 2).map(|_| None).collect();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| AffectError::LexiconParse {
                line: line_no,
                reason: reason.to_string(),
            };
            let mut parts = line.splitn(3, ':');
            let (Some(cat), Some(int), Some(words)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err("expected <category>:<intensity>:<words>"));
            };
            let category: EmotionCategory = cat.trim().parse().map_err(|_| err("unknown category"))?;
            let intensity = match int.trim().to_ascii_lowercase().as_str() {
                "low" => Intensity::Low,
                "high" => Intensity::High,
                _ => return Err(err("intensity must be low or high")),
            };
            let words: Vec<String> = words
                .split(',')
                .map(str::trim)
                .filter(|w| !w.is_empty())
                .map(String::from)
                .collect();
            if words.is_empty() {
                return Err(AffectError::EmptyBucket(category, intensity));
            }
            let slot = &mut buckets[bucket_index(category, intensity)];
            if slot.is_some() {
                return Err(err("bucket listed twice"));
            }
            *slot = Some(words);
        }
        let mut out = Vec::with_capacity(buckets.len());
        for (idx, b) in buckets.into_iter().enumerate() {
            match b {
                Some(words) => out.push(words),
                None => {
                    return Err(AffectError::EmptyBucket(
                        EmotionCategory::ALL[idx / 2],
                        Intensity::ALL[idx % 2],
                    ))
                }
            }
        }
        Ok(Self { buckets: out })
    }

    /// The lexicon bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn builtin_text() -> &'static str {
        BUILTIN_LEXICON
    }

    pub fn bucket(&self, category: EmotionCategory, intensity: Intensity) -> &[String] {
        &self.buckets[bucket_index(category, intensity)]
    }
}

/// Affect-mapper output and language-model conditioning input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSelection {
    pub label: EmotionCategory,
    pub intensity: Intensity,
    pub word: String,
    pub rng_seed: u64,
}

pub fn intensity_for(ema: &[f64; NUM_CATEGORIES], label: EmotionCategory, threshold: f64) -> Intensity {
    if ema[label.index()] >= threshold {
        Intensity::High
    } else {
        Intensity::Low
    }
}

/// Picks `bucket[rng_seed mod len]` from the bucket selected by the label and
/// its smoothed probability.
pub fn pick_seed_word(
    lexicon: &Lexicon,
    label: EmotionCategory,
    ema: &[f64; NUM_CATEGORIES],
    rng_seed: u64,
    intensity_threshold: f64,
) -> Result<SeedSelection, AffectError> {
    let intensity = intensity_for(ema, label, intensity_threshold);
    let bucket = lexicon.bucket(label, intensity);
    if bucket.is_empty() {
        return Err(AffectError::EmptyBucket(label, intensity));
    }
    let word = bucket[(rng_seed % bucket.len() as u64) as usize].clone();
    Ok(SeedSelection {
        label,
        intensity,
        word,
        rng_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use EmotionCategory::*;

    fn dist(probs: [f64; 7], ts: u64) -> EmotionDistribution {
        EmotionDistribution {
            probs,
            source_timestamp: ts,
        }
    }

    #[test]
    fn ema_examples() {
        let one = dist([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0);
        let two = dist([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 1);
        let s = AffectState::new().smooth_ema(&one, 0.3);
        assert_eq!(s.ema(), Some(&one.probs));
        assert_eq!(s.smooth_ema(&two, 0.5).ema().unwrap()[..2], [0.5, 0.5]);
        assert_eq!(s.smooth_ema(&two, 1.0).ema(), Some(&two.probs));
        assert_eq!(s.smooth_ema(&two, 0.0).ema(), Some(&one.probs));
    }

    #[test]
    fn dominant_label_after_dwell() {
        let d = EmotionDistribution::peaked(Anger, 0.9, 0);
        let mut s = AffectState::new().smooth_ema(&d, 0.3);
        let (next, label) = s.stable_label(0.15, 1200, 0);
        assert_eq!(label, None);
        s = next;
        let (_, label) = s.stable_label(0.15, 1200, 1199);
        assert_eq!(label, None);
        let (_, label) = s.stable_label(0.15, 1200, 1200);
        assert_eq!(label, Some(Anger));
    }

    #[test]
    fn half_margin_keeps_current() {
        let mut s = AffectState::new().smooth_ema(&EmotionDistribution::peaked(Fear, 0.9, 0), 1.0);
        s = s.stable_label(0.15, 0, 0).0;
        assert_eq!(s.current_label(), Some(Fear));
        let mut probs = [0.0; 7];
        probs[Fear.index()] = 0.45;
        probs[Sadness.index()] = 0.525;
        probs[Neutral.index()] = 0.025;
        s = s.smooth_ema(&dist(probs, 10), 1.0);
        for t in [10, 5000, 100_000] {
            assert_eq!(s.stable_label(0.15, 1200, t).1, Some(Fear));
        }
    }

    #[test]
    fn tie_prefers_lower_index() {
        let mut probs = [0.0; 7];
        probs[2] = 0.5;
        probs[3] = 0.5;
        let s = AffectState::new().smooth_ema(&dist(probs, 0), 1.0);
        assert_eq!(s.stable_label(0.0, 0, 0).1, Some(Fear));
    }

    #[test]
    fn lead_must_be_continuous() {
        let mut s = AffectState::new().smooth_ema(&EmotionDistribution::peaked(Happiness, 0.9, 0), 1.0);
        s = s.stable_label(0.15, 0, 0).0;
        let sad = EmotionDistribution::peaked(Sadness, 0.9, 100);
        let happy = EmotionDistribution::peaked(Happiness, 0.9, 700);
        s = s.smooth_ema(&sad, 1.0).stable_label(0.15, 1000, 100).0;
        s = s.smooth_ema(&happy, 1.0).stable_label(0.15, 1000, 700).0;
        let (s, label) = s.smooth_ema(&sad, 1.0).stable_label(0.15, 1000, 1100);
        assert_eq!(label, Some(Happiness));
        assert_eq!(s.stable_label(0.15, 1000, 2100).1, Some(Sadness));
    }

    #[test]
    fn builtin_lexicon_has_all_buckets() {
        let lex = Lexicon::builtin();
        for c in EmotionCategory::ALL {
            for i in Intensity::ALL {
                assert!(lex.bucket(c, i).len() >= 4, "{c}:{i}");
            }
        }
    }

    #[test]
    fn seed_word_lookup() {
        let lex = Lexicon::builtin();
        let mut ema = [0.0; 7];
        ema[Happiness.index()] = 0.95;
        let high = pick_seed_word(&lex, Happiness, &ema, 0, 0.6).unwrap();
        assert_eq!(high.intensity, Intensity::High);
        assert_eq!(high.word, lex.bucket(Happiness, Intensity::High)[0]);
        ema[Happiness.index()] = 0.4;
        let low = pick_seed_word(&lex, Happiness, &ema, 0, 0.6).unwrap();
        assert_eq!(low.word, lex.bucket(Happiness, Intensity::Low)[0]);
        assert_eq!(low, pick_seed_word(&lex, Happiness, &ema, 0, 0.6).unwrap());
        let n = lex.bucket(Happiness, Intensity::Low).len() as u64;
        assert_eq!(pick_seed_word(&lex, Happiness, &ema, n + 1, 0.6).unwrap().word, lex.bucket(Happiness, Intensity::Low)[1]);
    }

    #[test]
    fn lexicon_errors() {
        let full = Lexicon::builtin_text();
        let missing: String = full.lines().filter(|l| !l.starts_with("fear:high")).collect::<Vec<_>>().join("\n");
        assert_eq!(Lexicon::parse(&missing), Err(AffectError::EmptyBucket(Fear, Intensity::High)));
        let empty = full.replace("fear:high:terror,dread,panic,abyss,horror", "fear:high: , ");
        assert_eq!(Lexicon::parse(&empty), Err(AffectError::EmptyBucket(Fear, Intensity::High)));
        assert!(matches!(Lexicon::parse("joy:low:a"), Err(AffectError::LexiconParse { line: 1, .. })));
        assert!(matches!(Lexicon::parse("anger:medium:a"), Err(AffectError::LexiconParse { .. })));
        let twice = alloc::format!("{full}\nanger:low:x");
        assert!(matches!(Lexicon::parse(&twice), Err(AffectError::LexiconParse { .. })));
    }
}
