use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// The seven expression categories, in the canonical index order used by
/// every probability vector in the system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionCategory {
    Anger = 0,
    Disgust = 1,
    Fear = 2,
    Happiness = 3,
    Sadness = 4,
    Surprise = 5,
    Neutral = 6,
}

pub const NUM_CATEGORIES: usize = 7;

impl EmotionCategory {
    pub const ALL: [EmotionCategory; NUM_CATEGORIES] = [
        EmotionCategory::Anger,
        EmotionCategory::Disgust,
        EmotionCategory::Fear,
        EmotionCategory::Happiness,
        EmotionCategory::Sadness,
        EmotionCategory::Surprise,
        EmotionCategory::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionCategory::Anger => "anger",
            EmotionCategory::Disgust => "disgust",
            EmotionCategory::Fear => "fear",
            EmotionCategory::Happiness => "happiness",
            EmotionCategory::Sadness => "sadness",
            EmotionCategory::Surprise => "surprise",
            EmotionCategory::Neutral => "neutral",
        }
    }

    /// Comma-joined canonical order, as stored in classifier metadata.
    pub fn canonical_order() -> &'static str {
        "anger,disgust,fear,happiness,sadness,surprise,neutral"
    }
}

impl fmt::Display for EmotionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown emotion category {0:?}")]
pub struct UnknownCategory(pub alloc::string::String);

impl FromStr for EmotionCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownCategory(s.into()))
    }
}

/// Lowest-index argmax, the tie-break used throughout.
pub fn argmax(v: &[f64; NUM_CATEGORIES]) -> EmotionCategory {
    let mut best = 0;
    for i in 1..NUM_CATEGORIES {
        if v[i] > v[best] {
            best = i;
        }
    }
    EmotionCategory::ALL[best]
}

/// Probability vector over the seven categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionDistribution {
    pub probs: [f64; NUM_CATEGORIES],
    pub source_timestamp: u64,
}

impl EmotionDistribution {
    /// Normalises non-negative weights onto the simplex.
    ///
    /// Returns `None` when any weight is negative or non-finite, or all are zero.
    pub fn from_weights(weights: [f64; NUM_CATEGORIES], source_timestamp: u64) -> Option<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return None;
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return None;
        }
        let mut probs = weights;
        probs.iter_mut().for_each(|p| *p /= total);
        Some(Self {
            probs,
            source_timestamp,
        })
    }

    pub fn uniform(source_timestamp: u64) -> Self {
        Self {
            probs: [1.0 / NUM_CATEGORIES as f64; NUM_CATEGORIES],
            source_timestamp,
        }
    }

    /// Distribution with `mass` on one category and the rest spread evenly.
    pub fn peaked(category: EmotionCategory, mass: f64, source_timestamp: u64) -> Self {
        let rest = (1.0 - mass) / (NUM_CATEGORIES - 1) as f64;
        let mut probs = [rest; NUM_CATEGORIES];
        probs[category.index()] = mass;
        Self {
            probs,
            source_timestamp,
        }
    }

    pub fn top(&self) -> EmotionCategory {
        argmax(&self.probs)
    }

    pub fn is_valid(&self) -> bool {
        self.probs.iter().all(|p| (0.0..=1.0).contains(p))
            && (self.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }
}
