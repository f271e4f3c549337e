//! Shared helpers for the integration tests.

#![allow(dead_code)]

use std::path::PathBuf;

use mirror_core::detect::FaceBox;
use mirror_core::engine::EngineEvent;
use mirror_core::poem::{poem_id, BackendKind, Poem};
use mirror_core::sampling::SamplingParams;
use mirror_core::{EmotionCategory, EmotionDistribution};
use proptest::prelude::*;

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture(name: &str) -> PathBuf {
    fixture_dir().join(name)
}

fn category() -> impl Strategy<Value = EmotionCategory> {
    (0usize..7).prop_map(|i| EmotionCategory::from_index(i).unwrap())
}

fn poem(ts: u64) -> impl Strategy<Value = Poem> {
    (category(), "[a-z]{1,10}", prop::collection::vec("[a-z ,.']{0,30}", 1..6), any::<u64>(), 0.0f64..2.0, prop::bool::ANY)
        .prop_map(move |(emotion, word, lines, seed, temperature, template)| Poem {
            id: poem_id(ts, seed),
            text: lines.join("\n"),
            emotion,
            seed_word: word,
            params: SamplingParams { temperature, rng_seed: seed, ..SamplingParams::default() },
            created_at: ts,
            backend: if template { BackendKind::Template } else { BackendKind::Transformer },
        })
}

fn event_at(ts: u64) -> impl Strategy<Value = EngineEvent> {
    let face = (0u32..400, 0u32..300, 24u32..200, 0u32..20, -5.0f64..5.0)
        .prop_map(|(x, y, s, neighbors, score)| FaceBox { x, y, w: s, h: s, neighbors, score });
    let dist = prop::array::uniform7(0.0f64..1.0)
        .prop_filter_map("all-zero weights", move |w| EmotionDistribution::from_weights(w, ts));
    prop_oneof![
        6 => (face, dist).prop_map(move |(face, distribution)| EngineEvent::FaceObserved { ts, face, distribution }),
        2 => Just(EngineEvent::FaceLost { ts }),
        2 => Just(EngineEvent::Tick { ts }),
        1 => poem(ts).prop_map(move |poem| EngineEvent::PoemReady { ts, poem }),
        1 => "[ -~]{0,20}".prop_map(move |reason| EngineEvent::PoemFailed { ts, reason }),
    ]
}

/// `n` events with non-decreasing timestamps in steps of 0 to 400 ms.
pub fn event_stream(n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<EngineEvent>> {
    prop::collection::vec(0u64..400, n).prop_flat_map(|gaps| {
        let mut ts = 0;
        let events: Vec<_> = gaps
            .into_iter()
            .map(|g| {
                ts += g;
                event_at(ts)
            })
            .collect();
        events
    })
}
