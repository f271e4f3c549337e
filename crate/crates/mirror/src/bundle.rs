//! The files under `fixtures/`: fixture models in their on-disk formats,
//! test images, the engagement script, golden poems and a runnable config.
//!
//! Everything is derived from `mirror_core::fixtures`, so the files can be
//! regenerated at any time and a test checks that the checked-in copies
//! are current.

use std::path::Path;

use mirror_core::affect::{Intensity, Lexicon};
use mirror_core::detect::FaceBox;
use mirror_core::engine::{EngineEvent, EngineSettings};
use mirror_core::fixtures;
use mirror_core::{EmotionCategory, EmotionDistribution, Frame};
use serde_json::json;

use crate::cascade_xml;
use crate::cli;
use crate::persistence::{LogRecord, MetaRecord};
use crate::pipeline::{poem_params, Backend, PoemBackend};
use crate::pnm;
use crate::source::{Pattern, SyntheticScript, VISIT_ARRIVES_MS, VISIT_PERIOD_MS, VISIT_STAYS_MS};

/// Seeds with a golden tiny-LM poem.
pub const GOLDEN_SEEDS: [u64; 3] = [1, 2, 3];
/// Nonce recorded in the engagement script.
pub const ENGAGEMENT_NONCE: u64 = 7;
/// Engagements in the engagement script.
pub const ENGAGEMENT_CYCLES: usize = 2;
/// Spacing of events in the engagement script.
pub const ENGAGEMENT_STEP_MS: u64 = 100;

/// The emotion each scripted visit shows.
const VISIT_EMOTIONS: [EmotionCategory; ENGAGEMENT_CYCLES] = [EmotionCategory::Happiness, EmotionCategory::Sadness];

pub fn golden_file(seed: u64) -> String {
    format!("golden_tiny_lm_seed{seed}.txt")
}

/// The golden poem for `seed`: what `mirror generate --emotion happiness
/// --seed <seed> --lm tiny_lm.mrw` prints.
pub fn golden_poem(seed: u64) -> String {
    let container = fixtures::tiny_lm();
    let model = mirror_core::lm::LmModel::load(&container).expect("fixture LM loads");
    let backend = Backend::Transformer {
        model,
        tokenizer: mirror_core::tokenizer::Tokenizer::byte_level(),
    };
    let settings = EngineSettings::default();
    let selection = cli::seed_selection(&settings.lexicon, EmotionCategory::Happiness, Intensity::High, seed)
        .expect("builtin lexicon has every bucket");
    let params = poem_params(&settings, &selection);
    let poem = backend
        .generate(&selection, &params, &settings.poem, 0)
        .expect("fixture LM generates");
    format!("{}\n", poem.text)
}

/// The face box the synthetic visit pattern shows at 640x480.
pub fn visit_face() -> FaceBox {
    SyntheticScript {
        pattern: Pattern::Visit,
        width: 640,
        height: 480,
    }
    .placement()
    .face_box()
}

/// A session log of two scripted visits, one event every 100 ms: the
/// face is seen while the visit pattern shows it and lost otherwise.
/// Perception only; poem requests are answered by whoever replays it.
pub fn engagement_script() -> Vec<LogRecord> {
    let settings = EngineSettings::default();
    let mut records = vec![LogRecord::Meta(MetaRecord::SessionStarted {
        ts: 0,
        nonce: ENGAGEMENT_NONCE,
        settings: (&settings).into(),
    })];
    let end = ENGAGEMENT_CYCLES as u64 * VISIT_PERIOD_MS;
    let face = visit_face();
    for ts in (0..end).step_by(ENGAGEMENT_STEP_MS as usize) {
        let cycle = (ts / VISIT_PERIOD_MS) as usize;
        let into = ts % VISIT_PERIOD_MS;
        let event = if (VISIT_ARRIVES_MS..VISIT_ARRIVES_MS + VISIT_STAYS_MS).contains(&into) {
            // A little deterministic wobble so the smoothing has work to do.
            let mass = 0.7 + 0.1 * ((ts / ENGAGEMENT_STEP_MS) % 3) as f64;
            EngineEvent::FaceObserved {
                ts,
                face,
                distribution: EmotionDistribution::peaked(VISIT_EMOTIONS[cycle], mass, ts),
            }
        } else {
            EngineEvent::FaceLost { ts }
        };
        records.push(LogRecord::Engine(event));
    }
    records
}

fn jsonl(records: &[LogRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    for r in records {
        out.extend_from_slice(serde_json::to_string(r).expect("records serialise").as_bytes());
        out.push(b'\n');
    }
    out
}

fn gray_frame() -> Frame {
    Frame::uniform(128, 128, 128, 0).expect("valid size")
}

fn config_json() -> Vec<u8> {
    let config = json!({
        "cascade": "fixture_cascade.xml",
        "classifier": "tiny_classifier.mrw",
        "lm": "template",
        "lexicon": "lexicon.txt",
        "bind": "127.0.0.1:8080",
        "log_dir": "../var/log",
        "archive_dir": "../var/archive",
        "source": { "kind": "synthetic", "locator": "visit@640x480", "fps_cap": 15.0 },
    });
    let mut text = serde_json::to_string_pretty(&config).expect("json");
    text.push('\n');
    text.into_bytes()
}

/// Every bundled file as `(name, contents)`.
pub fn files() -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = vec![
        (
            "fixture_cascade.xml".into(),
            cascade_xml::write_cascade(&fixtures::fixture_cascade()).into_bytes(),
        ),
        ("face.pgm".into(), pnm::encode(&fixtures::canonical_face_frame(0))),
        ("gray.pgm".into(), pnm::encode(&gray_frame())),
        ("tiny_classifier.mrw".into(), fixtures::tiny_classifier(1).to_bytes()),
        ("tiny_lm.mrw".into(), fixtures::tiny_lm().to_bytes()),
        ("lexicon.txt".into(), Lexicon::builtin_text().as_bytes().to_vec()),
        ("engagement.jsonl".into(), jsonl(&engagement_script())),
        ("config.json".into(), config_json()),
    ];
    for seed in GOLDEN_SEEDS {
        out.push((golden_file(seed), golden_poem(seed).into_bytes()));
    }
    out
}

/// Writes [`files`] into `dir`.
pub fn write_all(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files() {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}
