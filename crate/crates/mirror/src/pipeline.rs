//! Frame-to-event perception, poem backends and the session driver.

use std::sync::Arc;
use std::time::{Duration, Instant};

use mirror_core::affect::SeedSelection;
use mirror_core::classifier::{preprocess_face, ClassifierError, ClassifierModel};
use mirror_core::detect::{detect_multiscale, largest_face, CascadeModel, DetectParams};
use mirror_core::engine::{self, Action, EngineError, EngineEvent, EngineSettings, SessionState};
use mirror_core::lm::LmModel;
use mirror_core::poem::{BackendKind, Generator, Poem, PoemConfig, PoemError};
use mirror_core::sampling::SamplingParams;
use mirror_core::tokenizer::Tokenizer;
use mirror_core::Frame;

use crate::persistence::{LogRecord, MetaRecord, PersistError, PoemArchive, SessionLog};

/// Detection followed by classification of the largest face.
#[derive(Debug, Clone)]
pub struct Perception {
    cascade: CascadeModel,
    classifier: ClassifierModel,
    params: DetectParams,
}

/// Wall-clock cost of one [`Perception::observe_timed`] call.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub detect: Duration,
    pub classify: Duration,
}

impl Perception {
    pub fn new(cascade: CascadeModel, classifier: ClassifierModel, params: DetectParams) -> Result<Self, String> {
        params.validate(&cascade).map_err(str::to_string)?;
        Ok(Self {
            cascade,
            classifier,
            params,
        })
    }

    pub fn cascade(&self) -> &CascadeModel {
        &self.cascade
    }

    pub fn observe(&self, frame: &Frame) -> Result<EngineEvent, ClassifierError> {
        self.observe_timed(frame).map(|(e, _)| e)
    }

    /// `FaceObserved` for the largest detected face, `FaceLost` otherwise.
    /// The event carries the frame timestamp.
    pub fn observe_timed(&self, frame: &Frame) -> Result<(EngineEvent, StageTimings), ClassifierError> {
        let ts = frame.timestamp_ms();
        let gray;
        let frame = if frame.channels() == 1 {
            frame
        } else {
            gray = frame.to_grayscale().expect("three-channel frame");
            &gray
        };
        let mut timings = StageTimings::default();
        let start = Instant::now();
        let boxes = detect_multiscale(&self.cascade, frame, &self.params);
        timings.detect = start.elapsed();
        let Some(face) = largest_face(&boxes) else {
            return Ok((EngineEvent::FaceLost { ts }, timings));
        };
        let start = Instant::now();
        let input = preprocess_face(frame, &face)?;
        let distribution = self.classifier.classify(&input, ts)?;
        timings.classify = start.elapsed();
        Ok((EngineEvent::FaceObserved { ts, face, distribution }, timings))
    }
}

/// Something that turns a seed selection into a poem.
pub trait PoemBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn generate(
        &self,
        sel: &SeedSelection,
        params: &SamplingParams,
        config: &PoemConfig,
        created_at: u64,
    ) -> Result<Poem, PoemError>;
}

/// The two built-in backends.
#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Backend {
    Template,
    Transformer { model: LmModel, tokenizer: Tokenizer },
}

impl Backend {
    fn generator(&self) -> Generator<'_> {
        match self {
            Backend::Template => Generator::Template,
            Backend::Transformer { model, tokenizer } => Generator::Transformer { model, tokenizer },
        }
    }
}

impl PoemBackend for Backend {
    fn kind(&self) -> BackendKind {
        self.generator().kind()
    }

    fn generate(
        &self,
        sel: &SeedSelection,
        params: &SamplingParams,
        config: &PoemConfig,
        created_at: u64,
    ) -> Result<Poem, PoemError> {
        self.generator().generate(sel, params, config, created_at)
    }
}

/// Sampling parameters for a requested poem: the configured ones with the
/// selection's seed.
pub fn poem_params(settings: &EngineSettings, sel: &SeedSelection) -> SamplingParams {
    SamplingParams {
        rng_seed: sel.rng_seed,
        ..settings.sampling
    }
}

/// The event that answers a generation request.
pub fn generation_event(result: Result<Poem, PoemError>, ts: u64) -> EngineEvent {
    match result {
        Ok(poem) => EngineEvent::PoemReady { ts, poem },
        Err(e) => EngineEvent::PoemFailed {
            ts,
            reason: e.to_string(),
        },
    }
}

/// `event` with its timestamp replaced.
pub fn with_ts(event: EngineEvent, ts: u64) -> EngineEvent {
    match event {
        EngineEvent::FaceObserved { face, distribution, .. } => EngineEvent::FaceObserved { ts, face, distribution },
        EngineEvent::FaceLost { .. } => EngineEvent::FaceLost { ts },
        EngineEvent::PoemReady { poem, .. } => EngineEvent::PoemReady { ts, poem },
        EngineEvent::PoemFailed { reason, .. } => EngineEvent::PoemFailed { ts, reason },
        EngineEvent::Tick { .. } => EngineEvent::Tick { ts },
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// Engine state plus its log and archive. Every applied event is logged
/// after the step succeeds and every displayed poem is archived, so the
/// log replays to the same trace.
#[derive(Debug)]
pub struct Session {
    state: SessionState,
    settings: EngineSettings,
    log: Option<SessionLog>,
    archive: Option<PoemArchive>,
}

impl Session {
    pub fn new(
        settings: EngineSettings,
        nonce: u64,
        mut log: Option<SessionLog>,
        archive: Option<PoemArchive>,
    ) -> Result<Self, SessionError> {
        let state = engine::init(&settings.timing, nonce)?;
        if let Some(log) = &mut log {
            log.append(&LogRecord::Meta(MetaRecord::SessionStarted {
                ts: 0,
                nonce,
                settings: (&settings).into(),
            }))?;
        }
        Ok(Self {
            state,
            settings,
            log,
            archive,
        })
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn settings(&self) -> &EngineSettings {
        &self.settings
    }

    pub fn archive(&self) -> Option<&PoemArchive> {
        self.archive.as_ref()
    }

    pub fn apply(&mut self, event: &EngineEvent) -> Result<Vec<Action>, SessionError> {
        let (next, actions) = engine::step(&self.state, event, &self.settings)?;
        self.state = next;
        if let Some(log) = &mut self.log {
            log.append_event(event)?;
        }
        if let Some(archive) = &mut self.archive {
            for action in &actions {
                if let Action::Display { ts, poem } = action {
                    match archive.archive(poem, *ts) {
                        Err(PersistError::DuplicateId(id)) => tracing::warn!(%id, "poem already archived"),
                        other => {
                            other?;
                        }
                    }
                }
            }
        }
        Ok(actions)
    }

    /// Replaces the settings from `ts` on; the timing must be valid.
    pub fn update_settings(&mut self, settings: EngineSettings, ts: u64) -> Result<(), SessionError> {
        settings.timing.validate()?;
        if let Some(log) = &mut self.log {
            log.append(&LogRecord::Meta(MetaRecord::SettingsChanged {
                ts: ts.max(self.state.last_ts),
                settings: (&settings).into(),
            }))?;
        }
        self.settings = settings;
        Ok(())
    }

    /// Applies `event` and answers any poem request on the spot with a
    /// `PoemReady` (or `PoemFailed`) at the same timestamp.
    pub fn drive(&mut self, event: &EngineEvent, backend: &dyn PoemBackend) -> Result<Vec<Action>, SessionError> {
        let mut trace = Vec::new();
        let mut queue = vec![event.clone()];
        while let Some(event) = queue.pop() {
            for action in self.apply(&event)? {
                if let Action::RequestPoem { ts, selection } = &action {
                    let params = poem_params(&self.settings, selection);
                    let result = backend.generate(selection, &params, &self.settings.poem, *ts);
                    queue.push(generation_event(result, *ts));
                }
                trace.push(action);
            }
        }
        Ok(trace)
    }
}

/// A shareable backend handle.
pub type SharedBackend = Arc<dyn PoemBackend>;
