//! The session state machine.
//!
//! ```text
//! IDLE --face held engage_after_ms--> ENGAGED            RequestSeed
//! ENGAGED --stable label-----------> GENERATING          RequestPoem(sel)
//! GENERATING --PoemReady/Failed----> PRESENTING          Display(poem)
//! PRESENTING --present_for_ms or face gone past grace--> COOLDOWN   ClearDisplay
//! COOLDOWN --cooldown_ms-----------> IDLE
//! IDLE/ENGAGED --face gone past grace--> IDLE
//! ```
//!
//! Time enters only through event timestamps. One event may trigger several
//! transitions; they all happen within the same [`step`], and every action
//! carries the triggering event's timestamp.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::affect::{intensity_for, AffectError, AffectParams, AffectState, Lexicon, SeedSelection};
use crate::detect::FaceBox;
use crate::emotion::{EmotionCategory, EmotionDistribution};
use crate::poem::{generate_template, Poem, PoemConfig};
use crate::sampling::SamplingParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Phase {
    Idle,
    Engaged,
    Generating,
    Presenting,
    Cooldown,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Idle => "IDLE",
            Phase::Engaged => "ENGAGED",
            Phase::Generating => "GENERATING",
            Phase::Presenting => "PRESENTING",
            Phase::Cooldown => "COOLDOWN",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Session timings in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub engage_after_ms: u64,
    pub presence_grace_ms: u64,
    pub present_for_ms: u64,
    pub cooldown_ms: u64,
    pub generate_on_neutral: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            engage_after_ms: 1500,
            presence_grace_ms: 2000,
            present_for_ms: 30_000,
            cooldown_ms: 10_000,
            generate_on_neutral: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("invalid engine config: {field} must be positive")]
    InvalidConfig { field: &'static str },
    #[error("event at {ts} ms arrived after an event at {last} ms")]
    StaleEvent { ts: u64, last: u64 },
    #[error(transparent)]
    Affect(#[from] AffectError),
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), EngineError> {
        for (field, v) in [
            ("engage_after_ms", self.engage_after_ms),
            ("presence_grace_ms", self.presence_grace_ms),
            ("present_for_ms", self.present_for_ms),
            ("cooldown_ms", self.cooldown_ms),
        ] {
            if v == 0 {
                return Err(EngineError::InvalidConfig { field });
            }
        }
        Ok(())
    }
}

/// Everything [`step`] reads besides the state and the event.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineSettings {
    pub timing: EngineConfig,
    pub affect: AffectParams,
    /// Base parameters for requested poems; `rng_seed` is replaced per cycle.
    pub sampling: SamplingParams,
    pub poem: PoemConfig,
    pub lexicon: Lexicon,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self {
            timing: EngineConfig::default(),
            affect: AffectParams::default(),
            sampling: SamplingParams::default(),
            poem: PoemConfig::default(),
            lexicon: Lexicon::builtin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event")]
pub enum EngineEvent {
    FaceObserved {
        ts: u64,
        face: FaceBox,
        distribution: EmotionDistribution,
    },
    FaceLost {
        ts: u64,
    },
    PoemReady {
        ts: u64,
        poem: Poem,
    },
    PoemFailed {
        ts: u64,
        reason: String,
    },
    Tick {
        ts: u64,
    },
}

impl EngineEvent {
    pub fn ts(&self) -> u64 {
        match self {
            EngineEvent::FaceObserved { ts, .. }
            | EngineEvent::FaceLost { ts }
            | EngineEvent::PoemReady { ts, .. }
            | EngineEvent::PoemFailed { ts, .. }
            | EngineEvent::Tick { ts } => *ts,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EngineEvent::FaceObserved { .. } => "FaceObserved",
            EngineEvent::FaceLost { .. } => "FaceLost",
            EngineEvent::PoemReady { .. } => "PoemReady",
            EngineEvent::PoemFailed { .. } => "PoemFailed",
            EngineEvent::Tick { .. } => "Tick",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action")]
pub enum Action {
    RequestSeed { ts: u64 },
    RequestPoem { ts: u64, selection: SeedSelection },
    Display { ts: u64, poem: Poem },
    ClearDisplay { ts: u64 },
}

impl Action {
    pub fn ts(&self) -> u64 {
        match self {
            Action::RequestSeed { ts }
            | Action::RequestPoem { ts, .. }
            | Action::Display { ts, .. }
            | Action::ClearDisplay { ts } => *ts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub phase: Phase,
    pub phase_since: u64,
    pub face_present: bool,
    pub face_last_seen: u64,
    /// Start of the current presence run; survives losses shorter than the grace.
    pub face_since: Option<u64>,
    pub active_poem: Option<Poem>,
    pub session_nonce: u64,
    /// Completed or in-progress engagements.
    pub cycle: u64,
    pub affect: AffectState,
    /// Selection of the poem being generated.
    pub pending: Option<SeedSelection>,
    pub last_ts: u64,
}

pub fn init(config: &EngineConfig, nonce: u64) -> Result<SessionState, EngineError> {
    config.validate()?;
    Ok(SessionState {
        phase: Phase::Idle,
        phase_since: 0,
        face_present: false,
        face_last_seen: 0,
        face_since: None,
        active_poem: None,
        session_nonce: nonce,
        cycle: 0,
        affect: AffectState::new(),
        pending: None,
        last_ts: 0,
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-engagement generation seed from the session nonce, the cycle
/// counter and the triggering timestamp.
pub fn mix_seed(nonce: u64, cycle: u64, ts: u64) -> u64 {
    splitmix64(nonce ^ splitmix64(cycle ^ splitmix64(ts)))
}

impl SessionState {
    fn enter(&mut self, phase: Phase, ts: u64) {
        self.phase = phase;
        self.phase_since = ts;
    }

    fn reset_presence(&mut self, ts: u64) {
        self.face_since = self.face_present.then_some(ts);
        self.affect = AffectState::new();
        self.pending = None;
    }

    fn absent_past_grace(&self, ts: u64, grace: u64) -> bool {
        !self.face_present && ts.saturating_sub(self.face_last_seen) >= grace
    }
}

/// Applies one event. Pure: the same state, event and settings always give
/// the same result.
pub fn step(
    state: &SessionState,
    event: &EngineEvent,
    settings: &EngineSettings,
) -> Result<(SessionState, Vec<Action>), EngineError> {
    let ts = event.ts();
    if ts < state.last_ts {
        return Err(EngineError::StaleEvent { ts, last: state.last_ts });
    }
    let timing = &settings.timing;
    let mut s = state.clone();
    s.last_ts = ts;
    let mut actions = Vec::new();

    match event {
        EngineEvent::FaceObserved { distribution, .. } => {
            if s.face_since.is_none() || s.absent_past_grace(ts, timing.presence_grace_ms) {
                s.face_since = Some(ts);
            }
            s.face_present = true;
            s.face_last_seen = ts;
            if matches!(s.phase, Phase::Idle | Phase::Engaged) {
                let smoothed = s.affect.smooth_ema(distribution, settings.affect.alpha);
                s.affect = smoothed.stable_label(settings.affect.margin, settings.affect.dwell_ms, ts).0;
            }
        }
        EngineEvent::FaceLost { .. } => {
            s.face_present = false;
        }
        EngineEvent::PoemReady { poem, .. } => {
            if s.phase == Phase::Generating {
                present(&mut s, poem.clone(), ts, &mut actions);
            }
        }
        EngineEvent::PoemFailed { .. } => {
            if s.phase == Phase::Generating {
                if let Some(sel) = s.pending.clone() {
                    let params = SamplingParams {
                        rng_seed: sel.rng_seed,
                        ..settings.sampling
                    };
                    let poem = generate_template(&sel, &params, &settings.poem, ts);
                    present(&mut s, poem, ts, &mut actions);
                }
            }
        }
        EngineEvent::Tick { .. } => {}
    }

    loop {
        let before = s.phase;
        match s.phase {
            Phase::Idle => {
                if s.absent_past_grace(ts, timing.presence_grace_ms) {
                    if s.face_since.is_some() || s.affect != AffectState::new() {
                        s.reset_presence(ts);
                    }
                } else if let Some(since) = s.face_since {
                    if s.face_present && ts - since >= timing.engage_after_ms {
                        s.cycle += 1;
                        s.enter(Phase::Engaged, ts);
                        actions.push(Action::RequestSeed { ts });
                    }
                }
            }
            Phase::Engaged => {
                if s.absent_past_grace(ts, timing.presence_grace_ms) {
                    s.reset_presence(ts);
                    s.enter(Phase::Idle, ts);
                } else if let (Some(label), Some(ema)) = (s.affect.current_label(), s.affect.ema().copied()) {
                    if label != EmotionCategory::Neutral || timing.generate_on_neutral {
                        let rng_seed = mix_seed(s.session_nonce, s.cycle, ts);
                        let intensity = intensity_for(&ema, label, settings.affect.intensity_threshold);
                        let bucket = settings.lexicon.bucket(label, intensity);
                        if bucket.is_empty() {
                            return Err(AffectError::EmptyBucket(label, intensity).into());
                        }
                        let selection = SeedSelection {
                            label,
                            intensity,
                            word: bucket[(rng_seed % bucket.len() as u64) as usize].clone(),
                            rng_seed,
                        };
                        s.pending = Some(selection.clone());
                        s.enter(Phase::Generating, ts);
                        actions.push(Action::RequestPoem { ts, selection });
                    }
                }
            }
            Phase::Generating => {}
            Phase::Presenting => {
                let expired = ts - s.phase_since >= timing.present_for_ms;
                if expired || s.absent_past_grace(ts, timing.presence_grace_ms) {
                    s.active_poem = None;
                    s.enter(Phase::Cooldown, ts);
                    actions.push(Action::ClearDisplay { ts });
                }
            }
            Phase::Cooldown => {
                if ts - s.phase_since >= timing.cooldown_ms {
                    s.reset_presence(ts);
                    s.enter(Phase::Idle, ts);
                }
            }
        }
        if s.phase == before {
            break;
        }
    }
    Ok((s, actions))
}

fn present(s: &mut SessionState, poem: Poem, ts: u64, actions: &mut Vec<Action>) {
    s.pending = None;
    s.active_poem = Some(poem.clone());
    s.enter(Phase::Presenting, ts);
    actions.push(Action::Display { ts, poem });
}

/// Feeds `events` through [`step`] from `state`, collecting every action.
pub fn run_trace<'a>(
    mut state: SessionState,
    events: impl IntoIterator<Item = &'a EngineEvent>,
    settings: &EngineSettings,
) -> Result<(SessionState, Vec<Action>), EngineError> {
    let mut trace = Vec::new();
    for e in events {
        let (next, actions) = step(&state, e, settings)?;
        state = next;
        trace.extend(actions);
    }
    Ok((state, trace))
}
