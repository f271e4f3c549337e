//! Frame sources: image directories, concatenated-PGM video files, a
//! synthetic generator and the (unsupported) live camera.
//!
//! Every source stamps frame `k` with `k * period` milliseconds, where the
//! period is `ceil(1000 / fps_cap)`. With [`Pacing::RealTime`] the source
//! also sleeps until that instant has passed since it was opened, so frames
//! are never delivered faster than the cap. [`Pacing::Virtual`] skips the
//! sleep; timestamps are identical either way.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use mirror_core::fixtures::{paint_face, FacePlacement, FACE_BACKGROUND};
use mirror_core::Frame;
use serde::{Deserialize, Serialize};

use crate::pnm::{self, PnmError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceKind {
    Camera,
    VideoFile,
    ImageDir,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSpec {
    pub kind: SourceKind,
    /// Device index for cameras, a path for file kinds and a pattern for
    /// the synthetic generator (see [`SyntheticScript`]).
    #[serde(default)]
    pub locator: String,
    #[serde(default = "default_fps")]
    pub fps_cap: f64,
}

fn default_fps() -> f64 {
    15.0
}

impl SourceSpec {
    pub fn synthetic(locator: &str, fps_cap: f64) -> Self {
        Self {
            kind: SourceKind::Synthetic,
            locator: locator.into(),
            fps_cap,
        }
    }

    pub fn validate(&self) -> Result<(), SourceError> {
        if !(self.fps_cap > 0.0 && self.fps_cap.is_finite()) {
            return Err(SourceError::InvalidSpec("fps_cap must be a positive number".into()));
        }
        if matches!(self.kind, SourceKind::VideoFile | SourceKind::ImageDir) && self.locator.trim().is_empty() {
            return Err(SourceError::InvalidSpec("file sources need a path".into()));
        }
        Ok(())
    }

    /// Milliseconds between consecutive frames.
    pub fn period_ms(&self) -> u64 {
        (1000.0 / self.fps_cap).ceil().max(1.0) as u64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SourceError {
    #[error("invalid source spec: {0}")]
    InvalidSpec(String),
    #[error("source unavailable: {locator}: {reason}")]
    SourceUnavailable { locator: String, reason: String },
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("source is closed")]
    SourceClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pacing {
    #[default]
    RealTime,
    Virtual,
}

/// A stream of frames owned by one producer.
pub trait FrameSource: Send {
    /// The next frame, or `None` at end of stream.
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError>;
    fn close(&mut self);
}

pub fn open_source(spec: &SourceSpec, pacing: Pacing) -> Result<Box<dyn FrameSource>, SourceError> {
    spec.validate()?;
    let clock = Clock::new(spec.period_ms(), pacing);
    Ok(match spec.kind {
        SourceKind::Synthetic => Box::new(SyntheticSource {
            script: spec.locator.parse()?,
            clock,
        }),
        SourceKind::ImageDir => Box::new(ImageDirSource::open(Path::new(&spec.locator), clock)?),
        SourceKind::VideoFile => Box::new(VideoFileSource::open(Path::new(&spec.locator), clock)?),
        SourceKind::Camera => return Err(open_camera(&spec.locator)),
    })
}

fn open_camera(locator: &str) -> SourceError {
    let index = if locator.is_empty() { "0" } else { locator };
    let device = PathBuf::from(format!("/dev/video{index}"));
    if device.exists() {
        SourceError::UnsupportedFormat(format!("{} exists but live capture is not built in", device.display()))
    } else {
        SourceError::SourceUnavailable {
            locator: device.display().to_string(),
            reason: "no such capture device".into(),
        }
    }
}

/// Frame counter and pacing shared by all source kinds.
#[derive(Debug)]
struct Clock {
    period_ms: u64,
    pacing: Pacing,
    opened: Instant,
    next_index: u64,
    closed: bool,
}

impl Clock {
    fn new(period_ms: u64, pacing: Pacing) -> Self {
        Self {
            period_ms,
            pacing,
            opened: Instant::now(),
            next_index: 0,
            closed: false,
        }
    }

    /// Timestamp for the next frame, waiting for it in real time.
    fn tick(&mut self) -> Result<u64, SourceError> {
        if self.closed {
            return Err(SourceError::SourceClosed);
        }
        let ts = self.next_index * self.period_ms;
        if self.pacing == Pacing::RealTime {
            let due = self.opened + Duration::from_millis(ts);
            let now = Instant::now();
            if due > now {
                std::thread::sleep(due - now);
            }
        }
        self.next_index += 1;
        Ok(ts)
    }
}

/// What the synthetic generator draws, from a locator of the form
/// `<pattern>[@<width>x<height>]`:
///
/// * `gray`: a uniform mid-gray frame.
/// * `face`: the dark-square face fixture, always present.
/// * `visit` (the default): a viewer who arrives at 1 s, stays 40 s and
///   comes back every 60 s.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticScript {
    pub pattern: Pattern,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Gray,
    Face,
    Visit,
}

pub const VISIT_ARRIVES_MS: u64 = 1_000;
pub const VISIT_STAYS_MS: u64 = 40_000;
pub const VISIT_PERIOD_MS: u64 = 60_000;

impl Default for SyntheticScript {
    fn default() -> Self {
        Self {
            pattern: Pattern::Visit,
            width: 640,
            height: 480,
        }
    }
}

impl FromStr for SyntheticScript {
    type Err = SourceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SourceError::InvalidSpec(format!("unknown synthetic pattern {s:?}"));
        let (name, dims) = match s.split_once('@') {
            Some((n, d)) => (n, Some(d)),
            None => (s, None),
        };
        let pattern = match name {
            "" | "visit" => Pattern::Visit,
            "face" => Pattern::Face,
            "gray" => Pattern::Gray,
            _ => return Err(bad()),
        };
        let mut script = SyntheticScript { pattern, ..Default::default() };
        if let Some(d) = dims {
            let (w, h) = d.split_once('x').ok_or_else(bad)?;
            script.width = w.parse().map_err(|_| bad())?;
            script.height = h.parse().map_err(|_| bad())?;
            if script.width < 24 || script.height < 24 {
                return Err(SourceError::InvalidSpec("synthetic frames must be at least 24x24".into()));
            }
        }
        Ok(script)
    }
}

impl fmt::Display for SyntheticScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.pattern {
            Pattern::Gray => "gray",
            Pattern::Face => "face",
            Pattern::Visit => "visit",
        };
        write!(f, "{name}@{}x{}", self.width, self.height)
    }
}

impl SyntheticScript {
    /// Where the face sits when one is drawn: centred, with a side of 3/8
    /// of the shorter frame edge.
    pub fn placement(&self) -> FacePlacement {
        let size = self.width.min(self.height) * 3 / 8;
        FacePlacement {
            x: (self.width - size) / 2,
            y: (self.height - size) / 2,
            size,
        }
    }

    pub fn face_visible(&self, ts: u64) -> bool {
        match self.pattern {
            Pattern::Gray => false,
            Pattern::Face => true,
            Pattern::Visit => {
                let t = ts % VISIT_PERIOD_MS;
                (VISIT_ARRIVES_MS..VISIT_ARRIVES_MS + VISIT_STAYS_MS).contains(&t)
            }
        }
    }

    pub fn render(&self, ts: u64) -> Frame {
        let (background, face) = match self.pattern {
            Pattern::Gray => (128, false),
            _ => (FACE_BACKGROUND, self.face_visible(ts)),
        };
        let mut pixels = vec![background; self.width as usize * self.height as usize];
        if face {
            paint_face(&mut pixels, self.width, self.placement());
        }
        Frame::new(pixels, self.width, self.height, 1, ts).expect("script dimensions are validated")
    }
}

pub struct SyntheticSource {
    script: SyntheticScript,
    clock: Clock,
}

impl SyntheticSource {
    pub fn new(script: SyntheticScript, fps_cap: f64, pacing: Pacing) -> Self {
        let spec = SourceSpec::synthetic("", fps_cap);
        Self {
            script,
            clock: Clock::new(spec.period_ms(), pacing),
        }
    }

    pub fn script(&self) -> &SyntheticScript {
        &self.script
    }
}

impl FrameSource for SyntheticSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        let ts = self.clock.tick()?;
        Ok(Some(self.script.render(ts)))
    }

    fn close(&mut self) {
        self.clock.closed = true;
    }
}

/// Every `.pgm`/`.ppm` file of a directory, in file-name order.
pub struct ImageDirSource {
    files: std::vec::IntoIter<PathBuf>,
    clock: Clock,
}

impl ImageDirSource {
    fn open(dir: &Path, clock: Clock) -> Result<Self, SourceError> {
        let unavailable = |e: std::io::Error| SourceError::SourceUnavailable {
            locator: dir.display().to_string(),
            reason: e.to_string(),
        };
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(unavailable)? {
            let path = entry.map_err(unavailable)?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if path.is_file() && matches!(ext.as_deref(), Some("pgm" | "ppm")) {
                files.push(path);
            }
        }
        files.sort();
        Ok(Self {
            files: files.into_iter(),
            clock,
        })
    }
}

impl FrameSource for ImageDirSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        if self.clock.closed {
            return Err(SourceError::SourceClosed);
        }
        let Some(path) = self.files.next() else {
            return Ok(None);
        };
        let bytes = std::fs::read(&path).map_err(|e| SourceError::SourceUnavailable {
            locator: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let ts = self.clock.tick()?;
        let (frame, _) = pnm::decode(&bytes, ts).map_err(|e| format_error(&path, e))?;
        Ok(Some(frame))
    }

    fn close(&mut self) {
        self.clock.closed = true;
    }
}

/// A file of back-to-back PGM/PPM images.
pub struct VideoFileSource {
    path: PathBuf,
    bytes: Vec<u8>,
    offset: usize,
    clock: Clock,
}

impl VideoFileSource {
    fn open(path: &Path, clock: Clock) -> Result<Self, SourceError> {
        let bytes = std::fs::read(path).map_err(|e| SourceError::SourceUnavailable {
            locator: path.display().to_string(),
            reason: e.to_string(),
        })?;
        if !(bytes.is_empty() || bytes.starts_with(b"P5") || bytes.starts_with(b"P6")) {
            return Err(SourceError::UnsupportedFormat(format!(
                "{}: only concatenated PGM/PPM frames are supported",
                path.display()
            )));
        }
        Ok(Self {
            path: path.to_path_buf(),
            bytes,
            offset: 0,
            clock,
        })
    }
}

impl FrameSource for VideoFileSource {
    fn next_frame(&mut self) -> Result<Option<Frame>, SourceError> {
        if self.clock.closed {
            return Err(SourceError::SourceClosed);
        }
        let rest = &self.bytes[self.offset..];
        if rest.iter().all(u8::is_ascii_whitespace) {
            return Ok(None);
        }
        let skip = rest.iter().take_while(|b| b.is_ascii_whitespace()).count();
        let ts = self.clock.tick()?;
        let (frame, used) = pnm::decode(&rest[skip..], ts).map_err(|e| format_error(&self.path, e))?;
        self.offset += skip + used;
        Ok(Some(frame))
    }

    fn close(&mut self) {
        self.clock.closed = true;
    }
}

fn format_error(path: &Path, e: PnmError) -> SourceError {
    SourceError::UnsupportedFormat(format!("{}: {e}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn locator_parsing() {
        let s: SyntheticScript = "face@320x240".parse().unwrap();
        assert_eq!((s.pattern, s.width, s.height), (Pattern::Face, 320, 240));
        assert_eq!("".parse::<SyntheticScript>().unwrap(), SyntheticScript::default());
        assert!("plaid".parse::<SyntheticScript>().is_err());
        assert!("face@10x10".parse::<SyntheticScript>().is_err());
        assert_eq!(s.to_string().parse::<SyntheticScript>().unwrap(), s);
    }

    #[test]
    fn visit_schedule() {
        let s = SyntheticScript::default();
        assert!(!s.face_visible(999));
        assert!(s.face_visible(1_000));
        assert!(s.face_visible(40_999));
        assert!(!s.face_visible(41_000));
        assert!(s.face_visible(61_000));
    }

    #[test]
    fn period_rounds_up() {
        assert_eq!(SourceSpec::synthetic("", 15.0).period_ms(), 67);
        assert_eq!(SourceSpec::synthetic("", 10.0).period_ms(), 100);
        assert!(SourceSpec::synthetic("", 0.0).validate().is_err());
        assert!(SourceSpec::synthetic("", f64::NAN).validate().is_err());
    }
}
