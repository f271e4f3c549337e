//! The `mirror` command line.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mirror_core::affect::{Intensity, Lexicon, SeedSelection};
use mirror_core::classifier::preprocess_face;
use mirror_core::detect::{detect_multiscale, largest_face, DetectParams, FaceBox};
use mirror_core::engine::{self, Action, EngineEvent, EngineSettings};
use mirror_core::poem::PoemConfig;
use mirror_core::sampling::SamplingParams;
use mirror_core::{fixtures, EmotionCategory, Frame};

use crate::assets;
use crate::config::{GatewayConfig, CONFIG_ENV};
use crate::gateway::Gateway;
use crate::persistence::{self, LogRecord, MetaRecord};
use crate::pipeline::{self, Backend, PoemBackend, Session};
use crate::pnm;
use crate::source::{Pattern, SyntheticScript};

#[derive(Debug, Parser)]
#[command(name = "mirror", version, about = "Camera-driven poem mirror")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the installation: pipeline, HTTP API and display stream.
    Run {
        #[arg(long, env = CONFIG_ENV)]
        config: PathBuf,
        /// Overrides `bind` from the config file.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Print detected face boxes as JSON lines.
    Detect {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        cascade: PathBuf,
        #[arg(long)]
        min_neighbors: Option<u32>,
        #[arg(long)]
        min_size: Option<u32>,
    },
    /// Print the seven emotion probabilities in canonical order.
    Classify {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Classify the largest detected face instead of the whole image.
        #[arg(long)]
        cascade: Option<PathBuf>,
    },
    /// Print a poem for an emotion.
    Generate {
        #[arg(long)]
        emotion: EmotionCategory,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = IntensityArg::High)]
        intensity: IntensityArg,
        #[command(flatten)]
        lm: LmArgs,
        #[arg(long)]
        lexicon: Option<PathBuf>,
        #[arg(long)]
        temperature: Option<f64>,
        #[arg(long)]
        top_p: Option<f64>,
        /// Print the whole poem record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Replay an event script through the engine and print the action trace.
    Simulate {
        #[arg(long)]
        script: PathBuf,
        /// Session nonce when the script does not start with one.
        #[arg(long, default_value_t = 0)]
        nonce: u64,
        #[command(flatten)]
        lm: LmArgs,
    },
    /// Per-stage latency on synthetic input.
    Bench {
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        #[arg(long, default_value_t = 640)]
        width: u32,
        #[arg(long, default_value_t = 480)]
        height: u32,
        /// Cascade XML; the built-in fixture cascade when absent.
        #[arg(long)]
        cascade: Option<PathBuf>,
        /// Classifier weights; the built-in tiny classifier when absent.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        lm: LmArgs,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum IntensityArg {
    Low,
    High,
}

impl From<IntensityArg> for Intensity {
    fn from(a: IntensityArg) -> Self {
        match a {
            IntensityArg::Low => Intensity::Low,
            IntensityArg::High => Intensity::High,
        }
    }
}

#[derive(Debug, Args)]
pub struct LmArgs {
    /// MRW1 language model; the template backend when absent.
    #[arg(long)]
    pub lm: Option<PathBuf>,
    #[arg(long, requires = "merges")]
    pub vocab: Option<PathBuf>,
    #[arg(long, requires = "vocab")]
    pub merges: Option<PathBuf>,
}

impl LmArgs {
    pub fn backend(&self) -> Result<Backend> {
        let Some(path) = &self.lm else {
            return Ok(Backend::Template);
        };
        let tok = self.vocab.as_deref().zip(self.merges.as_deref());
        let (model, tokenizer) = assets::load_lm_with_tokenizer(path, tok)?;
        Ok(Backend::Transformer { model, tokenizer })
    }
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            // Most errors here already embed their source in the message.
            let mut message = e.to_string();
            for cause in e.chain().skip(1) {
                let cause = cause.to_string();
                if !message.contains(&cause) {
                    message = format!("{message}: {cause}");
                }
            }
            eprintln!("error: {message}");
            1
        }
    }
}

pub fn run(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Run { config, bind } => serve(&config, bind),
        Command::Detect {
            image,
            cascade,
            min_neighbors,
            min_size,
        } => {
            let frame = read_image(&image)?;
            let cascade = assets::load_cascade(&cascade)?;
            let mut params = DetectParams::default();
            params.min_neighbors = min_neighbors.unwrap_or(params.min_neighbors);
            params.min_size = min_size.unwrap_or(params.min_size);
            params.validate(&cascade).map_err(anyhow::Error::msg)?;
            for b in detect_multiscale(&cascade, &frame, &params) {
                writeln!(out, "{}", serde_json::to_string(&b)?)?;
            }
            Ok(())
        }
        Command::Classify { image, model, cascade } => {
            let frame = read_image(&image)?;
            let model = assets::load_classifier(&model)?;
            let face = match cascade {
                Some(path) => {
                    let cascade = assets::load_cascade(&path)?;
                    let boxes = detect_multiscale(&cascade, &frame, &DetectParams::default());
                    largest_face(&boxes).context("no face found")?
                }
                None => FaceBox {
                    x: 0,
                    y: 0,
                    w: frame.width(),
                    h: frame.height(),
                    neighbors: 0,
                    score: 0.0,
                },
            };
            let dist = model.classify(&preprocess_face(&frame, &face)?, frame.timestamp_ms())?;
            for c in EmotionCategory::ALL {
                writeln!(out, "{} {:.6}", c.name(), dist.probs[c.index()])?;
            }
            Ok(())
        }
        Command::Generate {
            emotion,
            seed,
            intensity,
            lm,
            lexicon,
            temperature,
            top_p,
            json,
        } => {
            let lexicon = match lexicon {
                Some(p) => assets::load_lexicon(&p)?,
                None => Lexicon::builtin(),
            };
            let selection = seed_selection(&lexicon, emotion, intensity.into(), seed)?;
            let mut params = SamplingParams {
                rng_seed: seed,
                ..SamplingParams::default()
            };
            params.temperature = temperature.unwrap_or(params.temperature);
            params.top_p = top_p.unwrap_or(params.top_p);
            params.validate()?;
            let poem = lm.backend()?.generate(&selection, &params, &PoemConfig::default(), 0)?;
            if json {
                writeln!(out, "{}", serde_json::to_string_pretty(&poem)?)?;
            } else {
                writeln!(out, "{}", poem.text)?;
            }
            Ok(())
        }
        Command::Simulate { script, nonce, lm } => {
            let replay = persistence::replay(&script)?;
            for action in simulate(&replay.records, nonce, &lm.backend()?)? {
                writeln!(out, "{}", serde_json::to_string(&action)?)?;
            }
            Ok(())
        }
        Command::Bench {
            iterations,
            width,
            height,
            cascade,
            model,
            lm,
        } => {
            let cascade = match cascade {
                Some(p) => assets::load_cascade(&p)?,
                None => fixtures::fixture_cascade(),
            };
            let classifier = match model {
                Some(p) => assets::load_classifier(&p)?,
                None => mirror_core::classifier::ClassifierModel::load(&fixtures::tiny_classifier(1))?,
            };
            let report = bench(cascade, classifier, &lm.backend()?, iterations.max(1), width, height)?;
            write!(out, "{report}")?;
            Ok(())
        }
    }
}

/// The selection `generate` uses: the `seed mod n`-th word of the bucket.
pub fn seed_selection(lexicon: &Lexicon, emotion: EmotionCategory, intensity: Intensity, seed: u64) -> Result<SeedSelection> {
    let bucket = lexicon.bucket(emotion, intensity);
    if bucket.is_empty() {
        bail!("the lexicon has no {intensity} words for {emotion}");
    }
    Ok(SeedSelection {
        label: emotion,
        intensity,
        word: bucket[(seed % bucket.len() as u64) as usize].clone(),
        rng_seed: seed,
    })
}

fn serve(config: &Path, bind: Option<String>) -> Result<()> {
    let mut config = GatewayConfig::load(config).with_context(|| format!("loading {}", config.display()))?;
    if let Some(bind) = bind {
        config.bind = bind;
    }
    let gateway = Gateway::start(config)?;
    eprintln!("listening on http://{}", gateway.local_addr());
    gateway.wait_for_interrupt();
    gateway.shutdown();
    Ok(())
}

fn read_image(path: &Path) -> Result<Frame> {
    let bytes = assets::read(path)?;
    let (frame, _) = pnm::decode(&bytes, 0).with_context(|| path.display().to_string())?;
    Ok(frame.into_grayscale())
}

/// Runs log records through a fresh session. Poem requests are answered
/// by `backend` at the request timestamp, unless the script carries its
/// own `PoemReady`/`PoemFailed` events, in which case it is replayed as
/// recorded.
pub fn simulate(records: &[LogRecord], nonce: u64, backend: &dyn PoemBackend) -> Result<Vec<Action>> {
    let answers_recorded = records.iter().any(|r| {
        matches!(
            r,
            LogRecord::Engine(EngineEvent::PoemReady { .. } | EngineEvent::PoemFailed { .. })
        )
    });
    let mut session: Option<Session> = None;
    let mut trace = Vec::new();
    for record in records {
        match record {
            LogRecord::Meta(MetaRecord::SessionStarted { nonce, settings, .. }) => {
                session = Some(Session::new(settings.clone().into(), *nonce, None, None)?);
            }
            LogRecord::Meta(MetaRecord::SettingsChanged { ts, settings }) => {
                let s = session.get_or_insert(Session::new(EngineSettings::default(), nonce, None, None)?);
                s.update_settings(settings.clone().into(), *ts)?;
            }
            LogRecord::Engine(event) => {
                let s = session.get_or_insert(Session::new(EngineSettings::default(), nonce, None, None)?);
                if answers_recorded {
                    trace.extend(s.apply(event)?);
                } else {
                    trace.extend(s.drive(event, backend)?);
                }
            }
        }
    }
    Ok(trace)
}

/// Latency summary of one stage.
#[derive(Debug, Clone, Copy)]
pub struct StageStats {
    pub min: Duration,
    pub median: Duration,
    pub p95: Duration,
    pub max: Duration,
}

impl StageStats {
    pub fn from_samples(mut samples: Vec<Duration>) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort();
        let at = |q: f64| samples[((samples.len() - 1) as f64 * q).round() as usize];
        Some(Self {
            min: samples[0],
            median: at(0.5),
            p95: at(0.95),
            max: samples[samples.len() - 1],
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub width: u32,
    pub height: u32,
    pub iterations: usize,
    pub stages: Vec<(&'static str, StageStats)>,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}x{} synthetic face, {} iterations", self.width, self.height, self.iterations)?;
        writeln!(f, "{:<10} {:>10} {:>10} {:>10} {:>10}", "stage", "min ms", "median ms", "p95 ms", "max ms")?;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        for (name, s) in &self.stages {
            writeln!(
                f,
                "{:<10} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                name,
                ms(s.min),
                ms(s.median),
                ms(s.p95),
                ms(s.max)
            )?;
        }
        Ok(())
    }
}

/// Times detection, classification, engine steps and generation on frames
/// of the synthetic face pattern.
pub fn bench(
    cascade: mirror_core::detect::CascadeModel,
    classifier: mirror_core::classifier::ClassifierModel,
    backend: &dyn PoemBackend,
    iterations: usize,
    width: u32,
    height: u32,
) -> Result<BenchReport> {
    let script = SyntheticScript {
        pattern: Pattern::Face,
        width,
        height,
    };
    let perception = pipeline::Perception::new(cascade, classifier, DetectParams::default()).map_err(anyhow::Error::msg)?;
    let settings = EngineSettings::default();
    let mut state = engine::init(&settings.timing, 1)?;
    let (mut detect, mut classify, mut step, mut generate) = (vec![], vec![], vec![], vec![]);
    for i in 0..iterations {
        let ts = i as u64 * 66;
        let frame = script.render(ts);
        let (event, t) = perception.observe_timed(&frame)?;
        detect.push(t.detect);
        if matches!(event, EngineEvent::FaceObserved { .. }) {
            classify.push(t.classify);
        }
        let start = Instant::now();
        let (next, _) = engine::step(&state, &event, &settings)?;
        step.push(start.elapsed());
        state = next;

        let selection = SeedSelection {
            label: EmotionCategory::ALL[i % EmotionCategory::ALL.len()],
            intensity: Intensity::High,
            word: "light".into(),
            rng_seed: i as u64,
        };
        let params = pipeline::poem_params(&settings, &selection);
        let start = Instant::now();
        backend.generate(&selection, &params, &settings.poem, ts)?;
        generate.push(start.elapsed());
    }
    let mut stages = Vec::new();
    for (name, samples) in [("detect", detect), ("classify", classify), ("engine", step), ("generate", generate)] {
        if let Some(s) = StageStats::from_samples(samples) {
            stages.push((name, s));
        }
    }
    Ok(BenchReport {
        width,
        height,
        iterations,
        stages,
    })
}
