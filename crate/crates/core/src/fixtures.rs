//! Deterministic fixtures: the hand-authored detection cascade, the
//! synthetic "face" pattern it fires on, and tiny random-weight classifier
//! and language-model containers. Tests, demos and the bundled fixture
//! files are all produced from here.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classifier::{LayerSpec, INPUT_SPEC};
use crate::container::WeightContainer;
use crate::detect::{CascadeModel, FaceBox, HaarRect, Stage, WeakClassifier};
use crate::emotion::EmotionCategory;
use crate::frame::Frame;
use crate::lm::LmConfig;
use crate::tensor::{Padding, Tensor};

/// Background intensity of [`face_frame`].
pub const FACE_BACKGROUND: u8 = 190;
/// Intensity of the dark square inside the face box.
pub const FACE_DARK: u8 = 40;

/// Where the synthetic face sits: a square box of side `size` whose
/// central two thirds are dark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FacePlacement {
    pub x: u32,
    pub y: u32,
    pub size: u32,
}

impl FacePlacement {
    pub fn face_box(&self) -> FaceBox {
        FaceBox {
            x: self.x,
            y: self.y,
            w: self.size,
            h: self.size,
            neighbors: 0,
            score: 0.0,
        }
    }

    /// The dark square, `(x, y, side)`.
    pub fn dark_square(&self) -> (u32, u32, u32) {
        let margin = (self.size + 3) / 6;
        (self.x + margin, self.y + margin, self.size - 2 * margin)
    }
}

/// Paints the dark square of `place` into a grayscale pixel buffer.
pub fn paint_face(pixels: &mut [u8], width: u32, place: FacePlacement) {
    let (sx, sy, side) = place.dark_square();
    for y in sy..sy + side {
        let row = y as usize * width as usize;
        pixels[row + sx as usize..row + (sx + side) as usize].fill(FACE_DARK);
    }
}

/// Light background with one synthetic face. Panics if it does not fit.
pub fn face_frame(width: u32, height: u32, place: FacePlacement, timestamp_ms: u64) -> Frame {
    assert!(place.x + place.size <= width && place.y + place.size <= height);
    let mut pixels = vec![FACE_BACKGROUND; width as usize * height as usize];
    paint_face(&mut pixels, width, place);
    Frame::new(pixels, width, height, 1, timestamp_ms).expect("valid fixture dimensions")
}

/// Centre-surround threshold of the first feature.
const CENTRE_THRESHOLD: f64 = 0.93;
/// Ring-versus-centre threshold of the second feature.
const RING_THRESHOLD: f64 = 0.30;

/// Single-stage, two-feature cascade over a 24x24 window that fires on a
/// dark 16x16 square centred in the window.
///
/// * feature 0: whole window (+1) and centre square (-2.25). Normalised, it
///   is `(mean(window) - mean(centre)) / stddev`, which peaks at about 1.12
///   when the square is exactly aligned.
/// * feature 1: 20x20 inner square (+1) and centre square (-1.5625), i.e. the
///   2-pixel ring just outside the centre must be bright. It drops quickly
///   when the window is smaller than the pattern.
///
/// Each stump contributes 1 when its value clears the node threshold and 0
/// otherwise; the stage threshold 1.5 requires both.
pub fn fixture_cascade() -> CascadeModel {
    let rect = |x, y, w, h, weight| HaarRect { x, y, w, h, weight };
    let stage = Stage {
        threshold: 1.5,
        weak_classifiers: vec![
            WeakClassifier {
                rects: vec![rect(0, 0, 24, 24, 1.0), rect(4, 4, 16, 16, -2.25)],
                node_threshold: CENTRE_THRESHOLD,
                pass_value: 1.0,
                fail_value: 0.0,
            },
            WeakClassifier {
                rects: vec![rect(2, 2, 20, 20, 1.0), rect(4, 4, 16, 16, -1.5625)],
                node_threshold: RING_THRESHOLD,
                pass_value: 1.0,
                fail_value: 0.0,
            },
        ],
    };
    CascadeModel::new(24, 24, vec![stage]).expect("fixture cascade is well formed")
}

/// Dark-rectangle test pattern used as the canonical detection fixture.
pub const CANONICAL_FACE: FacePlacement = FacePlacement { x: 35, y: 30, size: 58 };

pub fn canonical_face_frame(timestamp_ms: u64) -> Frame {
    face_frame(128, 128, CANONICAL_FACE, timestamp_ms)
}



fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

/// Classifier container with the given layer list and `tensors`.
pub fn classifier_container(layers: &[LayerSpec], tensors: Vec<(String, Tensor)>) -> WeightContainer {
    let mut c = WeightContainer::new();
    c.insert_metadata("arch", "seq-cnn").expect("fresh container");
    c.insert_metadata("input", INPUT_SPEC).expect("fresh container");
    c.insert_metadata("categories", EmotionCategory::canonical_order()).expect("fresh container");
    c.insert_metadata("layers", serde_json::to_string(layers).expect("serialisable descriptor"))
        .expect("fresh container");
    for (name, t) in tensors {
        c.insert_tensor(name, t).expect("unique tensor names");
    }
    c
}

fn tiny_classifier_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Conv { name: "conv".into(), stride: 2, padding: Padding::Same, bias: true },
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense { name: "dense".into() },
    ]
}

/// The two-layer test classifier: a strided 3x3 convolution to 4 channels,
/// ReLU, global average pooling and a dense head. Weights are uniform in
/// `[-0.5, 0.5)` from `seed`.
pub fn tiny_classifier(seed: u64) -> WeightContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    classifier_container(
        &tiny_classifier_layers(),
        vec![
            ("conv.w".into(), random_tensor(&mut rng, &[3, 3, 1, 4], 0.5)),
            ("conv.b".into(), random_tensor(&mut rng, &[4], 0.5)),
            ("dense.w".into(), random_tensor(&mut rng, &[4, 7], 0.5)),
            ("dense.b".into(), random_tensor(&mut rng, &[7], 0.5)),
        ],
    )
}

/// Same layout as [`tiny_classifier`] with every parameter zero.
pub fn zero_classifier() -> WeightContainer {
    classifier_container(
        &tiny_classifier_layers(),
        vec![
            ("conv.w".into(), Tensor::zeros(&[3, 3, 1, 4])),
            ("conv.b".into(), Tensor::zeros(&[4])),
            ("dense.w".into(), Tensor::zeros(&[4, 7])),
            ("dense.b".into(), Tensor::zeros(&[7])),
        ],
    )
}

/// A random small network: up to three feature layers drawn from plain,
/// separable and strided convolutions, batch norm, ReLU and max pooling,
/// with at most 8 channels, followed by global pooling and a dense head.
pub fn random_classifier(seed: u64) -> WeightContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut tensors = Vec::new();
    let mut channels = 1usize;
    let n_layers = rng.random_range(1..=3);
    for i in 0..n_layers {
        let name = format!("l{i}");
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let stride = rng.random_range(1..=2);
        let k = [1usize, 3, 5][rng.random_range(0..3)];
        let out = rng.random_range(1..=8);
        match rng.random_range(0..5) {
            0 | 1 => {
                tensors.push((format!("{name}.w"), random_tensor(&mut rng, &[k, k, channels, out], 0.6)));
                tensors.push((format!("{name}.b"), random_tensor(&mut rng, &[out], 0.3)));
                layers.push(LayerSpec::Conv { name, stride, padding, bias: true });
                channels = out;
            }
            2 => {
                tensors.push((format!("{name}.dw"), random_tensor(&mut rng, &[k, k, 1, channels], 0.6)));
                tensors.push((format!("{name}.pw"), random_tensor(&mut rng, &[1, 1, channels, out], 0.6)));
                layers.push(LayerSpec::SepConv { name, stride, padding, bias: false });
                channels = out;
            }
            3 => {
                tensors.push((format!("{name}.gamma"), random_tensor(&mut rng, &[channels], 1.0)));
                tensors.push((format!("{name}.beta"), random_tensor(&mut rng, &[channels], 0.5)));
                tensors.push((format!("{name}.mean"), random_tensor(&mut rng, &[channels], 0.5)));
                let var = random_tensor(&mut rng, &[channels], 0.5).map(|v| v.abs() + 0.5);
                tensors.push((format!("{name}.var"), var));
                layers.push(LayerSpec::BatchNorm { name, eps: 1e-3 });
                layers.push(LayerSpec::Relu);
            }
            _ => layers.push(LayerSpec::MaxPool { size: 3, stride: 2, padding }),
        }
    }
    layers.push(LayerSpec::GlobalAvgPool);
    tensors.push(("head.w".into(), random_tensor(&mut rng, &[channels, 7], 1.0)));
    tensors.push(("head.b".into(), random_tensor(&mut rng, &[7], 0.5)));
    layers.push(LayerSpec::Dense { name: "head".into() });
    classifier_container(&layers, tensors)
}

/// Shape of the bundled test language model.
pub const TINY_LM: LmConfig = LmConfig {
    n_layer: 2,
    n_head: 2,
    d_model: 32,
    n_ctx: 128,
    vocab_size: 256,
};

const TINY_LM_SEED: u64 = 0x6d69_7272_6f72;

/// Affinity of each byte token for the shared "text" direction: letters,
/// spaces and newlines are favoured, control and high bytes suppressed.
fn text_affinity(b: u8) -> f32 {
    match b {
        b'a'..=b'z' => 1.0,
        b' ' => 1.45,
        b'\n' => 1.3,
        b'A'..=b'Z' => 0.2,
        b'.' | b',' | b'\'' => 0.6,
        0x21..=0x7e => 0.0,
        _ => -1.0,
    }
}

fn lm_container(cfg: LmConfig, mut tensor: impl FnMut(&str, &[usize]) -> Tensor) -> WeightContainer {
    let mut c = WeightContainer::new();
    c.insert_metadata("arch", "gpt2").expect("fresh container");
    for (k, v) in [
        ("n_layer", cfg.n_layer),
        ("n_head", cfg.n_head),
        ("d_model", cfg.d_model),
        ("n_ctx", cfg.n_ctx),
    ] {
        c.insert_metadata(k, format!("{v}")).expect("fresh container");
    }
    let d = cfg.d_model;
    let mut names: Vec<(String, Vec<usize>)> = vec![
        ("wte.weight".into(), vec![cfg.vocab_size, d]),
        ("wpe.weight".into(), vec![cfg.n_ctx, d]),
    ];
    for i in 0..cfg.n_layer {
        for (s, shape) in [
            ("ln_1.weight", vec![d]),
            ("ln_1.bias", vec![d]),
            ("attn.c_attn.weight", vec![d, 3 * d]),
            ("attn.c_attn.bias", vec![3 * d]),
            ("attn.c_proj.weight", vec![d, d]),
            ("attn.c_proj.bias", vec![d]),
            ("ln_2.weight", vec![d]),
            ("ln_2.bias", vec![d]),
            ("mlp.c_fc.weight", vec![d, 4 * d]),
            ("mlp.c_fc.bias", vec![4 * d]),
            ("mlp.c_proj.weight", vec![4 * d, d]),
            ("mlp.c_proj.bias", vec![d]),
        ] {
            names.push((format!("h.{i}.{s}"), shape));
        }
    }
    names.push(("ln_f.weight".into(), vec![d]));
    names.push(("ln_f.bias".into(), vec![d]));
    for (name, shape) in names {
        let t = tensor(&name, &shape);
        c.insert_tensor(name, t).expect("unique tensor names");
    }
    c
}

/// The bundled 2-layer, 2-head, `d_model` 32 byte-level language model.
///
/// Weights are random except for one shared direction `u`: every token
/// embedding carries `text_affinity(byte) * u` and the final layer-norm
/// bias is `6u`, so sampled output is mostly lowercase words, spaces and
/// line breaks.
pub fn tiny_lm() -> WeightContainer {
    let cfg = TINY_LM;
    let mut rng = ChaCha8Rng::seed_from_u64(TINY_LM_SEED);
    let mut u: Vec<f32> = (0..cfg.d_model).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let norm = libm::sqrtf(u.iter().map(|v| v * v).sum());
    u.iter_mut().for_each(|v| *v /= norm);
    lm_container(cfg, |name, shape| {
        if name == "wte.weight" {
            let mut t = random_tensor(&mut rng, shape, 0.3);
            for (b, row) in t.data_mut().chunks_exact_mut(cfg.d_model).enumerate() {
                let a = text_affinity(b as u8);
                row.iter_mut().zip(&u).for_each(|(r, uj)| *r += a * uj);
            }
            t
        } else if name == "ln_f.bias" {
            Tensor::new(shape.to_vec(), u.iter().map(|v| 6.0 * v).collect()).expect("d_model entries")
        } else if name == "ln_f.weight" {
            Tensor::filled(shape, 0.6)
        } else if name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") {
            random_tensor(&mut rng, shape, 0.1).map(|v| v + 1.0)
        } else if name.ends_with(".bias") {
            random_tensor(&mut rng, shape, 0.02)
        } else {
            random_tensor(&mut rng, shape, 0.3)
        }
    })
}

/// [`TINY_LM`] layout with every parameter zero.
pub fn zero_lm() -> WeightContainer {
    lm_container(TINY_LM, |_, shape| Tensor::zeros(shape))
}

/// A random GPT-2 style model of the given shape (for property tests).
pub fn random_lm(cfg: LmConfig, seed: u64) -> WeightContainer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lm_container(cfg, |name, shape| {
        if name.ends_with("ln_1.weight") || name.ends_with("ln_2.weight") || name == "ln_f.weight" {
            random_tensor(&mut rng, shape, 0.2).map(|v| v + 1.0)
        } else {
            random_tensor(&mut rng, shape, 0.4)
        }
    })
}
