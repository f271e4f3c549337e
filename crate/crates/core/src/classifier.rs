//! Expression classifier: a CNN described as data.
//!
//! A container's `arch` metadata selects the layer list. `seq-cnn` reads it
//! from the `layers` metadata entry (JSON, see [`LayerSpec`]); `mini-xception`
//! uses the built-in depthwise-separable residual layout from
//! [`mini_xception_layers`]. Channel counts and kernel sizes are never part
//! of the descriptor: they come from the tensor shapes, which are checked
//! against each other at load time.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::container::WeightContainer;
use crate::detect::FaceBox;
use crate::emotion::{EmotionCategory, EmotionDistribution, NUM_CATEGORIES};
use crate::frame::Frame;
use crate::tensor::{self, conv_output_dim, Padding, Tensor, TensorError};

/// Side of the square grayscale crop the classifier consumes.
pub const INPUT_SIDE: usize = 48;
pub const INPUT_SPEC: &str = "48x48x1:[-1,1]";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifierError {
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("inconsistent shapes: {0}")]
    ShapeInconsistent(String),
    #[error("unknown architecture {0:?}")]
    UnknownArchitecture(String),
    #[error("invalid metadata: {0}")]
    Metadata(String),
    #[error("input shape {actual:?} does not match {expected:?}")]
    ShapeMismatch { expected: Vec<usize>, actual: Vec<usize> },
    #[error("face box lies outside the frame")]
    BoxOutOfBounds,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

fn default_stride() -> usize {
    1
}

fn default_padding() -> Padding {
    Padding::Same
}

fn default_bn_eps() -> f32 {
    1e-3
}

/// One entry of a layer descriptor. Parameter tensors are looked up by
/// `name` with a fixed suffix:
///
/// | op         | tensors                                                        |
/// |------------|----------------------------------------------------------------|
/// | conv       | `{name}.w` `[k, k, c_in, c_out]`, `{name}.b` `[c_out]` if bias |
/// | sep_conv   | `{name}.dw` `[k, k, 1, c_in]`, `{name}.pw` `[1, 1, c_in, c_out]`, `{name}.b` if bias |
/// | batch_norm | `{name}.gamma`, `.beta`, `.mean`, `.var`, each `[c]`           |
/// | dense      | `{name}.w` `[n_in, n_out]`, `{name}.b` `[n_out]`                |
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv {
        name: String,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
        #[serde(default)]
        bias: bool,
    },
    SepConv {
        name: String,
        #[serde(default = "default_stride")]
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
        #[serde(default)]
        bias: bool,
    },
    BatchNorm {
        name: String,
        #[serde(default = "default_bn_eps")]
        eps: f32,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
        #[serde(default = "default_padding")]
        padding: Padding,
    },
    GlobalAvgPool,
    Dense {
        name: String,
    },
    /// `branch(x) + shortcut(x)`; an empty shortcut is the identity.
    Residual {
        branch: Vec<LayerSpec>,
        #[serde(default)]
        shortcut: Vec<LayerSpec>,
    },
}

/// The mini-Xception layout: two plain 3x3 convolutions, four residual
/// modules of separable convolutions with strided 1x1 shortcuts, a final
/// 3x3 convolution to seven channels and global average pooling.
pub fn mini_xception_layers() -> Vec<LayerSpec> {
    let conv = |name: &str, stride: usize, padding: Padding, bias: bool| LayerSpec::Conv {
        name: name.into(),
        stride,
        padding,
        bias,
    };
    let bn = |name: &str| LayerSpec::BatchNorm {
        name: name.into(),
        eps: 1e-3,
    };
    let sep = |name: String| LayerSpec::SepConv {
        name,
        stride: 1,
        padding: Padding::Same,
        bias: false,
    };
    let mut layers = vec![
        conv("base1", 1, Padding::Valid, false),
        bn("base1_bn"),
        LayerSpec::Relu,
        conv("base2", 1, Padding::Valid, false),
        bn("base2_bn"),
        LayerSpec::Relu,
    ];
    for m in 1..=4 {
        layers.push(LayerSpec::Residual {
            shortcut: vec![
                conv(&format!("m{m}_short"), 2, Padding::Same, false),
                bn(&format!("m{m}_short_bn")),
            ],
            branch: vec![
                sep(format!("m{m}_sep1")),
                bn(&format!("m{m}_sep1_bn")),
                LayerSpec::Relu,
                sep(format!("m{m}_sep2")),
                bn(&format!("m{m}_sep2_bn")),
                LayerSpec::MaxPool {
                    size: 3,
                    stride: 2,
                    padding: Padding::Same,
                },
            ],
        });
    }
    layers.push(conv("out", 1, Padding::Same, true));
    layers.push(LayerSpec::GlobalAvgPool);
    layers
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Conv {
        kernels: Tensor,
        bias: Option<Vec<f32>>,
        stride: usize,
        padding: Padding,
        groups: usize,
    },
    /// Batch norm folded to `x * scale + shift` per channel.
    ScaleShift { scale: Vec<f32>, shift: Vec<f32> },
    Relu,
    MaxPool { size: usize, stride: usize, padding: Padding },
    GlobalAvgPool,
    Dense { w: Tensor, b: Vec<f32> },
    Residual { branch: Vec<Layer>, shortcut: Vec<Layer> },
    Sequence(Vec<Layer>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    fn channels(self) -> usize {
        match self {
            Shape::Spatial(_, _, c) => c,
            Shape::Flat(n) => n,
        }
    }
}

/// A loaded, shape-checked classifier. Immutable and shareable.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    arch: String,
    layers: Vec<Layer>,
}

struct Loader<'a> {
    container: &'a WeightContainer,
}

impl Loader<'_> {
    fn tensor(&self, name: &str) -> Result<&Tensor, ClassifierError> {
        self.container
            .tensor(name)
            .ok_or_else(|| ClassifierError::MissingTensor(name.into()))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f32>, ClassifierError> {
        let t = self.tensor(name)?;
        if t.len() != len {
            return Err(ClassifierError::ShapeInconsistent(format!(
                "{name} has {} values, expected {len}",
                t.len()
            )));
        }
        Ok(t.data().to_vec())
    }

    fn spatial(shape: Shape, what: &str) -> Result<(usize, usize, usize), ClassifierError> {
        match shape {
            Shape::Spatial(h, w, c) => Ok((h, w, c)),
            Shape::Flat(_) => Err(ClassifierError::ShapeInconsistent(format!(
                "{what} needs a spatial input"
            ))),
        }
    }

    fn conv_out(h: usize, w: usize, k: (usize, usize), stride: usize, padding: Padding, name: &str) -> Result<(usize, usize), ClassifierError> {
        let err = || ClassifierError::ShapeInconsistent(format!("{name}: kernel larger than its {h}x{w} input"));
        if stride == 0 {
            return Err(ClassifierError::ShapeInconsistent(format!("{name}: stride must be positive")));
        }
        let (oh, _) = conv_output_dim(h, k.0, stride, padding).ok_or_else(err)?;
        let (ow, _) = conv_output_dim(w, k.1, stride, padding).ok_or_else(err)?;
        Ok((oh, ow))
    }

    fn build(&self, specs: &[LayerSpec], mut shape: Shape) -> Result<(Vec<Layer>, Shape), ClassifierError> {
        let mut layers = Vec::with_capacity(specs.len());
        for spec in specs {
            let (layer, next) = self.build_one(spec, shape)?;
            layers.push(layer);
            shape = next;
        }
        Ok((layers, shape))
    }

    fn build_one(&self, spec: &LayerSpec, shape: Shape) -> Result<(Layer, Shape), ClassifierError> {
        Ok(match spec {
            LayerSpec::Conv { name, stride, padding, bias } => {
                let (h, w, c) = Self::spatial(shape, name)?;
                let wname = format!("{name}.w");
                let kernels = self.tensor(&wname)?.clone();
                let [kh, kw, kc, c_out] = kernels.shape()[..] else {
                    return Err(ClassifierError::ShapeInconsistent(format!("{wname} must be rank 4")));
                };
                if kc != c {
                    return Err(ClassifierError::ShapeInconsistent(format!(
                        "{wname} expects {kc} input channels, got {c}"
                    )));
                }
                let (oh, ow) = Self::conv_out(h, w, (kh, kw), *stride, *padding, name)?;
                let bias = bias.then(|| self.vector(&format!("{name}.b"), c_out)).transpose()?;
                (
                    Layer::Conv { kernels, bias, stride: *stride, padding: *padding, groups: 1 },
                    Shape::Spatial(oh, ow, c_out),
                )
            }
            LayerSpec::SepConv { name, stride, padding, bias } => {
                let (h, w, c) = Self::spatial(shape, name)?;
                let dname = format!("{name}.dw");
                let dw = self.tensor(&dname)?.clone();
                let [kh, kw, one, dc] = dw.shape()[..] else {
                    return Err(ClassifierError::ShapeInconsistent(format!("{dname} must be rank 4")));
                };
                if one != 1 || dc != c {
                    return Err(ClassifierError::ShapeInconsistent(format!(
                        "{dname} must be [k, k, 1, {c}], got {:?}",
                        dw.shape()
                    )));
                }
                let pname = format!("{name}.pw");
                let pw = self.tensor(&pname)?.clone();
                let [1, 1, pc, c_out] = pw.shape()[..] else {
                    return Err(ClassifierError::ShapeInconsistent(format!("{pname} must be [1, 1, c_in, c_out]")));
                };
                if pc != c {
                    return Err(ClassifierError::ShapeInconsistent(format!(
                        "{pname} expects {pc} input channels, got {c}"
                    )));
                }
                let (oh, ow) = Self::conv_out(h, w, (kh, kw), *stride, *padding, name)?;
                let bias = bias.then(|| self.vector(&format!("{name}.b"), c_out)).transpose()?;
                // depthwise then pointwise, expressed as two plain layers
                let depthwise = Layer::Conv { kernels: dw, bias: None, stride: *stride, padding: *padding, groups: c };
                let pointwise = Layer::Conv { kernels: pw, bias, stride: 1, padding: Padding::Valid, groups: 1 };
                (
                    Layer::Sequence(vec![depthwise, pointwise]),
                    Shape::Spatial(oh, ow, c_out),
                )
            }
            LayerSpec::BatchNorm { name, eps } => {
                let c = shape.channels();
                let gamma = self.vector(&format!("{name}.gamma"), c)?;
                let beta = self.vector(&format!("{name}.beta"), c)?;
                let mean = self.vector(&format!("{name}.mean"), c)?;
                let var = self.vector(&format!("{name}.var"), c)?;
                let scale: Vec<f32> = gamma.iter().zip(&var).map(|(g, v)| g / libm::sqrtf(v + eps)).collect();
                let shift = beta.iter().zip(&mean).zip(&scale).map(|((b, m), s)| b - m * s).collect();
                (Layer::ScaleShift { scale, shift }, shape)
            }
            LayerSpec::Relu => (Layer::Relu, shape),
            LayerSpec::MaxPool { size, stride, padding } => {
                let (h, w, c) = Self::spatial(shape, "max_pool")?;
                let (oh, ow) = Self::conv_out(h, w, (*size, *size), *stride, *padding, "max_pool")?;
                (
                    Layer::MaxPool { size: *size, stride: *stride, padding: *padding },
                    Shape::Spatial(oh, ow, c),
                )
            }
            LayerSpec::GlobalAvgPool => {
                let (_, _, c) = Self::spatial(shape, "global_avg_pool")?;
                (Layer::GlobalAvgPool, Shape::Flat(c))
            }
            LayerSpec::Dense { name } => {
                let n_in = match shape {
                    Shape::Spatial(h, w, c) => h * w * c,
                    Shape::Flat(n) => n,
                };
                let wname = format!("{name}.w");
                let w = self.tensor(&wname)?.clone();
                let [wi, n_out] = w.shape()[..] else {
                    return Err(ClassifierError::ShapeInconsistent(format!("{wname} must be rank 2")));
                };
                if wi != n_in {
                    return Err(ClassifierError::ShapeInconsistent(format!(
                        "{wname} expects {wi} inputs, got {n_in}"
                    )));
                }
                let b = self.vector(&format!("{name}.b"), n_out)?;
                (Layer::Dense { w, b }, Shape::Flat(n_out))
            }
            LayerSpec::Residual { branch, shortcut } => {
                let (branch, bs) = self.build(branch, shape)?;
                let (shortcut, ss) = self.build(shortcut, shape)?;
                if bs != ss {
                    return Err(ClassifierError::ShapeInconsistent(format!(
                        "residual branch gives {bs:?} but shortcut gives {ss:?}"
                    )));
                }
                (Layer::Residual { branch, shortcut }, bs)
            }
        })
    }
}

impl ClassifierModel {
    /// Builds the model described by the container's metadata.
    pub fn load(container: &WeightContainer) -> Result<Self, ClassifierError> {
        let arch = container
            .metadata("arch")
            .ok_or_else(|| ClassifierError::Metadata("missing \"arch\"".into()))?;
        let categories = container
            .metadata("categories")
            .ok_or_else(|| ClassifierError::Metadata("missing \"categories\"".into()))?;
        let normalized: Vec<&str> = categories.split(',').map(str::trim).collect();
        if normalized.join(",") != EmotionCategory::canonical_order() {
            return Err(ClassifierError::Metadata(format!(
                "category order {categories:?} differs from {:?}",
                EmotionCategory::canonical_order()
            )));
        }
        if let Some(input) = container.metadata("input") {
            if input.trim() != INPUT_SPEC {
                return Err(ClassifierError::Metadata(format!("unsupported input spec {input:?}")));
            }
        }
        let specs = match arch {
            "seq-cnn" => {
                let json = container
                    .metadata("layers")
                    .ok_or_else(|| ClassifierError::Metadata("seq-cnn needs \"layers\"".into()))?;
                serde_json::from_str::<Vec<LayerSpec>>(json)
                    .map_err(|e| ClassifierError::Metadata(format!("bad layer descriptor: {e}")))?
            }
            "mini-xception" => mini_xception_layers(),
            other => return Err(ClassifierError::UnknownArchitecture(other.into())),
        };
        let loader = Loader { container };
        let (layers, out) = loader.build(&specs, Shape::Spatial(INPUT_SIDE, INPUT_SIDE, 1))?;
        if out != Shape::Flat(NUM_CATEGORIES) {
            return Err(ClassifierError::ShapeInconsistent(format!(
                "network output is {out:?}, expected {NUM_CATEGORIES} logits"
            )));
        }
        Ok(Self { arch: arch.to_string(), layers })
    }

    pub fn arch(&self) -> &str {
        &self.arch
    }

    /// Raw head logits for a `48 x 48 x 1` input.
    pub fn logits(&self, input: &Tensor) -> Result<[f32; NUM_CATEGORIES], ClassifierError> {
        let expected = [INPUT_SIDE, INPUT_SIDE, 1];
        if input.shape() != expected {
            return Err(ClassifierError::ShapeMismatch { expected: expected.to_vec(), actual: input.shape().to_vec() });
        }
        let out = run(&self.layers, input.clone())?;
        let mut logits = [0.0; NUM_CATEGORIES];
        logits.copy_from_slice(out.data());
        Ok(logits)
    }

    pub fn classify(&self, input: &Tensor, source_timestamp: u64) -> Result<EmotionDistribution, ClassifierError> {
        let mut row = self.logits(input)?;
        tensor::softmax_in_place(&mut row);
        // renormalise in f64 so the simplex sum holds to double precision
        let mut weights = [0.0f64; NUM_CATEGORIES];
        for (w, p) in weights.iter_mut().zip(row) {
            *w = p as f64;
        }
        Ok(EmotionDistribution::from_weights(weights, source_timestamp).unwrap_or(EmotionDistribution::uniform(source_timestamp)))
    }
}

fn run(layers: &[Layer], mut x: Tensor) -> Result<Tensor, TensorError> {
    for layer in layers {
        x = apply(layer, x)?;
    }
    Ok(x)
}

fn apply(layer: &Layer, x: Tensor) -> Result<Tensor, TensorError> {
    Ok(match layer {
        Layer::Conv { kernels, bias, stride, padding, groups } => {
            let mut y = tensor::conv2d(&x, kernels, *stride, *padding, *groups)?;
            if let Some(b) = bias {
                tensor::add_channel_bias(&mut y, b)?;
            }
            y
        }
        Layer::ScaleShift { scale, shift } => {
            let mut y = x;
            let c = scale.len();
            for px in y.data_mut().chunks_exact_mut(c) {
                for ((v, s), t) in px.iter_mut().zip(scale).zip(shift) {
                    *v = *v * s + t;
                }
            }
            y
        }
        Layer::Relu => x.map(|v| v.max(0.0)),
        Layer::MaxPool { size, stride, padding } => tensor::max_pool2d(&x, *size, *stride, *padding)?,
        Layer::GlobalAvgPool => tensor::global_avg_pool(&x)?,
        Layer::Dense { w, b } => {
            let n = x.len();
            let flat = x.reshape(&[1, n])?;
            let mut y = tensor::matmul(&flat, w)?;
            tensor::add_channel_bias(&mut y, b)?;
            let n_out = y.len();
            y.reshape(&[n_out])?
        }
        Layer::Residual { branch, shortcut } => {
            let mut y = run(branch, x.clone())?;
            let s = run(shortcut, x)?;
            for (a, b) in y.data_mut().iter_mut().zip(s.data()) {
                *a += b;
            }
            y
        }
        Layer::Sequence(layers) => run(layers, x)?,
    })
}

/// Crops `face`, resizes it to 48x48 and maps intensities to `[-1, 1]`.
pub fn preprocess_face(frame: &Frame, face: &FaceBox) -> Result<Tensor, ClassifierError> {
    if !face.fits_within(frame.width(), frame.height()) {
        return Err(ClassifierError::BoxOutOfBounds);
    }
    let crop = frame
        .crop(face.x, face.y, face.w, face.h)
        .ok_or(ClassifierError::BoxOutOfBounds)?
        .into_grayscale()
        .resize_bilinear(INPUT_SIDE as u32, INPUT_SIDE as u32)
        .map_err(|_| ClassifierError::BoxOutOfBounds)?;
    let data = crop.pixels().iter().map(|&v| v as f32 / 127.5 - 1.0).collect();
    Ok(Tensor::new(vec![INPUT_SIDE, INPUT_SIDE, 1], data)?)
}
