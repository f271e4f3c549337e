//! Brute-force reference implementations used as test oracles. Everything
//! here is written directly from the textbook definitions, in f64, without
//! calling the kernels under test.

#![allow(dead_code)]

use mirror_core::container::WeightContainer;
use mirror_core::detect::{group_boxes, scale_schedule, CascadeModel, DetectParams, FaceBox, IntegralImage};
use mirror_core::Frame;
use serde_json::Value;

/// Dense `h x w x c` array in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Nd {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Nd {
    pub fn from_f32(shape: &[usize], data: &[f32]) -> Self {
        Self { shape: shape.to_vec(), data: data.iter().map(|&v| v as f64).collect() }
    }
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}

pub fn brute_rect_sum(frame: &Frame, x1: u32, y1: u32, x2: u32, y2: u32) -> u64 {
    let mut total = 0u64;
    for y in y1..y2 {
        for x in x1..x2 {
            total += frame.gray_at(x, y) as u64;
        }
    }
    total
}

pub fn matmul(a: &Nd, b: &Nd) -> Nd {
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    assert_eq!(k, b.shape[0]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|t| a.data[i * k + t] * b.data[t * n + j]).sum();
        }
    }
    Nd { shape: vec![m, n], data: out }
}

/// Leading pad and output length for one axis.
fn axis(n: usize, k: usize, s: usize, same: bool) -> (usize, usize) {
    if same {
        let out = n.div_ceil(s);
        let needed = (out - 1) * s + k;
        let total = needed.saturating_sub(n);
        (total / 2, out)
    } else {
        (0, (n - k) / s + 1)
    }
}

/// Grouped 2-D cross-correlation, kernel `kh x kw x (c_in/groups) x c_out`.
pub fn conv2d(x: &Nd, k: &Nd, stride: usize, same: bool, groups: usize) -> Nd {
    let (h, w, cin) = (x.shape[0], x.shape[1], x.shape[2]);
    let (kh, kw, cpg, cout) = (k.shape[0], k.shape[1], k.shape[2], k.shape[3]);
    let opg = cout / groups;
    let (pt, oh) = axis(h, kh, stride, same);
    let (pl, ow) = axis(w, kw, stride, same);
    let mut out = vec![0.0; oh * ow * cout];
    for oy in 0..oh {
        for ox in 0..ow {
            for oc in 0..cout {
                let g = oc / opg;
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * stride + ky) as i64 - pt as i64;
                        let ix = (ox * stride + kx) as i64 - pl as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        for ci in 0..cpg {
                            let xv = x.data[(iy as usize * w + ix as usize) * cin + g * cpg + ci];
                            let kv = k.data[((ky * kw + kx) * cpg + ci) * cout + oc];
                            acc += xv * kv;
                        }
                    }
                }
                out[(oy * ow + ox) * cout + oc] = acc;
            }
        }
    }
    Nd { shape: vec![oh, ow, cout], data: out }
}

pub fn max_pool(x: &Nd, size: usize, stride: usize, same: bool) -> Nd {
    let (h, w, c) = (x.shape[0], x.shape[1], x.shape[2]);
    let (pt, oh) = axis(h, size, stride, same);
    let (pl, ow) = axis(w, size, stride, same);
    let mut out = vec![f64::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                for ky in 0..size {
                    for kx in 0..size {
                        let iy = (oy * stride + ky) as i64 - pt as i64;
                        let ix = (ox * stride + kx) as i64 - pl as i64;
                        if iy >= 0 && ix >= 0 && iy < h as i64 && ix < w as i64 {
                            let v = x.data[(iy as usize * w + ix as usize) * c + ch];
                            let o = &mut out[(oy * ow + ox) * c + ch];
                            *o = o.max(v);
                        }
                    }
                }
            }
        }
    }
    Nd { shape: vec![oh, ow, c], data: out }
}

pub fn layernorm(x: &Nd, gamma: &[f64], beta: &[f64], eps: f64) -> Nd {
    let d = *x.shape.last().unwrap();
    let mut out = x.clone();
    for row in out.data.chunks_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        for (i, v) in row.iter_mut().enumerate() {
            *v = (*v - mean) / (var + eps).sqrt() * gamma[i] + beta[i];
        }
    }
    out
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

fn tensor(c: &WeightContainer, name: &str) -> Nd {
    let t = c.tensor(name).unwrap_or_else(|| panic!("missing {name}"));
    Nd::from_f32(t.shape(), t.data())
}

fn add_bias(x: &mut Nd, b: &Nd) {
    let c = b.data.len();
    for row in x.data.chunks_mut(c) {
        for (v, bv) in row.iter_mut().zip(&b.data) {
            *v += bv;
        }
    }
}

/// Runs a JSON layer list layer by layer; batch norm is applied in its
/// unfolded `(x - mean) / sqrt(var + eps) * gamma + beta` form.
pub fn run_layers(c: &WeightContainer, layers: &[Value], mut x: Nd) -> Nd {
    for layer in layers {
        let op = layer["op"].as_str().unwrap();
        let name = layer.get("name").and_then(Value::as_str).unwrap_or("");
        let stride = layer.get("stride").and_then(Value::as_u64).unwrap_or(1) as usize;
        let same = layer.get("padding").and_then(Value::as_str).unwrap_or("same") == "same";
        let bias = layer.get("bias").and_then(Value::as_bool).unwrap_or(false);
        x = match op {
            "conv" => {
                let mut y = conv2d(&x, &tensor(c, &format!("{name}.w")), stride, same, 1);
                if bias {
                    add_bias(&mut y, &tensor(c, &format!("{name}.b")));
                }
                y
            }
            "sep_conv" => {
                let ch = x.shape[2];
                let d = conv2d(&x, &tensor(c, &format!("{name}.dw")), stride, same, ch);
                let mut y = conv2d(&d, &tensor(c, &format!("{name}.pw")), 1, false, 1);
                if bias {
                    add_bias(&mut y, &tensor(c, &format!("{name}.b")));
                }
                y
            }
            "batch_norm" => {
                let eps = layer.get("eps").and_then(Value::as_f64).unwrap_or(1e-3);
                let g = tensor(c, &format!("{name}.gamma")).data;
                let b = tensor(c, &format!("{name}.beta")).data;
                let m = tensor(c, &format!("{name}.mean")).data;
                let v = tensor(c, &format!("{name}.var")).data;
                let ch = g.len();
                for (i, val) in x.data.iter_mut().enumerate() {
                    let k = i % ch;
                    *val = (*val - m[k]) / (v[k] + eps).sqrt() * g[k] + b[k];
                }
                x
            }
            "relu" => Nd { data: x.data.iter().map(|v| v.max(0.0)).collect(), ..x },
            "max_pool" => {
                let size = layer["size"].as_u64().unwrap() as usize;
                max_pool(&x, size, stride, same)
            }
            "global_avg_pool" => {
                let ch = x.shape[2];
                let n = (x.shape[0] * x.shape[1]) as f64;
                let mut out = vec![0.0; ch];
                for (i, v) in x.data.iter().enumerate() {
                    out[i % ch] += v / n;
                }
                Nd { shape: vec![ch], data: out }
            }
            "dense" => {
                let w = tensor(c, &format!("{name}.w"));
                let flat = Nd { shape: vec![1, x.data.len()], data: x.data };
                let mut y = matmul(&flat, &w);
                add_bias(&mut y, &tensor(c, &format!("{name}.b")));
                Nd { shape: vec![y.data.len()], data: y.data }
            }
            "residual" => {
                let branch = run_layers(c, layer["branch"].as_array().unwrap(), x.clone());
                let short = match layer.get("shortcut").and_then(Value::as_array) {
                    Some(s) if !s.is_empty() => run_layers(c, s, x),
                    _ => x,
                };
                Nd { data: branch.data.iter().zip(&short.data).map(|(a, b)| a + b).collect(), ..branch }
            }
            other => panic!("unknown op {other}"),
        };
    }
    x
}

/// Reference class probabilities for a `seq-cnn` container.
pub fn classify(c: &WeightContainer, input: &Nd) -> Vec<f64> {
    let layers: Vec<Value> = serde_json::from_str(c.metadata("layers").unwrap()).unwrap();
    let logits = run_layers(c, &layers, input.clone());
    softmax(&logits.data)
}

/// Full-sequence GPT-2 forward pass without any cache, `[len][V]`.
pub fn gpt2_logits(c: &WeightContainer, ids: &[u32]) -> Vec<Vec<f64>> {
    let meta = |k: &str| c.metadata(k).unwrap().parse::<usize>().unwrap();
    let (n_layer, n_head, d) = (meta("n_layer"), meta("n_head"), meta("d_model"));
    let hd = d / n_head;
    let wte = tensor(c, "wte.weight");
    let wpe = tensor(c, "wpe.weight");
    let v = wte.shape[0];
    let n = ids.len();
    let mut x = Nd { shape: vec![n, d], data: vec![0.0; n * d] };
    for (t, &id) in ids.iter().enumerate() {
        for j in 0..d {
            x.data[t * d + j] = wte.data[id as usize * d + j] + wpe.data[t * d + j];
        }
    }
    let linear = |x: &Nd, w: &str, b: &str| {
        let mut y = matmul(x, &tensor(c, w));
        add_bias(&mut y, &tensor(c, b));
        y
    };
    for l in 0..n_layer {
        let p = |s: &str| format!("h.{l}.{s}");
        let h = layernorm(&x, &tensor(c, &p("ln_1.weight")).data, &tensor(c, &p("ln_1.bias")).data, 1e-5);
        let qkv = linear(&h, &p("attn.c_attn.weight"), &p("attn.c_attn.bias"));
        let mut attn = Nd { shape: vec![n, d], data: vec![0.0; n * d] };
        for head in 0..n_head {
            for i in 0..n {
                let q = |t: usize, j: usize| qkv.data[t * 3 * d + head * hd + j];
                let k = |t: usize, j: usize| qkv.data[t * 3 * d + d + head * hd + j];
                let vv = |t: usize, j: usize| qkv.data[t * 3 * d + 2 * d + head * hd + j];
                let scores: Vec<f64> = (0..n)
                    .map(|t| {
                        if t > i {
                            f64::NEG_INFINITY
                        } else {
                            (0..hd).map(|j| q(i, j) * k(t, j)).sum::<f64>() / (hd as f64).sqrt()
                        }
                    })
                    .collect();
                let w = softmax(&scores);
                for j in 0..hd {
                    attn.data[i * d + head * hd + j] = (0..n).map(|t| w[t] * vv(t, j)).sum();
                }
            }
        }
        let proj = linear(&attn, &p("attn.c_proj.weight"), &p("attn.c_proj.bias"));
        x.data.iter_mut().zip(&proj.data).for_each(|(a, b)| *a += b);
        let h = layernorm(&x, &tensor(c, &p("ln_2.weight")).data, &tensor(c, &p("ln_2.bias")).data, 1e-5);
        let mut ff = linear(&h, &p("mlp.c_fc.weight"), &p("mlp.c_fc.bias"));
        ff.data.iter_mut().for_each(|v| *v = gelu(*v));
        let out = linear(&ff, &p("mlp.c_proj.weight"), &p("mlp.c_proj.bias"));
        x.data.iter_mut().zip(&out.data).for_each(|(a, b)| *a += b);
    }
    let h = layernorm(&x, &tensor(c, "ln_f.weight").data, &tensor(c, "ln_f.bias").data, 1e-5);
    (0..n)
        .map(|t| (0..v).map(|tok| (0..d).map(|j| h.data[t * d + j] * wte.data[tok * d + j]).sum()).collect())
        .collect()
}

/// Every grid window of every scale evaluated on its own, then grouped and
/// ranked the way the detector documents.
pub fn exhaustive_detect(model: &CascadeModel, frame: &Frame, params: &DetectParams) -> Vec<FaceBox> {
    let ii = IntegralImage::new(frame);
    let mut raw = Vec::new();
    for (scale, stride) in scale_schedule(model, frame.width(), frame.height(), params) {
        let (w, h) = model.scaled_window(scale);
        let mut y = 0;
        while y + h <= frame.height() {
            let mut x = 0;
            while x + w <= frame.width() {
                let r = model.evaluate_window(&ii, x, y, scale).unwrap();
                if r.pass {
                    raw.push(FaceBox { x, y, w, h, neighbors: 0, score: r.score });
                }
                x += stride;
            }
            y += stride;
        }
    }
    let mut boxes = group_boxes(&raw, params.min_neighbors, params.group_eps);
    boxes.sort_by(|a, b| b.neighbors.cmp(&a.neighbors).then(b.score.partial_cmp(&a.score).unwrap()));
    boxes
}

/// Inverse-CDF draw over `probs` in the given order.
pub fn inverse_cdf(order: &[(u32, f64)], u: f64) -> u32 {
    let mut acc = 0.0;
    for &(tok, p) in order {
        acc += p;
        if u < acc {
            return tok;
        }
    }
    order.last().unwrap().0
}
