//! GPT-2 style decoder-only transformer, inference only.
//!
//! Parameter names follow the Hugging Face GPT-2 checkpoint with the
//! `transformer.` prefix dropped; linear weights are stored `[in, out]`:
//!
//! ```text
//! wte.weight                 [V, d]
//! wpe.weight                 [n_ctx, d]
//! h.{i}.ln_1.weight/bias     [d]
//! h.{i}.attn.c_attn.weight   [d, 3d]   (+ .bias [3d])
//! h.{i}.attn.c_proj.weight   [d, d]    (+ .bias [d])
//! h.{i}.ln_2.weight/bias     [d]
//! h.{i}.mlp.c_fc.weight      [d, f]    (+ .bias [f])
//! h.{i}.mlp.c_proj.weight    [f, d]    (+ .bias [d])
//! ln_f.weight/bias           [d]
//! ```
//!
//! The output head is tied to `wte`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::container::WeightContainer;
use crate::tensor::{gelu_scalar, layernorm_row, matmul_into, softmax_in_place, Tensor};

pub const LAYERNORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LmError {
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has shape {actual:?}, expected {expected:?}")]
    ShapeInconsistent {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("bad model metadata: {0}")]
    Metadata(String),
    #[error("context overflow: {needed} positions needed, model holds {n_ctx}")]
    ContextOverflow { needed: usize, n_ctx: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(u32),
    #[error("no input tokens")]
    EmptyInput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmConfig {
    pub n_layer: usize,
    pub n_head: usize,
    pub d_model: usize,
    pub n_ctx: usize,
    pub vocab_size: usize,
}

impl LmConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_head
    }
}

#[derive(Debug, Clone)]
struct Block {
    ln1_g: Vec<f32>,
    ln1_b: Vec<f32>,
    attn_w: Vec<f32>,
    attn_b: Vec<f32>,
    proj_w: Vec<f32>,
    proj_b: Vec<f32>,
    ln2_g: Vec<f32>,
    ln2_b: Vec<f32>,
    fc_w: Vec<f32>,
    fc_b: Vec<f32>,
    out_w: Vec<f32>,
    out_b: Vec<f32>,
    d_ff: usize,
}

/// Immutable model weights; share freely across threads.
#[derive(Debug, Clone)]
pub struct LmModel {
    config: LmConfig,
    wte: Vec<f32>,
    wpe: Vec<f32>,
    blocks: Vec<Block>,
    lnf_g: Vec<f32>,
    lnf_b: Vec<f32>,
}

/// Keys and values of every position seen so far, per layer, `[len, d]`
/// row-major. Owned by one generation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl KvCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

struct Loader<'a> {
    c: &'a WeightContainer,
}

impl Loader<'_> {
    fn get(&self, name: &str, shape: &[usize]) -> Result<Vec<f32>, LmError> {
        let t = self.c.tensor(name).ok_or_else(|| LmError::MissingTensor(name.into()))?;
        if t.shape() != shape {
            return Err(LmError::ShapeInconsistent {
                name: name.into(),
                expected: shape.to_vec(),
                actual: t.shape().to_vec(),
            });
        }
        Ok(t.data().to_vec())
    }

    fn meta_usize(&self, key: &str) -> Result<usize, LmError> {
        let v = self.c.metadata(key).ok_or_else(|| LmError::Metadata(format!("missing {key:?}")))?;
        v.trim()
            .parse()
            .ok()
            .filter(|&n: &usize| n > 0)
            .ok_or_else(|| LmError::Metadata(format!("{key:?} must be a positive integer, got {v:?}")))
    }
}

impl LmModel {
    /// Loads and validates a container with metadata `arch = gpt2` and
    /// `n_layer`, `n_head`, `d_model`, `n_ctx`. The vocabulary size comes from
    /// `wte.weight`.
    pub fn load(c: &WeightContainer) -> Result<Self, LmError> {
        match c.metadata("arch") {
            Some("gpt2") => {}
            other => return Err(LmError::Metadata(format!("arch must be \"gpt2\", got {other:?}"))),
        }
        let l = Loader { c };
        let n_layer = l.meta_usize("n_layer")?;
        let n_head = l.meta_usize("n_head")?;
        let d = l.meta_usize("d_model")?;
        let n_ctx = l.meta_usize("n_ctx")?;
        if d % n_head != 0 {
            return Err(LmError::Metadata(format!("d_model {d} is not divisible by n_head {n_head}")));
        }
        let wte_t = c.tensor("wte.weight").ok_or_else(|| LmError::MissingTensor("wte.weight".into()))?;
        let vocab_size = match wte_t.shape() {
            [v, dd] if *dd == d => *v,
            s => {
                return Err(LmError::ShapeInconsistent {
                    name: "wte.weight".into(),
                    expected: vec![0, d],
                    actual: s.to_vec(),
                })
            }
        };
        let wte = wte_t.data().to_vec();
        let wpe = l.get("wpe.weight", &[n_ctx, d])?;
        let mut blocks = Vec::with_capacity(n_layer);
        for i in 0..n_layer {
            let p = |s: &str| format!("h.{i}.{s}");
            let fc_name = p("mlp.c_fc.weight");
            let d_ff = match c.tensor(&fc_name).map(Tensor::shape) {
                Some([dd, f]) if *dd == d => *f,
                Some(s) => {
                    return Err(LmError::ShapeInconsistent {
                        name: fc_name,
                        expected: vec![d, 4 * d],
                        actual: s.to_vec(),
                    })
                }
                None => return Err(LmError::MissingTensor(fc_name)),
            };
            blocks.push(Block {
                ln1_g: l.get(&p("ln_1.weight"), &[d])?,
                ln1_b: l.get(&p("ln_1.bias"), &[d])?,
                attn_w: l.get(&p("attn.c_attn.weight"), &[d, 3 * d])?,
                attn_b: l.get(&p("attn.c_attn.bias"), &[3 * d])?,
                proj_w: l.get(&p("attn.c_proj.weight"), &[d, d])?,
                proj_b: l.get(&p("attn.c_proj.bias"), &[d])?,
                ln2_g: l.get(&p("ln_2.weight"), &[d])?,
                ln2_b: l.get(&p("ln_2.bias"), &[d])?,
                fc_w: l.get(&fc_name, &[d, d_ff])?,
                fc_b: l.get(&p("mlp.c_fc.bias"), &[d_ff])?,
                out_w: l.get(&p("mlp.c_proj.weight"), &[d_ff, d])?,
                out_b: l.get(&p("mlp.c_proj.bias"), &[d])?,
                d_ff,
            });
        }
        Ok(Self {
            config: LmConfig {
                n_layer,
                n_head,
                d_model: d,
                n_ctx,
                vocab_size,
            },
            wte,
            wpe,
            blocks,
            lnf_g: l.get("ln_f.weight", &[d])?,
            lnf_b: l.get("ln_f.bias", &[d])?,
        })
    }

    pub fn config(&self) -> &LmConfig {
        &self.config
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache {
            keys: vec![Vec::new(); self.config.n_layer],
            values: vec![Vec::new(); self.config.n_layer],
            len: 0,
        }
    }

    /// Runs `ids` after the positions already in `cache` and returns logits
    /// `[ids.len(), V]`. The cache is extended only on success.
    pub fn forward(&self, ids: &[u32], cache: &mut KvCache) -> Result<Tensor, LmError> {
        self.forward_traced(ids, cache, |_, _, _, _| {})
    }

    /// [`forward`](Self::forward) that also reports every attention row as
    /// `(layer, head, position, weights)`.
    pub fn forward_traced(
        &self,
        ids: &[u32],
        cache: &mut KvCache,
        mut on_attention: impl FnMut(usize, usize, usize, &[f32]),
    ) -> Result<Tensor, LmError> {
        let cfg = self.config;
        let (d, n) = (cfg.d_model, ids.len());
        if n == 0 {
            return Err(LmError::EmptyInput);
        }
        let past = cache.len;
        if past + n > cfg.n_ctx {
            return Err(LmError::ContextOverflow {
                needed: past + n,
                n_ctx: cfg.n_ctx,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
            return Err(LmError::UnknownToken(bad));
        }
        if cache.keys.len() != cfg.n_layer {
            *cache = self.new_cache();
        }

        let mut x = vec![0.0f32; n * d];
        for (t, &id) in ids.iter().enumerate() {
            let tok = &self.wte[id as usize * d..(id as usize + 1) * d];
            let pos = &self.wpe[(past + t) * d..(past + t + 1) * d];
            for j in 0..d {
                x[t * d + j] = tok[j] + pos[j];
            }
        }

        let mut new_keys = Vec::with_capacity(cfg.n_layer);
        let mut new_values = Vec::with_capacity(cfg.n_layer);
        let hd = cfg.head_dim();
        let scale = 1.0 / libm::sqrtf(hd as f32);
        for (li, b) in self.blocks.iter().enumerate() {
            let mut h = x.clone();
            for row in h.chunks_exact_mut(d) {
                layernorm_row(row, &b.ln1_g, &b.ln1_b, LAYERNORM_EPS);
            }
            let mut qkv = bias_rows(&b.attn_b, n);
            matmul_into(&h, &b.attn_w, &mut qkv, n, d, 3 * d);

            let mut keys = cache.keys[li].clone();
            let mut values = cache.values[li].clone();
            for t in 0..n {
                keys.extend_from_slice(&qkv[t * 3 * d + d..t * 3 * d + 2 * d]);
                values.extend_from_slice(&qkv[t * 3 * d + 2 * d..t * 3 * d + 3 * d]);
            }

            let mut attn = vec![0.0f32; n * d];
            let mut scores = Vec::with_capacity(past + n);
            for t in 0..n {
                let pos = past + t;
                for head in 0..cfg.n_head {
                    let q = &qkv[t * 3 * d + head * hd..t * 3 * d + (head + 1) * hd];
                    scores.clear();
                    for j in 0..=pos {
                        let k = &keys[j * d + head * hd..j * d + (head + 1) * hd];
                        scores.push(dot(q, k) * scale);
                    }
                    softmax_in_place(&mut scores);
                    on_attention(li, head, pos, &scores);
                    let out = &mut attn[t * d + head * hd..t * d + (head + 1) * hd];
                    for (j, &w) in scores.iter().enumerate() {
                        let v = &values[j * d + head * hd..j * d + (head + 1) * hd];
                        for (o, vv) in out.iter_mut().zip(v) {
                            *o += w * vv;
                        }
                    }
                }
            }
            let mut proj = bias_rows(&b.proj_b, n);
            matmul_into(&attn, &b.proj_w, &mut proj, n, d, d);
            add_assign(&mut x, &proj);

            let mut h = x.clone();
            for row in h.chunks_exact_mut(d) {
                layernorm_row(row, &b.ln2_g, &b.ln2_b, LAYERNORM_EPS);
            }
            let mut ff = bias_rows(&b.fc_b, n);
            matmul_into(&h, &b.fc_w, &mut ff, n, d, b.d_ff);
            ff.iter_mut().for_each(|v| *v = gelu_scalar(*v));
            let mut out = bias_rows(&b.out_b, n);
            matmul_into(&ff, &b.out_w, &mut out, n, b.d_ff, d);
            add_assign(&mut x, &out);

            new_keys.push(keys);
            new_values.push(values);
        }

        for row in x.chunks_exact_mut(d) {
            layernorm_row(row, &self.lnf_g, &self.lnf_b, LAYERNORM_EPS);
        }
        let v = cfg.vocab_size;
        let mut logits = vec![0.0f32; n * v];
        for t in 0..n {
            let h = &x[t * d..(t + 1) * d];
            for (tok, out) in logits[t * v..(t + 1) * v].iter_mut().enumerate() {
                *out = dot(h, &self.wte[tok * d..(tok + 1) * d]);
            }
        }

        cache.keys = new_keys;
        cache.values = new_values;
        cache.len = past + n;
        Ok(Tensor::new(vec![n, v], logits).expect("logits shape matches data"))
    }
}

fn bias_rows(bias: &[f32], n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(bias.len() * n);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    out
}

fn add_assign(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
