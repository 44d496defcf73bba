//! Transformer encoder-decoder with a pointer-generator output head.
//!
//! The decoder output at step t is a softmax over the concatenation of
//! `s = dense(d_t)` (|V| parse-symbol scores) and `a_i = d_tᵀ W e_i`
//! (n bilinear pointer scores). Pointer tokens in the decoder input are
//! embedded by position only.
//!
//! Two routes share the layer code through the private [`Node`] trait:
//! a taped, batched teacher-forced forward for training, and an eager,
//! KV-cached incremental decoder for inference.

use std::collections::HashMap;

use ptrparse_tensor::{kernels, Tape, Tensor, TensorError, Var, MASK_VALUE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::symtab::{BOS, PAD};

type TResult<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("source of {n} tokens exceeds max_src_len {max}")]
    SourceTooLong { n: usize, max: usize },
    #[error("empty source")]
    EmptySource,
    #[error("decoder prefix contains PAD")]
    PrefixContainsPAD,
    #[error("invalid decoder input: {0}")]
    InvalidInput(String),
    #[error("parameter mismatch: {0}")]
    Parameters(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_enc_layers: usize,
    pub n_enc_heads: usize,
    pub enc_ffn: usize,
    pub d_dec: usize,
    pub n_dec_layers: usize,
    pub n_dec_heads: usize,
    pub dec_ffn: usize,
    pub dropout: f32,
    pub max_src_len: usize,
    /// |V|, parse symbols including PAD/BOS/EOS.
    pub vocab_size: usize,
    pub src_vocab_size: usize,
}

impl ModelConfig {
    /// 128-d, two layers and four heads on each side.
    pub fn small(vocab_size: usize, src_vocab_size: usize, max_src_len: usize) -> Self {
        ModelConfig {
            d_model: 128,
            n_enc_layers: 2,
            n_enc_heads: 4,
            enc_ffn: 256,
            d_dec: 128,
            n_dec_layers: 2,
            n_dec_heads: 4,
            dec_ffn: 256,
            dropout: 0.1,
            max_src_len,
            vocab_size,
            src_vocab_size,
        }
    }

    /// 16-d, one layer each side; used for gradient checks.
    pub fn tiny(vocab_size: usize, src_vocab_size: usize, max_src_len: usize) -> Self {
        ModelConfig {
            d_model: 16,
            n_enc_layers: 1,
            n_enc_heads: 2,
            enc_ffn: 32,
            d_dec: 16,
            n_dec_layers: 1,
            n_dec_heads: 2,
            dec_ffn: 32,
            dropout: 0.0,
            max_src_len,
            vocab_size,
            src_vocab_size,
        }
    }

    /// Scratch encoder of 512 units, 6 layers, 8 heads, 1024 hidden, with a
    /// 128-unit, 4-layer decoder of 512 hidden. The decoder uses 4 heads
    /// because 128 is not divisible by 3.
    pub fn large(vocab_size: usize, src_vocab_size: usize, max_src_len: usize) -> Self {
        ModelConfig {
            d_model: 512,
            n_enc_layers: 6,
            n_enc_heads: 8,
            enc_ffn: 1024,
            d_dec: 128,
            n_dec_layers: 4,
            n_dec_heads: 4,
            dec_ffn: 512,
            dropout: 0.1,
            max_src_len,
            vocab_size,
            src_vocab_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.d_dec == 0 || self.n_enc_heads == 0 || self.n_dec_heads == 0 {
            return bad("dimensions and head counts must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_enc_heads) {
            return bad(format!("d_model {} not divisible by {} heads", self.d_model, self.n_enc_heads));
        }
        if !self.d_dec.is_multiple_of(self.n_dec_heads) {
            return bad(format!("d_dec {} not divisible by {} heads", self.d_dec, self.n_dec_heads));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.vocab_size < 3 || self.src_vocab_size < 2 || self.max_src_len == 0 {
            return bad("vocabularies and max_src_len too small".into());
        }
        Ok(())
    }
}

/// Operations shared by eager tensors and taped variables.
pub(crate) trait Node: Sized + Clone {
    fn dims(&self) -> Vec<usize>;
    fn mm(&self, rhs: &Self) -> TResult<Self>;
    fn plus(&self, rhs: &Self) -> TResult<Self>;
    fn scaled(&self, c: f32) -> Self;
    fn swap(&self, d0: usize, d1: usize) -> TResult<Self>;
    fn shaped(&self, shape: &[usize]) -> TResult<Self>;
    fn norm(&self, g: &Self, b: &Self) -> TResult<Self>;
    fn rectified(&self) -> Self;
    fn softmax(&self) -> Self;
    fn masked(&self, mask: &[bool]) -> TResult<Self>;
    fn dropped(&self, p: f32, train: bool) -> TResult<Self>;
    fn join_last(parts: &[Self]) -> TResult<Self>;
    /// Append `new` ([1, k, d]) after `self` ([1, t, d]) along time.
    fn append_time(&self, new: &Self) -> TResult<Self>;
}

impl Node for Tensor {
    fn dims(&self) -> Vec<usize> {
        self.shape().to_vec()
    }
    fn mm(&self, rhs: &Self) -> TResult<Self> {
        self.matmul(rhs)
    }
    fn plus(&self, rhs: &Self) -> TResult<Self> {
        self.add(rhs)
    }
    fn scaled(&self, c: f32) -> Self {
        self.scale(c)
    }
    fn swap(&self, d0: usize, d1: usize) -> TResult<Self> {
        self.transpose(d0, d1)
    }
    fn shaped(&self, shape: &[usize]) -> TResult<Self> {
        self.reshape(shape.to_vec())
    }
    fn norm(&self, g: &Self, b: &Self) -> TResult<Self> {
        self.layer_norm(g, b)
    }
    fn rectified(&self) -> Self {
        self.relu()
    }
    fn softmax(&self) -> Self {
        self.softmax_last()
    }
    fn masked(&self, mask: &[bool]) -> TResult<Self> {
        self.masked_fill(mask, MASK_VALUE)
    }
    fn dropped(&self, _p: f32, _train: bool) -> TResult<Self> {
        Ok(self.clone())
    }
    fn join_last(parts: &[Self]) -> TResult<Self> {
        Tensor::concat_last(&parts.iter().collect::<Vec<_>>())
    }
    fn append_time(&self, new: &Self) -> TResult<Self> {
        let (a, b) = (self.shape(), new.shape());
        if a.len() != 3 || b.len() != 3 || a[0] != 1 || b[0] != 1 || a[2] != b[2] {
            return Err(TensorError::shape("append_time", a, b));
        }
        let mut data = self.data().to_vec();
        data.extend_from_slice(new.data());
        Tensor::new([1, a[1] + b[1], a[2]], data)
    }
}

impl<'t> Node for Var<'t> {
    fn dims(&self) -> Vec<usize> {
        self.shape()
    }
    fn mm(&self, rhs: &Self) -> TResult<Self> {
        self.matmul(*rhs)
    }
    fn plus(&self, rhs: &Self) -> TResult<Self> {
        self.add(*rhs)
    }
    fn scaled(&self, c: f32) -> Self {
        self.scale(c)
    }
    fn swap(&self, d0: usize, d1: usize) -> TResult<Self> {
        self.transpose(d0, d1)
    }
    fn shaped(&self, shape: &[usize]) -> TResult<Self> {
        self.reshape(shape.to_vec())
    }
    fn norm(&self, g: &Self, b: &Self) -> TResult<Self> {
        self.layer_norm(*g, *b)
    }
    fn rectified(&self) -> Self {
        self.relu()
    }
    fn softmax(&self) -> Self {
        self.softmax_last()
    }
    fn masked(&self, mask: &[bool]) -> TResult<Self> {
        self.masked_fill(mask)
    }
    fn dropped(&self, p: f32, train: bool) -> TResult<Self> {
        self.dropout(p, train)
    }
    fn join_last(parts: &[Self]) -> TResult<Self> {
        Var::concat_last(parts)
    }
    fn append_time(&self, _new: &Self) -> TResult<Self> {
        Err(TensorError::Invalid("taped decoding is not incremental".into()))
    }
}

#[derive(Clone, Copy, Debug)]
struct Lin {
    w: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Clone, Copy, Debug)]
struct Attn {
    q: Lin,
    k: Lin,
    v: Lin,
    o: Lin,
}

#[derive(Clone, Debug)]
struct EncLayer {
    ln1: Norm,
    attn: Attn,
    ln2: Norm,
    ff1: Lin,
    ff2: Lin,
}

#[derive(Clone, Debug)]
struct DecLayer {
    ln1: Norm,
    self_attn: Attn,
    ln2: Norm,
    cross: Attn,
    ln3: Norm,
    ff1: Lin,
    ff2: Lin,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_embed: usize,
    enc_layers: Vec<EncLayer>,
    enc_norm: Norm,
    dec_embed: usize,
    ptr_embed: usize,
    dec_layers: Vec<DecLayer>,
    dec_norm: Norm,
    out: Lin,
    bilinear: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(f32),
    Zeros,
    Ones,
}

#[derive(Default)]
struct ParamTable {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    inits: Vec<Init>,
}

impl ParamTable {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.names.push(name);
        self.shapes.push(shape);
        self.inits.push(init);
        self.names.len() - 1
    }

    fn lin(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Lin {
        let bound = 1.0 / (fan_in as f32).sqrt();
        Lin {
            w: self.add(format!("{name}.w"), vec![fan_in, fan_out], Init::Uniform(bound)),
            b: self.add(format!("{name}.b"), vec![fan_out], Init::Zeros),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Norm {
        Norm {
            g: self.add(format!("{name}.g"), vec![d], Init::Ones),
            b: self.add(format!("{name}.b"), vec![d], Init::Zeros),
        }
    }

    fn attn(&mut self, name: &str, d_q: usize, d_kv: usize) -> Attn {
        Attn {
            q: self.lin(&format!("{name}.q"), d_q, d_q),
            k: self.lin(&format!("{name}.k"), d_kv, d_q),
            v: self.lin(&format!("{name}.v"), d_kv, d_q),
            o: self.lin(&format!("{name}.o"), d_q, d_q),
        }
    }

    fn embedding(&mut self, name: &str, rows: usize, d: usize) -> usize {
        self.add(name.to_string(), vec![rows, d], Init::Uniform(1.0 / (d as f32).sqrt()))
    }
}

fn layout(c: &ModelConfig) -> (Layout, ParamTable) {
    let mut s = ParamTable::default();
    let enc_embed = s.embedding("enc.embed", c.src_vocab_size, c.d_model);
    let enc_layers = (0..c.n_enc_layers)
        .map(|l| EncLayer {
            ln1: s.norm(&format!("enc.{l}.ln1"), c.d_model),
            attn: s.attn(&format!("enc.{l}.attn"), c.d_model, c.d_model),
            ln2: s.norm(&format!("enc.{l}.ln2"), c.d_model),
            ff1: s.lin(&format!("enc.{l}.ff1"), c.d_model, c.enc_ffn),
            ff2: s.lin(&format!("enc.{l}.ff2"), c.enc_ffn, c.d_model),
        })
        .collect();
    let enc_norm = s.norm("enc.norm", c.d_model);
    let dec_embed = s.embedding("dec.embed", c.vocab_size, c.d_dec);
    let ptr_embed = s.embedding("dec.ptr_embed", c.max_src_len, c.d_dec);
    let dec_layers = (0..c.n_dec_layers)
        .map(|l| DecLayer {
            ln1: s.norm(&format!("dec.{l}.ln1"), c.d_dec),
            self_attn: s.attn(&format!("dec.{l}.self"), c.d_dec, c.d_dec),
            ln2: s.norm(&format!("dec.{l}.ln2"), c.d_dec),
            cross: s.attn(&format!("dec.{l}.cross"), c.d_dec, c.d_model),
            ln3: s.norm(&format!("dec.{l}.ln3"), c.d_dec),
            ff1: s.lin(&format!("dec.{l}.ff1"), c.d_dec, c.dec_ffn),
            ff2: s.lin(&format!("dec.{l}.ff2"), c.dec_ffn, c.d_dec),
        })
        .collect();
    let dec_norm = s.norm("dec.norm", c.d_dec);
    let out = s.lin("out", c.d_dec, c.vocab_size);
    let bilinear = s.add(
        "pointer.bilinear".into(),
        vec![c.d_dec, c.d_model],
        Init::Uniform(1.0 / (c.d_dec as f32).sqrt()),
    );
    (
        Layout {
            enc_embed,
            enc_layers,
            enc_norm,
            dec_embed,
            ptr_embed,
            dec_layers,
            dec_norm,
            out,
            bilinear,
        },
        s,
    )
}

/// Fixed sinusoidal positional encodings for positions `0..len`.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(len * d);
    for pos in 0..len {
        data.extend(positional_row(pos, d));
    }
    Tensor::new([len, d], data).expect("positional shape")
}

fn positional_row(pos: usize, d: usize) -> impl Iterator<Item = f32> {
    (0..d).map(move |i| {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let angle = pos as f64 / rate;
        (if i % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
    })
}

fn linear<N: Node>(p: &[N], l: Lin, x: &N) -> TResult<N> {
    x.mm(&p[l.w])?.plus(&p[l.b])
}

fn split_heads<N: Node>(x: &N, heads: usize) -> TResult<N> {
    let d = x.dims();
    x.shaped(&[d[0], d[1], heads, d[2] / heads])?.swap(1, 2)
}

/// Scaled dot-product attention over projected `q` [b,tq,d] and `k`, `v` [b,tk,d].
fn attend<N: Node>(q: &N, k: &N, v: &N, heads: usize, mask: Option<&[bool]>) -> TResult<N> {
    let d = q.dims();
    let dh = d[2] / heads;
    let qh = split_heads(q, heads)?;
    let kt = split_heads(k, heads)?.swap(2, 3)?;
    let vh = split_heads(v, heads)?;
    let mut scores = qh.mm(&kt)?.scaled((dh as f32).sqrt().recip());
    if let Some(m) = mask {
        scores = scores.masked(m)?;
    }
    scores.softmax().mm(&vh)?.swap(1, 2)?.shaped(&[d[0], d[1], d[2]])
}

fn feed_forward<N: Node>(p: &[N], ff1: Lin, ff2: Lin, x: &N) -> TResult<N> {
    linear(p, ff2, &linear(p, ff1, x)?.rectified())
}

struct Regime {
    dropout: f32,
    train: bool,
}

fn enc_layer<N: Node>(p: &[N], l: &EncLayer, x: &N, heads: usize, mask: Option<&[bool]>, r: &Regime) -> TResult<N> {
    let h = x.norm(&p[l.ln1.g], &p[l.ln1.b])?;
    let a = attend(
        &linear(p, l.attn.q, &h)?,
        &linear(p, l.attn.k, &h)?,
        &linear(p, l.attn.v, &h)?,
        heads,
        mask,
    )?;
    let x = x.plus(&linear(p, l.attn.o, &a)?.dropped(r.dropout, r.train)?)?;
    let h = x.norm(&p[l.ln2.g], &p[l.ln2.b])?;
    x.plus(&feed_forward(p, l.ff1, l.ff2, &h)?.dropped(r.dropout, r.train)?)
}

struct DecMasks<'a> {
    causal: Option<&'a [bool]>,
    cross: Option<&'a [bool]>,
}

#[allow(clippy::too_many_arguments)]
fn dec_layer<N: Node>(
    p: &[N],
    l: &DecLayer,
    x: &N,
    heads: usize,
    cache: Option<&mut (N, N)>,
    memory: &(N, N),
    masks: &DecMasks<'_>,
    r: &Regime,
) -> TResult<N> {
    let h = x.norm(&p[l.ln1.g], &p[l.ln1.b])?;
    let q = linear(p, l.self_attn.q, &h)?;
    let mut k = linear(p, l.self_attn.k, &h)?;
    let mut v = linear(p, l.self_attn.v, &h)?;
    if let Some(c) = cache {
        c.0 = c.0.append_time(&k)?;
        c.1 = c.1.append_time(&v)?;
        k = c.0.clone();
        v = c.1.clone();
    }
    let a = attend(&q, &k, &v, heads, masks.causal)?;
    let x = x.plus(&linear(p, l.self_attn.o, &a)?.dropped(r.dropout, r.train)?)?;

    let h = x.norm(&p[l.ln2.g], &p[l.ln2.b])?;
    let q = linear(p, l.cross.q, &h)?;
    let a = attend(&q, &memory.0, &memory.1, heads, masks.cross)?;
    let x = x.plus(&linear(p, l.cross.o, &a)?.dropped(r.dropout, r.train)?)?;

    let h = x.norm(&p[l.ln3.g], &p[l.ln3.b])?;
    x.plus(&feed_forward(p, l.ff1, l.ff2, &h)?.dropped(r.dropout, r.train)?)
}

fn cross_memory<N: Node>(p: &[N], layers: &[DecLayer], enc: &N) -> TResult<Vec<(N, N)>> {
    layers
        .iter()
        .map(|l| Ok((linear(p, l.cross.k, enc)?, linear(p, l.cross.v, enc)?)))
        .collect()
}

/// Pre-softmax joint scores [b,t,|V|+s] from decoder states `d` and
/// transposed encoder states `enc_t` [b,d_model,s].
fn output_head<N: Node>(p: &[N], lay: &Layout, d: &N, enc_t: &N, mask: Option<&[bool]>) -> TResult<N> {
    let vocab = linear(p, lay.out, d)?;
    let pointer = d.mm(&p[lay.bilinear])?.mm(enc_t)?;
    let joint = N::join_last(&[vocab, pointer])?;
    match mask {
        Some(m) => joint.masked(m),
        None => Ok(joint),
    }
}

/// Padded teacher-forcing batch. Target ids follow the symbol table layout:
/// pointer i has id |V| + i.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub tgt_len: usize,
    pub src: Vec<usize>,
    pub src_lens: Vec<usize>,
    /// BOS followed by the target, PAD-filled.
    pub tgt_in: Vec<usize>,
    /// The target followed by EOS, PAD-filled.
    pub tgt_out: Vec<usize>,
}

impl Batch {
    /// `examples` pairs source ids with target ids (no BOS/EOS).
    pub fn new(examples: &[(&[usize], &[usize])], eos: usize) -> Self {
        let size = examples.len();
        let src_len = examples.iter().map(|e| e.0.len()).max().unwrap_or(0);
        let tgt_len = examples.iter().map(|e| e.1.len() + 1).max().unwrap_or(0);
        let mut src = vec![PAD; size * src_len];
        let mut tgt_in = vec![PAD; size * tgt_len];
        let mut tgt_out = vec![PAD; size * tgt_len];
        for (b, (s, t)) in examples.iter().enumerate() {
            src[b * src_len..b * src_len + s.len()].copy_from_slice(s);
            tgt_in[b * tgt_len] = BOS;
            tgt_in[b * tgt_len + 1..b * tgt_len + 1 + t.len()].copy_from_slice(t);
            tgt_out[b * tgt_len..b * tgt_len + t.len()].copy_from_slice(t);
            tgt_out[b * tgt_len + t.len()] = eos;
        }
        Batch {
            size,
            src_len,
            tgt_len,
            src,
            src_lens: examples.iter().map(|e| e.0.len()).collect(),
            tgt_in,
            tgt_out,
        }
    }
}

/// Encoded source for one query.
#[derive(Clone, Debug)]
pub struct EncoderStates {
    /// [1, n, d_model]
    pub states: Tensor,
    pub n: usize,
}

/// Joint distribution over the |V| parse symbols followed by n pointers.
#[derive(Clone, Debug)]
pub struct OutputDistribution {
    pub vocab_size: usize,
    /// Pre-softmax scores: `s` then `a`.
    pub logits: Vec<f32>,
    pub probs: Vec<f32>,
    pub log_probs: Vec<f32>,
}

impl OutputDistribution {
    fn from_logits(vocab_size: usize, logits: Vec<f32>) -> Self {
        let w = logits.len();
        let mut probs = vec![0.0; w];
        let mut log_probs = vec![0.0; w];
        kernels::softmax_rows(&logits, &mut probs, w);
        kernels::log_softmax_rows(&logits, &mut log_probs, w);
        OutputDistribution {
            vocab_size,
            logits,
            probs,
            log_probs,
        }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn vocab_scores(&self) -> &[f32] {
        &self.logits[..self.vocab_size]
    }

    pub fn pointer_scores(&self) -> &[f32] {
        &self.logits[self.vocab_size..]
    }

    /// Highest-probability id, ties to the lowest id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.log_probs.iter().enumerate() {
            if p > self.log_probs[best] {
                best = i;
            }
        }
        best
    }
}

pub struct Model {
    config: ModelConfig,
    layout: Layout,
    names: Vec<String>,
    params: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl Model {
    /// Fresh parameters: uniform ±1/√fan_in weights, zero biases, unit gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, table) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = table
            .shapes
            .iter()
            .zip(&table.inits)
            .map(|(shape, init)| {
                let n: usize = shape.iter().product();
                let data = match *init {
                    Init::Uniform(b) => (0..n).map(|_| rng.gen_range(-b..b)).collect(),
                    Init::Zeros => vec![0.0; n],
                    Init::Ones => vec![1.0; n],
                };
                Tensor::new(shape.clone(), data).expect("param shape")
            })
            .collect();
        Ok(Self::assemble(config, layout, table.names, params))
    }

    /// Rebuild from named tensors (any order); names and shapes must match.
    pub fn from_params(config: ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, table) = layout(&config);
        let mut given: HashMap<String, Tensor> = named.into_iter().collect();
        let mut params = Vec::with_capacity(table.names.len());
        for (name, shape) in table.names.iter().zip(&table.shapes) {
            let t = given
                .remove(name)
                .ok_or_else(|| ModelError::Parameters(format!("missing {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(ModelError::Parameters(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            params.push(t);
        }
        if let Some(extra) = given.keys().next() {
            return Err(ModelError::Parameters(format!("unexpected {extra}")));
        }
        Ok(Self::assemble(config, layout, table.names, params))
    }

    fn assemble(config: ModelConfig, layout: Layout, names: Vec<String>, params: Vec<Tensor>) -> Self {
        let index = names.iter().cloned().enumerate().map(|(i, n)| (n, i)).collect();
        Model {
            config,
            layout,
            names,
            params,
            index,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn named_params(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.params)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(Tensor::numel).sum()
    }

    /// Record every parameter as a differentiable leaf, in [`Model::names`] order.
    pub fn params_on<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params.iter().map(|p| tape.param(p)).collect()
    }

    fn check_source(&self, src: &[usize]) -> Result<()> {
        if src.is_empty() {
            return Err(ModelError::EmptySource);
        }
        if src.len() > self.config.max_src_len {
            return Err(ModelError::SourceTooLong {
                n: src.len(),
                max: self.config.max_src_len,
            });
        }
        if let Some(&bad) = src.iter().find(|&&i| i >= self.config.src_vocab_size) {
            return Err(ModelError::InvalidInput(format!("source id {bad} out of range")));
        }
        Ok(())
    }

    fn check_target(&self, ids: &[usize]) -> Result<()> {
        let limit = self.config.vocab_size + self.config.max_src_len;
        match ids.iter().find(|&&i| i >= limit) {
            Some(bad) => Err(ModelError::InvalidInput(format!("target id {bad} out of range"))),
            None => Ok(()),
        }
    }

    /// Teacher-forced log-probabilities [b, t, |V| + s] on `vars`
    /// (from [`Model::params_on`]). Padded pointer columns are masked.
    pub fn forward<'t>(&self, vars: &[Var<'t>], batch: &Batch, train: bool) -> Result<Var<'t>> {
        let c = &self.config;
        let lay = &self.layout;
        let (b, s, t) = (batch.size, batch.src_len, batch.tgt_len);
        if vars.len() != self.params.len() {
            return Err(ModelError::Parameters("variable count differs from parameters".into()));
        }
        if b == 0 || s == 0 || t == 0 {
            return Err(ModelError::InvalidInput("empty batch".into()));
        }
        for (i, &n) in batch.src_lens.iter().enumerate() {
            self.check_source(&batch.src[i * s..i * s + n])?;
        }
        self.check_target(&batch.tgt_in)?;
        self.check_target(&batch.tgt_out)?;
        if let Some(row) = (0..b).find(|&i| batch.tgt_in[i * t] != BOS) {
            return Err(ModelError::InvalidInput(format!("target row {row} does not start with BOS")));
        }
        let tape = vars[0].tape();
        let r = Regime {
            dropout: c.dropout,
            train,
        };

        let x = vars[lay.enc_embed]
            .gather_rows(&batch.src)?
            .reshape([b, s, c.d_model])?
            .scale((c.d_model as f32).sqrt())
            .add(tape.constant(positional_encoding(s, c.d_model)))?
            .dropout(c.dropout, train)?;
        let enc_mask = key_padding_mask(&batch.src_lens, c.n_enc_heads, s, s);
        let mut x = x;
        for l in &lay.enc_layers {
            x = enc_layer(vars, l, &x, c.n_enc_heads, Some(&enc_mask), &r)?;
        }
        let enc = x.norm(&vars[lay.enc_norm.g], &vars[lay.enc_norm.b])?;

        // rows [0, |V|) are parse symbols, [|V|, |V| + max_src_len) pointers
        let table = Var::concat_last(&[
            vars[lay.dec_embed].transpose(0, 1)?,
            vars[lay.ptr_embed].transpose(0, 1)?,
        ])?
        .transpose(0, 1)?;
        let mut y = table
            .gather_rows(&batch.tgt_in)?
            .reshape([b, t, c.d_dec])?
            .scale((c.d_dec as f32).sqrt())
            .add(tape.constant(positional_encoding(t, c.d_dec)))?
            .dropout(c.dropout, train)?;
        let causal = causal_mask(b, c.n_dec_heads, t);
        let cross = key_padding_mask(&batch.src_lens, c.n_dec_heads, t, s);
        let masks = DecMasks {
            causal: Some(&causal),
            cross: Some(&cross),
        };
        let memory = cross_memory(vars, &lay.dec_layers, &enc)?;
        for (l, mem) in lay.dec_layers.iter().zip(&memory) {
            y = dec_layer(vars, l, &y, c.n_dec_heads, None, mem, &masks, &r)?;
        }
        let d = y.norm(&vars[lay.dec_norm.g], &vars[lay.dec_norm.b])?;
        let ptr_mask = pointer_mask(&batch.src_lens, t, c.vocab_size, s);
        let logits = output_head(vars, lay, &d, &enc.transpose(1, 2)?, Some(&ptr_mask))?;
        Ok(logits.log_softmax_last())
    }

    /// Eager encoder for one source sequence.
    pub fn encode(&self, src: &[usize]) -> Result<EncoderStates> {
        self.check_source(src)?;
        let c = &self.config;
        let lay = &self.layout;
        let p = &self.params;
        let n = src.len();
        let r = Regime {
            dropout: 0.0,
            train: false,
        };
        let mut x = p[lay.enc_embed]
            .gather_rows(src)?
            .reshape([1, n, c.d_model])?
            .scale((c.d_model as f32).sqrt())
            .add(&positional_encoding(n, c.d_model))?;
        for l in &lay.enc_layers {
            x = enc_layer(p, l, &x, c.n_enc_heads, None, &r)?;
        }
        let states = x.layer_norm(&p[lay.enc_norm.g], &p[lay.enc_norm.b])?;
        Ok(EncoderStates { states, n })
    }

    /// KV-cached decoder over one encoded source.
    pub fn decoder(&self, enc: &EncoderStates) -> Result<IncrementalDecoder<'_>> {
        let memory = cross_memory(&self.params, &self.layout.dec_layers, &enc.states)?;
        Ok(IncrementalDecoder {
            model: self,
            n: enc.n,
            memory,
            enc_t: enc.states.transpose(1, 2)?,
        })
    }

    /// Distribution after `prefix`, which starts with BOS.
    pub fn decode_step(&self, prefix: &[usize], enc: &EncoderStates) -> Result<OutputDistribution> {
        if prefix.contains(&PAD) {
            return Err(ModelError::PrefixContainsPAD);
        }
        if prefix.first() != Some(&BOS) {
            return Err(ModelError::InvalidInput("prefix must start with BOS".into()));
        }
        let dec = self.decoder(enc)?;
        let mut state = dec.start();
        let mut out = None;
        for &id in prefix {
            let (next, dist) = dec.step(&state, id)?;
            state = next;
            out = Some(dist);
        }
        Ok(out.expect("prefix is non-empty"))
    }
}

fn key_padding_mask(lens: &[usize], heads: usize, tq: usize, tk: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(lens.len() * heads * tq * tk);
    for &n in lens {
        for _ in 0..heads * tq {
            m.extend((0..tk).map(|j| j >= n));
        }
    }
    m
}

fn causal_mask(b: usize, heads: usize, t: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(b * heads * t * t);
    for _ in 0..b * heads {
        for i in 0..t {
            m.extend((0..t).map(|j| j > i));
        }
    }
    m
}

fn pointer_mask(lens: &[usize], t: usize, vocab: usize, s: usize) -> Vec<bool> {
    let mut m = Vec::with_capacity(lens.len() * t * (vocab + s));
    for &n in lens {
        for _ in 0..t {
            m.extend(std::iter::repeat_n(false, vocab));
            m.extend((0..s).map(|j| j >= n));
        }
    }
    m
}

/// Per-hypothesis decoder state: self-attention keys and values per layer.
#[derive(Clone, Debug)]
pub struct DecoderState {
    cache: Vec<(Tensor, Tensor)>,
    pos: usize,
}

impl DecoderState {
    /// Number of tokens consumed so far.
    pub fn len(&self) -> usize {
        self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.pos == 0
    }
}

pub struct IncrementalDecoder<'m> {
    model: &'m Model,
    n: usize,
    memory: Vec<(Tensor, Tensor)>,
    enc_t: Tensor,
}

impl IncrementalDecoder<'_> {
    pub fn source_len(&self) -> usize {
        self.n
    }

    pub fn vocab_size(&self) -> usize {
        self.model.config.vocab_size
    }

    pub fn start(&self) -> DecoderState {
        let d = self.model.config.d_dec;
        DecoderState {
            cache: (0..self.model.config.n_dec_layers)
                .map(|_| (Tensor::zeros([1, 0, d]), Tensor::zeros([1, 0, d])))
                .collect(),
            pos: 0,
        }
    }

    /// Feed `token` and return the distribution for the next position.
    pub fn step(&self, state: &DecoderState, token: usize) -> Result<(DecoderState, OutputDistribution)> {
        let m = self.model;
        let c = &m.config;
        let lay = &m.layout;
        let p = &m.params;
        if token == PAD {
            return Err(ModelError::PrefixContainsPAD);
        }
        let row = if token < c.vocab_size {
            p[lay.dec_embed].gather_rows(&[token])?
        } else if token < c.vocab_size + self.n {
            p[lay.ptr_embed].gather_rows(&[token - c.vocab_size])?
        } else {
            return Err(ModelError::InvalidInput(format!("token {token} beyond source length")));
        };
        let pe = Tensor::new([1, c.d_dec], positional_row(state.pos, c.d_dec).collect())?;
        let mut x = row
            .reshape([1, 1, c.d_dec])?
            .scale((c.d_dec as f32).sqrt())
            .add(&pe)?;
        let r = Regime {
            dropout: 0.0,
            train: false,
        };
        let masks = DecMasks {
            causal: None,
            cross: None,
        };
        let mut next = state.clone();
        for ((l, cache), mem) in lay.dec_layers.iter().zip(&mut next.cache).zip(&self.memory) {
            x = dec_layer(p, l, &x, c.n_dec_heads, Some(cache), mem, &masks, &r)?;
        }
        next.pos += 1;
        let d = x.layer_norm(&p[lay.dec_norm.g], &p[lay.dec_norm.b])?;
        let logits = output_head(p, lay, &d, &self.enc_t, None)?;
        Ok((next, OutputDistribution::from_logits(c.vocab_size, logits.into_data())))
    }
}
