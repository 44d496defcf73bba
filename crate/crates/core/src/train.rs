//! Label-smoothed cross-entropy, the noam schedule, Adam, and the training loop.

use ptrparse_tensor::{Tape, Tensor, TensorError, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode;
use crate::model::{Batch, Model, ModelError};
use crate::symtab::{EOS, PAD};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gold id {gold} outside the {width}-way support at row {row}")]
    GoldOutOfRange { row: usize, gold: usize, width: usize },
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: String },
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: u64 },
    #[error("loss {loss} fell below the smoothed-target entropy {entropy}")]
    BelowEntropy { loss: f64, entropy: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("empty training set")]
    EmptyData,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epsilon_ls: f64,
    pub warmup_steps: u64,
    /// Multiplier on the noam rate.
    pub lr_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip_norm: Option<f64>,
    pub log_every: u64,
    /// Greedy dev EM interval; 0 evaluates only at the end.
    pub eval_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epsilon_ls: 0.1,
            warmup_steps: 400,
            lr_factor: 1.0,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            batch_size: 32,
            max_steps: 3000,
            seed: 17,
            grad_clip_norm: Some(1.0),
            log_every: 50,
            eval_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon_ls) {
            return Err(TrainError::Config(format!("epsilon_ls {} outside [0, 1)", self.epsilon_ls)));
        }
        if self.warmup_steps < 1 {
            return Err(TrainError::Config("warmup_steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if self.grad_clip_norm.is_some_and(|c| c <= 0.0) {
            return Err(TrainError::Config("grad_clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// `d^-0.5 · min(step^-0.5, step · warmup^-1.5)`
pub fn noam_lr(step: u64, d_model: usize, warmup: u64) -> f64 {
    let s = step.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5))
}

/// Label-smoothed cross-entropy of one step in f64:
/// `(1-ε)(-log p_gold) + ε · mean_{k ∈ support}(-log p_k)`.
pub fn smoothed_ce(log_probs: &[f64], gold: usize, epsilon: f64, support: &[usize]) -> f64 {
    let smooth = support.iter().map(|&k| -log_probs[k]).sum::<f64>() / support.len() as f64;
    (1.0 - epsilon) * -log_probs[gold] + epsilon * smooth
}

/// Entropy of the smoothed target over a support of `k` classes.
pub fn smoothed_target_entropy(k: usize, epsilon: f64) -> f64 {
    if epsilon == 0.0 {
        return 0.0;
    }
    let other = epsilon / k as f64;
    let top = 1.0 - epsilon + other;
    -(top * top.ln()) - (k as f64 - 1.0) * other * other.ln()
}

/// Mean label-smoothed loss over non-PAD steps of `batch`, given
/// teacher-forced log-probabilities [b, t, |V| + s]. The smoothing support
/// of example b is every id in `[0, |V| + n_b)` except PAD.
///
/// Returns the loss and the mean smoothed-target entropy, a lower bound.
pub fn label_smoothed_ce<'t>(
    log_probs: Var<'t>,
    batch: &Batch,
    vocab_size: usize,
    epsilon: f64,
) -> Result<(Var<'t>, f64)> {
    let width = vocab_size + batch.src_len;
    let rows = batch.size * batch.tgt_len;
    let expected = vec![batch.size, batch.tgt_len, width];
    if log_probs.shape() != expected {
        return Err(TensorError::shape("label_smoothed_ce", &log_probs.shape(), &expected).into());
    }
    let steps = batch.tgt_out.iter().filter(|&&g| g != PAD).count();
    if steps == 0 {
        return Err(TrainError::Config("batch has no target steps".into()));
    }
    let mut weights = vec![0f32; rows * width];
    let mut entropy = 0.0;
    for r in 0..rows {
        let gold = batch.tgt_out[r];
        if gold == PAD {
            continue;
        }
        let live = vocab_size + batch.src_lens[r / batch.tgt_len];
        if gold >= live {
            return Err(TrainError::GoldOutOfRange { row: r, gold, width: live });
        }
        let k = live - 1;
        let w = &mut weights[r * width..(r + 1) * width];
        let share = (epsilon / k as f64) as f32;
        for (j, x) in w[..live].iter_mut().enumerate() {
            if j != PAD {
                *x = share;
            }
        }
        w[gold] += (1.0 - epsilon) as f32;
        entropy += smoothed_target_entropy(k, epsilon);
    }
    let tape = log_probs.tape();
    let q = tape.constant(Tensor::new(expected, weights)?);
    let loss = log_probs.mul(q)?.sum().scale(-1.0 / steps as f32);
    Ok((loss, entropy / steps as f64))
}

/// Adam moments and step count.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[Tensor]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape().to_vec())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: Option<f64>,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        AdamParams {
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.adam_eps,
            clip_norm: c.grad_clip_norm,
        }
    }
}

/// One bias-corrected Adam update; returns the pre-clip global gradient norm.
/// Nothing is modified when a gradient is non-finite.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    names: &[String],
    state: &mut AdamState,
    lr: f64,
    h: AdamParams,
) -> Result<f64> {
    let mut sq = 0f64;
    for (i, g) in grads.iter().enumerate() {
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient {
                param: names.get(i).cloned().unwrap_or_else(|| format!("#{i}")),
            });
        }
        sq += g.data().iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>();
    }
    let norm = sq.sqrt();
    let scale = match h.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            let g = gi as f64 * scale;
            let m_new = h.beta1 * *mi as f64 + (1.0 - h.beta1) * g;
            let v_new = h.beta2 * *vi as f64 + (1.0 - h.beta2) * g * g;
            *mi = m_new as f32;
            *vi = v_new as f32;
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + h.eps);
            *pi = (*pi as f64 - update) as f32;
        }
    }
    Ok(norm)
}

/// Source and target ids of one example; the target excludes BOS and EOS.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed for the dropout streams of one step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    splitmix(splitmix(seed) ^ step)
}

const POOL_BATCHES: usize = 16;

/// Batches of one epoch: shuffle, sort pools of 16 batches by source
/// length, cut, then shuffle the batch order.
pub fn epoch_plan(src_lens: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ 0x00E0_C000) ^ epoch);
    let mut order: Vec<usize> = (0..src_lens.len()).collect();
    order.shuffle(&mut rng);
    let mut batches = Vec::new();
    for pool in order.chunks_mut(batch_size * POOL_BATCHES) {
        pool.sort_by_key(|&i| src_lens[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

#[derive(Clone, Debug)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub entropy_bound: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub dev_em: Option<f64>,
}

pub struct Trainer {
    pub model: Model,
    pub optim: AdamState,
    pub config: TrainConfig,
    plan: Option<(u64, Vec<Vec<usize>>)>,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        let optim = AdamState::new(model.params());
        Self::resume(model, optim, config)
    }

    /// Continue from saved parameters and optimizer state. The batch
    /// schedule depends only on the seed and the step count.
    pub fn resume(model: Model, optim: AdamState, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if optim.m.len() != model.params().len() {
            return Err(TrainError::Config("optimizer state does not match the model".into()));
        }
        Ok(Trainer {
            model,
            optim,
            config,
            plan: None,
        })
    }

    pub fn step(&self) -> u64 {
        self.optim.step
    }

    fn batch_indices(&mut self, data: &[Encoded], step: u64) -> Vec<usize> {
        let b = self.config.batch_size;
        let per_epoch = data
            .chunks(b * POOL_BATCHES)
            .map(|pool| pool.len().div_ceil(b))
            .sum::<usize>() as u64;
        let epoch = (step - 1) / per_epoch;
        if self.plan.as_ref().map(|p| p.0) != Some(epoch) {
            let lens: Vec<usize> = data.iter().map(|e| e.src.len()).collect();
            self.plan = Some((epoch, epoch_plan(&lens, b, self.config.seed, epoch)));
        }
        let plan = &self.plan.as_ref().expect("plan built").1;
        plan[((step - 1) % per_epoch) as usize].clone()
    }

    /// Loss of the next scheduled batch, without updating anything.
    pub fn peek_loss(&mut self, data: &[Encoded]) -> Result<f64> {
        let step = self.step() + 1;
        let batch = self.batch(data, step);
        let tape = Tape::with_seed(step_seed(self.config.seed, step));
        let vars = self.model.params_on(&tape);
        let lp = self.model.forward(&vars, &batch, true)?;
        let (loss, _) = label_smoothed_ce(lp, &batch, self.model.config().vocab_size, self.config.epsilon_ls)?;
        Ok(loss.value().item()? as f64)
    }

    fn batch(&mut self, data: &[Encoded], step: u64) -> Batch {
        let idx = self.batch_indices(data, step);
        let pairs: Vec<(&[usize], &[usize])> = idx
            .iter()
            .map(|&i| (data[i].src.as_slice(), data[i].tgt.as_slice()))
            .collect();
        Batch::new(&pairs, EOS)
    }

    pub fn train_step(&mut self, data: &[Encoded]) -> Result<StepStats> {
        if data.is_empty() {
            return Err(TrainError::EmptyData);
        }
        let step = self.step() + 1;
        let batch = self.batch(data, step);
        let tape = Tape::with_seed(step_seed(self.config.seed, step));
        let vars = self.model.params_on(&tape);
        let lp = self.model.forward(&vars, &batch, true)?;
        let (loss, entropy) = label_smoothed_ce(lp, &batch, self.model.config().vocab_size, self.config.epsilon_ls)?;
        let value = loss.value().item()? as f64;
        if !value.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }
        if value < entropy * (1.0 - 1e-5) - 1e-6 {
            return Err(TrainError::BelowEntropy { loss: value, entropy });
        }
        let mut grads = tape.backward(loss)?;
        let grads: Vec<Tensor> = vars.iter().map(|&v| grads.take(v)).collect();
        drop(vars);
        let lr = self.config.lr_factor * noam_lr(step, self.model.config().d_model, self.config.warmup_steps);
        let names = self.model.names().to_vec();
        let grad_norm = adam_step(
            self.model.params_mut(),
            &grads,
            &names,
            &mut self.optim,
            lr,
            AdamParams::from(&self.config),
        )?;
        Ok(StepStats {
            step,
            loss: value,
            entropy_bound: entropy,
            lr,
            grad_norm,
        })
    }
}

/// Fraction of `data` whose greedy decode reproduces the target exactly.
pub fn greedy_em(model: &Model, data: &[Encoded]) -> Result<f64> {
    use rayon::prelude::*;
    if data.is_empty() {
        return Ok(0.0);
    }
    let hits: usize = data
        .par_iter()
        .map(|e| -> Result<usize> {
            let out = decode::greedy_ids(model, &e.src, None)?;
            Ok(usize::from(!out.truncated && out.content() == e.tgt.as_slice()))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    Ok(hits as f64 / data.len() as f64)
}

#[derive(Clone, Debug, Default)]
pub struct TrainSummary {
    pub steps: u64,
    pub last_loss: f64,
    pub first_loss: f64,
    pub best_dev_em: Option<f64>,
    pub best_step: Option<u64>,
}

/// Run until `max_steps`, calling `on_log` at every logging interval.
/// Losses are averaged over the interval.
pub fn train_loop<F, E>(
    trainer: &mut Trainer,
    train: &[Encoded],
    dev: &[Encoded],
    mut on_log: F,
) -> std::result::Result<TrainSummary, E>
where
    F: FnMut(&Trainer, &MetricsRecord) -> std::result::Result<(), E>,
    E: From<TrainError>,
{
    let cfg = trainer.config.clone();
    let mut summary = TrainSummary::default();
    let mut acc = 0.0;
    let mut count = 0u64;
    while trainer.step() < cfg.max_steps {
        let stats = trainer.train_step(train)?;
        if summary.steps == 0 {
            summary.first_loss = stats.loss;
        }
        summary.steps = stats.step;
        summary.last_loss = stats.loss;
        acc += stats.loss;
        count += 1;
        let last = stats.step == cfg.max_steps;
        let eval = last || (cfg.eval_every > 0 && stats.step % cfg.eval_every == 0);
        if eval || (cfg.log_every > 0 && stats.step % cfg.log_every == 0) {
            let dev_em = if eval && !dev.is_empty() {
                Some(greedy_em(&trainer.model, dev)?)
            } else {
                None
            };
            if let Some(em) = dev_em {
                if summary.best_dev_em.is_none_or(|b| em > b) {
                    summary.best_dev_em = Some(em);
                    summary.best_step = Some(stats.step);
                }
            }
            let record = MetricsRecord {
                step: stats.step,
                loss: acc / count as f64,
                lr: stats.lr,
                dev_em,
            };
            acc = 0.0;
            count = 0;
            on_log(trainer, &record)?;
        }
    }
    Ok(summary)
}
