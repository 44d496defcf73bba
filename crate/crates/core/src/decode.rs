//! Greedy and beam-search decoding over the joint symbol + pointer distribution.

use serde::{Deserialize, Serialize};

use crate::model::{DecoderState, IncrementalDecoder, Model, ModelError};
use crate::symtab::{BOS, EOS, PAD};

type Result<T> = std::result::Result<T, ModelError>;

/// An autoregressive scorer. Log-probabilities are indexed by token id.
pub trait SearchModel {
    type State: Clone;
    /// State after consuming BOS, with the first-step log-probabilities.
    fn start(&self) -> Result<(Self::State, Vec<f32>)>;
    fn advance(&self, state: &Self::State, token: usize) -> Result<(Self::State, Vec<f32>)>;
}

impl SearchModel for IncrementalDecoder<'_> {
    type State = DecoderState;

    fn start(&self) -> Result<(DecoderState, Vec<f32>)> {
        let (s, d) = self.step(&IncrementalDecoder::start(self), BOS)?;
        Ok((s, d.log_probs))
    }

    fn advance(&self, state: &DecoderState, token: usize) -> Result<(DecoderState, Vec<f32>)> {
        let (s, d) = self.step(state, token)?;
        Ok((s, d.log_probs))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthMode {
    /// Rank by summed log-probability.
    #[default]
    None,
    /// Rank finished hypotheses by log-probability per generated token.
    Average,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Defaults to `2n + 16` for a source of n tokens.
    pub max_target_len: Option<usize>,
    pub length_mode: LengthMode,
    /// Also search every narrower width and merge the results. The top
    /// score is then never below greedy and never drops as the beam widens.
    pub nested: bool,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 4,
            max_target_len: None,
            length_mode: LengthMode::None,
            nested: true,
        }
    }
}

impl BeamConfig {
    pub fn with_beam(beam_size: usize) -> Self {
        BeamConfig {
            beam_size,
            ..Default::default()
        }
    }

    pub fn max_len(&self, n: usize) -> usize {
        self.max_target_len.unwrap_or_else(|| default_max_len(n))
    }
}

pub fn default_max_len(n: usize) -> usize {
    2 * n + 16
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// BOS, generated ids, and EOS when the hypothesis ended normally.
    pub ids: Vec<usize>,
    pub score: f64,
    /// EOS emitted or length cap reached.
    pub finished: bool,
    /// Stopped by the length cap without EOS.
    pub truncated: bool,
}

impl Hypothesis {
    /// Generated ids without BOS and EOS.
    pub fn content(&self) -> &[usize] {
        let end = if self.ids.last() == Some(&EOS) && self.ids.len() > 1 {
            self.ids.len() - 1
        } else {
            self.ids.len()
        };
        &self.ids[1..end]
    }

    /// Number of generated ids, EOS included.
    pub fn generated(&self) -> usize {
        self.ids.len() - 1
    }

    fn rank_score(&self, mode: LengthMode) -> f64 {
        match mode {
            LengthMode::None => self.score,
            LengthMode::Average => self.score / self.generated().max(1) as f64,
        }
    }
}

fn allowed(token: usize) -> bool {
    token != PAD && token != BOS
}

/// Argmax decoding; ties go to the lowest id.
pub fn greedy<M: SearchModel>(m: &M, max_len: usize) -> Result<Hypothesis> {
    let (mut state, mut lp) = m.start()?;
    let mut ids = vec![BOS];
    let mut score = 0f64;
    for _ in 0..max_len {
        let mut best = None;
        for (tok, &p) in lp.iter().enumerate() {
            if allowed(tok) && best.is_none_or(|b: usize| p > lp[b]) {
                best = Some(tok);
            }
        }
        let tok = best.ok_or_else(|| ModelError::InvalidInput("no decodable token".into()))?;
        score += lp[tok] as f64;
        ids.push(tok);
        if tok == EOS {
            return Ok(Hypothesis {
                ids,
                score,
                finished: true,
                truncated: false,
            });
        }
        (state, lp) = m.advance(&state, tok)?;
    }
    Ok(Hypothesis {
        ids,
        score,
        finished: true,
        truncated: true,
    })
}

struct Live<S> {
    ids: Vec<usize>,
    score: f64,
    state: S,
    lp: Vec<f32>,
}

/// Beam search; see [`BeamConfig::nested`].
pub fn beam_search<M: SearchModel>(m: &M, cfg: &BeamConfig, max_len: usize) -> Result<Vec<Hypothesis>> {
    let k = cfg.beam_size.max(1);
    if !cfg.nested || k == 1 {
        return plain_beam_search(m, cfg, max_len);
    }
    let mut all: Vec<Hypothesis> = Vec::new();
    for width in 1..=k {
        let narrow = BeamConfig {
            beam_size: width,
            ..cfg.clone()
        };
        for h in plain_beam_search(m, &narrow, max_len)? {
            if !all.iter().any(|a| a.ids == h.ids) {
                all.push(h);
            }
        }
    }
    let key = |h: &Hypothesis| h.rank_score(cfg.length_mode);
    all.sort_by(|a, b| key(b).total_cmp(&key(a)));
    all.truncate(k);
    Ok(all)
}

/// Beam search over summed log-probabilities.
///
/// Each step ranks every extension of the active hypotheses. EOS extensions
/// ranked within the top `beam_size` are retired as finished; the best
/// `beam_size` non-EOS extensions stay active. Search stops once
/// `beam_size` hypotheses have finished and no active one can still beat
/// the worst of them, or at the length cap. Returns up to `beam_size`
/// hypotheses, EOS-terminated or truncated at the cap, best first.
pub fn plain_beam_search<M: SearchModel>(m: &M, cfg: &BeamConfig, max_len: usize) -> Result<Vec<Hypothesis>> {
    let k = cfg.beam_size.max(1);
    let (state, lp) = m.start()?;
    let mut active = vec![Live {
        ids: vec![BOS],
        score: 0.0,
        state,
        lp,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut truncated: Vec<Hypothesis> = Vec::new();

    for step in 0..max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, live) in active.iter().enumerate() {
            for (tok, &p) in live.lp.iter().enumerate() {
                if allowed(tok) {
                    cands.push((live.score + p as f64, h, tok));
                }
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let last = step + 1 == max_len;
        let mut next = Vec::with_capacity(k);
        for (rank, &(score, h, tok)) in cands.iter().enumerate() {
            if next.len() == k && rank >= k {
                break;
            }
            let mut ids = active[h].ids.clone();
            ids.push(tok);
            if tok == EOS {
                if rank < k {
                    finished.push(Hypothesis {
                        ids,
                        score,
                        finished: true,
                        truncated: false,
                    });
                }
            } else if next.len() < k {
                if last {
                    truncated.push(Hypothesis {
                        ids,
                        score,
                        finished: true,
                        truncated: true,
                    });
                    next.push(None);
                } else {
                    let (state, lp) = m.advance(&active[h].state, tok)?;
                    next.push(Some(Live { ids, score, state, lp }));
                }
            }
        }
        active = next.into_iter().flatten().collect();
        if active.is_empty() {
            break;
        }
        if cfg.length_mode == LengthMode::None && finished.len() >= k {
            let mut scores: Vec<f64> = finished.iter().map(|f| f.score).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let kth = scores[k - 1];
            // scores only decrease as hypotheses grow
            if active.iter().all(|a| a.score <= kth) {
                break;
            }
        }
    }

    let key = |h: &Hypothesis| h.rank_score(cfg.length_mode);
    finished.extend(truncated);
    // stable: among equal scores, EOS-terminated hypotheses come first
    finished.sort_by(|a, b| key(b).total_cmp(&key(a)));
    finished.truncate(k);
    Ok(finished)
}

/// Greedy decode of one encoded source.
pub fn greedy_ids(model: &Model, src: &[usize], max_len: Option<usize>) -> Result<Hypothesis> {
    let enc = model.encode(src)?;
    let dec = model.decoder(&enc)?;
    greedy(&dec, max_len.unwrap_or_else(|| default_max_len(src.len())))
}

/// Beam decode of one encoded source.
pub fn beam_ids(model: &Model, src: &[usize], cfg: &BeamConfig) -> Result<Vec<Hypothesis>> {
    let enc = model.encode(src)?;
    let dec = model.decoder(&enc)?;
    beam_search(&dec, cfg, cfg.max_len(src.len()))
}

/// Summed log-probability of `content` followed by EOS, by teacher forcing.
pub fn sequence_score<M: SearchModel>(m: &M, content: &[usize], with_eos: bool) -> Result<f64> {
    let (mut state, mut lp) = m.start()?;
    let mut total = 0f64;
    for &tok in content {
        total += lp[tok] as f64;
        (state, lp) = m.advance(&state, tok)?;
    }
    if with_eos {
        total += lp[EOS] as f64;
    }
    Ok(total)
}
