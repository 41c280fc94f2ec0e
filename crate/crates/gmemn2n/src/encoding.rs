//! Token sequences to model vector spaces: bag-of-words and
//! position-encoded sentence embeddings, temporal encoding with
//! training-time noise, speaker/time features for dialog, and the
//! per-example preparation used by the model and trainer.

use crate::corpus::{
    extract_match_features, CandidateSet, DialogExample, KnowledgeBaseIndex, QaExample, Speaker,
    Vocabulary,
};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    BagOfWords,
    PositionEncoding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub scheme: Scheme,
    pub temporal: bool,
    pub noise_fraction: f64,
    pub max_memory: usize,
    pub speaker_features: bool,
}

impl EncodingConfig {
    pub fn qa() -> Self {
        EncodingConfig {
            scheme: Scheme::PositionEncoding,
            temporal: true,
            noise_fraction: 0.20,
            max_memory: 50,
            speaker_features: false,
        }
    }

    pub fn dialog() -> Self {
        EncodingConfig {
            scheme: Scheme::PositionEncoding,
            temporal: false,
            noise_fraction: 0.0,
            max_memory: 50,
            speaker_features: true,
        }
    }

    /// Rows to allocate for temporal matrices: the memory cap plus room for
    /// injected noise slots.
    pub fn temporal_rows(&self) -> usize {
        (self.max_memory as f64 * (1.0 + self.noise_fraction)).ceil() as usize + 1
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EncodeError {
    #[error("memory has {slots} slots but temporal matrices have {rows} rows")]
    TemporalOverflow { slots: usize, rows: usize },
}

/// Bag-of-words multiplicity vector of dimension |V|.
pub fn phi(token_ids: &[usize], vocab_size: usize) -> Vec<f64> {
    let mut bag = vec![0.0; vocab_size];
    for &t in token_ids {
        bag[t] += 1.0;
    }
    bag
}

/// Position-encoding weight for dimension k (1-based) of word j (1-based)
/// in a sentence of J words: (1 - j/J) - (k/d)(1 - 2j/J).
#[inline]
pub fn position_weight(k: usize, d: usize, j: usize, sentence_len: usize) -> f64 {
    let jf = j as f64 / sentence_len as f64;
    (1.0 - jf) - (k as f64 / d as f64) * (1.0 - 2.0 * jf)
}

/// Accumulates the embedding of a sentence into `out` (length d), scaled by
/// `scale`. Under bag-of-words this is `E * phi(x)`; under position encoding
/// each word's column is weighted per dimension. Empty sentences contribute
/// nothing.
pub fn embed_sentence_into(
    token_ids: &[usize],
    embedding: &Tensor,
    scheme: Scheme,
    scale: f64,
    out: &mut [f64],
) {
    let d = embedding.rows();
    debug_assert_eq!(out.len(), d);
    let len = token_ids.len();
    for (j0, &w) in token_ids.iter().enumerate() {
        for k0 in 0..d {
            let weight = match scheme {
                Scheme::BagOfWords => 1.0,
                Scheme::PositionEncoding => position_weight(k0 + 1, d, j0 + 1, len),
            };
            out[k0] += scale * weight * embedding.get(k0, w);
        }
    }
}

pub fn embed_sentence(token_ids: &[usize], embedding: &Tensor, scheme: Scheme) -> Vec<f64> {
    let mut out = vec![0.0; embedding.rows()];
    embed_sentence_into(token_ids, embedding, scheme, 1.0, &mut out);
    out
}

/// Backward of [`embed_sentence_into`]: scatters the upstream gradient `g`
/// into the embedding-matrix gradient columns.
pub fn embed_sentence_grad(
    token_ids: &[usize],
    scheme: Scheme,
    g: &[f64],
    scale: f64,
    grad_embedding: &mut Tensor,
) {
    let d = grad_embedding.rows();
    let len = token_ids.len();
    for (j0, &w) in token_ids.iter().enumerate() {
        for (k0, gk) in g.iter().enumerate() {
            let weight = match scheme {
                Scheme::BagOfWords => 1.0,
                Scheme::PositionEncoding => position_weight(k0 + 1, d, j0 + 1, len),
            };
            grad_embedding.add_at(k0, w, scale * weight * gk);
        }
    }
}

/// Question embedding u^1 = embed(q, B).
pub fn encode_question(token_ids: &[usize], b: &Tensor, scheme: Scheme) -> Vec<f64> {
    embed_sentence(token_ids, b, scheme)
}

/// Keeps the most recent `max_memory` sentences.
pub fn truncate_memory<T: Clone>(sentences: &[T], max_memory: usize) -> Vec<T> {
    let start = sentences.len().saturating_sub(max_memory);
    sentences[start..].to_vec()
}

/// Inserts `round(fraction * n)` all-zero dummy sentences at uniformly random
/// positions. Dummies jitter the temporal indices of real sentences during
/// training; they carry no word content.
pub fn inject_noise<R: Rng>(
    sentences: &[Vec<usize>],
    fraction: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut slots: Vec<Vec<usize>> = sentences.to_vec();
    let count = (fraction * sentences.len() as f64).round() as usize;
    for _ in 0..count {
        let pos = rng.gen_range(0..=slots.len());
        slots.insert(pos, Vec::new());
    }
    slots
}

/// Input/output memory cells for one hop.
#[derive(Debug, Clone)]
pub struct EncodedMemory {
    pub input_cells: Vec<Vec<f64>>,
    pub output_cells: Vec<Vec<f64>>,
}

impl EncodedMemory {
    pub fn len(&self) -> usize {
        self.input_cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_cells.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Encodes memory slots for one hop: m_i = embed(x_i, A) + T_A[rev(i)],
/// c_i = embed(x_i, C) + T_C[rev(i)], where rev(i) counts back from the most
/// recent slot. `sentences` must already be truncated to the memory cap; in
/// train mode noise slots are injected first (see [`inject_noise`]).
///
/// Returns the encoded cells together with the slot layout actually used, so
/// callers can replay the same layout (e.g. for other hops or the backward
/// pass).
#[allow(clippy::too_many_arguments)]
pub fn encode_memory<R: Rng>(
    sentences: &[Vec<usize>],
    a: &Tensor,
    c: &Tensor,
    t_a: Option<&Tensor>,
    t_c: Option<&Tensor>,
    cfg: &EncodingConfig,
    mode: Mode,
    rng: &mut R,
) -> Result<(EncodedMemory, Vec<Vec<usize>>), EncodeError> {
    let slots = if mode == Mode::Train && cfg.noise_fraction > 0.0 {
        inject_noise(sentences, cfg.noise_fraction, rng)
    } else {
        sentences.to_vec()
    };
    let encoded = encode_memory_slots(&slots, a, c, t_a, t_c, cfg.scheme)?;
    Ok((encoded, slots))
}

/// Encodes an already-laid-out slot list (noise decisions made).
pub fn encode_memory_slots(
    slots: &[Vec<usize>],
    a: &Tensor,
    c: &Tensor,
    t_a: Option<&Tensor>,
    t_c: Option<&Tensor>,
    scheme: Scheme,
) -> Result<EncodedMemory, EncodeError> {
    let n = slots.len();
    if let Some(t) = t_a {
        if n > t.rows() {
            return Err(EncodeError::TemporalOverflow {
                slots: n,
                rows: t.rows(),
            });
        }
    }
    let d = a.rows();
    let mut input_cells = Vec::with_capacity(n);
    let mut output_cells = Vec::with_capacity(n);
    for (i, sent) in slots.iter().enumerate() {
        let rev = n - 1 - i;
        let mut m = vec![0.0; d];
        embed_sentence_into(sent, a, scheme, 1.0, &mut m);
        if let Some(t) = t_a {
            for (k, mk) in m.iter_mut().enumerate() {
                *mk += t.get(rev, k);
            }
        }
        let mut cc = vec![0.0; d];
        embed_sentence_into(sent, c, scheme, 1.0, &mut cc);
        if let Some(t) = t_c {
            for (k, ck) in cc.iter_mut().enumerate() {
                *ck += t.get(rev, k);
            }
        }
        input_cells.push(m);
        output_cells.push(cc);
    }
    Ok(EncodedMemory {
        input_cells,
        output_cells,
    })
}

pub const USER_TOKEN: &str = "$user";
pub const BOT_TOKEN: &str = "$bot";

pub fn time_token(turn: usize) -> String {
    format!("$t{turn}")
}

pub fn match_slot_token(property: &str) -> String {
    format!("#match_{property}")
}

/// Appends the speaker marker and the 1-based turn token to an utterance.
pub fn add_speaker_features(tokens: &[String], speaker: Speaker, turn: usize) -> Vec<String> {
    let mut out = tokens.to_vec();
    out.push(
        match speaker {
            Speaker::User => USER_TOKEN,
            Speaker::Bot => BOT_TOKEN,
        }
        .to_string(),
    );
    out.push(time_token(turn));
    out
}

/// Sparse candidate bags shared across all examples of a dialog task.
#[derive(Debug, Clone)]
pub struct CandidateBags {
    /// Per candidate: (vocab index, multiplicity) pairs.
    pub bags: Vec<Vec<(usize, f64)>>,
    /// Vocab slots of the match-feature bits, in KB property order.
    pub match_slots: Vec<usize>,
}

impl CandidateBags {
    pub fn build(candidates: &CandidateSet, vocab: &Vocabulary, kb: &KnowledgeBaseIndex) -> Self {
        let bags = candidates
            .tokens
            .iter()
            .map(|toks| {
                let mut bag: Vec<(usize, f64)> = Vec::new();
                for t in toks {
                    let idx = vocab.index_or_nil(t);
                    match bag.iter_mut().find(|(i, _)| *i == idx) {
                        Some((_, c)) => *c += 1.0,
                        None => bag.push((idx, 1.0)),
                    }
                }
                bag
            })
            .collect();
        let match_slots = kb
            .properties
            .iter()
            .map(|p| vocab.index_or_nil(&match_slot_token(p)))
            .collect();
        CandidateBags { bags, match_slots }
    }
}

/// A fully encoded example ready for the model. `memory` is truncated (and,
/// for training QA, noise-injected) slot content; dummies are empty.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub memory: Vec<Vec<usize>>,
    pub question: Vec<usize>,
    /// Vocab index of the answer word (QA) or candidate index (dialog).
    pub gold: usize,
    pub dialog_id: usize,
    /// Per-candidate fired match-feature bitmask, in KB property order.
    /// Only candidates with at least one fired bit appear.
    pub match_bits: Vec<(u32, u8)>,
}

/// Encodes a QA example. In train mode, noise slots are injected with `rng`.
pub fn prepare_qa_example<R: Rng>(
    ex: &QaExample,
    vocab: &Vocabulary,
    cfg: &EncodingConfig,
    mode: Mode,
    rng: &mut R,
) -> PreparedExample {
    let sentences: Vec<Vec<usize>> = ex.sentences.iter().map(|s| vocab.encode(s)).collect();
    let truncated = truncate_memory(&sentences, cfg.max_memory);
    let memory = if mode == Mode::Train && cfg.noise_fraction > 0.0 {
        inject_noise(&truncated, cfg.noise_fraction, rng)
    } else {
        truncated
    };
    PreparedExample {
        memory,
        question: vocab.encode(&ex.question),
        gold: vocab.index_or_nil(&ex.answer_token()),
        dialog_id: 0,
        match_bits: Vec::new(),
    }
}

/// Encodes a dialog example: history utterances get speaker and turn tokens,
/// match features are computed against the query-plus-memory word set.
pub fn prepare_dialog_example(
    ex: &DialogExample,
    vocab: &Vocabulary,
    candidates: &CandidateSet,
    kb: &KnowledgeBaseIndex,
    cfg: &EncodingConfig,
) -> PreparedExample {
    let mut memory_tokens: Vec<Vec<String>> = Vec::with_capacity(ex.history.len());
    for (i, (speaker, tokens)) in ex.history.iter().enumerate() {
        let turn = i / 2 + 1;
        if cfg.speaker_features {
            memory_tokens.push(add_speaker_features(tokens, *speaker, turn));
        } else {
            memory_tokens.push(tokens.clone());
        }
    }
    let mut memory_tokens = truncate_memory(&memory_tokens, cfg.max_memory);
    if memory_tokens.is_empty() {
        // first turn of a dialog: attention still needs one (empty) slot
        memory_tokens.push(Vec::new());
    }

    let mut context_words: HashSet<String> = ex.query.iter().cloned().collect();
    for (_, tokens) in &ex.history {
        context_words.extend(tokens.iter().cloned());
    }

    let mut match_bits = Vec::new();
    if kb.num_properties() > 0 {
        assert!(kb.num_properties() <= 8, "match bitmask holds at most 8 properties");
        for (ci, cand) in candidates.tokens.iter().enumerate() {
            let bits = extract_match_features(&context_words, cand, kb);
            let mask = bits
                .iter()
                .enumerate()
                .fold(0u8, |m, (p, &b)| if b { m | (1 << p) } else { m });
            if mask != 0 {
                match_bits.push((ci as u32, mask));
            }
        }
    }

    PreparedExample {
        memory: memory_tokens.iter().map(|t| vocab.encode(t)).collect(),
        question: vocab.encode(&ex.query),
        gold: ex.gold_idx,
        dialog_id: ex.dialog_id,
        match_bits,
    }
}
