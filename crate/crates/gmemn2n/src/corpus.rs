//! Corpus ingestion: bAbI QA v1.2 and dialog task text formats, vocabularies,
//! candidate-response sets, knowledge-base match features and train/valid
//! splitting.
//!
//! QA format, one story per id-reset:
//! ```text
//! 1 mary moved to the bathroom .
//! 2 john went to the hallway .
//! 3 where is mary ?\tbathroom\t1
//! ```
//! Statement lines are `<id> <sentence>`; question lines additionally carry a
//! tab-separated answer and supporting line ids. An id of 1 starts a new
//! story.
//!
//! Dialog format, one turn per line, blank line ends a dialog:
//! ```text
//! 1 <user utterance>\t<bot utterance>
//! ```
//! Candidate files hold `1 <utterance>` per line; knowledge-base files hold
//! `1 <restaurant> R_<property> <value>` triples.

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::collections::HashSet;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("line {line}: missing line id")]
    MissingId { line: usize },
    #[error("line {line}: non-monotone line id {id} after {prev}")]
    NonMonotoneId { line: usize, id: usize, prev: usize },
    #[error("line {line}: question has no answer field")]
    MissingAnswer { line: usize },
    #[error("line {line}: supporting id {id} does not name an earlier statement")]
    BadSupportingId { line: usize, id: usize },
    #[error("line {line}: bot utterance not in candidate set: `{utterance}`")]
    UnknownCandidate { line: usize, utterance: String },
    #[error("line {line}: dialog turn is missing the bot utterance")]
    MissingBotTurn { line: usize },
    #[error("line {line}: malformed knowledge-base triple")]
    BadKbTriple { line: usize },
}

/// Lowercases, splits on whitespace and strips trailing `.` `?` `!`
/// (punctuation never enters word bags).
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .filter_map(|raw| {
            let t = raw.to_lowercase();
            let t = t.trim_end_matches(['.', '?', '!']);
            if t.is_empty() {
                None
            } else {
                Some(t.to_string())
            }
        })
        .collect()
}

/// One bAbI QA question with its full story context.
#[derive(Debug, Clone, PartialEq)]
pub struct QaExample {
    /// Story statements preceding the question, in order.
    pub sentences: Vec<Vec<String>>,
    pub question: Vec<String>,
    /// Answer words (commas in the answer field separate them).
    pub answers: Vec<String>,
    /// 1-based indices into `sentences`.
    pub supporting: Vec<usize>,
}

impl QaExample {
    /// Multi-word answers are scored as one joined token.
    pub fn answer_token(&self) -> String {
        self.answers.join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    User,
    Bot,
}

/// One bot turn of a dialog, with all earlier utterances as memory.
#[derive(Debug, Clone, PartialEq)]
pub struct DialogExample {
    pub dialog_id: usize,
    /// Alternating (user, bot, user, bot, ...) utterances before this turn.
    pub history: Vec<(Speaker, Vec<String>)>,
    /// Current user utterance.
    pub query: Vec<String>,
    pub gold_response: String,
    /// Index of the gold response in the task candidate set.
    pub gold_idx: usize,
}

/// Closed-world word index; slot 0 is the nil/padding word.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    word_to_idx: IndexMap<String, usize>,
    words: Vec<String>,
}

pub const NIL_WORD: &str = "<nil>";

impl Vocabulary {
    pub fn build<'a, I>(token_lists: I, extra_tokens: &[String]) -> Vocabulary
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut v = Vocabulary {
            word_to_idx: IndexMap::new(),
            words: Vec::new(),
        };
        v.intern(NIL_WORD);
        for list in token_lists {
            for w in list {
                v.intern(w);
            }
        }
        for w in extra_tokens {
            v.intern(w);
        }
        v
    }

    fn intern(&mut self, word: &str) -> usize {
        if let Some(&i) = self.word_to_idx.get(word) {
            return i;
        }
        let i = self.words.len();
        self.word_to_idx.insert(word.to_string(), i);
        self.words.push(word.to_string());
        i
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.word_to_idx.get(word).copied()
    }

    /// Unknown words map to the nil slot (possible only on OOV test sets).
    pub fn index_or_nil(&self, word: &str) -> usize {
        self.index_of(word).unwrap_or(0)
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn from_words(words: Vec<String>) -> Vocabulary {
        let word_to_idx = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary { word_to_idx, words }
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.index_or_nil(t)).collect()
    }
}

/// Ordered candidate responses (file order preserved).
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub texts: Vec<String>,
    pub tokens: Vec<Vec<String>>,
}

impl CandidateSet {
    pub fn parse(contents: &str) -> CandidateSet {
        let mut texts = Vec::new();
        let mut tokens = Vec::new();
        let mut seen = HashSet::new();
        for line in contents.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            // leading "1 " id as in the shipped candidate files
            let text = match line.split_once(' ') {
                Some((id, rest)) if id.chars().all(|c| c.is_ascii_digit()) => rest,
                _ => line,
            };
            let text = normalize_space(text);
            if seen.insert(text.clone()) {
                tokens.push(tokenize(&text));
                texts.push(text);
            }
        }
        CandidateSet { texts, tokens }
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    pub fn index_of(&self, text: &str) -> Option<usize> {
        let norm = normalize_space(text);
        self.texts.iter().position(|t| *t == norm)
    }
}

fn normalize_space(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Per-property sets of known values from the task knowledge base.
/// Property order follows first occurrence in the file.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBaseIndex {
    pub properties: Vec<String>,
    values: IndexMap<String, HashSet<String>>,
}

impl KnowledgeBaseIndex {
    pub fn parse(contents: &str) -> Result<KnowledgeBaseIndex, CorpusError> {
        let mut kb = KnowledgeBaseIndex::default();
        for (lineno, line) in contents.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            // "<id> <restaurant> R_<property> <value>"
            if fields.len() < 4 || !fields[2].starts_with("R_") {
                return Err(CorpusError::BadKbTriple { line: lineno + 1 });
            }
            let prop = fields[2].to_string();
            let value = fields[3..].join(" ").to_lowercase();
            if !kb.values.contains_key(&prop) {
                kb.properties.push(prop.clone());
                kb.values.insert(prop.clone(), HashSet::new());
            }
            kb.values.get_mut(&prop).unwrap().insert(value);
        }
        Ok(kb)
    }

    pub fn num_properties(&self) -> usize {
        self.properties.len()
    }

    pub fn is_value_of(&self, prop: &str, word: &str) -> bool {
        self.values.get(prop).is_some_and(|s| s.contains(word))
    }
}

/// Bit p is set iff some candidate word is a known value of property p
/// and also occurs in the query or memory.
pub fn extract_match_features(
    context_words: &HashSet<String>,
    candidate_tokens: &[String],
    kb: &KnowledgeBaseIndex,
) -> Vec<bool> {
    kb.properties
        .iter()
        .map(|prop| {
            candidate_tokens
                .iter()
                .any(|w| kb.is_value_of(prop, w) && context_words.contains(w))
        })
        .collect()
}

pub fn parse_qa_task(contents: &str) -> Result<Vec<QaExample>, CorpusError> {
    let mut examples = Vec::new();
    // (line id, tokens) of statements in the current story
    let mut story: Vec<(usize, Vec<String>)> = Vec::new();
    let mut prev_id = 0usize;
    for (lineno, line) in contents.lines().enumerate() {
        let line_number = lineno + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id_str, rest) = line
            .split_once(|c: char| c.is_whitespace())
            .ok_or(CorpusError::MissingId { line: line_number })?;
        let id: usize = id_str
            .parse()
            .map_err(|_| CorpusError::MissingId { line: line_number })?;
        if id == 1 {
            story.clear();
        } else if id <= prev_id {
            return Err(CorpusError::NonMonotoneId {
                line: line_number,
                id,
                prev: prev_id,
            });
        }
        prev_id = id;

        if let Some((qtext, tail)) = rest.split_once('\t') {
            let mut fields = tail.split('\t');
            let answer_field = fields
                .next()
                .filter(|a| !a.trim().is_empty())
                .ok_or(CorpusError::MissingAnswer { line: line_number })?;
            let supporting_field = fields.next().unwrap_or("");
            let answers: Vec<String> = answer_field
                .trim()
                .to_lowercase()
                .split(',')
                .map(|s| s.to_string())
                .collect();
            let mut supporting = Vec::new();
            for tok in supporting_field.split_whitespace() {
                let sid: usize = tok
                    .parse()
                    .map_err(|_| CorpusError::BadSupportingId {
                        line: line_number,
                        id: 0,
                    })?;
                // supporting ids are story line ids; map to sentence position
                let pos = story
                    .iter()
                    .position(|(lid, _)| *lid == sid)
                    .ok_or(CorpusError::BadSupportingId {
                        line: line_number,
                        id: sid,
                    })?;
                supporting.push(pos + 1);
            }
            examples.push(QaExample {
                sentences: story.iter().map(|(_, t)| t.clone()).collect(),
                question: tokenize(qtext),
                answers,
                supporting,
            });
        } else {
            story.push((id, tokenize(rest)));
        }
    }
    Ok(examples)
}

/// Serializes examples back to canonical bAbI text, one standalone story per
/// example. Re-parsing yields structurally equal examples.
pub fn qa_to_text(examples: &[QaExample]) -> String {
    let mut out = String::new();
    for ex in examples {
        for (i, s) in ex.sentences.iter().enumerate() {
            out.push_str(&format!("{} {} .\n", i + 1, s.join(" ")));
        }
        let supp: Vec<String> = ex.supporting.iter().map(|s| s.to_string()).collect();
        out.push_str(&format!(
            "{} {} ?\t{}\t{}\n",
            ex.sentences.len() + 1,
            ex.question.join(" "),
            ex.answers.join(","),
            supp.join(" ")
        ));
    }
    out
}

pub fn parse_dialog_task(
    contents: &str,
    candidates: &CandidateSet,
) -> Result<Vec<DialogExample>, CorpusError> {
    let mut examples = Vec::new();
    let mut history: Vec<(Speaker, Vec<String>)> = Vec::new();
    let mut dialog_id = 0usize;
    let mut in_dialog = false;
    for (lineno, line) in contents.lines().enumerate() {
        let line_number = lineno + 1;
        let line = line.trim_end();
        if line.trim().is_empty() {
            if in_dialog {
                dialog_id += 1;
                history.clear();
                in_dialog = false;
            }
            continue;
        }
        if !in_dialog {
            in_dialog = true;
            history.clear();
        }
        let (_, rest) = line
            .split_once(|c: char| c.is_whitespace())
            .ok_or(CorpusError::MissingId { line: line_number })?;
        let (user, bot) = rest
            .split_once('\t')
            .ok_or(CorpusError::MissingBotTurn { line: line_number })?;
        let bot = normalize_space(bot);
        let gold_idx =
            candidates
                .index_of(&bot)
                .ok_or_else(|| CorpusError::UnknownCandidate {
                    line: line_number,
                    utterance: bot.clone(),
                })?;
        let query = tokenize(user);
        examples.push(DialogExample {
            dialog_id,
            history: history.clone(),
            query: query.clone(),
            gold_response: bot.clone(),
            gold_idx,
        });
        history.push((Speaker::User, query));
        history.push((Speaker::Bot, tokenize(&bot)));
    }
    Ok(examples)
}

/// Deterministic train/validation split at example granularity.
/// The validation part gets `round(n * fraction)`, at least 1, examples;
/// both parts preserve the original order.
pub fn split_validation<T>(items: Vec<T>, fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    assert!(
        fraction > 0.0 && fraction < 1.0,
        "fraction must be in (0, 1)"
    );
    let n = items.len();
    let valid_count = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let chosen: HashSet<usize> = idx.into_iter().take(valid_count).collect();
    let mut train = Vec::with_capacity(n - valid_count);
    let mut valid = Vec::with_capacity(valid_count);
    for (i, item) in items.into_iter().enumerate() {
        if chosen.contains(&i) {
            valid.push(item);
        } else {
            train.push(item);
        }
    }
    (train, valid)
}
