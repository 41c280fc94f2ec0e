//! The SGD training loop: task assembly, batched training with learning-rate
//! decay, linear start, gradient clipping, and validation-selected restarts.

use crate::config::TrainConfig;
use crate::corpus::{
    parse_dialog_task, parse_qa_task, split_validation, CandidateSet, CorpusError,
    KnowledgeBaseIndex, QaExample, Vocabulary,
};
use crate::encoding::{
    match_slot_token, prepare_dialog_example, prepare_qa_example, time_token, CandidateBags,
    EncodingConfig, Mode, PreparedExample, BOT_TOKEN, USER_TOKEN,
};
use crate::eval;
use crate::model::{example_loss, loss_and_grads, Head, InitConfig, ModelParams, ModelVariant};
use crate::tensor::clip_global_norm;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::thread;

/// Seed of the train/validation split. Fixed (rather than derived from the
/// run seed) so every restart competes on the same validation set.
pub const SPLIT_SEED: u64 = 0xbab1;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
}

/// A QA task: raw examples (training memories are re-encoded, with fresh
/// noise, every epoch) plus the corpus-wide vocabulary.
pub struct QaTask {
    pub train: Vec<QaExample>,
    pub valid: Vec<QaExample>,
    pub test: Vec<QaExample>,
    pub vocab: Vocabulary,
}

/// Assembles a QA task from file contents: vocabulary over the whole corpus
/// and a deterministic train/validation split.
pub fn build_qa_task(
    train_text: &str,
    test_text: &str,
    valid_fraction: f64,
) -> Result<QaTask, CorpusError> {
    let train_all = parse_qa_task(train_text)?;
    let test = parse_qa_task(test_text)?;
    let mut lists: Vec<Vec<String>> = Vec::new();
    for ex in train_all.iter().chain(&test) {
        lists.extend(ex.sentences.iter().cloned());
        lists.push(ex.question.clone());
        lists.push(vec![ex.answer_token()]);
    }
    let vocab = Vocabulary::build(lists.iter().map(|l| l.as_slice()), &[]);
    let (train, valid) = split_validation(train_all, valid_fraction, SPLIT_SEED);
    Ok(QaTask {
        train,
        valid,
        test,
        vocab,
    })
}

/// A dialog task: every split fully prepared (speaker/time features and
/// match bits are deterministic), shared candidate bags, vocabulary.
pub struct DialogTask {
    pub train: Vec<PreparedExample>,
    pub valid: Vec<PreparedExample>,
    pub test: Vec<PreparedExample>,
    pub test_oov: Vec<PreparedExample>,
    pub vocab: Vocabulary,
    pub candidates: CandidateSet,
    pub bags: CandidateBags,
}

/// Assembles a dialog task. The vocabulary covers train/dev/test utterances
/// and the candidate set, plus speaker, time, and match-feature tokens;
/// OOV-test entities stay out of it except where the candidate file names
/// them. The dev split is the validation set.
pub fn build_dialog_task(
    trn_text: &str,
    dev_text: &str,
    tst_text: &str,
    tst_oov_text: &str,
    candidates_text: &str,
    kb_text: &str,
    enc: &EncodingConfig,
) -> Result<DialogTask, CorpusError> {
    let candidates = CandidateSet::parse(candidates_text);
    let kb = KnowledgeBaseIndex::parse(kb_text)?;
    let trn = parse_dialog_task(trn_text, &candidates)?;
    let dev = parse_dialog_task(dev_text, &candidates)?;
    let tst = parse_dialog_task(tst_text, &candidates)?;
    let tst_oov = parse_dialog_task(tst_oov_text, &candidates)?;

    let mut lists: Vec<Vec<String>> = Vec::new();
    for ex in trn.iter().chain(&dev).chain(&tst) {
        lists.push(ex.query.clone());
        for (_, toks) in &ex.history {
            lists.push(toks.clone());
        }
    }
    lists.extend(candidates.tokens.iter().cloned());
    let max_turn = trn
        .iter()
        .chain(&dev)
        .chain(&tst)
        .chain(&tst_oov)
        .map(|ex| ex.history.len() / 2 + 1)
        .max()
        .unwrap_or(1);
    let mut extra: Vec<String> = vec![USER_TOKEN.to_string(), BOT_TOKEN.to_string()];
    extra.extend((1..=max_turn).map(time_token));
    extra.extend(kb.properties.iter().map(|p| match_slot_token(p)));
    let vocab = Vocabulary::build(lists.iter().map(|l| l.as_slice()), &extra);

    let prep = |exs: &[crate::corpus::DialogExample]| -> Vec<PreparedExample> {
        exs.iter()
            .map(|e| prepare_dialog_example(e, &vocab, &candidates, &kb, enc))
            .collect()
    };
    let bags = CandidateBags::build(&candidates, &vocab, &kb);
    Ok(DialogTask {
        train: prep(&trn),
        valid: prep(&dev),
        test: prep(&tst),
        test_oov: prep(&tst_oov),
        vocab,
        candidates,
        bags,
    })
}

/// A training data source: QA tasks re-prepare their training memories each
/// epoch (fresh noise placement); dialog tasks are prepared once.
pub enum TaskData<'a> {
    Qa(&'a QaTask),
    Dialog(&'a DialogTask),
}

impl TaskData<'_> {
    pub fn head(&self) -> Head {
        match self {
            TaskData::Qa(_) => Head::Word,
            TaskData::Dialog(_) => Head::Candidates,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            TaskData::Qa(t) => t.vocab.len(),
            TaskData::Dialog(t) => t.vocab.len(),
        }
    }

    pub fn bags(&self) -> Option<&CandidateBags> {
        match self {
            TaskData::Qa(_) => None,
            TaskData::Dialog(t) => Some(&t.bags),
        }
    }

    fn train_prepared<R: Rng>(&self, enc: &EncodingConfig, rng: &mut R) -> Vec<PreparedExample> {
        match self {
            TaskData::Qa(t) => t
                .train
                .iter()
                .map(|ex| prepare_qa_example(ex, &t.vocab, enc, Mode::Train, rng))
                .collect(),
            TaskData::Dialog(t) => t.train.clone(),
        }
    }

    fn valid_prepared(&self, enc: &EncodingConfig) -> Vec<PreparedExample> {
        match self {
            TaskData::Qa(t) => {
                let mut rng = ChaCha20Rng::seed_from_u64(0); // unused in eval mode
                t.valid
                    .iter()
                    .map(|ex| prepare_qa_example(ex, &t.vocab, enc, Mode::Eval, &mut rng))
                    .collect()
            }
            TaskData::Dialog(t) => t.valid.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub softmax_active: bool,
    pub train_loss: f64,
    pub valid_accuracy: f64,
    pub valid_loss: f64,
    /// Largest pre-clip gradient global norm seen this epoch.
    pub grad_norm: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the best epoch (highest validation accuracy, ties
    /// broken by lower validation loss, then by the earlier epoch).
    pub params: ModelParams,
    pub best_epoch: usize,
    pub logs: Vec<EpochLog>,
    pub final_valid_accuracy: f64,
    /// Validation loss at the best epoch (restart tie-breaker).
    pub final_valid_loss: f64,
}

/// One clipped SGD step on a batch. Returns (summed loss, pre-clip norm).
#[allow(clippy::too_many_arguments)]
pub fn sgd_step(
    train: &[PreparedExample],
    batch: &[usize],
    params: &mut ModelParams,
    bags: Option<&CandidateBags>,
    enc: &EncodingConfig,
    softmax_active: bool,
    lr: f64,
    clip_norm: f64,
) -> (f64, f64) {
    // Gradients are summed (not averaged) over the batch; the clip norm of
    // 40 is calibrated against summed batch gradients.
    let mut grads = params.store.zeros_like();
    let scale = 1.0;
    let mut loss_sum = 0.0;
    for &i in batch {
        loss_sum += loss_and_grads(
            &train[i],
            bags,
            params,
            enc.scheme,
            softmax_active,
            scale,
            &mut grads,
        );
    }
    let pre_norm = clip_global_norm(&mut grads, clip_norm);
    for (name, g) in grads.iter() {
        params.store.get_mut(name).axpy(g, -lr);
    }
    (loss_sum, pre_norm)
}

/// Validation accuracy of the current parameters.
pub fn validation_accuracy(
    valid: &[PreparedExample],
    bags: Option<&CandidateBags>,
    params: &ModelParams,
    enc: &EncodingConfig,
) -> f64 {
    match bags {
        Some(b) => eval::dialog_accuracy(valid, b, params, enc.scheme).0,
        None => eval::qa_accuracy(valid, params, enc.scheme),
    }
}

/// Mean validation cross-entropy of the current parameters.
pub fn validation_loss(
    valid: &[PreparedExample],
    bags: Option<&CandidateBags>,
    params: &ModelParams,
    enc: &EncodingConfig,
) -> f64 {
    valid
        .iter()
        .map(|ex| example_loss(ex, bags, params, enc.scheme, true))
        .sum::<f64>()
        / valid.len() as f64
}

/// A full training run from one seed. Deterministic given (data, configs,
/// seed). The attention softmax stays off for the linear-start epochs; the
/// answer softmax is always on. The returned parameters are an early-stopping
/// snapshot from the epoch with the best validation accuracy (ties broken by
/// lower validation loss, then by the earlier epoch).
pub fn train_run(
    data: &TaskData,
    variant: ModelVariant,
    cfg: &TrainConfig,
    enc: &EncodingConfig,
    seed: u64,
) -> Result<TrainOutcome, TrainError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let init = InitConfig {
        init_std: cfg.init_std,
        gate_bias_mean: cfg.gate_bias_mean,
        temporal_rows: if enc.temporal { enc.temporal_rows() } else { 0 },
    };
    let mut params = ModelParams::init(
        variant,
        data.head(),
        cfg.hops,
        cfg.dim,
        data.vocab_size(),
        &init,
        &mut rng,
    );
    let bags = data.bags();
    let valid = data.valid_prepared(enc);

    // (params snapshot, epoch, valid accuracy, valid loss)
    let mut best: Option<(ModelParams, usize, f64, f64)> = None;
    let mut logs = Vec::with_capacity(cfg.total_epochs);
    for epoch in 0..cfg.total_epochs {
        let lr = cfg.learning_rate(epoch);
        let softmax_active = epoch >= cfg.linear_start_epochs;
        let train = data.train_prepared(enc, &mut rng);
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut grad_norm: f64 = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (l, n) = sgd_step(
                &train,
                batch,
                &mut params,
                bags,
                enc,
                softmax_active,
                lr,
                cfg.clip_norm,
            );
            loss_sum += l;
            grad_norm = grad_norm.max(n);
        }
        let train_loss = loss_sum / train.len() as f64;
        if !train_loss.is_finite() || !grad_norm.is_finite() {
            return Err(TrainError::Diverged { epoch });
        }
        let valid_accuracy = validation_accuracy(&valid, bags, &params, enc);
        let valid_loss = validation_loss(&valid, bags, &params, enc);
        // Ties in validation accuracy go to the later epoch: once accuracy
        // saturates, validation loss is dominated by confidence on a handful
        // of examples and stops tracking test accuracy, while further
        // training still refines the model.
        if best
            .as_ref()
            .map(|(_, _, acc, _)| valid_accuracy >= *acc)
            .unwrap_or(true)
        {
            best = Some((params.clone(), epoch, valid_accuracy, valid_loss));
        }
        logs.push(EpochLog {
            epoch,
            lr,
            softmax_active,
            train_loss,
            valid_accuracy,
            valid_loss,
            grad_norm,
        });
    }
    let (best_params, best_epoch, best_acc, best_loss) =
        best.unwrap_or((params, 0, 0.0, f64::INFINITY));
    Ok(TrainOutcome {
        params: best_params,
        best_epoch,
        logs,
        final_valid_accuracy: best_acc,
        final_valid_loss: best_loss,
    })
}

#[derive(Debug, Clone)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub final_valid_accuracy: f64,
}

pub struct RestartsOutcome {
    pub best: TrainOutcome,
    pub best_restart: usize,
    pub summaries: Vec<RestartSummary>,
}

/// splitmix64: decorrelates per-restart seeds from the base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Index of the restart with the highest validation accuracy; accuracy ties
/// go to the lower validation loss, remaining ties to the lowest index.
pub fn select_best(results: &[(f64, f64)]) -> usize {
    let mut best = 0;
    for (i, &(acc, loss)) in results.iter().enumerate() {
        let (bacc, bloss) = results[best];
        if acc > bacc || (acc == bacc && loss < bloss) {
            best = i;
        }
    }
    best
}

/// Trains `cfg.restarts` models from derived seeds (in parallel waves sized
/// to the available cores) and keeps the one with the best final validation
/// accuracy.
pub fn train_with_restarts(
    data: &TaskData,
    variant: ModelVariant,
    cfg: &TrainConfig,
    enc: &EncodingConfig,
) -> Result<RestartsOutcome, TrainError> {
    assert!(cfg.restarts >= 1);
    let seeds: Vec<u64> = (0..cfg.restarts as u64)
        .map(|i| derive_seed(cfg.seed, i))
        .collect();
    let wave = thread::available_parallelism().map(|n| n.get()).unwrap_or(1);

    let mut outcomes: Vec<TrainOutcome> = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(wave) {
        let results: Vec<Result<TrainOutcome, TrainError>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&sd| s.spawn(move || train_run(data, variant, cfg, enc, sd)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("training thread panicked"))
                .collect()
        });
        for r in results {
            outcomes.push(r?);
        }
    }

    let summaries: Vec<RestartSummary> = outcomes
        .iter()
        .enumerate()
        .map(|(i, o)| RestartSummary {
            restart: i,
            seed: seeds[i],
            final_valid_accuracy: o.final_valid_accuracy,
        })
        .collect();
    let accs: Vec<(f64, f64)> = outcomes
        .iter()
        .map(|o| (o.final_valid_accuracy, o.final_valid_loss))
        .collect();
    let best_restart = select_best(&accs);
    let best = outcomes.swap_remove(best_restart);
    Ok(RestartsOutcome {
        best,
        best_restart,
        summaries,
    })
}
