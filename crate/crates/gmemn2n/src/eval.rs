//! Metrics and introspection: QA accuracy, per-response / per-dialog
//! accuracy, attention tables, and gate-pattern dumps.

use crate::encoding::{CandidateBags, PreparedExample, Scheme};
use crate::model::{forward, ModelKind, ModelParams, ModelTrace};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("gate dump requires a gated (gmemn2n) model")]
    NoGates,
}

/// Index of the maximum logit; ties resolve to the lower index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Greedy prediction for one example.
pub fn predict(
    ex: &PreparedExample,
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
) -> usize {
    let (logits, _) = forward(ex, cands, params, scheme, true);
    argmax(&logits)
}

pub fn predictions(
    examples: &[PreparedExample],
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
) -> Vec<usize> {
    examples
        .iter()
        .map(|ex| predict(ex, cands, params, scheme))
        .collect()
}

/// Percentage of predictions equal to gold. Pure in (predictions, gold).
pub fn accuracy_from(pred: &[usize], gold: &[usize]) -> f64 {
    assert_eq!(pred.len(), gold.len(), "prediction count mismatch");
    assert!(!pred.is_empty(), "no examples");
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    100.0 * correct as f64 / pred.len() as f64
}

/// QA accuracy: argmax over the answer-word logits vs the gold word index.
pub fn qa_accuracy(examples: &[PreparedExample], params: &ModelParams, scheme: Scheme) -> f64 {
    let pred = predictions(examples, None, params, scheme);
    let gold: Vec<usize> = examples.iter().map(|e| e.gold).collect();
    accuracy_from(&pred, &gold)
}

/// Per-response and per-dialog accuracy from predictions. A dialog counts
/// as correct only if every one of its responses is correct. Pure in
/// (predictions, gold, dialog ids).
pub fn dialog_accuracy_from(pred: &[usize], examples: &[PreparedExample]) -> (f64, f64) {
    assert_eq!(pred.len(), examples.len(), "prediction count mismatch");
    assert!(!pred.is_empty(), "no examples");
    let gold: Vec<usize> = examples.iter().map(|e| e.gold).collect();
    let per_response = accuracy_from(pred, &gold);
    let mut dialogs: BTreeMap<usize, bool> = BTreeMap::new();
    for (p, ex) in pred.iter().zip(examples) {
        let entry = dialogs.entry(ex.dialog_id).or_insert(true);
        *entry &= *p == ex.gold;
    }
    let ok = dialogs.values().filter(|&&v| v).count();
    let per_dialog = 100.0 * ok as f64 / dialogs.len() as f64;
    (per_response, per_dialog)
}

pub fn dialog_accuracy(
    examples: &[PreparedExample],
    cands: &CandidateBags,
    params: &ModelParams,
    scheme: Scheme,
) -> (f64, f64) {
    let pred = predictions(examples, Some(cands), params, scheme);
    dialog_accuracy_from(&pred, examples)
}

/// A saved evaluation: recomputing metrics from `predictions`/`golds`
/// reproduces the stored figures exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub variant: String,
    pub seed: u64,
    pub config_hash: String,
    pub predictions: Vec<usize>,
    pub golds: Vec<usize>,
    /// QA accuracy or dialog per-response accuracy, in percent.
    pub accuracy: f64,
    pub per_dialog_accuracy: Option<f64>,
}

/// Per-hop mean gate value Σ_i T^k_i / d, or `None` for plain hops.
pub fn mean_gates(trace: &ModelTrace) -> Vec<Option<f64>> {
    trace
        .hops
        .iter()
        .map(|h| {
            h.gate
                .as_ref()
                .map(|g| g.iter().sum::<f64>() / g.len() as f64)
        })
        .collect()
}

/// Aligned plain-text table: one row per memory slot with the attention
/// probability of every hop, and a footer with per-hop mean gate values
/// (`N/A` for plain hops).
pub fn attention_table(trace: &ModelTrace, slot_texts: &[String]) -> String {
    let hops = trace.hops.len();
    let text_width = slot_texts
        .iter()
        .map(|s| s.len())
        .max()
        .unwrap_or(0)
        .max("memory".len());
    let mut out = String::new();
    out.push_str(&format!("{:>4}  {:<text_width$}", "slot", "memory"));
    for k in 1..=hops {
        out.push_str(&format!("  {:>10}", format!("p^{k}")));
    }
    out.push('\n');
    for (i, text) in slot_texts.iter().enumerate() {
        out.push_str(&format!("{:>4}  {:<text_width$}", i + 1, text));
        for h in &trace.hops {
            out.push_str(&format!("  {:>10.6}", h.attention[i]));
        }
        out.push('\n');
    }
    out.push_str(&format!("{:>4}  {:<text_width$}", "", "mean gate"));
    for g in mean_gates(trace) {
        match g {
            Some(v) => out.push_str(&format!("  {:>10.6}", v)),
            None => out.push_str(&format!("  {:>10}", "N/A")),
        }
    }
    out.push('\n');
    out
}

/// Same table as CSV: `slot,text,p_1..p_K`, with a final `mean_gate` row.
pub fn attention_csv(trace: &ModelTrace, slot_texts: &[String]) -> String {
    let hops = trace.hops.len();
    let mut out = String::from("slot,text");
    for k in 1..=hops {
        out.push_str(&format!(",p_{k}"));
    }
    out.push('\n');
    for (i, text) in slot_texts.iter().enumerate() {
        out.push_str(&format!("{},\"{}\"", i + 1, text.replace('"', "\"\"")));
        for h in &trace.hops {
            out.push_str(&format!(",{:.6e}", h.attention[i]));
        }
        out.push('\n');
    }
    out.push_str("mean_gate,");
    for g in mean_gates(trace) {
        match g {
            Some(v) => out.push_str(&format!(",{v:.6e}")),
            None => out.push_str(",N/A"),
        }
    }
    out.push('\n');
    out
}

/// Flattened [T^1; ...; T^K] gate vectors with correctness flags, one CSV
/// row per example. Column order is hop-major: `t1_d1..t1_dD,t2_d1,...`.
pub fn gate_dump(
    examples: &[PreparedExample],
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
) -> Result<String, EvalError> {
    if params.variant.kind != ModelKind::GMemN2N {
        return Err(EvalError::NoGates);
    }
    let mut out = String::from("id,correct");
    for k in 1..=params.hops {
        for i in 1..=params.dim {
            out.push_str(&format!(",t{k}_d{i}"));
        }
    }
    out.push('\n');
    for (id, ex) in examples.iter().enumerate() {
        let (logits, trace) = forward(ex, cands, params, scheme, true);
        let correct = (argmax(&logits) == ex.gold) as u8;
        out.push_str(&format!("{id},{correct}"));
        for h in &trace.hops {
            let gate = h.gate.as_ref().expect("gmemn2n hop without gate");
            for &v in gate {
                out.push_str(&format!(",{v:.5e}")); // 6 significant digits
            }
        }
        out.push('\n');
    }
    Ok(out)
}

/// Fixed-seed k-means (k = 3, Lloyd iterations) over flattened gate
/// vectors: a concrete "most frequent gate patterns" summary.
pub fn gate_pattern_summary(rows: &[Vec<f64>], seed: u64) -> String {
    const K: usize = 3;
    if rows.is_empty() {
        return String::from("no gate rows\n");
    }
    let dim = rows[0].len();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = (0..K.min(rows.len()))
        .map(|_| rows[rng.gen_range(0..rows.len())].clone())
        .collect();
    let mut assign = vec![0usize; rows.len()];
    for _ in 0..50 {
        let mut changed = false;
        for (i, row) in rows.iter().enumerate() {
            let best = centroids
                .iter()
                .enumerate()
                .map(|(c, cent)| {
                    let d2: f64 = row
                        .iter()
                        .zip(cent)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (c, d2)
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(c, _)| c)
                .unwrap();
            if assign[i] != best {
                assign[i] = best;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (i, row) in rows.iter().enumerate() {
            counts[assign[i]] += 1;
            for (s, v) in sums[assign[i]].iter_mut().zip(row) {
                *s += v;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if counts[c] > 0 {
                for (ck, s) in centroid.iter_mut().zip(&sums[c]) {
                    *ck = s / counts[c] as f64;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut counts = vec![0usize; centroids.len()];
    for &a in &assign {
        counts[a] += 1;
    }
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut out = String::new();
    for (rank, &c) in order.iter().enumerate() {
        let cent = centroids[c]
            .iter()
            .map(|v| format!("{v:.4}"))
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "pattern {} count {} centroid [{}]\n",
            rank + 1,
            counts[c],
            cent
        ));
    }
    out
}

/// Parses the value columns of a [`gate_dump`] CSV back into rows.
pub fn gate_rows_from_csv(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .map(|line| {
            line.split(',')
                .skip(2)
                .map(|v| v.parse().expect("gate value"))
                .collect()
        })
        .collect()
}
