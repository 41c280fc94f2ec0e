//! The memory network computation graph: attention over memory cells,
//! weighted readout, plain (residual) and gated hop updates, parameter
//! tying, and the two answer heads (word prediction and candidate ranking).
//!
//! The forward pass caches every intermediate; the backward pass is
//! hand-derived and accumulates gradients into named storage slots, so tied
//! parameters receive summed gradients for free.

use crate::encoding::{
    embed_sentence_grad, embed_sentence_into, CandidateBags, PreparedExample, Scheme,
};
use crate::tensor::{gaussian_init, sigmoid_scalar, ParamStore, Tensor};
use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MemN2N,
    GMemN2N,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateTying {
    Global,
    HopSpecific,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingTying {
    Untied,
    Adjacent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub kind: ModelKind,
    pub gate_tying: GateTying,
    pub embedding_tying: EmbeddingTying,
}

impl ModelVariant {
    pub fn memn2n() -> Self {
        ModelVariant {
            kind: ModelKind::MemN2N,
            gate_tying: GateTying::HopSpecific,
            embedding_tying: EmbeddingTying::Adjacent,
        }
    }

    pub fn gmemn2n(gate_tying: GateTying) -> Self {
        ModelVariant {
            kind: ModelKind::GMemN2N,
            gate_tying,
            embedding_tying: EmbeddingTying::Adjacent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Vocabulary-sized softmax over answer words.
    Word,
    /// Softmax over a candidate-response set.
    Candidates,
}

/// How a logical parameter name maps onto storage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamRef {
    Direct(String),
    /// The logical parameter is the transpose of the named storage slot.
    Transposed(String),
}

/// All trainable parameters plus the tying (aliasing) metadata.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub store: ParamStore,
    /// logical name -> storage reference
    pub tying: IndexMap<String, ParamRef>,
    pub variant: ModelVariant,
    pub head: Head,
    pub hops: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub temporal: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct InitConfig {
    pub init_std: f64,
    pub gate_bias_mean: f64,
    /// Rows of the temporal matrices (0 disables temporal encoding).
    pub temporal_rows: usize,
}

impl ModelParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        variant: ModelVariant,
        head: Head,
        hops: usize,
        dim: usize,
        vocab_size: usize,
        init: &InitConfig,
        rng: &mut R,
    ) -> ModelParams {
        assert!(hops >= 1, "at least one hop required");
        let mut store = ParamStore::new();
        let mut tying = IndexMap::new();
        let std = init.init_std;

        match variant.embedding_tying {
            EmbeddingTying::Adjacent => {
                // A^{k+1} = C^k, B = A^1, W = (C^K)^T
                for k in 0..=hops {
                    store.insert(format!("emb{k}"), gaussian_init(dim, vocab_size, 0.0, std, rng));
                }
                tying.insert("B".into(), ParamRef::Direct("emb0".into()));
                for k in 1..=hops {
                    tying.insert(format!("A{k}"), ParamRef::Direct(format!("emb{}", k - 1)));
                    tying.insert(format!("C{k}"), ParamRef::Direct(format!("emb{k}")));
                }
                if head == Head::Word {
                    tying.insert("W".into(), ParamRef::Transposed(format!("emb{hops}")));
                }
            }
            EmbeddingTying::Untied => {
                store.insert("B", gaussian_init(dim, vocab_size, 0.0, std, rng));
                tying.insert("B".into(), ParamRef::Direct("B".into()));
                for k in 1..=hops {
                    store.insert(format!("A{k}"), gaussian_init(dim, vocab_size, 0.0, std, rng));
                    tying.insert(format!("A{k}"), ParamRef::Direct(format!("A{k}")));
                    store.insert(format!("C{k}"), gaussian_init(dim, vocab_size, 0.0, std, rng));
                    tying.insert(format!("C{k}"), ParamRef::Direct(format!("C{k}")));
                }
                if head == Head::Word {
                    store.insert("W", gaussian_init(vocab_size, dim, 0.0, std, rng));
                    tying.insert("W".into(), ParamRef::Direct("W".into()));
                }
            }
        }

        if head == Head::Candidates {
            store.insert("W_prime", gaussian_init(dim, vocab_size, 0.0, std, rng));
            tying.insert("W_prime".into(), ParamRef::Direct("W_prime".into()));
        }

        let temporal = init.temporal_rows > 0;
        if temporal {
            let rows = init.temporal_rows;
            match variant.embedding_tying {
                EmbeddingTying::Adjacent => {
                    for k in 0..=hops {
                        store.insert(format!("tmp{k}"), gaussian_init(rows, dim, 0.0, std, rng));
                    }
                    for k in 1..=hops {
                        tying.insert(format!("T_A{k}"), ParamRef::Direct(format!("tmp{}", k - 1)));
                        tying.insert(format!("T_C{k}"), ParamRef::Direct(format!("tmp{k}")));
                    }
                }
                EmbeddingTying::Untied => {
                    for k in 1..=hops {
                        store.insert(format!("T_A{k}"), gaussian_init(rows, dim, 0.0, std, rng));
                        tying.insert(format!("T_A{k}"), ParamRef::Direct(format!("T_A{k}")));
                        store.insert(format!("T_C{k}"), gaussian_init(rows, dim, 0.0, std, rng));
                        tying.insert(format!("T_C{k}"), ParamRef::Direct(format!("T_C{k}")));
                    }
                }
            }
        }

        if variant.kind == ModelKind::GMemN2N {
            match variant.gate_tying {
                GateTying::Global => {
                    store.insert("W_T", gaussian_init(dim, dim, 0.0, std, rng));
                    store.insert("b_T", gaussian_init(dim, 1, init.gate_bias_mean, std, rng));
                    for k in 1..=hops {
                        tying.insert(format!("W_T{k}"), ParamRef::Direct("W_T".into()));
                        tying.insert(format!("b_T{k}"), ParamRef::Direct("b_T".into()));
                    }
                }
                GateTying::HopSpecific => {
                    for k in 1..=hops {
                        store.insert(format!("W_T{k}"), gaussian_init(dim, dim, 0.0, std, rng));
                        store.insert(
                            format!("b_T{k}"),
                            gaussian_init(dim, 1, init.gate_bias_mean, std, rng),
                        );
                        tying.insert(format!("W_T{k}"), ParamRef::Direct(format!("W_T{k}")));
                        tying.insert(format!("b_T{k}"), ParamRef::Direct(format!("b_T{k}")));
                    }
                }
            }
        }

        ModelParams {
            store,
            tying,
            variant,
            head,
            hops,
            dim,
            vocab_size,
            temporal,
        }
    }

    /// Resolves a logical parameter name to its storage tensor.
    /// The flag is true when the logical view is the transpose of storage.
    pub fn resolve(&self, logical: &str) -> (&Tensor, bool) {
        match self
            .tying
            .get(logical)
            .unwrap_or_else(|| panic!("unknown logical parameter `{logical}`"))
        {
            ParamRef::Direct(name) => (self.store.get(name), false),
            ParamRef::Transposed(name) => (self.store.get(name), true),
        }
    }

    /// Storage slot name backing a logical parameter.
    pub fn storage_of(&self, logical: &str) -> (&str, bool) {
        match self.tying.get(logical).expect("logical name") {
            ParamRef::Direct(name) => (name, false),
            ParamRef::Transposed(name) => (name, true),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Attention weights over memory: scores a_i = u . m_i, softmaxed unless
/// linear start is active (then the raw scores are used).
pub fn attention(u: &[f64], input_cells: &[Vec<f64>], softmax_active: bool) -> Vec<f64> {
    assert!(!input_cells.is_empty(), "attention over empty memory");
    let scores: Vec<f64> = input_cells.iter().map(|m| dot(u, m)).collect();
    if softmax_active {
        softmax_slice(&scores)
    } else {
        scores
    }
}

fn softmax_slice(a: &[f64]) -> Vec<f64> {
    let max = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = a.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|x| *x /= sum);
    out
}

/// Memory response o = sum_i p_i c_i.
pub fn memory_response(p: &[f64], output_cells: &[Vec<f64>]) -> Vec<f64> {
    let d = output_cells[0].len();
    let mut o = vec![0.0; d];
    for (pi, c) in p.iter().zip(output_cells) {
        for (ok, ck) in o.iter_mut().zip(c) {
            *ok += pi * ck;
        }
    }
    o
}

/// Residual hop update u' = o + u.
pub fn plain_hop(u: &[f64], o: &[f64]) -> Vec<f64> {
    u.iter().zip(o).map(|(a, b)| a + b).collect()
}

/// Gated hop update: T = sigma(W_T u + b_T), u' = o .* T + u .* (1 - T).
/// Returns (u', gate vector).
pub fn gated_hop(u: &[f64], o: &[f64], w_t: &Tensor, b_t: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let d = u.len();
    let mut gate = vec![0.0; d];
    for i in 0..d {
        let mut z = b_t.get(i, 0);
        for (j, uj) in u.iter().enumerate() {
            z += w_t.get(i, j) * uj;
        }
        gate[i] = sigmoid_scalar(z);
    }
    let next = u
        .iter()
        .zip(o)
        .zip(&gate)
        .map(|((uj, oj), t)| oj * t + uj * (1.0 - t))
        .collect();
    (next, gate)
}

/// Per-hop intermediates captured during a forward pass.
#[derive(Debug, Clone)]
pub struct HopTrace {
    pub attention: Vec<f64>,
    /// Gate vector T^k(u^k); None for plain hops.
    pub gate: Option<Vec<f64>>,
    /// Controller state entering the hop.
    pub controller: Vec<f64>,
    pub response: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ModelTrace {
    pub hops: Vec<HopTrace>,
    pub final_controller: Vec<f64>,
    pub logits: Vec<f64>,
}

struct HopCache {
    m: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    p: Vec<f64>,
    gate: Option<Vec<f64>>,
    u_in: Vec<f64>,
    o: Vec<f64>,
}

struct ForwardCache {
    hops: Vec<HopCache>,
    u_final: Vec<f64>,
    logits: Vec<f64>,
    /// Candidate head only: z = W'^T u_final over the vocabulary.
    z: Option<Vec<f64>>,
}

fn encode_hop_memory(
    ex: &PreparedExample,
    params: &ModelParams,
    scheme: Scheme,
    hop: usize,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = params.dim;
    let n = ex.memory.len();
    let (a, _) = params.resolve(&format!("A{hop}"));
    let (c, _) = params.resolve(&format!("C{hop}"));
    let (t_a, t_c) = if params.temporal {
        (
            Some(params.resolve(&format!("T_A{hop}")).0),
            Some(params.resolve(&format!("T_C{hop}")).0),
        )
    } else {
        (None, None)
    };
    let mut ms = Vec::with_capacity(n);
    let mut cs = Vec::with_capacity(n);
    for (i, sent) in ex.memory.iter().enumerate() {
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
        ms.push(m);
        cs.push(cc);
    }
    (ms, cs)
}

fn run_forward(
    ex: &PreparedExample,
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
    softmax_active: bool,
) -> ForwardCache {
    let (b, _) = params.resolve("B");
    let mut u = vec![0.0; params.dim];
    embed_sentence_into(&ex.question, b, scheme, 1.0, &mut u);

    let mut hops = Vec::with_capacity(params.hops);
    for k in 1..=params.hops {
        let (m, c) = encode_hop_memory(ex, params, scheme, k);
        let p = attention(&u, &m, softmax_active);
        let o = memory_response(&p, &c);
        let (next, gate) = match params.variant.kind {
            ModelKind::MemN2N => (plain_hop(&u, &o), None),
            ModelKind::GMemN2N => {
                let (w_t, _) = params.resolve(&format!("W_T{k}"));
                let (b_t, _) = params.resolve(&format!("b_T{k}"));
                let (next, gate) = gated_hop(&u, &o, w_t, b_t);
                (next, Some(gate))
            }
        };
        hops.push(HopCache {
            m,
            c,
            p,
            gate,
            u_in: u,
            o,
        });
        u = next;
    }
    let u_final = u;

    let (logits, z) = match params.head {
        Head::Word => {
            let (w, transposed) = params.resolve("W");
            let mut logits = vec![0.0; params.vocab_size];
            if transposed {
                // w is d x |V| storage; logical W = storage^T
                for (k, uk) in u_final.iter().enumerate() {
                    let row = w.row(k);
                    for (l, wv) in logits.iter_mut().zip(row) {
                        *l += wv * uk;
                    }
                }
            } else {
                for (v, l) in logits.iter_mut().enumerate() {
                    *l = dot(w.row(v), &u_final);
                }
            }
            (logits, None)
        }
        Head::Candidates => {
            let bags = cands.expect("candidate head requires candidate bags");
            assert!(!bags.bags.is_empty(), "candidate set must be non-empty");
            let (wp, _) = params.resolve("W_prime");
            // z_t = sum_k u_k W'[k, t]
            let mut z = vec![0.0; params.vocab_size];
            for (k, uk) in u_final.iter().enumerate() {
                let row = wp.row(k);
                for (zt, wv) in z.iter_mut().zip(row) {
                    *zt += wv * uk;
                }
            }
            let mut logits: Vec<f64> = bags
                .bags
                .iter()
                .map(|bag| bag.iter().map(|&(t, mult)| z[t] * mult).sum())
                .collect();
            for &(ci, mask) in &ex.match_bits {
                for (p, &slot) in bags.match_slots.iter().enumerate() {
                    if mask & (1 << p) != 0 {
                        logits[ci as usize] += z[slot];
                    }
                }
            }
            (logits, Some(z))
        }
    };

    ForwardCache {
        hops,
        u_final,
        logits,
        z,
    }
}

/// Full forward pass with trace capture.
pub fn forward(
    ex: &PreparedExample,
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
    softmax_active: bool,
) -> (Vec<f64>, ModelTrace) {
    let cache = run_forward(ex, cands, params, scheme, softmax_active);
    let hops = cache
        .hops
        .iter()
        .map(|h| HopTrace {
            attention: h.p.clone(),
            gate: h.gate.clone(),
            controller: h.u_in.clone(),
            response: h.o.clone(),
        })
        .collect();
    let trace = ModelTrace {
        hops,
        final_controller: cache.u_final.clone(),
        logits: cache.logits.clone(),
    };
    (cache.logits, trace)
}

/// Cross-entropy of the softmaxed logits against the gold index.
pub fn cross_entropy(logits: &[f64], gold: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let logsum = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln() + max;
    logsum - logits[gold]
}

/// Forward + cross-entropy without gradient bookkeeping.
pub fn example_loss(
    ex: &PreparedExample,
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
    softmax_active: bool,
) -> f64 {
    let cache = run_forward(ex, cands, params, scheme, softmax_active);
    cross_entropy(&cache.logits, ex.gold)
}

/// Forward pass, cross-entropy loss, and hand-derived backward pass.
/// Gradients (scaled by `scale`) accumulate into `grads`, keyed by storage
/// slot name, so aliased parameters receive summed contributions.
#[allow(clippy::too_many_arguments)]
pub fn loss_and_grads(
    ex: &PreparedExample,
    cands: Option<&CandidateBags>,
    params: &ModelParams,
    scheme: Scheme,
    softmax_active: bool,
    scale: f64,
    grads: &mut ParamStore,
) -> f64 {
    let cache = run_forward(ex, cands, params, scheme, softmax_active);
    let loss = cross_entropy(&cache.logits, ex.gold);

    // d loss / d logits = softmax(logits) - onehot(gold)
    let mut dlogits = softmax_slice(&cache.logits);
    dlogits[ex.gold] -= 1.0;
    dlogits.iter_mut().for_each(|g| *g *= scale);

    let d = params.dim;
    let mut du = vec![0.0; d];

    match params.head {
        Head::Word => {
            let (name, transposed) = params.storage_of("W");
            let (w, _) = params.resolve("W");
            let gw = grads.get_mut(&name.to_string());
            if transposed {
                for (k, uk) in cache.u_final.iter().enumerate() {
                    for (v, gv) in dlogits.iter().enumerate() {
                        gw.add_at(k, v, gv * uk);
                    }
                }
                for (k, duk) in du.iter_mut().enumerate() {
                    *duk = dot(w.row(k), &dlogits);
                }
            } else {
                for (v, gv) in dlogits.iter().enumerate() {
                    for (k, uk) in cache.u_final.iter().enumerate() {
                        gw.add_at(v, k, gv * uk);
                    }
                }
                for (v, gv) in dlogits.iter().enumerate() {
                    let row = w.row(v);
                    for (duk, wv) in du.iter_mut().zip(row) {
                        *duk += wv * gv;
                    }
                }
            }
        }
        Head::Candidates => {
            let bags = cands.expect("candidate head requires candidate bags");
            let mut dz = vec![0.0; params.vocab_size];
            for (bag, gi) in bags.bags.iter().zip(&dlogits) {
                for &(t, mult) in bag {
                    dz[t] += gi * mult;
                }
            }
            for &(ci, mask) in &ex.match_bits {
                for (p, &slot) in bags.match_slots.iter().enumerate() {
                    if mask & (1 << p) != 0 {
                        dz[slot] += dlogits[ci as usize];
                    }
                }
            }
            let (wp, _) = params.resolve("W_prime");
            let (name, _) = params.storage_of("W_prime");
            {
                let gwp = grads.get_mut(&name.to_string());
                for (t, &dzt) in dz.iter().enumerate() {
                    if dzt != 0.0 {
                        for (k, uk) in cache.u_final.iter().enumerate() {
                            gwp.add_at(k, t, uk * dzt);
                        }
                    }
                }
            }
            for (k, duk) in du.iter_mut().enumerate() {
                let row = wp.row(k);
                let _ = cache.z; // z not needed in backward; kept for tracing
                *duk = dot(row, &dz);
            }
        }
    }

    // backward through hops, most recent first
    for k in (1..=params.hops).rev() {
        let hop = &cache.hops[k - 1];
        let n = hop.m.len();
        let (do_, mut du_in) = match &hop.gate {
            Some(gate) => {
                let mut do_ = vec![0.0; d];
                let mut du_in = vec![0.0; d];
                let mut dz_gate = vec![0.0; d];
                for j in 0..d {
                    let t = gate[j];
                    do_[j] = du[j] * t;
                    du_in[j] = du[j] * (1.0 - t);
                    let dt = du[j] * (hop.o[j] - hop.u_in[j]);
                    dz_gate[j] = dt * t * (1.0 - t);
                }
                let (w_t, _) = params.resolve(&format!("W_T{k}"));
                let (wt_name, _) = params.storage_of(&format!("W_T{k}"));
                let (bt_name, _) = params.storage_of(&format!("b_T{k}"));
                {
                    let gw = grads.get_mut(&wt_name.to_string());
                    for (i, &dzi) in dz_gate.iter().enumerate() {
                        if dzi != 0.0 {
                            for (j, uj) in hop.u_in.iter().enumerate() {
                                gw.add_at(i, j, dzi * uj);
                            }
                        }
                    }
                }
                {
                    let gb = grads.get_mut(&bt_name.to_string());
                    for (i, &dzi) in dz_gate.iter().enumerate() {
                        gb.add_at(i, 0, dzi);
                    }
                }
                // du_in += W_T^T dz_gate
                for (i, &dzi) in dz_gate.iter().enumerate() {
                    if dzi != 0.0 {
                        for (j, dj) in du_in.iter_mut().enumerate() {
                            *dj += w_t.get(i, j) * dzi;
                        }
                    }
                }
                (do_, du_in)
            }
            None => (du.clone(), du.clone()),
        };

        // o = sum_i p_i c_i
        let dp: Vec<f64> = hop.c.iter().map(|c| dot(&do_, c)).collect();
        // attention backward
        let da: Vec<f64> = if softmax_active {
            let pd = dot(&hop.p, &dp);
            hop.p
                .iter()
                .zip(&dp)
                .map(|(pi, dpi)| pi * (dpi - pd))
                .collect()
        } else {
            dp.clone()
        };
        // a_i = u_in . m_i
        for (da_i, m) in da.iter().zip(&hop.m) {
            for (dj, mj) in du_in.iter_mut().zip(m) {
                *dj += da_i * mj;
            }
        }

        // memory cell gradients: dm_i = da_i * u_in, dc_i = p_i * do_
        let (a_name, _) = params.storage_of(&format!("A{k}"));
        let (c_name, _) = params.storage_of(&format!("C{k}"));
        let a_name = a_name.to_string();
        let c_name = c_name.to_string();
        let (ta_name, tc_name) = if params.temporal {
            let (ta, _) = params.storage_of(&format!("T_A{k}"));
            let (tc, _) = params.storage_of(&format!("T_C{k}"));
            (Some(ta.to_string()), Some(tc.to_string()))
        } else {
            (None, None)
        };
        for (i, sent) in ex.memory.iter().enumerate() {
            let rev = n - 1 - i;
            let dm: Vec<f64> = hop.u_in.iter().map(|uj| da[i] * uj).collect();
            let dc: Vec<f64> = do_.iter().map(|dj| hop.p[i] * dj).collect();
            embed_sentence_grad(sent, scheme, &dm, 1.0, grads.get_mut(&a_name));
            embed_sentence_grad(sent, scheme, &dc, 1.0, grads.get_mut(&c_name));
            if let Some(ta) = &ta_name {
                let gt = grads.get_mut(ta);
                for (j, v) in dm.iter().enumerate() {
                    gt.add_at(rev, j, *v);
                }
            }
            if let Some(tc) = &tc_name {
                let gt = grads.get_mut(tc);
                for (j, v) in dc.iter().enumerate() {
                    gt.add_at(rev, j, *v);
                }
            }
        }

        du = du_in;
    }

    // question embedding
    let (b_name, _) = params.storage_of("B");
    embed_sentence_grad(
        &ex.question,
        scheme,
        &du,
        1.0,
        grads.get_mut(&b_name.to_string()),
    );

    loss
}
