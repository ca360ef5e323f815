//! Log-linear copy-or-hallucinate summarizer.
//!
//! The next-token distribution conditions on the previous token and on which
//! tokens occur in the source:
//!
//! ```text
//! p(u | prev, S) = softmax_u( W[prev, u] + c[u] * [u in S] )
//! ```
//!
//! `W` is a `V x V` bigram table and `c` a per-token copy weight. Emitting an
//! entity outside the source is possible only through `W`, so hallucination
//! in this model is exactly out-of-source entity emission. Both tensors live
//! in a [`Checkpoint`] under `bigram.logits` and `copy.weights`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, Tensor};
use crate::corpus::{Example, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::{streams, StreamRng};

pub const BIGRAM: &str = "bigram.logits";
pub const COPY: &str = "copy.weights";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub vocab: Vocabulary,
    /// Row-major `[V, V]`: `w[prev * V + next]`.
    pub w: Vec<f64>,
    pub c: Vec<f64>,
    pub metadata: Vec<(String, String)>,
}

impl ModelParams {
    pub fn zeros(vocab: Vocabulary) -> Self {
        let v = vocab.size();
        ModelParams {
            vocab,
            w: vec![0.0; v * v],
            c: vec![0.0; v],
            metadata: Vec::new(),
        }
    }

    pub fn init(vocab: Vocabulary, init: Init, seed: u64) -> Self {
        let mut p = Self::zeros(vocab);
        if let Init::Gaussian { sigma } = init {
            let mut rng = StreamRng::derive(seed, streams::INIT, 0);
            for x in p.w.iter_mut().chain(p.c.iter_mut()) {
                *x = sigma * rng.normal();
            }
        }
        p
    }

    pub fn size(&self) -> usize {
        self.vocab.size()
    }

    pub fn row(&self, prev: usize) -> &[f64] {
        let v = self.size();
        &self.w[prev * v..(prev + 1) * v]
    }

    fn set_meta(&mut self, key: &str, value: String) {
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let v = self.size();
        let mut ck = Checkpoint::new();
        let w = self.w.iter().map(|&x| x as f32).collect();
        let c = self.c.iter().map(|&x| x as f32).collect();
        ck.insert(BIGRAM, Tensor::new(vec![v, v], w).expect("shape matches"))
            .expect("non-empty name");
        ck.insert(COPY, Tensor::new(vec![v], c).expect("shape matches"))
            .expect("non-empty name");
        for (k, val) in &self.metadata {
            ck.set_meta(k.clone(), val.clone());
        }
        ck.set_meta("vocab_entities", self.vocab.entities.to_string());
        ck.set_meta("vocab_predicates", self.vocab.predicates.to_string());
        ck.set_meta("vocab_fillers", self.vocab.fillers.to_string());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta_u32 = |key: &str| -> Result<u32> {
            ck.meta(key)
                .ok_or_else(|| Error::VocabularyMismatch(format!("missing metadata key {key}")))?
                .parse()
                .map_err(|_| Error::VocabularyMismatch(format!("bad metadata value for {key}")))
        };
        let vocab = Vocabulary::new(
            meta_u32("vocab_entities")?,
            meta_u32("vocab_predicates")?,
            meta_u32("vocab_fillers")?,
        );
        let v = vocab.size();
        let w = ck
            .get(BIGRAM)
            .ok_or_else(|| Error::VocabularyMismatch(format!("missing tensor {BIGRAM}")))?;
        let c = ck
            .get(COPY)
            .ok_or_else(|| Error::VocabularyMismatch(format!("missing tensor {COPY}")))?;
        if w.shape() != [v, v] || c.shape() != [v] {
            return Err(Error::VocabularyMismatch(format!(
                "tensor shapes {:?} and {:?} do not fit vocabulary size {v}",
                w.shape(),
                c.shape()
            )));
        }
        if w.data().iter().chain(c.data()).any(|x| !x.is_finite()) {
            return Err(Error::VocabularyMismatch("non-finite parameters".into()));
        }
        let metadata = ck
            .metadata()
            .iter()
            .filter(|(k, _)| !k.starts_with("vocab_"))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        Ok(ModelParams {
            vocab,
            w: w.data().iter().map(|&x| x as f64).collect(),
            c: c.data().iter().map(|&x| x as f64).collect(),
            metadata,
        })
    }
}

/// Membership mask of source tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    mask: Vec<bool>,
}

impl SourceSet {
    pub fn from_ids(size: usize, ids: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = vec![false; size];
        for i in ids {
            mask[i] = true;
        }
        SourceSet { mask }
    }

    pub fn contains(&self, id: usize) -> bool {
        self.mask[id]
    }

    pub fn ids(&self) -> BTreeSet<usize> {
        (0..self.mask.len()).filter(|&i| self.mask[i]).collect()
    }
}

fn logits_into(params: &ModelParams, prev: usize, source: &SourceSet, out: &mut [f64]) {
    for (u, (o, w)) in out.iter_mut().zip(params.row(prev)).enumerate() {
        *o = if source.mask[u] { w + params.c[u] } else { *w };
    }
}

fn softmax_in_place(x: &mut [f64]) {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in x.iter_mut() {
        *v /= z;
    }
}

/// Next-token distribution over the whole vocabulary.
pub fn prob_next(params: &ModelParams, prev: usize, source: &SourceSet) -> Vec<f64> {
    let mut p = vec![0.0; params.size()];
    logits_into(params, prev, source, &mut p);
    softmax_in_place(&mut p);
    p
}

/// One training pair in id space.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub source: SourceSet,
    /// Summary ids followed by EOS.
    pub targets: Vec<usize>,
}

impl Encoded {
    pub fn new(vocab: &Vocabulary, source: &[usize], summary: &[usize]) -> Self {
        let mut targets = summary.to_vec();
        targets.push(Vocabulary::EOS_ID);
        Encoded {
            source: SourceSet::from_ids(vocab.size(), source.iter().copied()),
            targets,
        }
    }

    pub fn from_example(vocab: &Vocabulary, e: &Example) -> Result<Self> {
        Ok(Self::new(
            vocab,
            &vocab.encode_all(&e.source_tokens)?,
            &vocab.encode_all(&e.summary_tokens)?,
        ))
    }
}

/// Negative log-likelihood of `summary` + EOS, starting from BOS.
pub fn sequence_nll(params: &ModelParams, source: &[usize], summary: &[usize]) -> f64 {
    let enc = Encoded::new(&params.vocab, source, summary);
    encoded_nll(params, &enc, None)
}

/// NLL of one pair; when `grad` is given, adds `scale * dNLL/dθ` into it.
fn encoded_nll(params: &ModelParams, enc: &Encoded, mut grad: Option<(&mut Gradient, f64)>) -> f64 {
    let v = params.size();
    let mut p = vec![0.0; v];
    let mut prev = Vocabulary::BOS_ID;
    let mut nll = 0.0;
    for &y in &enc.targets {
        logits_into(params, prev, &enc.source, &mut p);
        softmax_in_place(&mut p);
        nll -= p[y].ln();
        if let Some((g, scale)) = grad.as_mut() {
            let row = &mut g.w[prev * v..(prev + 1) * v];
            for u in 0..v {
                let d = *scale * (p[u] - if u == y { 1.0 } else { 0.0 });
                row[u] += d;
                if enc.source.mask[u] {
                    g.c[u] += d;
                }
            }
        }
        prev = y;
    }
    nll
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub w: Vec<f64>,
    pub c: Vec<f64>,
}

impl Gradient {
    fn zeros(v: usize) -> Self {
        Gradient {
            w: vec![0.0; v * v],
            c: vec![0.0; v],
        }
    }
}

/// Gradient of `sequence_nll` with respect to `W` and `c`.
pub fn sequence_nll_grad(
    params: &ModelParams,
    source: &[usize],
    summary: &[usize],
) -> (f64, Gradient) {
    let enc = Encoded::new(&params.vocab, source, summary);
    let mut g = Gradient::zeros(params.size());
    let nll = encoded_nll(params, &enc, Some((&mut g, 1.0)));
    (nll, g)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    Gaussian { sigma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub l2: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            learning_rate: 0.5,
            batch_size: 32,
            l2: 0.0,
            seed: 17,
            init: Init::Gaussian { sigma: 0.01 },
        }
    }
}

impl TrainConfig {
    /// Same optimizer settings, a single epoch.
    pub fn finetune_default() -> Self {
        TrainConfig {
            epochs: 1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidTrainConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be finite and nonnegative");
        }
        if let Init::Gaussian { sigma } = self.init {
            if !(sigma >= 0.0 && sigma.is_finite()) {
                return bad("init sigma must be finite and nonnegative");
            }
        }
        Ok(())
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: TrainConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    /// Full-corpus objective after each epoch.
    pub epoch_loss: Vec<f64>,
    pub warnings: Vec<String>,
}

fn objective(params: &ModelParams, data: &[Encoded], l2: f64) -> f64 {
    let nll: f64 = data
        .iter()
        .map(|e| encoded_nll(params, e, None))
        .sum::<f64>()
        / data.len() as f64;
    nll + l2_penalty(params, l2)
}

fn l2_penalty(params: &ModelParams, l2: f64) -> f64 {
    if l2 == 0.0 {
        return 0.0;
    }
    let sq: f64 = params.w.iter().chain(&params.c).map(|x| x * x).sum();
    0.5 * l2 * sq
}

fn sgd(
    mut params: ModelParams,
    data: &[Encoded],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    let v = params.size();
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = Gradient::zeros(v);
    let mut touched = vec![false; v];
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        StreamRng::derive(cfg.seed, streams::SHUFFLE, epoch as u64).shuffle(&mut order);
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let enc = &data[i];
                let mut prev = Vocabulary::BOS_ID;
                for &y in &enc.targets {
                    touched[prev] = true;
                    prev = y;
                }
                batch_loss += scale * encoded_nll(&params, enc, Some((&mut grad, scale)));
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            let lr = cfg.learning_rate;
            if cfg.l2 > 0.0 {
                // Decay applies to every parameter, not only touched rows.
                for (x, g) in params.w.iter_mut().zip(&grad.w) {
                    *x -= lr * (g + cfg.l2 * *x);
                }
                grad.w.iter_mut().for_each(|g| *g = 0.0);
                touched.iter_mut().for_each(|t| *t = false);
            } else {
                for (row, t) in touched.iter_mut().enumerate() {
                    if *t {
                        let r = row * v..(row + 1) * v;
                        for (x, g) in params.w[r.clone()].iter_mut().zip(&mut grad.w[r]) {
                            *x -= lr * *g;
                            *g = 0.0;
                        }
                        *t = false;
                    }
                }
            }
            for (x, g) in params.c.iter_mut().zip(grad.c.iter_mut()) {
                *x -= lr * (*g + cfg.l2 * *x);
                *g = 0.0;
            }
        }
        let loss = objective(&params, data, cfg.l2);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                step: data.len().div_ceil(cfg.batch_size),
            });
        }
        if let Some(&last) = log.epoch_loss.last() {
            if loss > last {
                let w = format!("training loss rose from {last:.6} to {loss:.6} at epoch {epoch}");
                log::warn!("{w}");
                log.warnings.push(w);
            }
        }
        log.epoch_loss.push(loss);
    }
    Ok((params, log))
}

fn encode_corpus(vocab: &Vocabulary, corpus: &[Example]) -> Result<Vec<Encoded>> {
    corpus
        .iter()
        .map(|e| Encoded::from_example(vocab, e))
        .collect()
}

/// Mini-batch SGD from a fresh initialization.
pub fn train(
    vocab: Vocabulary,
    corpus: &[Example],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let data = encode_corpus(&vocab, corpus)?;
    let mut init = ModelParams::init(vocab, cfg.init, cfg.seed);
    init.set_meta("seed", cfg.seed.to_string());
    init.set_meta("parent", "init".to_string());
    init.set_meta("train.epochs", cfg.epochs.to_string());
    init.set_meta("train.examples", corpus.len().to_string());
    sgd(init, &data, cfg)
}

/// The training loop again, starting from `params`.
pub fn finetune(
    params: &ModelParams,
    subset: &[Example],
    cfg: &TrainConfig,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    if subset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let data = encode_corpus(&params.vocab, subset)?;
    let mut start = params.clone();
    let parent = params
        .metadata
        .iter()
        .find(|(k, _)| k == "name")
        .map(|(_, v)| v.clone())
        .unwrap_or_else(|| "unnamed".to_string());
    start
        .metadata
        .retain(|(k, _)| k != "name" && !k.starts_with("merge."));
    start.set_meta("seed", cfg.seed.to_string());
    start.set_meta("parent", parent);
    start.set_meta("train.epochs", cfg.epochs.to_string());
    start.set_meta("train.examples", subset.len().to_string());
    sgd(start, &data, cfg)
}

impl ModelParams {
    pub fn named(mut self, name: &str) -> Self {
        self.set_meta("name", name.to_string());
        self
    }
}

/// Decoding strategy, written `greedy` or `beam:K` in configs and on the
/// command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Strategy {
    Greedy,
    Beam { width: usize },
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::Greedy => write!(f, "greedy"),
            Strategy::Beam { width } => write!(f, "beam:{width}"),
        }
    }
}

impl From<Strategy> for String {
    fn from(s: Strategy) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Strategy {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "greedy" {
            return Ok(Strategy::Greedy);
        }
        if let Some(k) = s.strip_prefix("beam:") {
            let width: usize = k
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad beam width {k:?}")))?;
            if width == 0 {
                return Err(Error::InvalidArgument("beam width must be positive".into()));
            }
            return Ok(Strategy::Beam { width });
        }
        Err(Error::InvalidArgument(format!("unknown strategy {s:?}")))
    }
}

/// Log-probabilities of the next token with BOS masked out.
fn next_log_probs(params: &ModelParams, prev: usize, source: &SourceSet, buf: &mut [f64]) {
    logits_into(params, prev, source, buf);
    buf[Vocabulary::BOS_ID] = f64::NEG_INFINITY;
    let m = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = buf.iter().map(|x| (x - m).exp()).sum();
    let lz = m + z.ln();
    for x in buf.iter_mut() {
        *x -= lz;
    }
}

/// Generate up to `max_len` tokens. The returned sequence ends with EOS when
/// the model emitted it.
pub fn decode(
    params: &ModelParams,
    source: &[usize],
    max_len: usize,
    strategy: Strategy,
) -> Vec<usize> {
    let src = SourceSet::from_ids(params.size(), source.iter().copied());
    match strategy {
        Strategy::Greedy => greedy(params, &src, max_len),
        Strategy::Beam { width } => beam(params, &src, max_len, width.max(1)),
    }
}

fn greedy(params: &ModelParams, src: &SourceSet, max_len: usize) -> Vec<usize> {
    let mut buf = vec![0.0; params.size()];
    let mut out = Vec::new();
    let mut prev = Vocabulary::BOS_ID;
    while out.len() < max_len {
        next_log_probs(params, prev, src, &mut buf);
        // First maximum wins, i.e. the lowest id among ties.
        let mut best = 0;
        for u in 1..buf.len() {
            if buf[u] > buf[best] {
                best = u;
            }
        }
        out.push(best);
        if best == Vocabulary::EOS_ID {
            break;
        }
        prev = best;
    }
    out
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<usize>,
    logp: f64,
}

impl Hyp {
    fn normalized(&self) -> f64 {
        self.logp / self.tokens.len().max(1) as f64
    }
}

/// Descending score, then lexicographically smaller token ids first.
fn rank(a: &Hyp, b: &Hyp, score: impl Fn(&Hyp) -> f64) -> std::cmp::Ordering {
    score(b)
        .partial_cmp(&score(a))
        .unwrap_or(std::cmp::Ordering::Equal)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

fn beam(params: &ModelParams, src: &SourceSet, max_len: usize, width: usize) -> Vec<usize> {
    let mut buf = vec![0.0; params.size()];
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        logp: 0.0,
    }];
    let mut finished: Vec<Hyp> = Vec::new();
    for _ in 0..max_len {
        let mut candidates = Vec::with_capacity(live.len() * buf.len());
        for h in &live {
            let prev = h.tokens.last().copied().unwrap_or(Vocabulary::BOS_ID);
            next_log_probs(params, prev, src, &mut buf);
            for (u, &lp) in buf.iter().enumerate() {
                if lp.is_finite() {
                    let mut tokens = h.tokens.clone();
                    tokens.push(u);
                    candidates.push(Hyp {
                        tokens,
                        logp: h.logp + lp,
                    });
                }
            }
        }
        // All candidates share one length, so raw and normalized order agree.
        candidates.sort_by(|a, b| rank(a, b, |h| h.logp));
        candidates.truncate(width);
        live.clear();
        for c in candidates {
            if c.tokens.last() == Some(&Vocabulary::EOS_ID) {
                finished.push(c);
            } else {
                live.push(c);
            }
        }
        if live.is_empty() || finished.len() >= width {
            break;
        }
    }
    finished.extend(live);
    finished.sort_by(|a, b| rank(a, b, Hyp::normalized));
    finished
        .into_iter()
        .next()
        .map(|h| h.tokens)
        .unwrap_or_default()
}

/// Drop a trailing EOS, if any.
pub fn strip_eos(mut tokens: Vec<usize>) -> Vec<usize> {
    if tokens.last() == Some(&Vocabulary::EOS_ID) {
        tokens.pop();
    }
    tokens
}
