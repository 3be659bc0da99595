//! Bidirectional encoder that judges whether packet B directly follows
//! packet A.
//!
//! Label convention: `Consecutive` is the *negative* class (id 0) and
//! `NonConsecutive` the *positive* class (id 1). Ties in the predicted
//! probabilities resolve to `NonConsecutive`, so an undecided evaluator
//! rejects a generated packet.

use std::borrow::Cow;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gpt::{softmax64, PairJudge};
use super::{ModelError, TrainConfig, Trunk, TrunkConfig};
use crate::nn::{adam_step, fit_with_early_stopping, AdamState, Bound, Checkpoint, EpochRunner, Graph, History, Linear, ParamStore, Tensor, Var};
use crate::scalar::Scalar;
use crate::text::{BpeVocab, Special, NUM_SPECIAL};

pub const CHECKPOINT_KIND: &str = "bert";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BertConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub mask_rate: f64,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for BertConfig {
    fn default() -> Self {
        Self { layers: 4, width: 128, heads: 4, vocab_size: 1024, max_positions: 128, mask_rate: 0.15, dropout: 0.1, seed: 42 }
    }
}

impl BertConfig {
    fn trunk(&self) -> TrunkConfig {
        TrunkConfig {
            layers: self.layers,
            width: self.width,
            heads: self.heads,
            vocab_size: self.vocab_size,
            max_positions: self.max_positions,
            dropout: self.dropout,
            seed: self.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairLabel {
    /// B directly follows A (negative class).
    Consecutive = 0,
    /// Anything else (positive class).
    NonConsecutive = 1,
}

impl PairLabel {
    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        match id {
            0 => Some(PairLabel::Consecutive),
            1 => Some(PairLabel::NonConsecutive),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairLabel::Consecutive => "consecutive",
            PairLabel::NonConsecutive => "non_consecutive",
        }
    }
}

impl fmt::Display for PairLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairLabel {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consecutive" | "0" => Ok(PairLabel::Consecutive),
            "non_consecutive" | "1" => Ok(PairLabel::NonConsecutive),
            other => Err(ModelError::Config(format!("unknown pair label {other:?}"))),
        }
    }
}

/// A packet pair in text form.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairText {
    pub a: String,
    pub b: String,
    pub label: PairLabel,
}

/// `[CLS] A [SEP] B [SEP]` with segment 0 up to the first SEP, 1 after.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairExample {
    pub tokens: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub label: PairLabel,
}

impl PairExample {
    pub fn encode(vocab: &BpeVocab, a: &str, b: &str, label: PairLabel) -> Self {
        let ta = vocab.encode_bytes(a.as_bytes());
        let tb = vocab.encode_bytes(b.as_bytes());
        let mut tokens = Vec::with_capacity(ta.len() + tb.len() + 3);
        tokens.push(Special::Cls.id());
        tokens.extend(&ta);
        tokens.push(Special::Sep.id());
        let mut segment_ids = vec![0u8; tokens.len()];
        tokens.extend(&tb);
        tokens.push(Special::Sep.id());
        segment_ids.resize(tokens.len(), 1);
        Self { tokens, segment_ids, label }
    }

    pub fn from_text(vocab: &BpeVocab, p: &PairText) -> Self {
        Self::encode(vocab, &p.a, &p.b, p.label)
    }

    /// `[CLS] text [SEP]`, all segment 0. Used for masked-token inputs.
    pub fn single(vocab: &BpeVocab, text: &str) -> Self {
        let mut tokens = vec![Special::Cls.id()];
        tokens.extend(vocab.encode_bytes(text.as_bytes()));
        tokens.push(Special::Sep.id());
        let segment_ids = vec![0u8; tokens.len()];
        Self { tokens, segment_ids, label: PairLabel::NonConsecutive }
    }
}

/// Mix of the two kinds of non-consecutive pairs.
pub const SAME_FLOW_SHARE: f64 = 0.5;

/// Every within-flow successor pair (label consecutive) plus sampled
/// non-consecutive pairs so that they make up `neg_ratio` of the result:
/// half same-flow non-adjacent, half cross-flow. A sampled pair whose text
/// equals some true successor pair is redrawn.
///
/// Negatives draw A from non-final and B from non-initial positions, the
/// same positions positives use, so neither side alone predicts the label.
pub fn build_pair_dataset(flows: &[(u32, Vec<String>)], neg_ratio: f64, seed: u64) -> Result<Vec<PairText>, ModelError> {
    if !(neg_ratio > 0.0 && neg_ratio < 1.0) {
        return Err(ModelError::Config(format!("neg_ratio {neg_ratio} outside (0, 1)")));
    }
    let usable: Vec<&Vec<String>> = flows.iter().map(|(_, l)| l).filter(|l| l.len() >= 2).collect();
    if usable.len() < 2 {
        return Err(ModelError::InsufficientFlows { needed: 2, found: usable.len() });
    }
    let mut out = Vec::new();
    let mut successors: HashSet<(&str, &str)> = HashSet::new();
    for lines in &usable {
        for w in lines.windows(2) {
            out.push(PairText { a: w[0].clone(), b: w[1].clone(), label: PairLabel::Consecutive });
            successors.insert((&w[0], &w[1]));
        }
    }
    let positives = out.len();
    let negatives = (positives as f64 * neg_ratio / (1.0 - neg_ratio)).round() as usize;
    let long: Vec<&Vec<String>> = usable.iter().copied().filter(|l| l.len() >= 3).collect();
    let same_flow = if long.is_empty() { 0 } else { (negatives as f64 * SAME_FLOW_SHARE).round() as usize };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const MAX_TRIES: usize = 1000;
    for n in 0..negatives {
        let mut tries = 0;
        let pair = loop {
            tries += 1;
            let (a, b) = if n < same_flow {
                let l = long[rng.gen_range(0..long.len())];
                let i = rng.gen_range(0..l.len() - 1);
                let j = rng.gen_range(1..l.len());
                if j == i || j == i + 1 {
                    continue;
                }
                (&l[i], &l[j])
            } else {
                let x = rng.gen_range(0..usable.len());
                let y = rng.gen_range(0..usable.len());
                if x == y {
                    continue;
                }
                (&usable[x][rng.gen_range(0..usable[x].len() - 1)], &usable[y][rng.gen_range(1..usable[y].len())])
            };
            if !successors.contains(&(a.as_str(), b.as_str())) || tries >= MAX_TRIES {
                if tries >= MAX_TRIES {
                    log::warn!("pair sampler gave up avoiding a successor collision");
                }
                break (a.clone(), b.clone());
            }
        };
        out.push(PairText { a: pair.0, b: pair.1, label: PairLabel::NonConsecutive });
    }
    out.shuffle(&mut rng);
    Ok(out)
}

pub struct Bert<T: Scalar> {
    pub config: BertConfig,
    pub store: ParamStore<T>,
    pub optimizer: Option<AdamState>,
    trunk: Trunk,
    mlm_head: Linear,
    pooler: Linear,
    classifier: Linear,
}

impl<T: Scalar> Clone for Bert<T> {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: self.store.clone(),
            optimizer: self.optimizer.clone(),
            trunk: self.trunk.clone(),
            mlm_head: self.mlm_head,
            pooler: self.pooler,
            classifier: self.classifier,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairPrediction {
    /// Probabilities of (consecutive, non-consecutive).
    pub probs: [f64; 2],
    pub label: PairLabel,
}

const HEAD_SCALE: f64 = 0.01;

fn seg_usize(s: &[u8]) -> Vec<usize> {
    s.iter().map(|&x| x as usize).collect()
}

impl<T: Scalar> Bert<T> {
    pub fn new(config: BertConfig) -> Result<Self, ModelError> {
        if !(config.mask_rate > 0.0 && config.mask_rate < 1.0) {
            return Err(ModelError::Config(format!("mask_rate {} outside (0, 1)", config.mask_rate)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, &config.trunk(), true, &mut rng)?;
        let mlm_head = Linear::new(&mut store, "mlm_head", config.width, config.vocab_size, HEAD_SCALE, &mut rng);
        let pooler = Linear::fan_in(&mut store, "pooler", config.width, config.width, &mut rng);
        let classifier = Linear::new(&mut store, "classifier", config.width, 2, HEAD_SCALE, &mut rng);
        Ok(Self { config, store, optimizer: None, trunk, mlm_head, pooler, classifier })
    }

    fn check(&self, ex: &PairExample) -> Result<(), ModelError> {
        if ex.tokens.len() > self.config.max_positions {
            return Err(ModelError::SequenceTooLong { len: ex.tokens.len(), max: self.config.max_positions });
        }
        Ok(())
    }

    fn pair_logits(&self, g: &mut Graph<T>, p: &Bound, batch: &[&PairExample], dropout: f64) -> Result<Var, ModelError> {
        for ex in batch {
            self.check(ex)?;
        }
        let seqs: Vec<Vec<usize>> = batch.iter().map(|e| e.tokens.iter().map(|&t| t as usize).collect()).collect();
        let segs: Vec<Vec<usize>> = batch.iter().map(|e| seg_usize(&e.segment_ids)).collect();
        let (h, spans) = self.trunk.forward(g, p, &seqs, Some(&segs), false, dropout)?;
        let cls_rows: Vec<usize> = spans.iter().map(|s| s.0).collect();
        let cls = g.gather(h, &cls_rows);
        let pooled = self.pooler.forward(g, p, cls);
        let pooled = g.tanh(pooled);
        let pooled = g.dropout(pooled, dropout);
        Ok(self.classifier.forward(g, p, pooled))
    }

    /// CLS representation after the final layer norm (for inspection).
    pub fn cls_vector(&self, ex: &PairExample) -> Result<Vec<f64>, ModelError> {
        self.check(ex)?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let seq = vec![ex.tokens.iter().map(|&t| t as usize).collect::<Vec<_>>()];
        let seg = vec![seg_usize(&ex.segment_ids)];
        let (h, _) = self.trunk.forward(&mut g, &p, &seq, Some(&seg), false, 0.0)?;
        Ok(g.value(h).row(0).iter().map(|v| v.f64()).collect())
    }

    pub fn classify_pair(&self, ex: &PairExample) -> Result<PairPrediction, ModelError> {
        Ok(self.classify_batch(std::slice::from_ref(ex))?[0])
    }

    pub fn classify_batch(&self, batch: &[PairExample]) -> Result<Vec<PairPrediction>, ModelError> {
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(64) {
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let refs: Vec<&PairExample> = chunk.iter().collect();
            let logits = self.pair_logits(&mut g, &p, &refs, 0.0)?;
            let v = g.value(logits);
            for r in 0..chunk.len() {
                let probs = softmax64(&[v.at(r, 0).f64(), v.at(r, 1).f64()]);
                let label = if probs[0] > probs[1] { PairLabel::Consecutive } else { PairLabel::NonConsecutive };
                out.push(PairPrediction { probs: [probs[0], probs[1]], label });
            }
        }
        Ok(out)
    }

    fn pair_loss(&self, g: &mut Graph<T>, p: &Bound, batch: &[&PairExample], dropout: f64) -> Result<Var, ModelError> {
        let logits = self.pair_logits(g, p, batch, dropout)?;
        let targets: Vec<usize> = batch.iter().map(|e| e.label.id()).collect();
        let active = vec![true; batch.len()];
        g.cross_entropy(logits, &targets, &active).ok_or(ModelError::EmptyData("pair batch".into()))
    }

    /// Mean pair cross-entropy in inference mode.
    pub fn pair_loss_value(&self, data: &[PairExample]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        for chunk in data.chunks(64) {
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let refs: Vec<&PairExample> = chunk.iter().collect();
            let l = self.pair_loss(&mut g, &p, &refs, 0.0)?;
            total += g.scalar(l).f64() * chunk.len() as f64;
        }
        if data.is_empty() {
            return Err(ModelError::EmptyData("pair set".into()));
        }
        Ok(total / data.len() as f64)
    }

    fn mlm_node(&self, g: &mut Graph<T>, p: &Bound, batch: &[&PairExample], mask_rate: f64, rng: &mut ChaCha8Rng, dropout: f64) -> Result<Var, ModelError> {
        let mut seqs = Vec::with_capacity(batch.len());
        let mut segs = Vec::with_capacity(batch.len());
        let mut targets = Vec::new();
        let mut active = Vec::new();
        for ex in batch {
            self.check(ex)?;
            let (masked, picked) = mask_tokens(&ex.tokens, mask_rate, self.config.vocab_size, rng);
            for (i, &t) in ex.tokens.iter().enumerate() {
                targets.push(t as usize);
                active.push(picked.binary_search(&i).is_ok());
            }
            seqs.push(masked.iter().map(|&t| t as usize).collect::<Vec<_>>());
            segs.push(seg_usize(&ex.segment_ids));
        }
        if !active.iter().any(|&a| a) {
            return Err(ModelError::NothingToMask);
        }
        let (h, _) = self.trunk.forward(g, p, &seqs, Some(&segs), false, dropout)?;
        let logits = self.mlm_head.forward(g, p, h);
        Ok(g.cross_entropy(logits, &targets, &active).expect("some position active"))
    }

    /// Masked-token loss in inference mode with masks drawn from `seed`.
    pub fn mlm_loss(&self, batch: &[PairExample], mask_rate: f64, seed: u64) -> Result<f64, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let refs: Vec<&PairExample> = batch.iter().collect();
        let l = self.mlm_node(&mut g, &p, &refs, mask_rate, &mut rng, 0.0)?;
        Ok(g.scalar(l).f64())
    }

    /// Masked-token pretraining for a fixed number of epochs; returns the
    /// mean loss of each epoch. Pair labels are ignored.
    pub fn mlm_pretrain(&mut self, data: &[PairExample], epochs: usize, cfg: &TrainConfig) -> Result<Vec<f64>, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ 0x5eed_0004);
        let mut opt = AdamState::for_params(self.store.tensors());
        let adam = cfg.adam();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut means = Vec::with_capacity(epochs);
        for _ in 0..epochs {
            order.shuffle(&mut rng);
            let (mut total, mut batches) = (0.0, 0usize);
            for chunk in order.chunks(cfg.batch_size.max(1)) {
                let refs: Vec<&PairExample> = chunk.iter().map(|&i| &data[i]).collect();
                let mut mask_rng = ChaCha8Rng::seed_from_u64(rng.gen());
                let mut g = Graph::training(ChaCha8Rng::seed_from_u64(rng.gen()));
                let p = self.store.bind(&mut g);
                let loss = match self.mlm_node(&mut g, &p, &refs, self.config.mask_rate, &mut mask_rng, self.config.dropout) {
                    Ok(l) => l,
                    Err(ModelError::NothingToMask) => continue,
                    Err(e) => return Err(e),
                };
                g.backward(loss);
                total += g.scalar(loss).f64();
                batches += 1;
                let grads = self.store.collect_grads(&g, &p);
                adam_step(self.store.tensors_mut(), &grads, &mut opt, &adam);
            }
            means.push(if batches == 0 { f64::NAN } else { total / batches as f64 });
        }
        Ok(means)
    }

    pub fn checkpoint(&self, vocab: Option<&BpeVocab>, history: Option<&History>) -> Checkpoint {
        let mut ck = Checkpoint::from_store(CHECKPOINT_KIND, &self.config, self.config.seed, &self.store);
        ck.optimizer = self.optimizer.clone();
        if let Some(v) = vocab {
            ck.extras.insert("vocab".into(), serde_json::Value::String(v.to_json()));
        }
        if let Some(h) = history {
            ck.extras.insert("history".into(), serde_json::to_value(h).expect("history serializes"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let config: BertConfig = serde_json::from_value(ck.config.clone())?;
        ck.verify(CHECKPOINT_KIND, &config)?;
        let mut model = Self::new(config)?;
        ck.load_into(&mut model.store)?;
        model.optimizer = ck.optimizer.clone();
        Ok(model)
    }
}

/// Picks `⌈rate · eligible⌉` non-special positions. Each becomes MASK with
/// probability 0.8, a random non-special token with 0.1, and stays as is
/// otherwise. Returns the corrupted copy and the picked positions (sorted).
pub fn mask_tokens(seq: &[u32], rate: f64, vocab_size: usize, rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<usize>) {
    let mut eligible: Vec<usize> = (0..seq.len()).filter(|&i| seq[i] >= NUM_SPECIAL).collect();
    let k = (rate * eligible.len() as f64).ceil() as usize;
    let k = k.min(eligible.len());
    let (chosen, _) = eligible.partial_shuffle(rng, k);
    let mut picked = chosen.to_vec();
    picked.sort_unstable();
    let mut masked = seq.to_vec();
    for &i in &picked {
        let u: f64 = rng.gen();
        if u < 0.8 {
            masked[i] = Special::Mask.id();
        } else if u < 0.9 && vocab_size > NUM_SPECIAL as usize {
            masked[i] = rng.gen_range(NUM_SPECIAL..vocab_size as u32);
        }
    }
    (masked, picked)
}

/// Training flows from which fine-tuning draws a fresh pair set every epoch.
/// Positives repeat; negatives are new each time, so the encoder cannot
/// memorise a fixed set of non-successor pairs.
#[derive(Clone, Copy)]
pub struct PairResampler<'a> {
    pub flows: &'a [(u32, Vec<String>)],
    pub vocab: &'a BpeVocab,
    pub neg_ratio: f64,
    pub seed: u64,
}

impl PairResampler<'_> {
    pub fn epoch(&self, epoch: usize) -> Result<Vec<PairExample>, ModelError> {
        let seed = self.seed.wrapping_add((epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Ok(build_pair_dataset(self.flows, self.neg_ratio, seed)?.iter().map(|p| PairExample::from_text(self.vocab, p)).collect())
    }
}

struct PairRunner<'a, T: Scalar> {
    model: &'a mut Bert<T>,
    train: Cow<'a, [PairExample]>,
    resample: Option<PairResampler<'a>>,
    val: &'a [PairExample],
    cfg: &'a TrainConfig,
    opt: AdamState,
    rng: Option<ChaCha8Rng>,
    error: Option<ModelError>,
}

impl<T: Scalar> EpochRunner for PairRunner<'_, T> {
    type Snapshot = Vec<Tensor<T>>;

    fn train_epoch(&mut self, epoch: usize) -> f64 {
        if let Some(r) = &self.resample {
            match r.epoch(epoch) {
                Ok(data) => self.train = Cow::Owned(data),
                Err(e) => {
                    self.error.get_or_insert(e);
                    return f64::NAN;
                }
            }
        }
        let mut rng = self.rng.take().expect("rng present between epochs");
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let adam = self.cfg.adam();
        let mut total = 0.0;
        for batch in order.chunks(self.cfg.batch_size.max(1)) {
            let refs: Vec<&PairExample> = batch.iter().map(|&i| &self.train[i]).collect();
            let mut g = Graph::training(rng);
            let p = self.model.store.bind(&mut g);
            match self.model.pair_loss(&mut g, &p, &refs, self.model.config.dropout) {
                Ok(loss) => {
                    g.backward(loss);
                    total += g.scalar(loss).f64() * refs.len() as f64;
                    let grads = self.model.store.collect_grads(&g, &p);
                    adam_step(self.model.store.tensors_mut(), &grads, &mut self.opt, &adam);
                }
                Err(e) => {
                    self.error.get_or_insert(e);
                }
            }
            rng = g.into_rng().expect("training graph owns the rng");
        }
        self.rng = Some(rng);
        total / self.train.len() as f64
    }

    fn validation_loss(&mut self) -> f64 {
        match self.model.pair_loss_value(self.val) {
            Ok(l) => l,
            Err(e) => {
                self.error.get_or_insert(e);
                f64::NAN
            }
        }
    }

    fn snapshot(&self) -> Self::Snapshot {
        self.model.store.tensors().to_vec()
    }

    fn restore(&mut self, snapshot: Self::Snapshot) {
        self.model.store.tensors_mut().clone_from_slice(&snapshot);
    }
}

/// Fine-tunes the pair head (and the encoder) with validation early
/// stopping, ending on the best validation epoch's weights.
pub fn finetune_pair<T: Scalar>(model: &mut Bert<T>, train: &[PairExample], val: &[PairExample], cfg: &TrainConfig) -> Result<History, ModelError> {
    run_finetune(model, Cow::Borrowed(train), None, val, cfg)
}

/// Like [`finetune_pair`] but with a freshly sampled training set each
/// epoch.
pub fn finetune_pair_resampled<T: Scalar>(
    model: &mut Bert<T>,
    train: PairResampler<'_>,
    val: &[PairExample],
    cfg: &TrainConfig,
) -> Result<History, ModelError> {
    let first = train.epoch(0)?;
    run_finetune(model, Cow::Owned(first), Some(train), val, cfg)
}

fn run_finetune<T: Scalar>(
    model: &mut Bert<T>,
    train: Cow<'_, [PairExample]>,
    resample: Option<PairResampler<'_>>,
    val: &[PairExample],
    cfg: &TrainConfig,
) -> Result<History, ModelError> {
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::EmptyData("pair fine-tuning needs training and validation pairs".into()));
    }
    let seed = model.config.seed ^ 0x5eed_0002;
    let opt = AdamState::for_params(model.store.tensors());
    let mut runner = PairRunner { model, train, resample, val, cfg, opt, rng: Some(ChaCha8Rng::seed_from_u64(seed)), error: None };
    let history = fit_with_early_stopping(&mut runner, cfg.max_epochs, cfg.patience);
    runner.model.optimizer = Some(runner.opt.clone());
    match runner.error {
        Some(e) => Err(e),
        None => Ok(history),
    }
}

/// Pair judge backed by a trained encoder.
pub struct BertJudge<'a, T: Scalar> {
    pub model: &'a Bert<T>,
    pub vocab: &'a BpeVocab,
}

impl<T: Scalar> PairJudge for BertJudge<'_, T> {
    fn is_consecutive(&mut self, a: &str, b: &str) -> Result<bool, ModelError> {
        let ex = PairExample::encode(self.vocab, a, b, PairLabel::NonConsecutive);
        Ok(self.model.classify_pair(&ex)?.label == PairLabel::Consecutive)
    }
}
