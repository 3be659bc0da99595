//! Decoder-only causal language model over packet text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelError, TrainConfig, Trunk, TrunkConfig};
use crate::nn::{
    adam_step, fit_with_early_stopping, AdamState, Checkpoint, EpochRunner, Graph, History, Linear, ParamStore, Tensor, Var,
};
use crate::scalar::Scalar;
use crate::text::{BpeVocab, Special};

pub const CHECKPOINT_KIND: &str = "gpt";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GptConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub seed: u64,
    /// Packets of flow history the generator sees; 1 = current packet only.
    pub context_packets: usize,
}

impl Default for GptConfig {
    fn default() -> Self {
        Self { layers: 4, width: 128, heads: 4, vocab_size: 1024, max_positions: 256, dropout: 0.1, seed: 42, context_packets: 1 }
    }
}

impl GptConfig {
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

const HEAD_SCALE: f64 = 0.01;

pub struct Gpt<T: Scalar> {
    pub config: GptConfig,
    pub store: ParamStore<T>,
    /// Adam moments after the last training run, kept for checkpoints.
    pub optimizer: Option<AdamState>,
    trunk: Trunk,
    head: Linear,
}

impl<T: Scalar> Clone for Gpt<T> {
    fn clone(&self) -> Self {
        Self { config: self.config.clone(), store: self.store.clone(), optimizer: self.optimizer.clone(), trunk: self.trunk.clone(), head: self.head }
    }
}

fn to_usize(ids: &[u32]) -> Vec<usize> {
    ids.iter().map(|&i| i as usize).collect()
}

impl<T: Scalar> Gpt<T> {
    pub fn new(config: GptConfig) -> Result<Self, ModelError> {
        if config.context_packets == 0 {
            return Err(ModelError::Config("context_packets must be at least 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, &config.trunk(), false, &mut rng)?;
        // A small output head keeps the untrained next-token distribution
        // close to uniform.
        let head = Linear::new(&mut store, "lm_head", config.width, config.vocab_size, HEAD_SCALE, &mut rng);
        Ok(Self { config, store, optimizer: None, trunk, head })
    }

    fn check_window(&self, w: &[u32]) -> Result<(), ModelError> {
        if w.len() > self.config.max_positions {
            return Err(ModelError::WindowTooLong { len: w.len(), max: self.config.max_positions });
        }
        Ok(())
    }

    fn logits(&self, g: &mut Graph<T>, p: &crate::nn::Bound, windows: &[Vec<usize>], dropout: f64) -> Result<Var, ModelError> {
        let (h, _) = self.trunk.forward(g, p, windows, None, true, dropout)?;
        Ok(self.head.forward(g, p, h))
    }

    /// Mean next-token loss node over all scored positions of `windows`.
    /// Position `i` predicts token `i + 1`; nothing at or after the first
    /// PAD is scored. Returns `None` when no position is scored.
    fn loss_node(&self, g: &mut Graph<T>, p: &crate::nn::Bound, windows: &[&[u32]], dropout: f64) -> Result<Option<(Var, usize)>, ModelError> {
        let mut seqs = Vec::with_capacity(windows.len());
        let mut targets = Vec::new();
        let mut active = Vec::new();
        for w in windows {
            self.check_window(w)?;
            if w.is_empty() {
                continue;
            }
            let end = w.iter().position(|&t| t == Special::Pad.id()).unwrap_or(w.len());
            for i in 0..w.len() {
                let scored = i + 1 < end;
                targets.push(if scored { w[i + 1] as usize } else { 0 });
                active.push(scored);
            }
            seqs.push(to_usize(w));
        }
        let count = active.iter().filter(|&&a| a).count();
        if count == 0 {
            return Ok(None);
        }
        let logits = self.logits(g, p, &seqs, dropout)?;
        Ok(g.cross_entropy(logits, &targets, &active).map(|l| (l, count)))
    }

    /// Causal LM loss in inference mode, averaged over scored positions.
    pub fn clm_loss(&self, windows: &[Vec<u32>]) -> Result<f64, ModelError> {
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in windows.chunks(64) {
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let refs: Vec<&[u32]> = chunk.iter().map(Vec::as_slice).collect();
            if let Some((loss, n)) = self.loss_node(&mut g, &p, &refs, 0.0)? {
                total += g.scalar(loss).f64() * n as f64;
                count += n;
            }
        }
        if count == 0 {
            return Err(ModelError::EmptyData("no scored positions".into()));
        }
        Ok(total / count as f64)
    }

    /// Next-token distribution after `context` (its last `max_positions`
    /// tokens).
    pub fn next_token_probs(&self, context: &[u32]) -> Result<Vec<f64>, ModelError> {
        if context.is_empty() {
            return Err(ModelError::EmptyData("empty generation context".into()));
        }
        let ctx = &context[context.len().saturating_sub(self.config.max_positions)..];
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let logits = self.logits(&mut g, &p, &[to_usize(ctx)], 0.0)?;
        let row = g.value(logits).row(ctx.len() - 1).iter().map(|v| v.f64()).collect::<Vec<_>>();
        Ok(softmax64(&row))
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

    /// Rebuilds the model a checkpoint was saved from. The stored config must
    /// still hash to the recorded config hash.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let config: GptConfig = serde_json::from_value(ck.config.clone())?;
        Self::from_checkpoint_with(ck, &config)
    }

    /// Like [`from_checkpoint`](Self::from_checkpoint) but requires the
    /// checkpoint to match `config`.
    pub fn from_checkpoint_with(ck: &Checkpoint, config: &GptConfig) -> Result<Self, ModelError> {
        ck.verify(CHECKPOINT_KIND, config)?;
        let mut model = Self::new(config.clone())?;
        ck.load_into(&mut model.store)?;
        model.optimizer = ck.optimizer.clone();
        Ok(model)
    }
}

pub(crate) fn softmax64(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Vocabulary stored in a checkpoint's extras.
pub fn checkpoint_vocab(ck: &Checkpoint) -> Result<Option<BpeVocab>, ModelError> {
    match ck.extras.get("vocab") {
        Some(serde_json::Value::String(s)) => Ok(Some(BpeVocab::from_json(s)?)),
        Some(_) => Err(ModelError::Config("vocab extra is not a string".into())),
        None => Ok(None),
    }
}

// ---------------------------------------------------------------- windows

/// Text the generator conditions on: the last `context_packets` lines up to
/// and including `lines[k]`, each newline-terminated, with the flow-begin
/// marker when the context reaches back to the start of the flow.
pub fn context_text(lines: &[String], k: usize, context_packets: usize) -> String {
    let start = (k + 1).saturating_sub(context_packets);
    let mut s = String::new();
    if k + 1 < context_packets {
        s.push_str(Special::FlowBegin.marker());
        s.push('\n');
    }
    for l in &lines[start..=k] {
        s.push_str(l);
        s.push('\n');
    }
    s
}

/// Training windows of one flow: begin marker → first line, each line →
/// its successor, last line → end marker.
pub fn flow_windows(vocab: &BpeVocab, lines: &[String], context_packets: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::with_capacity(lines.len() + 1);
    if let Some(first) = lines.first() {
        out.push(vocab.encode(&format!("{}\n{first}\n", Special::FlowBegin.marker())).ids);
    }
    for k in 0..lines.len() {
        let ctx = context_text(lines, k, context_packets);
        let next = match lines.get(k + 1) {
            Some(l) => format!("{l}\n"),
            None => Special::FlowEnd.marker().to_string(),
        };
        out.push(vocab.encode(&(ctx + &next)).ids);
    }
    out
}

// ---------------------------------------------------------------- training

struct GptRunner<'a, T: Scalar> {
    model: &'a mut Gpt<T>,
    train: &'a [Vec<u32>],
    val: &'a [Vec<u32>],
    cfg: &'a TrainConfig,
    opt: AdamState,
    rng: Option<ChaCha8Rng>,
    error: Option<ModelError>,
}

impl<T: Scalar> EpochRunner for GptRunner<'_, T> {
    type Snapshot = Vec<Tensor<T>>;

    fn train_epoch(&mut self, _epoch: usize) -> f64 {
        let mut rng = self.rng.take().expect("rng present between epochs");
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let adam = self.cfg.adam();
        let (mut total, mut count) = (0.0, 0usize);
        for batch in order.chunks(self.cfg.batch_size.max(1)) {
            let windows: Vec<&[u32]> = batch.iter().map(|&i| self.train[i].as_slice()).collect();
            let mut g = Graph::training(rng);
            let p = self.model.store.bind(&mut g);
            let step = self.model.loss_node(&mut g, &p, &windows, self.model.config.dropout);
            match step {
                Ok(Some((loss, n))) => {
                    g.backward(loss);
                    total += g.scalar(loss).f64() * n as f64;
                    count += n;
                    let grads = self.model.store.collect_grads(&g, &p);
                    adam_step(self.model.store.tensors_mut(), &grads, &mut self.opt, &adam);
                }
                Ok(None) => {}
                Err(e) => {
                    self.error.get_or_insert(e);
                }
            }
            rng = g.into_rng().expect("training graph owns the rng");
        }
        self.rng = Some(rng);
        if count == 0 { f64::NAN } else { total / count as f64 }
    }

    fn validation_loss(&mut self) -> f64 {
        match self.model.clm_loss(self.val) {
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

/// Trains with Adam and validation early stopping; the model ends with the
/// weights of the best validation epoch.
pub fn train_gpt<T: Scalar>(model: &mut Gpt<T>, train: &[Vec<u32>], val: &[Vec<u32>], cfg: &TrainConfig) -> Result<History, ModelError> {
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::EmptyData("generator needs training and validation windows".into()));
    }
    for w in train.iter().chain(val) {
        model.check_window(w)?;
    }
    let seed = model.config.seed ^ 0x5eed_0001;
    let opt = AdamState::for_params(model.store.tensors());
    let mut runner = GptRunner { model, train, val, cfg, opt, rng: Some(ChaCha8Rng::seed_from_u64(seed)), error: None };
    let history = fit_with_early_stopping(&mut runner, cfg.max_epochs, cfg.patience);
    runner.model.optimizer = Some(runner.opt.clone());
    match runner.error {
        Some(e) => Err(e),
        None => Ok(history),
    }
}

/// Plain Adam steps on a fixed batch, returning the loss before each step.
pub fn overfit_steps<T: Scalar>(model: &mut Gpt<T>, batch: &[Vec<u32>], steps: usize, lr: f64) -> Result<Vec<f64>, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    let mut opt = AdamState::for_params(model.store.tensors());
    let adam = crate::nn::AdamConfig { lr, ..Default::default() };
    let refs: Vec<&[u32]> = batch.iter().map(Vec::as_slice).collect();
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        let mut g = Graph::training(rng);
        let p = model.store.bind(&mut g);
        let (loss, _) = model.loss_node(&mut g, &p, &refs, model.config.dropout)?.ok_or(ModelError::EmptyData("batch".into()))?;
        g.backward(loss);
        losses.push(g.scalar(loss).f64());
        let grads = model.store.collect_grads(&g, &p);
        adam_step(model.store.tensors_mut(), &grads, &mut opt, &adam);
        rng = g.into_rng().expect("training graph owns the rng");
    }
    Ok(losses)
}

// ---------------------------------------------------------------- generation

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DecodeMode {
    Greedy,
    Temperature { tau: f64, seed: u64 },
}

/// Decoding stops at the end of a line, at FLOW_END, or after
/// `max_new_tokens`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationPolicy {
    pub mode: DecodeMode,
    pub max_new_tokens: usize,
}

impl Default for GenerationPolicy {
    fn default() -> Self {
        Self { mode: DecodeMode::Greedy, max_new_tokens: 96 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GenOutcome {
    /// A complete line, without its newline.
    Line(String),
    FlowEnd,
    MaxTokensExceeded,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub tokens: Vec<u32>,
    pub outcome: GenOutcome,
}

fn pick(probs: &[f64], mode: DecodeMode, rng: &mut Option<ChaCha8Rng>) -> u32 {
    match mode {
        DecodeMode::Greedy => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            best as u32
        }
        DecodeMode::Temperature { tau, .. } => {
            let logits: Vec<f64> = probs.iter().map(|&p| p.max(1e-300).ln() / tau).collect();
            let q = softmax64(&logits);
            let r: f64 = rng.as_mut().expect("sampling rng").gen();
            let mut acc = 0.0;
            for (i, &p) in q.iter().enumerate() {
                acc += p;
                if r < acc {
                    return i as u32;
                }
            }
            (q.len() - 1) as u32
        }
    }
}

/// Autoregressive decoding of the packet that follows `context`.
pub fn predict_next_packet<T: Scalar>(
    model: &Gpt<T>,
    vocab: &BpeVocab,
    context: &[u32],
    policy: &GenerationPolicy,
) -> Result<Generation, ModelError> {
    if let DecodeMode::Temperature { tau, .. } = policy.mode {
        if !(tau > 0.0) {
            return Err(ModelError::Config(format!("temperature must be positive, got {tau}")));
        }
    }
    if context.last() == Some(&Special::FlowEnd.id()) {
        return Ok(Generation { tokens: vec![Special::FlowEnd.id()], outcome: GenOutcome::FlowEnd });
    }
    let mut rng = match policy.mode {
        DecodeMode::Temperature { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        DecodeMode::Greedy => None,
    };
    let newline = b'\n' as u32 + crate::text::bpe::BYTE_OFFSET;
    let mut ctx = context.to_vec();
    let mut out = Vec::new();
    while out.len() < policy.max_new_tokens {
        let probs = model.next_token_probs(&ctx)?;
        let id = pick(&probs, policy.mode, &mut rng);
        out.push(id);
        ctx.push(id);
        if id == Special::FlowEnd.id() {
            return Ok(Generation { tokens: out, outcome: GenOutcome::FlowEnd });
        }
        if id == newline {
            let bytes = vocab.decode_bytes(&out[..out.len() - 1])?;
            let line = String::from_utf8_lossy(&bytes).into_owned();
            return Ok(Generation { tokens: out, outcome: GenOutcome::Line(line) });
        }
    }
    Ok(Generation { tokens: out, outcome: GenOutcome::MaxTokensExceeded })
}

// ---------------------------------------------------------------- evaluation

/// Anything that proposes the next packet line of a flow.
pub trait PacketGenerator {
    /// `lines[..=k]` is the flow so far; returns the proposed successor of
    /// `lines[k]`.
    fn next_after(&mut self, lines: &[String], k: usize) -> Result<GenOutcome, ModelError>;
}

/// Anything that judges whether `b` directly follows `a`.
pub trait PairJudge {
    fn is_consecutive(&mut self, a: &str, b: &str) -> Result<bool, ModelError>;
}

pub struct GptGenerator<'a, T: Scalar> {
    pub model: &'a Gpt<T>,
    pub vocab: &'a BpeVocab,
    pub policy: GenerationPolicy,
}

impl<T: Scalar> PacketGenerator for GptGenerator<'_, T> {
    fn next_after(&mut self, lines: &[String], k: usize) -> Result<GenOutcome, ModelError> {
        let ctx = self.vocab.encode(&context_text(lines, k, self.model.config.context_packets));
        Ok(predict_next_packet(self.model, self.vocab, &ctx.ids, &self.policy)?.outcome)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowJudgement {
    pub flow: u32,
    pub packets: usize,
    pub consecutive: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorEvaluation {
    /// Packets that have a successor in their flow.
    pub packets: usize,
    /// Generations the judge accepted as the direct successor.
    pub consecutive: usize,
    /// Generations that were not a packet line (flow end or token limit).
    pub no_line: usize,
    pub fraction: f64,
    pub per_flow: Vec<FlowJudgement>,
}

/// Generates a successor for every non-final packet and asks the judge
/// whether it is consecutive. Non-line generations count as rejected.
pub fn evaluate_generator<G: PacketGenerator, J: PairJudge>(
    generator: &mut G,
    judge: &mut J,
    flows: &[(u32, Vec<String>)],
) -> Result<GeneratorEvaluation, ModelError> {
    let mut ev = GeneratorEvaluation::default();
    for (flow, lines) in flows {
        let mut fj = FlowJudgement { flow: *flow, ..Default::default() };
        for k in 0..lines.len().saturating_sub(1) {
            fj.packets += 1;
            match generator.next_after(lines, k)? {
                GenOutcome::Line(l) => {
                    if judge.is_consecutive(&lines[k], &l)? {
                        fj.consecutive += 1;
                    }
                }
                _ => ev.no_line += 1,
            }
        }
        ev.packets += fj.packets;
        ev.consecutive += fj.consecutive;
        ev.per_flow.push(fj);
    }
    ev.fraction = if ev.packets == 0 { 0.0 } else { ev.consecutive as f64 / ev.packets as f64 };
    Ok(ev)
}
