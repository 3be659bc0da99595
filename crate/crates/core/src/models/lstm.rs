//! Windowed LSTM intrusion classifier: final hidden state, dropout, dense
//! layer, softmax.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gpt::softmax64;
use super::ModelError;
use crate::features::Windows;
use crate::nn::{
    adam_step, fit_with_early_stopping, AdamConfig, AdamState, Bound, Checkpoint, EpochRunner, Graph, History, Linear, LstmParams, ParamStore, Tensor, Var,
};
use crate::packet::Label;
use crate::scalar::Scalar;

pub const CHECKPOINT_KIND: &str = "lstm";

/// How packet labels map onto classifier outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassLabelMap {
    /// 0 = Normal, 1 = any attack.
    Binary,
    /// One output per labelled class, in `Label::CLASSES` order.
    Multiclass,
}

impl ClassLabelMap {
    pub fn num_classes(self) -> usize {
        match self {
            ClassLabelMap::Binary => 2,
            ClassLabelMap::Multiclass => Label::CLASSES.len(),
        }
    }

    pub fn class_of(self, label: Label) -> Option<usize> {
        match (self, label) {
            (_, Label::Unlabeled) => None,
            (ClassLabelMap::Binary, l) => Some(l.is_attack() as usize),
            (ClassLabelMap::Multiclass, l) => Label::CLASSES.iter().position(|&c| c == l),
        }
    }

    pub fn name(self, class: usize) -> &'static str {
        match self {
            ClassLabelMap::Binary => ["Normal", "Attack"][class],
            ClassLabelMap::Multiclass => Label::CLASSES[class].as_str(),
        }
    }

    pub fn names(self) -> Vec<&'static str> {
        (0..self.num_classes()).map(|c| self.name(c)).collect()
    }

    pub fn is_attack_class(self, class: usize) -> bool {
        class != 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmClassifierConfig {
    pub input_dim: usize,
    pub window: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub classes: ClassLabelMap,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight training rows by `n / (classes · n_class)`; off by default.
    #[serde(default)]
    pub class_weighting: bool,
}

impl LstmClassifierConfig {
    pub fn new(input_dim: usize, window: usize, classes: ClassLabelMap) -> Self {
        Self { input_dim, window, hidden: 64, dropout: 0.2, classes, max_epochs: 80, patience: 3, batch_size: 32, lr: 1e-3, seed: 42, class_weighting: false }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.window == 0 || self.hidden == 0 {
            return Err(ModelError::Config("input_dim, window and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassPrediction {
    pub probs: Vec<f64>,
    pub class: usize,
}

pub struct LstmClassifier<T: Scalar> {
    pub config: LstmClassifierConfig,
    pub store: ParamStore<T>,
    pub optimizer: Option<AdamState>,
    cell: LstmParams,
    dense: Linear,
}

impl<T: Scalar> Clone for LstmClassifier<T> {
    fn clone(&self) -> Self {
        Self { config: self.config.clone(), store: self.store.clone(), optimizer: self.optimizer.clone(), cell: self.cell, dense: self.dense }
    }
}

impl<T: Scalar> LstmClassifier<T> {
    pub fn new(config: LstmClassifierConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let cell = LstmParams::new(&mut store, "lstm", config.input_dim, config.hidden, &mut rng);
        let dense = Linear::fan_in(&mut store, "dense", config.hidden, config.classes.num_classes(), &mut rng);
        Ok(Self { config, store, optimizer: None, cell, dense })
    }

    fn check(&self, w: &Windows) -> Result<(), ModelError> {
        if w.window != self.config.window || w.features != self.config.input_dim {
            return Err(ModelError::ShapeMismatch(format!(
                "windows are {}x{}, model expects {}x{}",
                w.window, w.features, self.config.window, self.config.input_dim
            )));
        }
        Ok(())
    }

    fn logits(&self, g: &mut Graph<T>, p: &Bound, w: &Windows, idx: &[usize], dropout: f64) -> Var {
        let (n, f, h) = (idx.len(), self.config.input_dim, self.config.hidden);
        let mut hs = g.constant(Tensor::zeros(&[n, h]));
        let mut cs = g.constant(Tensor::zeros(&[n, h]));
        for t in 0..self.config.window {
            let mut x = Vec::with_capacity(n * f);
            for &k in idx {
                x.extend(w.get(k)[t * f..(t + 1) * f].iter().map(|&v| T::c(v)));
            }
            let xv = g.constant(Tensor::new(vec![n, f], x).expect("window shape"));
            (hs, cs) = self.cell.step(g, p, xv, hs, cs);
        }
        let d = g.dropout(hs, dropout);
        self.dense.forward(g, p, d)
    }

    fn targets(&self, w: &Windows, idx: &[usize]) -> Result<Vec<usize>, ModelError> {
        idx.iter()
            .map(|&k| {
                self.config.classes.class_of(w.labels[k]).ok_or(ModelError::LabelOutOfRange {
                    id: Label::CLASSES.len(),
                    classes: self.config.classes.num_classes(),
                })
            })
            .collect()
    }

    fn loss_node(&self, g: &mut Graph<T>, p: &Bound, w: &Windows, idx: &[usize], dropout: f64, class_weights: Option<&[f64]>) -> Result<Var, ModelError> {
        let targets = self.targets(w, idx)?;
        let logits = self.logits(g, p, w, idx, dropout);
        let weights: Vec<f64> = match class_weights {
            Some(cw) => targets.iter().map(|&t| cw[t]).collect(),
            None => vec![1.0; idx.len()],
        };
        g.weighted_cross_entropy(logits, &targets, &weights).ok_or(ModelError::EmptyData("batch".into()))
    }

    /// Mean cross-entropy in inference mode.
    pub fn loss(&self, w: &Windows) -> Result<f64, ModelError> {
        self.check(w)?;
        if w.is_empty() {
            return Err(ModelError::EmptyData("windows".into()));
        }
        let all: Vec<usize> = (0..w.len()).collect();
        let mut total = 0.0;
        for chunk in all.chunks(256) {
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let l = self.loss_node(&mut g, &p, w, chunk, 0.0, None)?;
            total += g.scalar(l).f64() * chunk.len() as f64;
        }
        Ok(total / w.len() as f64)
    }

    /// Class probabilities and argmax (lowest index wins ties).
    pub fn classify(&self, w: &Windows) -> Result<Vec<ClassPrediction>, ModelError> {
        self.check(w)?;
        let all: Vec<usize> = (0..w.len()).collect();
        let mut out = Vec::with_capacity(w.len());
        for chunk in all.chunks(256) {
            let mut g = Graph::new();
            let p = self.store.bind_frozen(&mut g);
            let logits = self.logits(&mut g, &p, w, chunk, 0.0);
            let v = g.value(logits);
            for r in 0..chunk.len() {
                let row: Vec<f64> = v.row(r).iter().map(|x| x.f64()).collect();
                let probs = softmax64(&row);
                let class = argmax(&probs);
                out.push(ClassPrediction { probs, class });
            }
        }
        Ok(out)
    }

    /// Class ids the labelled windows should map to.
    pub fn true_classes(&self, w: &Windows) -> Result<Vec<usize>, ModelError> {
        self.targets(w, &(0..w.len()).collect::<Vec<_>>())
    }

    pub fn checkpoint(&self, history: Option<&History>) -> Checkpoint {
        let mut ck = Checkpoint::from_store(CHECKPOINT_KIND, &self.config, self.config.seed, &self.store);
        ck.optimizer = self.optimizer.clone();
        if let Some(h) = history {
            ck.extras.insert("history".into(), serde_json::to_value(h).expect("history serializes"));
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let config: LstmClassifierConfig = serde_json::from_value(ck.config.clone())?;
        ck.verify(CHECKPOINT_KIND, &config)?;
        let mut model = Self::new(config)?;
        ck.load_into(&mut model.store)?;
        model.optimizer = ck.optimizer.clone();
        Ok(model)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// `n / (classes · n_c)` per class; absent classes get weight 0.
pub fn balanced_weights(classes: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &c in classes {
        counts[c] += 1;
    }
    counts
        .iter()
        .map(|&n_c| if n_c == 0 { 0.0 } else { classes.len() as f64 / (num_classes as f64 * n_c as f64) })
        .collect()
}

struct LstmRunner<'a, T: Scalar> {
    model: &'a mut LstmClassifier<T>,
    train: &'a Windows,
    val: &'a Windows,
    opt: AdamState,
    adam: AdamConfig,
    class_weights: Option<Vec<f64>>,
    rng: Option<ChaCha8Rng>,
    error: Option<ModelError>,
}

impl<T: Scalar> EpochRunner for LstmRunner<'_, T> {
    type Snapshot = Vec<Tensor<T>>;

    fn train_epoch(&mut self, _epoch: usize) -> f64 {
        let mut rng = self.rng.take().expect("rng present between epochs");
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(self.model.config.batch_size.max(1)) {
            let mut g = Graph::training(rng);
            let p = self.model.store.bind(&mut g);
            match self.model.loss_node(&mut g, &p, self.train, batch, self.model.config.dropout, self.class_weights.as_deref()) {
                Ok(loss) => {
                    g.backward(loss);
                    total += g.scalar(loss).f64() * batch.len() as f64;
                    let grads = self.model.store.collect_grads(&g, &p);
                    adam_step(self.model.store.tensors_mut(), &grads, &mut self.opt, &self.adam);
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
        match self.model.loss(self.val) {
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

/// Adam with validation early stopping; ends on the best epoch's weights.
pub fn train_classifier<T: Scalar>(model: &mut LstmClassifier<T>, train: &Windows, val: &Windows) -> Result<History, ModelError> {
    model.check(train)?;
    model.check(val)?;
    if train.is_empty() || val.is_empty() {
        return Err(ModelError::EmptyData("classifier needs training and validation windows".into()));
    }
    let classes = model.true_classes(train)?;
    model.true_classes(val)?;
    let class_weights = model.config.class_weighting.then(|| balanced_weights(&classes, model.config.classes.num_classes()));
    let seed = model.config.seed ^ 0x5eed_0003;
    let opt = AdamState::for_params(model.store.tensors());
    let adam = AdamConfig { lr: model.config.lr, ..Default::default() };
    let (max_epochs, patience) = (model.config.max_epochs, model.config.patience);
    let mut runner = LstmRunner { model, train, val, opt, adam, class_weights, rng: Some(ChaCha8Rng::seed_from_u64(seed)), error: None };
    let history = fit_with_early_stopping(&mut runner, max_epochs, patience);
    runner.model.optimizer = Some(runner.opt.clone());
    match runner.error {
        Some(e) => Err(e),
        None => Ok(history),
    }
}
