use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::Stream;
use super::dev::{load_gpt, lstm_ckpt, write_json, BERT_CKPT, FEATURES, GPT_CKPT};
use super::manifest::file_hash;
use super::{fail, Fail, Pipeline, PipelineError, Precision};
use crate::features::{reshape_prefix_windows, FeaturePipeline, Windows};
use crate::models::bert::{Bert, BertJudge, PairExample, PairLabel};
use crate::models::gpt::{GenOutcome, GptGenerator, PacketGenerator, PairJudge};
use crate::models::lstm::{ClassLabelMap, LstmClassifier};
use crate::models::ModelError;
use crate::nn::Checkpoint;
use crate::packet::{load_packets, Label, PacketRecord};
use crate::scalar::Scalar;
use crate::synth::{generate, GrammarSpec};
use crate::text::{column_indices, packet_line, parse_packet};

pub const DEPLOY_SCHEMA: &str = "ipred.deploy/1";

/// One bucket per incoming packet.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeployCounts {
    pub predicted_normal: u64,
    /// Keyed by classifier class name.
    pub predicted_attack: BTreeMap<String, u64>,
    pub rejected_by_evaluator: u64,
    pub unparseable: u64,
    /// The generator predicted that the flow ends here.
    pub flow_end: u64,
}

impl DeployCounts {
    pub fn predicted_attack_total(&self) -> u64 {
        self.predicted_attack.values().sum()
    }

    pub fn total(&self) -> u64 {
        self.predicted_normal + self.predicted_attack_total() + self.rejected_by_evaluator + self.unparseable + self.flow_end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeployReport {
    pub schema: String,
    pub config_hash: String,
    pub checkpoints: BTreeMap<String, String>,
    pub gate: bool,
    pub classifier: ClassLabelMap,
    pub packets: u64,
    pub flows: u64,
    pub counts: DeployCounts,
    /// Counts add up to `packets`.
    pub conserved: bool,
    /// Attack share among classified predictions.
    pub predicted_attack_fraction: Option<f64>,
    /// Attack share among the true next packets of the stream.
    pub true_next_attack_fraction: Option<f64>,
    /// Classified packets with a labelled true successor, and how many of
    /// them got the attack/normal call right.
    pub agreement_support: u64,
    pub agreement: Option<f64>,
}

/// What happened to one incoming packet's predicted successor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decision {
    /// Classifier class id.
    Class(usize),
    Rejected,
    Unparseable,
    FlowEnd,
}

/// Predict, gate, parse, scale, classify: one decision per record, in
/// order. The window for a packet is its flow's most recent observed rows
/// followed by the scaled prediction. Generations that fail to parse are
/// reported as `Unparseable`, never dropped.
pub fn classify_predicted<G: PacketGenerator, J: PairJudge, T: Scalar>(
    generator: &mut G,
    mut judge: Option<&mut J>,
    pipe: &FeaturePipeline,
    cols: &[usize],
    lstm: &LstmClassifier<T>,
    records: &[PacketRecord],
    chunk_size: usize,
) -> Result<Vec<Decision>, ModelError> {
    let window = lstm.config.window;
    let mut lines: HashMap<u32, Vec<String>> = HashMap::new();
    let mut rows: HashMap<u32, Vec<Vec<f64>>> = HashMap::new();
    let mut decisions = vec![Decision::Unparseable; records.len()];
    for (c, chunk) in records.chunks(chunk_size.max(1)).enumerate() {
        let base = c * chunk_size.max(1);
        let observed = pipe.transform(chunk)?.matrix;
        let mut windows = Windows::empty(window, observed.cols());
        let mut waiting = Vec::new();
        for (o, rec) in chunk.iter().enumerate() {
            let i = base + o;
            let history = lines.entry(rec.flow_index).or_default();
            history.push(packet_line(rec, cols));
            let recent = rows.entry(rec.flow_index).or_default();
            recent.push(observed.row(o).to_vec());
            if recent.len() >= window {
                recent.remove(0);
            }
            let k = history.len() - 1;
            decisions[i] = match generator.next_after(history, k)? {
                GenOutcome::FlowEnd => Decision::FlowEnd,
                GenOutcome::MaxTokensExceeded => Decision::Unparseable,
                GenOutcome::Line(line) => {
                    let accepted = match judge.as_mut() {
                        Some(j) => j.is_consecutive(&history[k], &line)?,
                        None => true,
                    };
                    match (accepted, parse_packet(&line, cols)) {
                        (false, _) => Decision::Rejected,
                        (true, Err(_)) => Decision::Unparseable,
                        (true, Ok(mut next)) => {
                            next.flow_index = rec.flow_index;
                            let predicted = pipe.transform(std::slice::from_ref(&next))?.matrix;
                            let mut win: Vec<&[f64]> = recent.iter().map(Vec::as_slice).collect();
                            win.push(predicted.row(0));
                            windows.push(&win, Label::Unlabeled, rec.flow_index);
                            waiting.push(i);
                            Decision::Unparseable
                        }
                    }
                }
            };
        }
        if !windows.is_empty() {
            for (i, pred) in waiting.into_iter().zip(lstm.classify(&windows)?) {
                decisions[i] = Decision::Class(pred.class);
            }
        }
    }
    Ok(decisions)
}

fn missing_or(p: &Pipeline, name: &str) -> Result<PathBuf, PipelineError> {
    let path = p.ws.artifact(name);
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingCheckpoint(name.to_string()))
    }
}

fn stage_failure(stage: &str) -> impl FnOnce(Fail) -> PipelineError + '_ {
    move |Fail(reason)| PipelineError::StageFailure { stage: stage.to_string(), reason }
}

pub(crate) fn run(p: &Pipeline) -> Result<DeployReport, PipelineError> {
    let d = &p.config.deploy;
    let mut needed = vec![GPT_CKPT.to_string(), lstm_ckpt(d.classifier), FEATURES.to_string()];
    if d.gate {
        needed.push(BERT_CKPT.into());
    }
    for name in &needed {
        missing_or(p, name)?;
    }
    let result = match p.config.precision {
        Precision::F32 => run_with::<f32>(p, &needed),
        Precision::F64 => run_with::<f64>(p, &needed),
    };
    result.map_err(stage_failure("deploy-run"))
}

fn stream_records(p: &Pipeline) -> Result<Vec<PacketRecord>, Fail> {
    match &p.config.deploy.stream {
        Stream::Synth { flows, attack_fraction, seed_offset } => {
            let spec = GrammarSpec::with_attack_fraction(p.config.seed.wrapping_add(*seed_offset), *attack_fraction);
            Ok(generate(&spec, *flows)?.records)
        }
        Stream::File { path, label } => Ok(load_packets(&p.ws.input(path), *label)?),
    }
}

fn load_lstm<T: Scalar>(p: &Pipeline, mode: ClassLabelMap, pipe: &FeaturePipeline) -> Result<LstmClassifier<T>, Fail> {
    let model = LstmClassifier::<T>::from_checkpoint(&Checkpoint::load(&p.ws.artifact(&lstm_ckpt(mode)))?)?;
    if model.config.input_dim != pipe.selected().len() {
        return fail(format!(
            "classifier expects {} features but the feature transform yields {}",
            model.config.input_dim,
            pipe.selected().len()
        ));
    }
    Ok(model)
}

fn run_with<T: Scalar>(p: &Pipeline, needed: &[String]) -> Result<DeployReport, Fail> {
    let d = &p.config.deploy;
    let (gpt, vocab, columns) = load_gpt::<T>(&p.ws.artifact(GPT_CKPT))?;
    let pipe = FeaturePipeline::load(&p.ws.artifact(FEATURES))?;
    if pipe.selected() != columns.as_slice() {
        return fail("feature transform and generator disagree on the packet columns");
    }
    let cols = column_indices(&columns)?;
    let lstm = load_lstm::<T>(p, d.classifier, &pipe)?;
    let bert = if d.gate { Some(Bert::<T>::from_checkpoint(&Checkpoint::load(&p.ws.artifact(BERT_CKPT))?)?) } else { None };
    let mut judge = bert.as_ref().map(|m| BertJudge { model: m, vocab: &vocab });
    let mut gen = GptGenerator { model: &gpt, vocab: &vocab, policy: d.policy };

    let records = stream_records(p)?;
    let mut next_label: Vec<Option<Label>> = vec![None; records.len()];
    let mut last_seen: HashMap<u32, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        if let Some(j) = last_seen.insert(r.flow_index, i) {
            next_label[j] = Some(r.label);
        }
    }

    let decisions = classify_predicted(&mut gen, judge.as_mut(), &pipe, &cols, &lstm, &records, d.chunk_size)?;

    let mode = d.classifier;
    let mut counts = DeployCounts::default();
    let (mut support, mut agree, mut true_attack, mut true_total) = (0u64, 0u64, 0u64, 0u64);
    let mut csv = csv::Writer::from_path(p.ws.artifact("reports/deploy_decisions.csv"))?;
    csv.write_record(["flow_index", "position", "decision", "true_next"])?;
    let mut position: HashMap<u32, usize> = HashMap::new();
    for (i, dec) in decisions.iter().enumerate() {
        let truth = next_label[i].filter(|&l| l != Label::Unlabeled);
        if let Some(l) = truth {
            true_total += 1;
            true_attack += l.is_attack() as u64;
        }
        let name = match *dec {
            Decision::Class(k) => {
                if mode.is_attack_class(k) {
                    *counts.predicted_attack.entry(mode.name(k).to_string()).or_default() += 1;
                } else {
                    counts.predicted_normal += 1;
                }
                if let Some(l) = truth {
                    support += 1;
                    agree += (mode.is_attack_class(k) == l.is_attack()) as u64;
                }
                mode.name(k).to_string()
            }
            Decision::Rejected => {
                counts.rejected_by_evaluator += 1;
                "RejectedByEvaluator".into()
            }
            Decision::Unparseable => {
                counts.unparseable += 1;
                "Unparseable".into()
            }
            Decision::FlowEnd => {
                counts.flow_end += 1;
                "FlowEnd".into()
            }
        };
        let pos = position.entry(records[i].flow_index).or_default();
        let next = next_label[i].map(Label::as_str).unwrap_or("FlowEnd");
        csv.write_record([records[i].flow_index.to_string(), pos.to_string(), name, next.to_string()])?;
        *pos += 1;
    }
    csv.flush()?;

    let classified = counts.predicted_normal + counts.predicted_attack_total();
    let frac = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    let mut checkpoints = BTreeMap::new();
    for name in needed {
        checkpoints.insert(name.clone(), file_hash(&p.ws.artifact(name))?);
    }
    let report = DeployReport {
        schema: DEPLOY_SCHEMA.into(),
        config_hash: p.config_hash().into(),
        checkpoints,
        gate: d.gate,
        classifier: mode,
        packets: records.len() as u64,
        flows: last_seen.len() as u64,
        conserved: counts.total() == records.len() as u64,
        predicted_attack_fraction: frac(counts.predicted_attack_total(), classified),
        true_next_attack_fraction: frac(true_attack, true_total),
        agreement_support: support,
        agreement: frac(agree, support),
        counts,
    };
    write_json(&p.ws.artifact("reports/deploy_report.json"), &report)?;
    Ok(report)
}

// ---------------------------------------------------------- one-off queries

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketPrediction {
    pub flow_index: u32,
    pub position: usize,
    /// The generated line, or `FLOW_END` / `MAX_TOKENS`.
    pub next: String,
}

/// Generator output after every packet of `records`.
pub fn predict_packets(p: &Pipeline, records: &[PacketRecord]) -> Result<Vec<PacketPrediction>, PipelineError> {
    missing_or(p, GPT_CKPT)?;
    let r = match p.config.precision {
        Precision::F32 => predict_with::<f32>(p, records),
        Precision::F64 => predict_with::<f64>(p, records),
    };
    r.map_err(stage_failure("predict"))
}

fn predict_with<T: Scalar>(p: &Pipeline, records: &[PacketRecord]) -> Result<Vec<PacketPrediction>, Fail> {
    let (gpt, vocab, columns) = load_gpt::<T>(&p.ws.artifact(GPT_CKPT))?;
    let cols = column_indices(&columns)?;
    let mut gen = GptGenerator { model: &gpt, vocab: &vocab, policy: p.config.deploy.policy };
    let mut lines: HashMap<u32, Vec<String>> = HashMap::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let history = lines.entry(r.flow_index).or_default();
        history.push(packet_line(r, &cols));
        let k = history.len() - 1;
        let next = match gen.next_after(history, k)? {
            GenOutcome::Line(l) => l,
            GenOutcome::FlowEnd => "FLOW_END".into(),
            GenOutcome::MaxTokensExceeded => "MAX_TOKENS".into(),
        };
        out.push(PacketPrediction { flow_index: r.flow_index, position: k, next });
    }
    Ok(out)
}

/// Pair evaluator verdicts with `[P(consecutive), P(non-consecutive)]`.
pub fn judge_pairs(p: &Pipeline, pairs: &[(String, String)]) -> Result<Vec<(PairLabel, [f64; 2])>, PipelineError> {
    missing_or(p, BERT_CKPT)?;
    let r = match p.config.precision {
        Precision::F32 => judge_with::<f32>(p, pairs),
        Precision::F64 => judge_with::<f64>(p, pairs),
    };
    r.map_err(stage_failure("judge"))
}

fn judge_with<T: Scalar>(p: &Pipeline, pairs: &[(String, String)]) -> Result<Vec<(PairLabel, [f64; 2])>, Fail> {
    let ck = Checkpoint::load(&p.ws.artifact(BERT_CKPT))?;
    let model = Bert::<T>::from_checkpoint(&ck)?;
    let Some(vocab) = crate::models::gpt::checkpoint_vocab(&ck)? else { return fail("pair checkpoint carries no vocabulary") };
    let batch: Vec<PairExample> = pairs.iter().map(|(a, b)| PairExample::encode(&vocab, a, b, PairLabel::NonConsecutive)).collect();
    Ok(model.classify_batch(&batch)?.into_iter().map(|x| (x.label, x.probs)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacketClass {
    pub flow_index: u32,
    pub class: String,
    pub probs: Vec<f64>,
}

/// Classifies the window ending at every packet of `records`.
pub fn classify_packets(p: &Pipeline, records: &[PacketRecord], mode: ClassLabelMap) -> Result<Vec<PacketClass>, PipelineError> {
    missing_or(p, &lstm_ckpt(mode))?;
    missing_or(p, FEATURES)?;
    let r = match p.config.precision {
        Precision::F32 => classify_with::<f32>(p, records, mode),
        Precision::F64 => classify_with::<f64>(p, records, mode),
    };
    r.map_err(stage_failure("classify"))
}

fn classify_with<T: Scalar>(p: &Pipeline, records: &[PacketRecord], mode: ClassLabelMap) -> Result<Vec<PacketClass>, Fail> {
    let pipe = FeaturePipeline::load(&p.ws.artifact(FEATURES))?;
    let model = load_lstm::<T>(p, mode, &pipe)?;
    let m = pipe.transform(records)?.matrix;
    let w = reshape_prefix_windows(&m, model.config.window)?;
    let preds = model.classify(&w)?;
    Ok(preds
        .into_iter()
        .zip(&w.flows)
        .map(|(x, &flow_index)| PacketClass { flow_index, class: mode.name(x.class).to_string(), probs: x.probs })
        .collect())
}
