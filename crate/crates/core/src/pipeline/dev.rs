use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{PipelineConfig, Source};
use super::manifest::file_hash;
use super::{fail, Fail, Pipeline, Precision, Stage};
use crate::features::{partition, read_matrix_csv, reshape_prefix_windows, write_matrix_csv, FeaturePipeline};
use crate::metrics::{compute_metrics, loss_plot_svg, render_report, roc_curve, RenderOptions, RenderedFiles};
use crate::models::bert::{finetune_pair_resampled, Bert, BertConfig, BertJudge, PairExample, PairLabel, PairResampler, PairText};
use crate::models::gpt::{
    checkpoint_vocab, evaluate_generator, flow_windows, train_gpt, GenOutcome, GenerationPolicy, Gpt, GptConfig, GptGenerator,
    PacketGenerator,
};
use crate::models::lstm::{train_classifier, ClassLabelMap, LstmClassifier, LstmClassifierConfig};
use crate::models::TrainConfig;
use crate::models::bert::build_pair_dataset;
use crate::nn::{Checkpoint, History};
use crate::packet::{load_packets, read_records_file, write_records_file, Label, PacketRecord};
use crate::scalar::Scalar;
use crate::synth::generate;
use crate::text::{serialize_flow, train_bpe, BpeVocab, Special};

pub(crate) const PACKETS: &str = "data/packets.csv";
pub(crate) const ORACLE: &str = "data/oracle.json";
pub(crate) const SPLIT: &str = "data/split.json";
pub(crate) const FEATURES: &str = "data/features.json";
pub(crate) const VOCAB: &str = "data/vocab.json";
pub(crate) const GPT_CKPT: &str = "checkpoints/gpt.json";
pub(crate) const BERT_CKPT: &str = "checkpoints/bert.json";
const PARTS: [&str; 3] = ["train", "val", "test"];

pub const GENERATOR_SCHEMA: &str = "ipred.generator/1";

fn corpus(k: usize) -> String {
    format!("data/corpus_{}.txt", PARTS[k])
}

fn pairs_file(k: usize) -> String {
    format!("data/pairs_{}.csv", PARTS[k])
}

fn features_file(k: usize) -> String {
    format!("data/features_{}.csv", PARTS[k])
}

pub(crate) fn mode_name(m: ClassLabelMap) -> &'static str {
    match m {
        ClassLabelMap::Binary => "binary",
        ClassLabelMap::Multiclass => "multiclass",
    }
}

pub(crate) fn lstm_ckpt(m: ClassLabelMap) -> String {
    format!("checkpoints/lstm_{}.json", mode_name(m))
}

/// Seed of the pair set drawn for split `k`. The training set doubles as
/// epoch 0 of the resampled fine-tuning sets.
fn pair_seed(cfg: &PipelineConfig, k: usize) -> u64 {
    cfg.seed.wrapping_add(101 + k as u64)
}

pub(crate) fn inputs(stage: Stage) -> Vec<String> {
    let all = |f: fn(usize) -> String| (0..3).map(f).collect::<Vec<_>>();
    match stage {
        Stage::Ingest => vec![],
        Stage::Features => vec![PACKETS.into()],
        Stage::Tokenize => vec![PACKETS.into(), SPLIT.into(), FEATURES.into()],
        Stage::TrainGpt => [all(corpus), vec![SPLIT.into(), VOCAB.into(), FEATURES.into()]].concat(),
        Stage::BuildPairs => [all(corpus), vec![SPLIT.into()]].concat(),
        Stage::TrainBert => [all(pairs_file), vec![corpus(0), SPLIT.into(), VOCAB.into()]].concat(),
        Stage::TrainLstm => [all(features_file), vec![FEATURES.into()]].concat(),
        Stage::Evaluate => vec![GPT_CKPT.into(), BERT_CKPT.into(), corpus(2), SPLIT.into()],
    }
}

/// The part of the config a stage depends on, plus anything outside the
/// workspace (such as a source capture).
pub(crate) fn settings(p: &Pipeline, stage: Stage) -> Result<Value, Fail> {
    let c = &p.config;
    Ok(match stage {
        Stage::Ingest => {
            let file = match &c.source {
                Source::File { path, .. } => Some(file_hash(&p.ws.input(path))?),
                Source::Synth { .. } => None,
            };
            json!({ "source": c.source, "grammar": c.grammar_spec(), "source_hash": file })
        }
        Stage::Features => json!({ "features": c.features, "split": c.split_spec() }),
        Stage::Tokenize => json!({ "tokenizer": c.tokenizer }),
        Stage::TrainGpt => json!({ "gpt": c.gpt, "train": c.gpt_train, "seed": c.seed, "precision": c.precision, "plots": c.report.plots }),
        Stage::BuildPairs => json!({ "pairs": c.pairs, "seed": c.seed }),
        Stage::TrainBert => json!({
            "bert": c.bert, "train": c.bert_train, "mlm": c.mlm, "pairs": c.pairs,
            "seed": c.seed, "precision": c.precision, "plots": c.report.plots,
        }),
        Stage::TrainLstm => json!({ "lstm": c.lstm, "window": c.features.window, "seed": c.seed, "precision": c.precision, "plots": c.report.plots }),
        Stage::Evaluate => json!({ "policy": c.deploy.policy, "precision": c.precision }),
    })
}

pub(crate) fn execute(p: &Pipeline, stage: Stage) -> Result<Vec<String>, Fail> {
    for dir in [&p.ws.data, &p.ws.checkpoints, &p.ws.reports] {
        fs::create_dir_all(dir)?;
    }
    match (stage, p.config.precision) {
        (Stage::Ingest, _) => ingest(p),
        (Stage::Features, _) => features(p),
        (Stage::Tokenize, _) => tokenize(p),
        (Stage::BuildPairs, _) => build_pairs(p),
        (Stage::TrainGpt, Precision::F32) => train_gpt_stage::<f32>(p),
        (Stage::TrainGpt, Precision::F64) => train_gpt_stage::<f64>(p),
        (Stage::TrainBert, Precision::F32) => train_bert_stage::<f32>(p),
        (Stage::TrainBert, Precision::F64) => train_bert_stage::<f64>(p),
        (Stage::TrainLstm, Precision::F32) => train_lstm_stage::<f32>(p),
        (Stage::TrainLstm, Precision::F64) => train_lstm_stage::<f64>(p),
        (Stage::Evaluate, Precision::F32) => evaluate_stage::<f32>(p),
        (Stage::Evaluate, Precision::F64) => evaluate_stage::<f64>(p),
    }
}

pub(crate) fn write_json<S: Serialize>(path: &Path, v: &S) -> Result<(), Fail> {
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn rendered(files: &RenderedFiles) -> Vec<String> {
    [Some(&files.json), Some(&files.text), files.roc_csv.as_ref(), files.roc_svg.as_ref(), files.loss_svg.as_ref()]
        .into_iter()
        .flatten()
        .map(|f| format!("reports/{}", f.file_name().expect("report file name").to_string_lossy()))
        .collect()
}

// ------------------------------------------------------------------ data

fn ingest(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let mut out = vec![PACKETS.to_string()];
    let records = match &p.config.source {
        Source::Synth { flows, .. } => {
            let spec = p.config.grammar_spec().expect("synthetic source has a grammar");
            let corpus = generate(&spec, *flows)?;
            corpus.write_oracle(&p.ws.artifact(ORACLE))?;
            out.push(ORACLE.into());
            corpus.records
        }
        Source::File { path, label } => load_packets(&p.ws.input(path), *label)?,
    };
    if records.is_empty() {
        return fail("the source holds no packets");
    }
    write_records_file(&p.ws.artifact(PACKETS), &records)?;
    Ok(out)
}

/// Flow id → record indices, in table order.
fn group_flows(records: &[PacketRecord]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        m.entry(r.flow_index).or_default().push(i);
    }
    m
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
struct SplitFile {
    train: Vec<u32>,
    val: Vec<u32>,
    test: Vec<u32>,
}

impl SplitFile {
    fn part(&self, k: usize) -> &[u32] {
        [&self.train, &self.val, &self.test][k]
    }
}

fn read_split(p: &Pipeline) -> Result<SplitFile, Fail> {
    Ok(serde_json::from_str(&fs::read_to_string(p.ws.artifact(SPLIT))?)?)
}

/// Splits whole flows, stratified by flow label, then fits the feature
/// transform on the training packets alone.
fn features(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let records = read_records_file(&p.ws.artifact(PACKETS))?;
    let flows = group_flows(&records);
    let ids: Vec<u32> = flows.keys().copied().collect();
    let labels: Vec<Label> = ids.iter().map(|f| records[flows[f][0]].label).collect();
    let parts = partition(&labels, &p.config.split_spec())?;
    let pick = |k: usize| parts[k].iter().map(|&i| ids[i]).collect::<Vec<u32>>();
    let split = SplitFile { train: pick(0), val: pick(1), test: pick(2) };
    write_json(&p.ws.artifact(SPLIT), &split)?;

    let mut part_of = HashMap::new();
    for k in 0..3 {
        for &f in split.part(k) {
            part_of.insert(f, k);
        }
    }
    let mut per_part: [Vec<PacketRecord>; 3] = Default::default();
    for r in &records {
        per_part[part_of[&r.flow_index]].push(r.clone());
    }
    let pipe = FeaturePipeline::fit(&per_part[0], &p.config.features)?;
    pipe.save(&p.ws.artifact(FEATURES))?;
    let mut out = vec![SPLIT.to_string(), FEATURES.to_string()];
    for (k, part) in per_part.iter().enumerate() {
        let t = pipe.transform(part)?;
        write_matrix_csv(&p.ws.artifact(&features_file(k)), &t.matrix)?;
        out.push(features_file(k));
    }
    Ok(out)
}

/// One corpus per split; the vocabulary only ever sees the training text.
fn tokenize(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let records = read_records_file(&p.ws.artifact(PACKETS))?;
    let split = read_split(p)?;
    let pipe = FeaturePipeline::load(&p.ws.artifact(FEATURES))?;
    let flows = group_flows(&records);
    let mut texts = Vec::new();
    for k in 0..3 {
        let mut text = String::new();
        for f in split.part(k) {
            let Some(idx) = flows.get(f) else { return fail(format!("split names flow {f}, which has no packets")) };
            let recs: Vec<PacketRecord> = idx.iter().map(|&i| records[i].clone()).collect();
            text.push_str(&serialize_flow(&recs, pipe.selected())?);
        }
        fs::write(p.ws.artifact(&corpus(k)), &text)?;
        texts.push(text);
    }
    let vocab = train_bpe(&texts[0], p.config.tokenizer.vocab_size)?;
    vocab.save(&p.ws.artifact(VOCAB))?;
    let mut out: Vec<String> = (0..3).map(corpus).collect();
    out.push(VOCAB.into());
    Ok(out)
}

/// Packet lines of every flow in a corpus file, in file order.
pub fn read_corpus(path: &Path) -> std::io::Result<Vec<Vec<String>>> {
    let bad = |msg: String| std::io::Error::new(std::io::ErrorKind::InvalidData, msg);
    let (begin, end) = (Special::FlowBegin.marker(), Special::FlowEnd.marker());
    let mut flows = Vec::new();
    let mut current: Option<Vec<String>> = None;
    for (n, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        match (line.as_str(), current.as_mut()) {
            (l, None) if l == begin => current = Some(Vec::new()),
            (l, Some(_)) if l == end => flows.push(current.take().expect("open flow")),
            (l, Some(cur)) if l != begin => cur.push(line.clone()),
            _ => return Err(bad(format!("{}:{}: unexpected line outside a flow", path.display(), n + 1))),
        }
    }
    if current.is_some() {
        return Err(bad(format!("{}: last flow is not closed", path.display())));
    }
    Ok(flows)
}

fn flows_for(p: &Pipeline, split: &SplitFile, k: usize) -> Result<Vec<(u32, Vec<String>)>, Fail> {
    let lines = read_corpus(&p.ws.artifact(&corpus(k)))?;
    let ids = split.part(k);
    if lines.len() != ids.len() {
        return fail(format!("{} holds {} flows but the split lists {}", corpus(k), lines.len(), ids.len()));
    }
    Ok(ids.iter().copied().zip(lines).collect())
}

pub fn write_pairs(path: &Path, pairs: &[PairText]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["a", "b", "label"])?;
    for x in pairs {
        w.write_record([x.a.as_str(), x.b.as_str(), x.label.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_pairs(path: &Path) -> Result<Vec<PairText>, csv::Error> {
    let mut rd = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let label: PairLabel = rec[2].parse().map_err(|_| {
            csv::Error::from(std::io::Error::new(std::io::ErrorKind::InvalidData, format!("bad pair label {:?}", &rec[2])))
        })?;
        out.push(PairText { a: rec[0].to_string(), b: rec[1].to_string(), label });
    }
    Ok(out)
}

fn build_pairs(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let split = read_split(p)?;
    let mut out = Vec::new();
    for k in 0..3 {
        let flows = flows_for(p, &split, k)?;
        let pairs = build_pair_dataset(&flows, p.config.pairs.neg_ratio, pair_seed(&p.config, k))?;
        write_pairs(&p.ws.artifact(&pairs_file(k)), &pairs)?;
        out.push(pairs_file(k));
    }
    Ok(out)
}

// ------------------------------------------------------------------ models

fn provenance(p: &Pipeline, checkpoints: &[&str]) -> Result<BTreeMap<String, Value>, Fail> {
    let mut hashes = BTreeMap::new();
    for c in checkpoints {
        hashes.insert(c.to_string(), file_hash(&p.ws.artifact(c))?);
    }
    Ok(BTreeMap::from([
        ("config_hash".to_string(), json!(p.config_hash())),
        ("checkpoints".to_string(), json!(hashes)),
    ]))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LineAccuracy {
    /// Non-final packets whose successor line was reproduced exactly.
    pub lines_correct: usize,
    pub lines_total: usize,
    pub line_accuracy: f64,
    /// Final packets for which the generator predicted the end of the flow.
    pub ends_correct: usize,
    pub ends_total: usize,
    pub end_accuracy: f64,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn line_accuracy<G: PacketGenerator>(gen: &mut G, flows: &[(u32, Vec<String>)]) -> Result<LineAccuracy, Fail> {
    let mut acc = LineAccuracy::default();
    for (_, lines) in flows {
        for k in 0..lines.len() {
            let got = gen.next_after(lines, k)?;
            if k + 1 < lines.len() {
                acc.lines_total += 1;
                acc.lines_correct += (got == GenOutcome::Line(lines[k + 1].clone())) as usize;
            } else {
                acc.ends_total += 1;
                acc.ends_correct += (got == GenOutcome::FlowEnd) as usize;
            }
        }
    }
    acc.line_accuracy = ratio(acc.lines_correct, acc.lines_total);
    acc.end_accuracy = ratio(acc.ends_correct, acc.ends_total);
    Ok(acc)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorReport {
    pub schema: String,
    pub config_hash: String,
    pub checkpoints: BTreeMap<String, String>,
    /// Greedy decoding on the held-out flows.
    pub test: LineAccuracy,
    pub history: History,
}

fn train_gpt_stage<T: Scalar>(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let vocab = BpeVocab::load(&p.ws.artifact(VOCAB))?;
    let pipe = FeaturePipeline::load(&p.ws.artifact(FEATURES))?;
    let split = read_split(p)?;
    let (tr, va, te) = (flows_for(p, &split, 0)?, flows_for(p, &split, 1)?, flows_for(p, &split, 2)?);
    let cfg = GptConfig { vocab_size: vocab.vocab_size(), seed: p.config.seed, ..p.config.gpt.clone() };
    let windows = |fs: &[(u32, Vec<String>)]| fs.iter().flat_map(|(_, l)| flow_windows(&vocab, l, cfg.context_packets)).collect::<Vec<_>>();
    let (wtr, wva) = (windows(&tr), windows(&va));
    let mut model = Gpt::<T>::new(cfg.clone())?;
    let history = train_gpt(&mut model, &wtr, &wva, &p.config.gpt_train)?;
    let mut ck = model.checkpoint(Some(&vocab), Some(&history));
    ck.extras.insert("selected_columns".into(), json!(pipe.selected()));
    ck.extras.insert("pipeline_config_hash".into(), json!(p.config_hash()));
    ck.save(&p.ws.artifact(GPT_CKPT))?;

    let mut gen = GptGenerator { model: &model, vocab: &vocab, policy: GenerationPolicy::default() };
    let test = line_accuracy(&mut gen, &te)?;
    log::info!("generator next-line accuracy {:.4} ({}/{})", test.line_accuracy, test.lines_correct, test.lines_total);
    let report = GeneratorReport {
        schema: GENERATOR_SCHEMA.into(),
        config_hash: p.config_hash().into(),
        checkpoints: BTreeMap::from([(GPT_CKPT.to_string(), file_hash(&p.ws.artifact(GPT_CKPT))?)]),
        test,
        history: history.clone(),
    };
    write_json(&p.ws.artifact("reports/gpt_eval.json"), &report)?;
    let mut out = vec![GPT_CKPT.to_string(), "reports/gpt_eval.json".to_string()];
    if p.config.report.plots {
        fs::write(p.ws.artifact("reports/gpt_eval_loss.svg"), loss_plot_svg(&history))?;
        out.push("reports/gpt_eval_loss.svg".into());
    }
    Ok(out)
}

fn train_bert_stage<T: Scalar>(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let c = &p.config;
    let vocab = BpeVocab::load(&p.ws.artifact(VOCAB))?;
    let split = read_split(p)?;
    let tr = flows_for(p, &split, 0)?;
    let enc = |k: usize| -> Result<Vec<PairExample>, Fail> {
        Ok(read_pairs(&p.ws.artifact(&pairs_file(k)))?.iter().map(|x| PairExample::from_text(&vocab, x)).collect())
    };
    let (train, val, test) = (enc(0)?, enc(1)?, enc(2)?);

    let cfg = BertConfig { vocab_size: vocab.vocab_size(), seed: c.seed, ..c.bert.clone() };
    let mut model = Bert::<T>::new(cfg)?;
    let positives: Vec<PairExample> = train.into_iter().filter(|e| e.label == PairLabel::Consecutive).collect();
    let mlm_loss = if c.mlm.epochs > 0 {
        model.mlm_pretrain(&positives, c.mlm.epochs, &TrainConfig { lr: c.mlm.lr, ..c.bert_train.clone() })?
    } else {
        Vec::new()
    };
    let resampler = PairResampler { flows: &tr, vocab: &vocab, neg_ratio: c.pairs.neg_ratio, seed: pair_seed(c, 0) };
    let history = finetune_pair_resampled(&mut model, resampler, &val, &c.bert_train)?;
    let mut ck = model.checkpoint(Some(&vocab), Some(&history));
    ck.extras.insert("mlm_loss".into(), json!(mlm_loss));
    ck.extras.insert("pipeline_config_hash".into(), json!(p.config_hash()));
    ck.save(&p.ws.artifact(BERT_CKPT))?;

    let preds = model.classify_batch(&test)?;
    let truth: Vec<usize> = test.iter().map(|e| e.label.id()).collect();
    let predicted: Vec<usize> = preds.iter().map(|x| x.label.id()).collect();
    let names = [PairLabel::Consecutive, PairLabel::NonConsecutive].map(|l| l.as_str().to_string());
    let positive = PairLabel::NonConsecutive.id();
    let mut report = compute_metrics(&truth, &predicted, &names, Some(positive))?;
    let is_pos: Vec<bool> = truth.iter().map(|&t| t == positive).collect();
    let scores: Vec<f64> = preds.iter().map(|x| x.probs[positive]).collect();
    report.roc = Some(roc_curve(&is_pos, &scores)?);
    log::info!("pair evaluator accuracy {:.4}", report.accuracy);
    let opts = RenderOptions { plots: c.report.plots, history: Some(history), provenance: provenance(p, &[BERT_CKPT])? };
    let files = render_report(&report, &p.ws.reports, "bert_eval", &opts)?;
    Ok([vec![BERT_CKPT.to_string()], rendered(&files)].concat())
}

fn train_lstm_stage<T: Scalar>(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let c = &p.config;
    let window = c.features.window;
    let mut w = Vec::new();
    for k in 0..3 {
        let m = read_matrix_csv(&p.ws.artifact(&features_file(k)))?;
        w.push(reshape_prefix_windows(&m, window)?);
    }
    let columns = read_matrix_csv(&p.ws.artifact(&features_file(0)))?.column_names;
    let mut out = Vec::new();
    for &mode in &c.lstm.modes {
        let s = &c.lstm;
        let cfg = LstmClassifierConfig {
            input_dim: w[0].features,
            window,
            hidden: s.hidden,
            dropout: s.dropout,
            classes: mode,
            max_epochs: s.max_epochs,
            patience: s.patience,
            batch_size: s.batch_size,
            lr: s.lr,
            seed: c.seed,
            class_weighting: s.class_weighting,
        };
        let mut model = LstmClassifier::<T>::new(cfg)?;
        let history = train_classifier(&mut model, &w[0], &w[1])?;
        let ck_name = lstm_ckpt(mode);
        let mut ck = model.checkpoint(Some(&history));
        ck.extras.insert("selected_columns".into(), json!(columns));
        ck.extras.insert("pipeline_config_hash".into(), json!(p.config_hash()));
        ck.save(&p.ws.artifact(&ck_name))?;

        let preds = model.classify(&w[2])?;
        let truth = model.true_classes(&w[2])?;
        let predicted: Vec<usize> = preds.iter().map(|x| x.class).collect();
        let names: Vec<String> = mode.names().iter().map(|s| s.to_string()).collect();
        let positive = (mode == ClassLabelMap::Binary).then_some(1);
        let mut report = compute_metrics(&truth, &predicted, &names, positive)?;
        if positive.is_some() && truth.contains(&0) && truth.contains(&1) {
            let is_pos: Vec<bool> = truth.iter().map(|&t| t == 1).collect();
            let scores: Vec<f64> = preds.iter().map(|x| x.probs[1]).collect();
            report.roc = Some(roc_curve(&is_pos, &scores)?);
        }
        log::info!("{} classifier accuracy {:.4}", mode_name(mode), report.accuracy);
        let opts = RenderOptions { plots: c.report.plots, history: Some(history), provenance: provenance(p, &[&ck_name])? };
        let files = render_report(&report, &p.ws.reports, &format!("lstm_{}", mode_name(mode)), &opts)?;
        out.push(ck_name);
        out.extend(rendered(&files));
    }
    Ok(out)
}

pub(crate) fn load_gpt<T: Scalar>(path: &Path) -> Result<(Gpt<T>, BpeVocab, Vec<String>), Fail> {
    let ck = Checkpoint::load(path)?;
    let model = Gpt::<T>::from_checkpoint(&ck)?;
    let Some(vocab) = checkpoint_vocab(&ck)? else { return fail("generator checkpoint carries no vocabulary") };
    let columns: Vec<String> = match ck.extras.get("selected_columns") {
        Some(v) => serde_json::from_value(v.clone())?,
        None => return fail("generator checkpoint does not list its packet columns"),
    };
    Ok((model, vocab, columns))
}

fn evaluate_stage<T: Scalar>(p: &Pipeline) -> Result<Vec<String>, Fail> {
    let (gpt, vocab, _) = load_gpt::<T>(&p.ws.artifact(GPT_CKPT))?;
    let bert = Bert::<T>::from_checkpoint(&Checkpoint::load(&p.ws.artifact(BERT_CKPT))?)?;
    let split = read_split(p)?;
    let te = flows_for(p, &split, 2)?;
    let mut gen = GptGenerator { model: &gpt, vocab: &vocab, policy: p.config.deploy.policy };
    let mut judge = BertJudge { model: &bert, vocab: &vocab };
    let ev = evaluate_generator(&mut gen, &mut judge, &te)?;
    log::info!("judged consecutive {:.4} ({}/{})", ev.fraction, ev.consecutive, ev.packets);
    let mut doc = json!({ "schema": "ipred.judged/1" });
    for (k, v) in provenance(p, &[GPT_CKPT, BERT_CKPT])? {
        doc[k] = v;
    }
    doc["evaluation"] = serde_json::to_value(&ev)?;
    write_json(&p.ws.artifact("reports/generator_judged.json"), &doc)?;
    Ok(vec!["reports/generator_judged.json".into()])
}
