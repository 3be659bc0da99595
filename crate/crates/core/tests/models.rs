use std::sync::OnceLock;

use ipred::features::{reshape_prefix_windows, FeatureConfig, FeatureMatrix, FeaturePipeline, Windows};
use ipred::models::bert::{build_pair_dataset, mask_tokens, Bert, BertConfig, PairExample, PairLabel};
use ipred::models::gpt::{overfit_steps, predict_next_packet, DecodeMode, GenOutcome, GenerationPolicy, Gpt, GptConfig, PacketGenerator, PairJudge};
use ipred::models::lstm::{train_classifier, ClassLabelMap, LstmClassifier, LstmClassifierConfig};
use ipred::models::ModelError;
use ipred::nn::{Checkpoint, History};
use ipred::packet::{Label, PacketRecord};
use ipred::pipeline::{classify_predicted, Decision};
use ipred::synth::{generate, GrammarSpec, SynthCorpus};
use ipred::text::{column_indices, packet_line, train_bpe, BpeVocab, Special};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WINDOW: usize = 10;

struct Trained {
    corpus: SynthCorpus,
    pipe: FeaturePipeline,
    model: LstmClassifier<f64>,
    history: History,
    val: Windows,
    test: Windows,
}

fn windows_of(corpus: &SynthCorpus, pipe: &FeaturePipeline, flows: std::ops::Range<usize>) -> Windows {
    let lo = corpus.flows[flows.start].start;
    let last = &corpus.flows[flows.end - 1];
    reshape_prefix_windows(&pipe.transform(&corpus.records[lo..last.start + last.len]).unwrap().matrix, WINDOW).unwrap()
}

fn trained() -> &'static Trained {
    static T: OnceLock<Trained> = OnceLock::new();
    T.get_or_init(|| {
        let corpus = generate(&GrammarSpec::with_attack_fraction(42, 0.5), 120).unwrap();
        let cut = corpus.flows[80].start;
        let pipe = FeaturePipeline::fit(&corpus.records[..cut], &FeatureConfig::default()).unwrap();
        let train = windows_of(&corpus, &pipe, 0..80);
        let val = windows_of(&corpus, &pipe, 80..100);
        let test = windows_of(&corpus, &pipe, 100..120);
        let mut cfg = LstmClassifierConfig::new(pipe.selected().len(), WINDOW, ClassLabelMap::Binary);
        cfg.hidden = 16;
        cfg.max_epochs = 25;
        cfg.lr = 1e-2;
        let mut model = LstmClassifier::<f64>::new(cfg).unwrap();
        let history = train_classifier(&mut model, &train, &val).unwrap();
        Trained { corpus, pipe, model, history, val, test }
    })
}

#[test]
fn separable_windows_are_learned() {
    let t = trained();
    let preds = t.model.classify(&t.test).unwrap();
    let truth = t.model.true_classes(&t.test).unwrap();
    let right = preds.iter().zip(&truth).filter(|(p, y)| p.class == **y).count();
    assert!(right as f64 / truth.len() as f64 >= 0.99, "{right}/{}", truth.len());
    assert!(t.history.train_loss.last().unwrap() < &t.history.train_loss[0]);
}

#[test]
fn returned_weights_have_the_lowest_validation_loss() {
    let t = trained();
    let best = t.history.val_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(t.history.val_loss[t.history.best_epoch - 1], best);
    assert!((t.model.loss(&t.val).unwrap() - best).abs() <= 1e-12);
}

#[test]
fn probabilities_normalised_and_deterministic() {
    let t = trained();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = t.model.config.input_dim;
    let mut w = Windows::empty(WINDOW, f);
    let row: Vec<Vec<f64>> = (0..WINDOW).map(|_| (0..f).map(|_| rng.gen::<f64>()).collect()).collect();
    for _ in 0..3 {
        let refs: Vec<&[f64]> = row.iter().map(Vec::as_slice).collect();
        w.push(&refs, Label::Unlabeled, 0);
    }
    for _ in 0..50 {
        let r: Vec<Vec<f64>> = (0..WINDOW).map(|_| (0..f).map(|_| rng.gen_range(-2.0..3.0)).collect()).collect();
        let refs: Vec<&[f64]> = r.iter().map(Vec::as_slice).collect();
        w.push(&refs, Label::Unlabeled, 1);
    }
    let a = t.model.classify(&w).unwrap();
    for p in &a {
        assert!((p.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
    assert_eq!(a[0], a[1]);
    assert_eq!(a[1], a[2]);
    assert_eq!(a, t.model.classify(&w).unwrap());

    let bad = Windows::empty(WINDOW, f + 1);
    assert!(matches!(t.model.classify(&bad), Err(ModelError::ShapeMismatch(_))));
}

#[test]
fn lstm_checkpoint_round_trips() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lstm.json");
    t.model.checkpoint(Some(&t.history)).save(&path).unwrap();
    let back = LstmClassifier::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.classify(&t.test).unwrap(), t.model.classify(&t.test).unwrap());
}

#[test]
fn double_scaling_changes_decisions() {
    // Windows already in [0, 1]; pushing them through the scaler again
    // collapses wide-range columns towards 0 and must change some calls.
    let t = trained();
    let names = t.pipe.selected().to_vec();
    let f = names.len();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut once = Windows::empty(WINDOW, f);
    for _ in 0..200 {
        let rows: Vec<Vec<f64>> = (0..WINDOW).map(|_| (0..f).map(|_| rng.gen::<f64>()).collect()).collect();
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        once.push(&refs, Label::Unlabeled, 0);
    }
    let rows: Vec<Vec<f64>> = once.data.chunks(f).map(|r| r.to_vec()).collect();
    let twice = t.pipe.scaler.transform(&FeatureMatrix::from_rows(names, &rows).unwrap()).unwrap();
    assert_ne!(twice.data, once.data);
    let twice = Windows { data: twice.data, ..once.clone() };
    let a: Vec<usize> = t.model.classify(&once).unwrap().iter().map(|p| p.class).collect();
    let b: Vec<usize> = t.model.classify(&twice).unwrap().iter().map(|p| p.class).collect();
    assert_ne!(a, b);
}

/// Proposes the same line for every packet.
struct Constant(GenOutcome);

impl PacketGenerator for Constant {
    fn next_after(&mut self, _: &[String], _: usize) -> Result<GenOutcome, ModelError> {
        Ok(self.0.clone())
    }
}

struct Verdict(bool);

impl PairJudge for Verdict {
    fn is_consecutive(&mut self, _: &str, _: &str) -> Result<bool, ModelError> {
        Ok(self.0)
    }
}

fn attack_stream(t: &Trained) -> (&[PacketRecord], PacketRecord) {
    let flow = t.corpus.flows[100..].iter().find(|f| f.label != Label::Normal && f.len > 3).unwrap();
    let recs = t.corpus.flow_records(flow);
    (recs, recs[recs.len() / 2].clone())
}

fn run(t: &Trained, generator: GenOutcome, judge: Option<bool>, records: &[PacketRecord]) -> Vec<Decision> {
    let cols = column_indices(t.pipe.selected()).unwrap();
    let mut j = judge.map(Verdict);
    classify_predicted(&mut Constant(generator), j.as_mut(), &t.pipe, &cols, &t.model, records, 7).unwrap()
}

#[test]
fn echoed_attack_packet_is_called_attack() {
    let t = trained();
    let (records, attack) = attack_stream(t);
    let cols = column_indices(t.pipe.selected()).unwrap();
    let d = run(t, GenOutcome::Line(packet_line(&attack, &cols)), Some(true), records);
    assert_eq!(d.len(), records.len());
    assert!(d.iter().all(|x| *x == Decision::Class(1)), "{d:?}");
}

#[test]
fn garbage_is_all_unparseable_and_counts_are_conserved() {
    let t = trained();
    let records = &t.corpus.records[..200];
    let d = run(t, GenOutcome::Line("not a packet at all".into()), None, records);
    assert_eq!(d.len(), records.len());
    assert!(d.iter().all(|x| *x == Decision::Unparseable));

    let cols = column_indices(t.pipe.selected()).unwrap();
    let line = packet_line(&records[3], &cols);
    for (g, j, want) in [
        (GenOutcome::FlowEnd, None, Some(Decision::FlowEnd)),
        (GenOutcome::MaxTokensExceeded, None, Some(Decision::Unparseable)),
        (GenOutcome::Line(line.clone()), Some(false), Some(Decision::Rejected)),
        (GenOutcome::Line(line), Some(true), None),
    ] {
        let d = run(t, g, j, records);
        assert_eq!(d.len(), records.len());
        if let Some(w) = want {
            assert!(d.iter().all(|x| *x == w));
        } else {
            assert!(d.iter().all(|x| matches!(x, Decision::Class(_))));
        }
    }
}

fn tiny_gpt() -> Gpt<f64> {
    Gpt::new(GptConfig { layers: 1, width: 16, heads: 2, vocab_size: 300, max_positions: 32, dropout: 0.0, seed: 5, context_packets: 1 }).unwrap()
}

#[test]
fn gpt_distribution_checkpoint_and_overfit() {
    let mut m = tiny_gpt();
    let ctx = [Special::FlowBegin.id(), 70, 71, 72];
    let p = m.next_token_probs(&ctx).unwrap();
    assert_eq!(p.len(), 300);
    assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    assert_eq!(p, tiny_gpt().next_token_probs(&ctx).unwrap());

    let batch = vec![vec![1u32, 80, 81, 82, 83, 16, 2]];
    let losses = overfit_steps(&mut m, &batch, 60, 1e-2).unwrap();
    assert!(losses.last().unwrap() < &(losses[0] * 0.5), "{losses:?}");

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gpt.json");
    m.checkpoint(None, None).save(&path).unwrap();
    let back = Gpt::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.next_token_probs(&ctx).unwrap(), m.next_token_probs(&ctx).unwrap());
}

#[test]
fn decoding_rules() {
    let m = tiny_gpt();
    let vocab = train_bpe("ttl=64 proto=6\nttl=64 proto=6\n", 280).unwrap();
    let greedy = GenerationPolicy::default();
    let ended = predict_next_packet(&m, &vocab, &[Special::FlowBegin.id(), Special::FlowEnd.id()], &greedy).unwrap();
    assert_eq!(ended.outcome, GenOutcome::FlowEnd);

    let ctx = [Special::FlowBegin.id(), 120];
    let short = GenerationPolicy { max_new_tokens: 3, ..greedy };
    let g = predict_next_packet(&m, &vocab, &ctx, &short).unwrap();
    assert!(g.tokens.len() <= 3);
    assert_eq!(g, predict_next_packet(&m, &vocab, &ctx, &short).unwrap());

    let hot = GenerationPolicy { mode: DecodeMode::Temperature { tau: 1.5, seed: 9 }, max_new_tokens: 8 };
    assert_eq!(predict_next_packet(&m, &vocab, &ctx, &hot).unwrap(), predict_next_packet(&m, &vocab, &ctx, &hot).unwrap());
    let cold = GenerationPolicy { mode: DecodeMode::Temperature { tau: 0.0, seed: 9 }, max_new_tokens: 8 };
    assert!(matches!(predict_next_packet(&m, &vocab, &ctx, &cold), Err(ModelError::Config(_))));
}

fn tiny_bert() -> Bert<f64> {
    Bert::new(BertConfig { layers: 1, width: 16, heads: 2, vocab_size: 300, max_positions: 24, mask_rate: 0.15, dropout: 0.0, seed: 3 }).unwrap()
}

fn vocab() -> BpeVocab {
    train_bpe("a=1 b=2\na=1 b=3\n", 270).unwrap()
}

#[test]
fn bert_pair_probabilities_and_checkpoint() {
    let m = tiny_bert();
    let v = vocab();
    let ex = PairExample::encode(&v, "a=1 b=2", "a=1 b=3", PairLabel::Consecutive);
    let p = m.classify_pair(&ex).unwrap();
    assert!((p.probs[0] + p.probs[1] - 1.0).abs() <= 1e-9);
    assert_eq!(p, tiny_bert().classify_pair(&ex).unwrap());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bert.json");
    m.checkpoint(Some(&v), None).save(&path).unwrap();
    let back = Bert::<f64>::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
    assert_eq!(back.classify_pair(&ex).unwrap(), p);

    let long = PairExample::encode(&v, &"z".repeat(30), "a", PairLabel::Consecutive);
    assert!(matches!(m.classify_pair(&long), Err(ModelError::SequenceTooLong { .. })));
}

#[test]
fn pair_dataset_shape() {
    let flows: Vec<(u32, Vec<String>)> = (0..30u32).map(|f| (f, (0..6).map(|k| format!("f={f} k={k}")).collect())).collect();
    let pairs = build_pair_dataset(&flows, 0.5, 4).unwrap();
    assert_eq!(pairs, build_pair_dataset(&flows, 0.5, 4).unwrap());
    let pos: Vec<_> = pairs.iter().filter(|p| p.label == PairLabel::Consecutive).collect();
    let neg = pairs.len() - pos.len();
    assert_eq!(pos.len(), 30 * 5);
    assert!((neg as f64 / pairs.len() as f64 - 0.5).abs() < 0.02);
    for p in pairs.iter().filter(|p| p.label == PairLabel::NonConsecutive) {
        assert!(!pos.iter().any(|q| q.a == p.a && q.b == p.b));
    }
    assert!(build_pair_dataset(&flows, 1.0, 4).is_err());
    assert!(matches!(build_pair_dataset(&flows[..0], 0.5, 4), Err(ModelError::InsufficientFlows { .. })));
}

#[test]
fn masking_skips_specials() {
    let seq: Vec<u32> = [Special::Cls.id()].into_iter().chain(10..50).chain([Special::Sep.id()]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (masked, picked) = mask_tokens(&seq, 0.15, 300, &mut rng);
    assert_eq!(picked.len(), 6);
    assert!(picked.iter().all(|&i| i != 0 && i != seq.len() - 1));
    assert_eq!(masked[0], seq[0]);
    for i in 0..seq.len() {
        if !picked.contains(&i) {
            assert_eq!(masked[i], seq[i]);
        }
    }
}
