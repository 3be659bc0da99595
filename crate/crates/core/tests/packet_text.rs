use ipred::features::{FeatureConfig, FeaturePipeline};
use ipred::packet::{manifest, FieldValue, Label, PacketRecord};
use ipred::synth::{generate, GrammarSpec};
use ipred::text::{
    column_indices, packet_line, parse_line, parse_packet, render_number, serialize_flow, train_bpe, BpeVocab, Special,
    TextError, TokenSequence, BASE_VOCAB,
};
use proptest::prelude::*;
use std::sync::OnceLock;

struct Fixture {
    corpus: String,
    selected: Vec<String>,
    vocab: BpeVocab,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let synth = generate(&GrammarSpec::with_attack_fraction(42, 0.5), 150).unwrap();
        let selected = FeaturePipeline::fit(&synth.records, &FeatureConfig::default()).unwrap().selected().to_vec();
        let mut corpus = String::new();
        for f in &synth.flows {
            corpus.push_str(&serialize_flow(synth.flow_records(f), &selected).unwrap());
        }
        let vocab = train_bpe(&corpus, 1024).unwrap();
        Fixture { corpus, selected, vocab }
    })
}

#[test]
fn single_candidate_pair_gives_one_merge() {
    let v = train_bpe("aaaa", 263).unwrap();
    let a = b'a' as u32 + 6;
    assert_eq!(v.merges(), &[(a, a)]);
    assert_eq!(v.encode_bytes(b"aaaa"), vec![262, 262]);
}

#[test]
fn base_vocab_means_byte_fallback() {
    let v = train_bpe("proto=6 proto=6 proto=6", BASE_VOCAB).unwrap();
    assert!(v.merges().is_empty());
    assert_eq!(v.encode_bytes(b"ab").len(), 2);
    assert!(matches!(train_bpe("x", BASE_VOCAB - 1), Err(TextError::VocabTooSmall { .. })));
    assert!(matches!(train_bpe("<|flow_begin|>\n<|flow_end|>\n", 300), Err(TextError::CorpusEmpty)));
}

#[test]
fn empty_text_round_trips() {
    let v = &fixture().vocab;
    let seq = v.encode("");
    assert!(seq.is_empty());
    assert_eq!(v.decode(&seq).unwrap(), "");
}

#[test]
fn specials_have_reserved_ids() {
    let ids: Vec<u32> = Special::ALL.iter().map(|s| s.id()).collect();
    assert_eq!(ids, [0, 1, 2, 3, 4, 5]);
    let v = &fixture().vocab;
    for s in Special::ALL {
        assert_eq!(v.encode(s.marker()).ids, vec![s.id()]);
    }
    // learned ids start past bytes and specials
    assert!(v.merges().iter().all(|&(a, b)| a >= 6 && b >= 6));
}

#[test]
fn unknown_id_is_an_error() {
    let v = &fixture().vocab;
    let bad = TokenSequence::from_ids(vec![v.vocab_size() as u32]);
    assert!(matches!(v.decode(&bad), Err(TextError::UnknownId { .. })));
}

#[test]
fn merges_are_deterministic() {
    let f = fixture();
    let again = train_bpe(&f.corpus, 1024).unwrap();
    assert_eq!(again.merges(), f.vocab.merges());
    assert_eq!(again.to_json(), f.vocab.to_json());
    let loaded = BpeVocab::from_json(&f.vocab.to_json()).unwrap();
    assert_eq!(loaded.merges(), f.vocab.merges());
}

#[test]
fn whole_corpus_round_trips() {
    let f = fixture();
    let seq = f.vocab.encode(&f.corpus);
    assert_eq!(f.vocab.decode(&seq).unwrap(), f.corpus);
    assert_eq!(f.vocab.decode_bytes(&f.vocab.encode_bytes(f.corpus.as_bytes())).unwrap(), f.corpus.as_bytes());
}

#[test]
fn flow_boundaries_are_first_and_last() {
    let f = fixture();
    let synth = generate(&GrammarSpec::with_attack_fraction(9, 0.5), 10).unwrap();
    for flow in &synth.flows {
        let text = serialize_flow(synth.flow_records(flow), &f.selected).unwrap();
        let ids = f.vocab.encode(text.trim_end_matches('\n')).ids;
        assert_eq!(ids.iter().filter(|&&i| i == Special::FlowBegin.id()).count(), 1);
        assert_eq!(ids.iter().filter(|&&i| i == Special::FlowEnd.id()).count(), 1);
        assert_eq!(ids[0], Special::FlowBegin.id());
        assert_eq!(*ids.last().unwrap(), Special::FlowEnd.id());
    }
}

#[test]
fn packet_lines_never_grow_under_encoding() {
    let f = fixture();
    for line in f.corpus.lines().filter(|l| !l.starts_with("<|")) {
        let n = f.vocab.encode(line).len();
        assert!(n <= line.len());
    }
}

fn record(flow: u32, k: usize) -> PacketRecord {
    let mut r = PacketRecord::empty(k as f64, Label::Normal);
    r.flow_index = flow;
    r.set_num("ttl", 64.0);
    r.set_num("iat", 0.000123 * k as f64);
    r.set("eth_type", FieldValue::Cat("ipv4".into()));
    r
}

#[test]
fn flow_serialization_shapes() {
    let sel: Vec<String> = ["eth_type", "ttl", "iat", "src_port"].iter().map(|s| s.to_string()).collect();
    assert_eq!(serialize_flow(&[], &sel).unwrap(), "<|flow_begin|>\n<|flow_end|>\n");
    let two = serialize_flow(&[record(3, 0), record(3, 1)], &sel).unwrap();
    assert_eq!(two.lines().count(), 4);
    assert!(!two.lines().nth(1).unwrap().contains('\n'));
    assert!(matches!(serialize_flow(&[record(1, 0), record(2, 1)], &sel), Err(TextError::MixedFlows(1, 2))));

    let cols = column_indices(&sel).unwrap();
    let line = two.lines().nth(2).unwrap();
    let back = parse_packet(line, &cols).unwrap();
    for &c in &cols {
        assert_eq!(back.values[c], record(3, 1).values[c]);
    }
    assert!(parse_line("ttl=64", &cols).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 2000, ..ProptestConfig::default() })]

    #[test]
    fn arbitrary_bytes_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
        let v = &fixture().vocab;
        prop_assert_eq!(v.decode_bytes(&v.encode_bytes(&bytes)).unwrap(), bytes);
    }

    #[test]
    fn arbitrary_text_round_trips(s in "\\PC{0,80}") {
        let v = &fixture().vocab;
        prop_assert_eq!(v.decode(&v.encode(&s)).unwrap(), s);
    }

    #[test]
    fn number_rendering_is_injective(a in any::<f64>().prop_filter("finite", |x| x.is_finite()), b in -1e6f64..1e6) {
        for x in [a, b, b.round(), (b * 1e4).round() / 1e4] {
            prop_assert_eq!(render_number(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn packet_lines_round_trip(vals in proptest::collection::vec(-1e7f64..1e7, 26)) {
        let cols = column_indices(&fixture().selected).unwrap();
        let m = manifest();
        let mut r = PacketRecord::empty(0.0, Label::Unlabeled);
        for (&c, x) in cols.iter().zip(&vals) {
            r.values[c] = if m.features()[c].name == "eth_type" { FieldValue::Cat("ipv4".into()) } else { FieldValue::Num(*x) };
        }
        let back = parse_packet(&packet_line(&r, &cols), &cols).unwrap();
        prop_assert_eq!(back.values, r.values);
    }
}
