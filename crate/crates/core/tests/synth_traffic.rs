use std::collections::HashMap;

use ipred::packet::{manifest, FieldValue, Label};
use ipred::synth::{generate, oracle_next, GrammarSpec, NextPacket};

#[test]
fn same_seed_same_corpus_other_seed_differs() {
    let a = generate(&GrammarSpec::default(), 300).unwrap();
    let b = generate(&GrammarSpec::default(), 300).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.flows, b.flows);
    assert_eq!(a.oracle_json(), b.oracle_json());
    let c = generate(&GrammarSpec::with_attack_fraction(43, 0.2), 300).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn oracle_agrees_with_table_and_ends_flows() {
    let corpus = generate(&GrammarSpec::with_attack_fraction(8, 0.5), 400).unwrap();
    for flow in &corpus.flows {
        let last = flow.start + flow.len - 1;
        assert_eq!(oracle_next(&corpus.records[last]).unwrap(), NextPacket::FlowEnd);
        for i in flow.start..last {
            let (NextPacket::Packet(want), NextPacket::Packet(got)) = (corpus.next_of(i), oracle_next(&corpus.records[i]).unwrap()) else {
                panic!("packet {i} should have a successor");
            };
            // flow-level features depend on history, not on the grammar
            assert_eq!(got.ttl(), want.ttl());
            assert_eq!(got.tcp_flags(), want.tcp_flags());
            assert_eq!(got.payload_len(), want.payload_len());
            assert_eq!(got.num("flow_pkt_seq"), want.num("flow_pkt_seq"));
            assert_eq!(got.timestamp, want.timestamp);
        }
    }
}

#[test]
fn class_mix_over_ten_thousand_flows() {
    let corpus = generate(&GrammarSpec::with_attack_fraction(42, 0.2), 10_000).unwrap();
    let normal = corpus.flows.iter().filter(|f| f.label == Label::Normal).count() as f64 / 1e4;
    assert!((normal - 0.8).abs() <= 0.01, "normal share {normal}");
    for l in Label::CLASSES.iter().filter(|l| **l != Label::Normal) {
        let share = corpus.flows.iter().filter(|f| f.label == *l).count() as f64 / 1e4;
        assert!((share - 0.04).abs() <= 0.01, "{l:?} share {share}");
    }
}

#[test]
fn next_packet_is_a_function_of_the_current_one() {
    let corpus = generate(&GrammarSpec::with_attack_fraction(2, 0.5), 500).unwrap();
    let key = |i: usize| format!("{:?}", corpus.records[i].values);
    let mut seen: HashMap<String, String> = HashMap::new();
    for i in 0..corpus.records.len() {
        let next = match corpus.next_of(i) {
            NextPacket::FlowEnd => "END".to_string(),
            NextPacket::Packet(r) => format!("{:?}", (r.ttl(), r.tcp_flags(), r.payload_len(), r.num("flow_pkt_seq"))),
        };
        let prev = seen.entry(key(i)).or_insert_with(|| next.clone());
        assert_eq!(*prev, next);
    }
}

/// Best single-threshold stump over every numeric column, searched exhaustively.
fn best_stump_accuracy(xs: &[(f64, bool)]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total_attack = v.iter().filter(|x| x.1).count();
    let n = v.len();
    let mut best = 0usize;
    let mut attack_below = 0usize;
    for i in 0..=n {
        if i == n || i == 0 || v[i].0 != v[i - 1].0 {
            // attack above the cut, or attack below it
            let above = (i - attack_below) + (total_attack - attack_below);
            best = best.max(above).max(n - above);
        }
        if i < n && v[i].1 {
            attack_below += 1;
        }
    }
    best as f64 / n as f64
}

#[test]
fn a_depth_one_rule_separates_benign_from_attack() {
    let corpus = generate(&GrammarSpec::with_attack_fraction(42, 0.2), 1000).unwrap();
    let m = manifest();
    let mut perfect = Vec::new();
    for (c, f) in m.features().iter().enumerate() {
        let xs: Vec<(f64, bool)> = corpus
            .records
            .iter()
            .filter_map(|r| match &r.values[c] {
                FieldValue::Num(x) => Some((*x, r.label != Label::Normal)),
                _ => None,
            })
            .collect();
        if xs.len() == corpus.records.len() && best_stump_accuracy(&xs) == 1.0 {
            perfect.push(f.name.clone());
        }
    }
    assert!(!perfect.is_empty(), "no single field separates the classes");
}

#[test]
fn oracle_sidecar_has_one_entry_per_packet() {
    let corpus = generate(&GrammarSpec::default(), 20).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("oracle.json");
    corpus.write_oracle(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let entries = v["entries"].as_array().unwrap();
    assert_eq!(entries.len(), corpus.records.len());
    let ends = entries.iter().filter(|e| e["next"] == "FLOW_END").count();
    assert_eq!(ends, corpus.flows.len());
}

#[test]
fn bad_specs_are_rejected() {
    assert!(generate(&GrammarSpec::default(), 0).is_err());
    let mut s = GrammarSpec::default();
    s.class_mix.insert(Label::Normal, 0.9);
    assert!(generate(&s, 10).is_err());
}
