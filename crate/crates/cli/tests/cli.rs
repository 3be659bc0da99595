use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ipred(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipred"))
        .args(args)
        .current_dir(dir)
        .env_remove("IPRED_DATA_ROOT")
        .env_remove("IPRED_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.json");
    fs::copy(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/tiny.json"), &path).unwrap();
    path
}

#[test]
fn full_run_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny(d);
    let dev = ipred(d, &["dev-run", "--config", "tiny.json"]);
    assert_eq!(code(&dev), 0, "{}", String::from_utf8_lossy(&dev.stderr));
    assert!(stdout(&dev).lines().filter(|l| l.ends_with(" ran")).count() == 8, "{}", stdout(&dev));

    let cached = ipred(d, &["train-gpt", "--config", "tiny.json"]);
    assert_eq!(code(&cached), 0);
    assert!(stdout(&cached).contains("cached"));
    let forced = ipred(d, &["train-lstm", "--config", "tiny.json", "--force"]);
    assert!(stdout(&forced).contains("ran"));

    let deploy = ipred(d, &["deploy-run", "--config", "tiny.json"]);
    assert_eq!(code(&deploy), 0, "{}", String::from_utf8_lossy(&deploy.stderr));
    let report: serde_json::Value = serde_json::from_str(&stdout(&deploy)).unwrap();
    assert_eq!(report["conserved"], true);

    let rep = ipred(d, &["report", "--config", "tiny.json"]);
    assert_eq!(code(&rep), 0);
    assert!(stdout(&rep).contains("Weighted Avg"));

    let packets = d.join("data/packets.csv");
    let text = fs::read_to_string(&packets).unwrap();
    let head: Vec<&str> = text.lines().take(30).collect();
    fs::write(d.join("few.csv"), head.join("\n") + "\n").unwrap();

    let pred = ipred(d, &["predict", "--config", "tiny.json", "--input", "few.csv"]);
    assert_eq!(code(&pred), 0, "{}", String::from_utf8_lossy(&pred.stderr));
    assert_eq!(stdout(&pred).lines().count(), 30);

    let cls = ipred(d, &["classify", "--config", "tiny.json", "--input", "few.csv", "--mode", "binary"]);
    assert_eq!(code(&cls), 0, "{}", String::from_utf8_lossy(&cls.stderr));
    assert_eq!(stdout(&cls).lines().count(), 30);
    // multiclass was not trained in this config
    assert_eq!(code(&ipred(d, &["classify", "--config", "tiny.json", "--input", "few.csv"])), 3);

    let judge = ipred(d, &["judge", "--config", "tiny.json", "--a", "ttl=64", "--b", "ttl=64"]);
    assert_eq!(code(&judge), 0, "{}", String::from_utf8_lossy(&judge.stderr));
    assert_eq!(stdout(&judge).lines().count(), 2);

    assert_eq!(code(&ipred(d, &["predict", "--config", "tiny.json", "--input", "absent.csv"])), 3);
}

#[test]
fn stages_one_at_a_time() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny(d);
    for cmd in ["ingest", "features", "tokenize"] {
        let o = ipred(d, &[cmd, "--config", "tiny.json"]);
        assert_eq!(code(&o), 0, "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert!(d.join("data/vocab.json").exists());
    // pairs need the tokenizer only; the evaluator needs the pairs
    assert_eq!(code(&ipred(d, &["train-bert", "--config", "tiny.json"])), 3);
}

#[test]
fn synth_writes_corpus_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ipred(d, &["synth", "--flows", "12", "--seed", "3", "--out", "."]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let first = fs::read(d.join("packets.csv")).unwrap();
    assert!(d.join("oracle.json").exists());
    ipred(d, &["synth", "--flows", "12", "--seed", "3", "--out", "."]);
    assert_eq!(fs::read(d.join("packets.csv")).unwrap(), first);
    assert_eq!(code(&ipred(d, &["synth", "--flows", "12", "--attack-fraction", "1.5", "--out", "."])), 2);
}

#[test]
fn data_root_override() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    tiny(d);
    let o = Command::new(env!("CARGO_BIN_EXE_ipred"))
        .args(["ingest", "--config", "tiny.json"])
        .current_dir(d)
        .env("IPRED_DATA_ROOT", d.join("elsewhere"))
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(d.join("elsewhere/packets.csv").exists());
    assert!(!d.join("data/packets.csv").exists());
}

#[test]
fn exit_codes_for_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&ipred(d, &["dev-run"])), 2);
    assert_eq!(code(&ipred(d, &["dev-run", "--config", "absent.json"])), 2);
    fs::write(d.join("broken.json"), "{").unwrap();
    assert_eq!(code(&ipred(d, &["dev-run", "--config", "broken.json"])), 2);
    fs::write(d.join("typo.json"), r#"{"seed": 1, "sede": 2}"#).unwrap();
    assert_eq!(code(&ipred(d, &["ingest", "--config", "typo.json"])), 2);
    assert_eq!(code(&ipred(d, &["no-such-command"])), 2);
    tiny(d);
    assert_eq!(code(&ipred(d, &["deploy-run", "--config", "tiny.json"])), 3);
    let empty = ipred(d, &["report", "--config", "tiny.json"]);
    assert_eq!(code(&empty), 0);
    assert!(stdout(&empty).contains("0 of 8 stages"));
}
