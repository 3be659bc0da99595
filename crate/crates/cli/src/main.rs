use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ipred::models::bert::PairLabel;
use ipred::models::lstm::ClassLabelMap;
use ipred::packet::{load_packets, write_records_file, Label, PacketRecord};
use ipred::pipeline::{
    classify_packets, judge_pairs, predict_packets, read_pairs, Manifest, Pipeline, PipelineError, RunOptions,
    Source, Stage, StageOutcome,
};
use ipred::synth::{generate, GrammarSpec};

#[derive(Parser)]
#[command(name = "ipred", version, about = "Next-packet intrusion prediction: train, evaluate and replay traffic")]
struct Cli {
    /// Pipeline config (JSON). Relative paths inside it resolve against its directory.
    #[arg(long, short, global = true, env = "IPRED_CONFIG")]
    config: Option<PathBuf>,
    /// Rerun stages even when the manifest says they are current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read the configured source into data/packets.csv.
    Ingest,
    /// Split flows, select and scale features.
    Features,
    /// Write one text corpus per split and train the tokenizer.
    Tokenize,
    /// Write a synthetic corpus and its next-packet oracle.
    Synth {
        #[arg(long)]
        flows: Option<usize>,
        #[arg(long)]
        attack_fraction: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory; defaults to the data root.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the next-packet generator.
    TrainGpt,
    /// Draw consecutive / non-consecutive packet pairs.
    BuildPairs,
    /// Train the pair evaluator.
    TrainBert,
    /// Train the packet classifiers.
    TrainLstm,
    /// Predict the packet after every packet of a capture or CSV.
    Predict {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        label: Option<Label>,
    },
    /// Ask the pair evaluator whether B directly follows A.
    Judge {
        #[arg(long, requires = "b", conflicts_with = "pairs")]
        a: Option<String>,
        #[arg(long, requires = "a")]
        b: Option<String>,
        /// CSV with columns a,b,label.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
    /// Classify the window ending at every packet of a capture or CSV.
    Classify {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        label: Option<Label>,
        #[arg(long, value_parser = parse_mode, default_value = "multiclass")]
        mode: ClassLabelMap,
    },
    /// Run every enabled development stage.
    DevRun,
    /// Replay the deployment stream through generator, evaluator and classifier.
    DeployRun,
    /// Print the stored evaluation reports.
    Report,
}

fn parse_mode(s: &str) -> Result<ClassLabelMap, String> {
    match s {
        "binary" => Ok(ClassLabelMap::Binary),
        "multiclass" => Ok(ClassLabelMap::Multiclass),
        _ => Err(format!("expected binary or multiclass, got {s:?}")),
    }
}

/// Errors outside the pipeline proper: bad flags are config errors, I/O
/// while running a command is a stage failure.
fn runtime(stage: &str) -> impl Fn(String) -> PipelineError + '_ {
    move |reason| PipelineError::StageFailure { stage: stage.to_string(), reason }
}

fn pipeline(cli: &Cli) -> Result<Pipeline, PipelineError> {
    match &cli.config {
        Some(path) => Pipeline::load(path),
        None => Err(PipelineError::Config("--config is required for this command".into())),
    }
}

fn read_input(path: &Path, label: Option<Label>, stage: &str) -> Result<Vec<PacketRecord>, PipelineError> {
    load_packets(path, label).map_err(|e| runtime(stage)(format!("{}: {e}", path.display())))
}

fn print_outcomes(outcomes: &[(Stage, StageOutcome)]) {
    for (stage, outcome) in outcomes {
        let word = match outcome {
            StageOutcome::Ran => "ran",
            StageOutcome::Cached => "cached",
            StageOutcome::Disabled => "disabled",
        };
        println!("{:<12} {word}", stage.name());
    }
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let opts = RunOptions { force: cli.force };
    let single = |stage: Stage| -> Result<(), PipelineError> {
        let p = pipeline(cli)?;
        let outcome = p.run_stage(stage, opts)?;
        print_outcomes(&[(stage, outcome)]);
        Ok(())
    };
    match &cli.command {
        Command::Ingest => single(Stage::Ingest),
        Command::Features => single(Stage::Features),
        Command::Tokenize => single(Stage::Tokenize),
        Command::TrainGpt => single(Stage::TrainGpt),
        Command::BuildPairs => single(Stage::BuildPairs),
        Command::TrainBert => single(Stage::TrainBert),
        Command::TrainLstm => single(Stage::TrainLstm),
        Command::DevRun => {
            let p = pipeline(cli)?;
            let outcomes = p.run_dev(opts)?;
            print_outcomes(&outcomes);
            println!("config {}", p.config_hash());
            Ok(())
        }
        Command::DeployRun => {
            let p = pipeline(cli)?;
            let report = p.run_deploy()?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(())
        }
        Command::Synth { flows, attack_fraction, seed, out } => synth(cli, *flows, *attack_fraction, *seed, out.as_deref()),
        Command::Predict { input, label } => {
            let p = pipeline(cli)?;
            let records = read_input(input, *label, "predict")?;
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            let fail = |e: csv::Error| runtime("predict")(e.to_string());
            w.write_record(["flow_index", "position", "next"]).map_err(fail)?;
            for x in predict_packets(&p, &records)? {
                w.write_record([x.flow_index.to_string(), x.position.to_string(), x.next]).map_err(fail)?;
            }
            w.flush().map_err(|e| runtime("predict")(e.to_string()))
        }
        Command::Judge { a, b, pairs } => {
            let p = pipeline(cli)?;
            let items: Vec<(String, String, Option<PairLabel>)> = match (a, b, pairs) {
                (Some(a), Some(b), None) => vec![(a.clone(), b.clone(), None)],
                (None, None, Some(path)) => read_pairs(path)
                    .map_err(|e| runtime("judge")(format!("{}: {e}", path.display())))?
                    .into_iter()
                    .map(|x| (x.a, x.b, Some(x.label)))
                    .collect(),
                _ => return Err(PipelineError::Config("judge needs either --a and --b, or --pairs".into())),
            };
            println!("label,p_consecutive,p_non_consecutive,expected");
            let (mut right, mut known) = (0usize, 0usize);
            let queries: Vec<(String, String)> = items.iter().map(|(a, b, _)| (a.clone(), b.clone())).collect();
            for ((label, probs), (_, _, expected)) in judge_pairs(&p, &queries)?.into_iter().zip(&items) {
                if let Some(e) = expected {
                    known += 1;
                    right += (*e == label) as usize;
                }
                println!("{label},{:.6},{:.6},{}", probs[0], probs[1], expected.map(|e| e.as_str()).unwrap_or(""));
            }
            if known > 0 {
                eprintln!("accuracy {:.4} ({right}/{known})", right as f64 / known as f64);
            }
            Ok(())
        }
        Command::Classify { input, label, mode } => {
            let p = pipeline(cli)?;
            let records = read_input(input, *label, "classify")?;
            let out = classify_packets(&p, &records, *mode)?;
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "flow_index,class,confidence");
            for x in out {
                let conf = x.probs.iter().copied().fold(0.0, f64::max);
                let _ = writeln!(stdout, "{},{},{conf:.6}", x.flow_index, x.class);
            }
            Ok(())
        }
        Command::Report => report(cli),
    }
}

fn synth(cli: &Cli, flows: Option<usize>, attack: Option<f64>, seed: Option<u64>, out: Option<&Path>) -> Result<(), PipelineError> {
    let p = match &cli.config {
        Some(_) => Some(pipeline(cli)?),
        None => None,
    };
    let cfg = p.as_ref().map(|p| p.config.clone()).unwrap_or_default();
    let (def_flows, def_attack) = match cfg.source {
        Source::Synth { flows, attack_fraction } => (flows, attack_fraction),
        Source::File { .. } => (600, 0.5),
    };
    let seed = seed.unwrap_or(cfg.seed);
    let attack = attack.unwrap_or(def_attack);
    let spec = match (&cfg.grammar, attack == def_attack) {
        (Some(g), true) => GrammarSpec { seed, ..g.clone() },
        _ => GrammarSpec::with_attack_fraction(seed, attack),
    };
    spec.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
    let dir = match (out, &p) {
        (Some(o), _) => o.to_path_buf(),
        (None, Some(p)) => p.ws.data.clone(),
        (None, None) => return Err(PipelineError::Config("synth needs --out or --config".into())),
    };
    let fail = runtime("synth");
    let corpus = generate(&spec, flows.unwrap_or(def_flows)).map_err(|e| PipelineError::Config(e.to_string()))?;
    write_records_file(&dir.join("packets.csv"), &corpus.records).map_err(|e| fail(e.to_string()))?;
    corpus.write_oracle(&dir.join("oracle.json")).map_err(|e| fail(e.to_string()))?;
    println!("{} packets in {} flows written to {}", corpus.records.len(), corpus.flows.len(), dir.display());
    Ok(())
}

fn report(cli: &Cli) -> Result<(), PipelineError> {
    let p = pipeline(cli)?;
    let dir = &p.ws.reports;
    let manifest = Manifest::load(&p.manifest_path()).map_err(runtime("report"))?;
    println!("config {}", p.config_hash());
    println!("manifest: {} of {} stages recorded", manifest.stages.len(), Stage::ALL.len());
    let json = |name: &str| -> Option<serde_json::Value> {
        let text = std::fs::read_to_string(dir.join(name)).ok()?;
        serde_json::from_str(&text).ok()
    };
    if let Some(g) = json("gpt_eval.json") {
        let t = &g["test"];
        println!("\nGenerator (held-out flows)");
        println!("  next line  {} / {}  accuracy {}", t["lines_correct"], t["lines_total"], t["line_accuracy"]);
        println!("  flow end   {} / {}  accuracy {}", t["ends_correct"], t["ends_total"], t["end_accuracy"]);
    }
    if let Some(j) = json("generator_judged.json") {
        let e = &j["evaluation"];
        println!("  judged consecutive {} / {}  ({})", e["consecutive"], e["packets"], e["fraction"]);
    }
    for (title, stem) in [
        ("Pair evaluator", "bert_eval"),
        ("Classifier (binary)", "lstm_binary"),
        ("Classifier (multiclass)", "lstm_multiclass"),
    ] {
        if let Ok(table) = std::fs::read_to_string(dir.join(format!("{stem}.txt"))) {
            println!("\n{title}\n{table}");
            if let Some(auc) = json(&format!("{stem}.json")).and_then(|v| v["report"]["roc"]["auc"].as_f64()) {
                println!("AUC {auc:.4}");
            }
        }
    }
    if let Some(d) = json("deploy_report.json") {
        println!("\nDeployment\n{}", serde_json::to_string_pretty(&d["counts"]).expect("json"));
        println!("predicted attack fraction {}  true next-packet attack fraction {}", d["predicted_attack_fraction"], d["true_next_attack_fraction"]);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
