use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;

use cqa_rank::pipeline::manifest::Manifest;
use cqa_rank::pipeline::{serve, Pipeline, PipelineConfig, StageError, Variant, LABELED, QBOOST_CKPT};
use cqa_rank::synth::{self, SynthConfig};

const FULL: Variant = Variant {
    drop_cq: false,
    drop_labeling: false,
};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cqa-rank"))
}

fn tiny_config(root: &Path) -> PipelineConfig {
    let dump = root.join("dump");
    let sc = SynthConfig {
        groups: 12,
        seed: 5,
        ..SynthConfig::default()
    };
    synth::write_dump(&dump, &synth::generate(&sc)).unwrap();
    PipelineConfig {
        d: 8,
        hidden: 8,
        maps: 4,
        emb_epochs: 1,
        qboost_epochs: 2,
        ranker_epochs: 2,
        beam: 3,
        max_len: 8,
        n_valid: 10,
        n_test: 10,
        ..PipelineConfig::synth(dump, root.join("ws"))
    }
}

fn run_all(cfg: PipelineConfig) -> Pipeline {
    let p = Pipeline::new(cfg);
    p.ingest().unwrap();
    p.train_qboost().unwrap();
    p.label().unwrap();
    p.train_ranker(FULL).unwrap();
    p.tune(FULL).unwrap();
    p.evaluate(FULL, 5, None, false).unwrap();
    p
}

fn read(p: &Pipeline, rel: &str) -> Vec<u8> {
    std::fs::read(p.path(rel)).unwrap()
}

#[test]
fn missing_dump_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["--workspace"])
        .arg(dir.path().join("ws"))
        .arg("ingest")
        .arg("--dump")
        .arg(dir.path().join("nowhere"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn out_of_order_stage_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let p = Pipeline::new(cfg.clone());
    p.ingest().unwrap();
    assert!(matches!(p.train_ranker(FULL), Err(StageError::StageOrder(_))));

    let cfg_path = dir.path().join("c.toml");
    std::fs::write(&cfg_path, cfg.to_text()).unwrap();
    let out = bin().arg("--config").arg(&cfg_path).arg("train-ranker").output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn reruns_are_deterministic_and_manifests_track_config() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = run_all(tiny_config(a.path()));
    let pb = run_all(tiny_config(b.path()));
    for rel in [QBOOST_CKPT, LABELED, FULL.ranker_ckpt().as_str(), FULL.weights().as_str()] {
        assert!(read(&pa, rel) == read(&pb, rel), "{rel} differs between runs");
    }
    let before = Manifest::load(pa.ws(), "ingest").unwrap();
    let cfg = PipelineConfig { k_sim: 4, ..pa.cfg.clone() };
    Pipeline::new(cfg).ingest().unwrap();
    let after = Manifest::load(pa.ws(), "ingest").unwrap();
    assert_ne!(before.config_sha256, after.config_sha256);
    assert_eq!(before.outputs, after.outputs);
}

#[test]
fn stats_output_matches_schema() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(tiny_config(dir.path()));
    p.ingest().unwrap();
    let report = serde_json::to_value(p.stats().unwrap()).unwrap();
    let schema_path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("schema/stats.schema.json");
    let schema: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(&report).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert!(!validator.is_valid(&serde_json::json!({ "hunger": {} })));
}

#[test]
fn serve_survives_malformed_requests() {
    let dir = tempfile::tempdir().unwrap();
    let p = run_all(tiny_config(dir.path()));
    let state = Arc::new(p.recommend_state(FULL).unwrap());
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || serve(listener, state));

    let stream = TcpStream::connect(addr).unwrap();
    let mut w = stream.try_clone().unwrap();
    let mut r = BufReader::new(stream);
    let mut ask = |line: &str| {
        w.write_all(format!("{line}\n").as_bytes()).unwrap();
        let mut reply = String::new();
        r.read_line(&mut reply).unwrap();
        serde_json::from_str::<serde_json::Value>(&reply).unwrap()
    };
    assert!(ask("nonsense").get("error").is_some());
    assert!(ask(r#"{"query": "x", "k": 0}"#).get("error").is_some());
    assert!(ask(r#"{"query": "x", "extra": 1}"#).get("error").is_some());
    let ok = ask(r#"{"query": "unknown words here ?", "k": 2}"#);
    assert!(ok.get("results").is_some(), "{ok}");
}
