use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 3
[world]
num_trajectories = 1200
[pretrain]
steps = 60
eval_interval = 30
[prefs]
n_pairs = 30
[reward]
steps = 10
eval_interval = 5
[ppo]
iterations = 2
[sft]
steps = 4
[generate]
num_trajectories = 150
sweep = [0.5, 1.5]
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_linkgpt"))
        .args(["--config", dir.join("cfg.toml").to_str().unwrap(), "--out-dir", dir.to_str().unwrap()])
        .args(args)
        .env_remove("LINKGPT_OUT_DIR")
        .env_remove("LINKGPT_THREADS")
        .output()
        .unwrap();
    out
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn pipeline(dir: &Path) {
    std::fs::write(dir.join("cfg.toml"), SMALL).unwrap();
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let (net, corpus) = (p("network.txt"), p("corpus.txt"));
    let data = ["--network", &net, "--corpus", &corpus];
    let with = |extra: &[&str]| -> Vec<String> { data.iter().chain(extra).map(|s| s.to_string()).collect() };
    let call = |sub: &str, extra: &[&str]| {
        let mut a = vec![sub.to_string()];
        a.extend(with(extra));
        ok(dir, &a.iter().map(String::as_str).collect::<Vec<_>>());
    };
    ok(dir, &["synth-world"]);
    call("pretrain", &[]);
    call("build-prefs", &["--policy", &p("pretrain.ckpt")]);
    call("train-reward", &["--policy", &p("pretrain.ckpt"), "--prefs", &p("prefs.jsonl")]);
    call("finetune", &["--mode", "rltf", "--policy", &p("pretrain.ckpt"), "--reward", &p("reward.ckpt")]);
    call("finetune", &["--mode", "sft", "--policy", &p("pretrain.ckpt"), "--prefs", &p("prefs.jsonl")]);
    call("generate", &["--checkpoint", &p("rltf.ckpt")]);
    call("generate", &["--checkpoint", &p("pretrain.ckpt"), "--temperature-sweep", "--out", &p("sweep.txt")]);
    call("evaluate", &["--syn", &p("generated.txt"), "--with-baselines"]);
}

const OUTPUTS: &[&str] = &[
    "network.txt",
    "corpus.txt",
    "pretrain.ckpt",
    "pretrain.loss.csv",
    "pretrain.heldout.txt",
    "prefs.jsonl",
    "reward.ckpt",
    "reward.trace.csv",
    "rltf.ckpt",
    "rltf.trace.csv",
    "sft.ckpt",
    "sft.loss.csv",
    "generated.txt",
    "generated.txt.meta.json",
    "sweep_t0.5.txt",
    "sweep_t1.5.txt",
    "report.json",
    "report.plot.csv",
];

#[test]
fn full_pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in OUTPUTS {
        let x = std::fs::read(a.path().join(f)).unwrap_or_else(|_| panic!("missing {f}"));
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["connectivity"], 1.0);
    assert!(report["baselines"]["random_walk"].is_object());
    assert!(report["baselines"]["mmc"].is_object());
    let hash = report["provenance"]["config_hash"].as_str().unwrap().to_string();
    let meta = std::fs::read_to_string(a.path().join("generated.txt.meta.json")).unwrap();
    assert!(meta.contains(&hash) && meta.contains("checkpoint_hash"));
    let corpus = std::fs::read_to_string(a.path().join("corpus.txt")).unwrap();
    assert!(corpus.contains(&format!("# config_hash {hash}")) && corpus.contains("# seed 3"));
}

#[test]
fn unknown_config_field_exits_2_naming_it() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.toml"), "[pretrain]\nstepz = 1\n").unwrap();
    let out = run(d.path(), &["synth-world"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stepz"));
}

#[test]
fn invalid_value_exits_2() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.toml"), "[ppo]\nclip_eps = 2.0\n").unwrap();
    let out = run(d.path(), &["synth-world"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("clip_eps"));
}

#[test]
fn malformed_corpus_exits_3() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.toml"), "[world]\nnum_trajectories = 50\n").unwrap();
    ok(d.path(), &["synth-world"]);
    std::fs::write(d.path().join("bad.txt"), "1 2 x\n").unwrap();
    let net = d.path().join("network.txt");
    let bad = d.path().join("bad.txt");
    let out = run(d.path(), &["pretrain", "--network", net.to_str().unwrap(), "--corpus", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_reward_checkpoint_is_a_config_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("cfg.toml"), "[world]\nnum_trajectories = 50\n[pretrain]\nsteps = 1\n").unwrap();
    ok(d.path(), &["synth-world"]);
    let net = d.path().join("network.txt");
    let corpus = d.path().join("corpus.txt");
    let data = ["--network", net.to_str().unwrap(), "--corpus", corpus.to_str().unwrap()];
    let mut args = vec!["pretrain"];
    args.extend(data);
    ok(d.path(), &args);
    let ck = d.path().join("pretrain.ckpt");
    let mut args = vec!["finetune", "--mode", "rltf", "--policy", ck.to_str().unwrap()];
    args.extend(data);
    let out = run(d.path(), &args);
    assert_eq!(out.status.code(), Some(2));
}
