use std::path::{Path, PathBuf};

use quist::cli::{main_with, RunManifest};
use quist::config::RunConfig;
use quist::evaluation::EvalReport;

fn quist(args: &[&str]) -> i32 {
    main_with(std::iter::once("quist").chain(args.iter().copied()))
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Toy fixtures plus a config shrunk to run in seconds.
fn tiny_setup(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    assert_eq!(quist(&["toy-data", "--out", path_str(&data)]), 0);
    let mut cfg = RunConfig::load(&data.join("config.toml")).unwrap();
    cfg.model.d_model = 16;
    cfg.model.n_heads = 2;
    cfg.model.n_layers = 1;
    cfg.model.d_ff = 32;
    cfg.pretrain.steps = 4;
    cfg.qtc.optim.max_steps = 4;
    cfg.qtc.optim.eval_every = 2;
    cfg.qg.optim.max_steps = 4;
    cfg.qg.optim.eval_every = 2;
    cfg.generation.limit = Some(3);
    cfg.generation.beam_size = 2;
    cfg.sweep.model_seeds = vec![0, 1];
    cfg.sweep.exemplar_seeds = vec![0, 1];
    let path = dir.join("tiny.toml");
    std::fs::write(&path, cfg.to_toml().unwrap()).unwrap();
    path
}

fn pipeline(config: &Path, out: &Path) {
    std::env::set_var(quist::cli::CACHE_ENV, out.join("cache"));
    for cmd in [
        "annotate",
        "build-bank",
        "train-qtc",
        "train-qg",
        "generate",
        "evaluate",
        "codeswitch-report",
        "augment",
    ] {
        let code = quist(&["--config", path_str(config), "--out", path_str(out), cmd]);
        assert_eq!(code, 0, "{cmd} failed");
        assert!(out.join(format!("manifest-{cmd}.json")).exists(), "{cmd} wrote no manifest");
    }
}

#[test]
fn help_and_bad_flags() {
    assert_eq!(quist(&["--help"]), 0);
    assert_eq!(quist(&["--version"]), 0);
    assert_eq!(quist(&["--no-such-flag", "annotate"]), 2);
    assert_eq!(quist(&["frobnicate"]), 2);
}

#[test]
fn invalid_config_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_setup(dir.path());
    let out = dir.path().join("out");
    let c = path_str(&config);
    assert_eq!(quist(&["--config", c, "--out", path_str(&out), "--backend", "external", "annotate"]), 2);
    assert_eq!(quist(&["--config", c, "--out", path_str(&out), "--backend", "tpu", "annotate"]), 2);
    assert_eq!(quist(&["--config", c, "--out", path_str(&out), "generate"]), 2);
    assert_eq!(quist(&["--config", "/nonexistent.toml", "--out", path_str(&out), "annotate"]), 2);

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[paths]\ntrain_corpus = \"missing.jsonl\"\n").unwrap();
    assert_eq!(quist(&["--config", path_str(&bad), "--out", path_str(&out), "annotate"]), 2);
    std::fs::write(&bad, "seed = 1\nunknown_key = 3\n").unwrap();
    assert_eq!(quist(&["--config", path_str(&bad), "--out", path_str(&out), "annotate"]), 2);
    assert!(!out.exists());
}

#[test]
fn pipeline_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_setup(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    pipeline(&config, &a);
    pipeline(&config, &b);

    for name in ["report.json", "generations.jsonl", "bank.json", "codeswitch.csv", "synthetic.jsonl"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical runs");
    }
    let reports: Vec<EvalReport> = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].language, "qx");
    assert_eq!(reports[0].code_switch.values().sum::<usize>(), 3);

    let manifest: RunManifest =
        serde_json::from_slice(&std::fs::read(a.join("manifest-generate.json")).unwrap()).unwrap();
    assert_eq!(manifest.command, "generate");
    assert_eq!(manifest.backend, "reference");
    assert_eq!(manifest.mode, "quist");
    assert_eq!(manifest.artifacts, vec!["generations.jsonl".to_string()]);
    let cfg = RunConfig::load(&config).unwrap();
    assert_eq!(manifest.config_hash, cfg.hash().unwrap());
    assert!(a.join("synthetic.provenance.json").exists());
    assert!(a.join("qtc_eval.json").exists());

    let seeded = dir.path().join("seeded");
    pipeline_with_seed(&config, &seeded, "9");
    let m: RunManifest = serde_json::from_slice(&std::fs::read(seeded.join("manifest-annotate.json")).unwrap()).unwrap();
    assert_eq!(m.seed, 9);
    assert_ne!(m.component_seeds, manifest.component_seeds);
}

fn pipeline_with_seed(config: &Path, out: &Path, seed: &str) {
    let code = quist(&["--config", path_str(config), "--out", path_str(out), "--seed", seed, "annotate"]);
    assert_eq!(code, 0);
}

#[test]
fn sweep_writes_one_run_per_seed_pair() {
    let dir = tempfile::tempdir().unwrap();
    let config = tiny_setup(dir.path());
    let out = dir.path().join("out");
    std::env::set_var(quist::cli::CACHE_ENV, out.join("cache"));
    assert_eq!(quist(&["--config", path_str(&config), "--out", path_str(&out), "sweep"]), 0);
    let runs: Vec<serde_json::Value> =
        serde_json::from_slice(&std::fs::read(out.join("sweep/runs.json")).unwrap()).unwrap();
    assert_eq!(runs.len(), 4);
    let reports: Vec<EvalReport> =
        serde_json::from_slice(&std::fs::read(out.join("sweep/report.json")).unwrap()).unwrap();
    assert!(reports[0].metrics.values().all(|m| m.n_runs == 4));
}
