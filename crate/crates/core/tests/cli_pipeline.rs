use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use swvae::cli::{sha256_file, Manifest, RunConfig, RunSummary};
use swvae::metrics::EvalReport;
use swvae::signal::read_wav;

const TINY: &str = r#"
seed = 3
jobs = 1

[data]
train_utterances = 4
test_utterances = 2
snr_grid = [0.0, 10.0]

[train]
epochs = 2

[enhancer]
em_iterations = 3
mc_samples = 3
"#;

fn swvae(args: &[&str], out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_swvae"));
    cmd.args(args).env_remove("SWVAE_OUT").env("RUST_LOG", "warn");
    if let Some(o) = out {
        cmd.env("SWVAE_OUT", o);
    }
    cmd.output().expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn full_pipeline_through_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let out = tmp.path().join("run");
    let c = config.to_str().unwrap();
    let o = out.to_str().unwrap();

    for cmd in ["synth", "train-vae", "enhance", "eval"] {
        ok(&swvae(&[cmd, "--config", c, "--out", o], None));
        assert!(out.join(format!("config.{cmd}.toml")).exists());
    }

    let manifest = Manifest::load(&out.join("data")).unwrap();
    assert_eq!(manifest.split("train").count(), 4);
    assert_eq!(manifest.split("test").count(), 2);
    for f in &manifest.files {
        let p = out.join("data").join(&f.path);
        assert_eq!(sha256_file(&p).unwrap(), f.sha256, "{}", f.path);
        assert_eq!(fs::metadata(&p).unwrap().len(), f.bytes);
    }

    assert!(out.join("models/a-vae.bin").exists() && out.join("models/av-vae.bin").exists());
    assert!(out.join("models/loss_curves.json").exists());

    // 2 utterances x 2 SNRs x {clean, occluded}
    let enhanced = out.join("enhanced");
    let wavs = fs::read_dir(&enhanced).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "wav")).count();
    assert_eq!(wavs, 8);
    let u = manifest.split("test").next().unwrap();
    let run = format!("{}_snr0_clean", u.id);
    let w = read_wav(enhanced.join(format!("{run}.wav"))).unwrap();
    let clean = read_wav(out.join("data").join(&u.clean)).unwrap();
    assert_eq!(w.samples.len(), clean.samples.len());
    let trace = fs::read_to_string(enhanced.join(format!("{run}.jsonl"))).unwrap();
    assert_eq!(trace.lines().count(), 3);
    for line in trace.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["iteration", "elbo", "mean_r", "is_divergence"] {
            assert!(v.get(key).is_some(), "{key} missing in {line}");
        }
    }
    let summary: RunSummary = serde_json::from_str(&fs::read_to_string(enhanced.join(format!("{run}.json"))).unwrap()).unwrap();
    assert_eq!(summary.shrinkage_violations, 0);
    assert_eq!(summary.final_tau.len(), 2);

    let report: EvalReport = serde_json::from_str(&fs::read_to_string(out.join("reports/report.json")).unwrap()).unwrap();
    assert_eq!(report.runs.len(), 8);
    assert_eq!(report.conditions.len(), 4);
    let table = fs::read_to_string(out.join("reports/table.txt")).unwrap();
    assert!(table.contains("input") && table.contains("occluded"), "{table}");
}

#[test]
fn output_root_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("c.toml");
    fs::write(&config, format!("out = \"{}\"\n{TINY}", tmp.path().join("from-file").display())).unwrap();
    let c = config.to_str().unwrap();

    ok(&swvae(&["synth", "--config", c], None));
    assert!(tmp.path().join("from-file/data/manifest.json").exists());

    let env_dir = tmp.path().join("from-env");
    ok(&swvae(&["synth", "--config", c], Some(&env_dir)));
    assert!(env_dir.join("data/manifest.json").exists());

    let flag_dir = tmp.path().join("from-flag");
    ok(&swvae(&["synth", "--config", c, "--out", flag_dir.to_str().unwrap(), "--seed", "9"], Some(&env_dir)));
    let echoed = RunConfig::from_toml(&fs::read_to_string(flag_dir.join("config.synth.toml")).unwrap()).unwrap();
    assert_eq!(echoed.seed, 9);
    assert_eq!(echoed.out, flag_dir);
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = out.to_str().unwrap();

    let missing = swvae(&["synth", "--config", "/nonexistent/cfg.toml", "--out", o], None);
    assert_eq!(missing.status.code(), Some(2));

    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[data]\nnot_a_field = 1\n").unwrap();
    assert_eq!(swvae(&["synth", "--config", bad.to_str().unwrap(), "--out", o], None).status.code(), Some(2));

    let zero_jobs = swvae(&["synth", "--jobs", "0", "--seed", "1", "--out", o], None);
    assert!(zero_jobs.status.success() || zero_jobs.status.code() == Some(2));

    // enhancing without trained models is an I/O error
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let c = config.to_str().unwrap();
    ok(&swvae(&["synth", "--config", c, "--out", o], None));
    let no_models = swvae(&["enhance", "--config", c, "--out", o], None);
    assert_eq!(no_models.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&no_models.stderr).contains("a-vae.bin"));

    assert!(!swvae(&["frobnicate"], None).status.success());
}

#[test]
fn synth_is_reproducible_and_seed_sensitive() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let c = config.to_str().unwrap();
    let run = |name: &str, seed: &str| {
        let dir = tmp.path().join(name);
        ok(&swvae(&["synth", "--config", c, "--seed", seed, "--out", dir.to_str().unwrap()], None));
        Manifest::load(&dir.join("data")).unwrap().files
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let c6 = run("c", "6");
    assert_eq!(a, b);
    assert_ne!(a, c6);
}
