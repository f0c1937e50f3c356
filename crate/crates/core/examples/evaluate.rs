//! Runs the synth / train-vae / enhance / eval pipeline on a tiny config.
use swvae::cli::{cmd_enhance, cmd_eval, cmd_synth, cmd_train_vae, Overrides, RunConfig};

fn main() -> swvae::Result<()> {
    let out = std::env::temp_dir().join("swvae_evaluate_example");
    let mut cfg = RunConfig::load(None, &Overrides { seed: Some(4), out: Some(out), jobs: Some(1) })?;
    cfg.data.train_utterances = 20;
    cfg.data.test_utterances = 2;
    cfg.data.snr_grid = vec![0.0, 10.0];
    cfg.train.epochs = 5;
    cfg.enhancer.em_iterations = 10;
    cfg.enhancer.mc_samples = 5;

    let manifest = cmd_synth(&cfg)?;
    println!("synth: {} utterances, {} files", manifest.utterances.len(), manifest.files.len());
    cmd_train_vae(&cfg)?;
    let runs = cmd_enhance(&cfg)?;
    println!("enhance: {} runs", runs.len());
    let report = cmd_eval(&cfg)?;
    print!("{}", report.table());
    println!("outputs under {}", cfg.out.display());
    Ok(())
}
