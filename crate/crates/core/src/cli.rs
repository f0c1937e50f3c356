//! Library side of the command-line front end: the run configuration and
//! the four commands `synth`, `train-vae`, `enhance` and `eval`.
//!
//! Every command reads and writes below one output root:
//!
//! ```text
//! <out>/config.<command>.toml     resolved configuration of the last run
//! <out>/data/manifest.json        written files with sha256, utterance index
//! <out>/data/{clean,noise,mix,visual,labels}/...
//! <out>/models/{a-vae,av-vae}.{bin,json}
//! <out>/enhanced/<run>.{wav,jsonl,json}, index.json
//! <out>/reports/{report.json,runs.jsonl,table.txt}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hmm::SwitchPosterior;
use crate::metrics::{evaluate_run, Condition, EvalReport, RunMetrics};
use crate::numerics::{RealMatrix, Rng};
use crate::pipeline::{enhance_waveform, synth_corpus, training_set, train_model};
use crate::signal::{
    occlude, read_features, read_wav, synth_noise, mix_at_snr, write_features, write_wav, CleanUtterance, NoiseKind,
    StftConfig, SynthConfig, VisualSequence, WavFormat,
};
use crate::swvae::EnhancerConfig;
use crate::vae::{checkpoint, load_model, EncoderNoise, ModelKind, TrainConfig, VaeArch, VaeModel};

/// Environment variable that overrides the configured output root.
pub const OUT_ENV: &str = "SWVAE_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train_utterances: usize,
    pub test_utterances: usize,
    pub regimes: usize,
    pub duration_secs: f64,
    pub snr_grid: Vec<f64>,
    pub noise_kinds: Vec<NoiseKind>,
    pub occlusion_fraction: f64,
    pub occlusion_burst: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            train_utterances: 200,
            test_utterances: 20,
            regimes: 2,
            duration_secs: 1.0,
            snr_grid: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            noise_kinds: vec![NoiseKind::White, NoiseKind::Pink, NoiseKind::Brown],
            occlusion_fraction: 1.0 / 3.0,
            occlusion_burst: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads for per-utterance parallelism; 0 lets the pool decide.
    pub jobs: usize,
    pub stft: StftConfig,
    pub synth: SynthConfig,
    pub data: DataConfig,
    pub vae: VaeArch,
    pub train: TrainConfig,
    pub enhancer: EnhancerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("swvae-out"),
            jobs: 1,
            stft: StftConfig {
                window_len: 512,
                hop: 128,
                ..StftConfig::default()
            },
            synth: SynthConfig::default(),
            data: DataConfig::default(),
            vae: VaeArch {
                latent_dim: 8,
                hidden: vec![64],
                ..VaeArch::default()
            },
            train: TrainConfig {
                epochs: 30,
                batch_size: 32,
                learning_rate: 2e-3,
                calibrate: true,
                encoder_noise: Some(EncoderNoise::default()),
            },
            enhancer: EnhancerConfig {
                em_iterations: 30,
                ..EnhancerConfig::default()
            },
        }
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads `path` (or starts from defaults), then applies the output-root
    /// environment variable and finally the explicit overrides.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(out) = std::env::var_os(OUT_ENV) {
            cfg.out = PathBuf::from(out);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = s;
        }
        if let Some(o) = &overrides.out {
            cfg.out = o.clone();
        }
        if let Some(j) = overrides.jobs {
            cfg.jobs = j;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let d = &self.data;
        if d.train_utterances == 0 || d.test_utterances == 0 {
            return bad("train_utterances and test_utterances must be positive".into());
        }
        if d.regimes == 0 || !(d.duration_secs > 0.0) {
            return bad(format!("regimes {} / duration {}", d.regimes, d.duration_secs));
        }
        if d.snr_grid.is_empty() || d.snr_grid.iter().any(|s| !s.is_finite()) {
            return bad("snr_grid must hold finite values".into());
        }
        if d.noise_kinds.is_empty() {
            return bad("noise_kinds must not be empty".into());
        }
        if !(0.0..=1.0).contains(&d.occlusion_fraction) || d.occlusion_burst == 0 {
            return bad(format!("occlusion {} / burst {}", d.occlusion_fraction, d.occlusion_burst));
        }
        if self.stft.window_len < 2 || self.stft.window_len % 2 != 0 || self.stft.hop == 0 || !self.stft.satisfies_cola() {
            return bad(format!("STFT window {} / hop {}", self.stft.window_len, self.stft.hop));
        }
        if (d.duration_secs * self.synth.sample_rate as f64) < self.stft.window_len as f64 {
            return bad("utterances are shorter than one analysis window".into());
        }
        if self.vae.latent_dim == 0 || self.vae.hidden.contains(&0) {
            return bad("VAE layer sizes must be positive".into());
        }
        if self.train.batch_size == 0 || !(self.train.learning_rate >= 0.0) {
            return bad("batch_size must be positive and learning_rate nonnegative".into());
        }
        if self.synth.visual_dim == 0 {
            return bad("visual_dim must be positive".into());
        }
        self.enhancer.validate()
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }

    pub fn model_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn enhanced_dir(&self) -> PathBuf {
        self.out.join("enhanced")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("reports")
    }

    pub fn model_path(&self, kind: ModelKind) -> PathBuf {
        self.model_dir().join(format!("{}.bin", kind.name()))
    }

    /// Writes the resolved configuration next to the command's outputs.
    fn echo(&self, command: &str) -> Result<()> {
        create_dir(&self.out)?;
        let p = self.out.join(format!("config.{command}.toml"));
        fs::write(&p, self.to_toml()).map_err(|e| Error::io(&p, e))
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the data directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureEntry {
    pub snr_db: f64,
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    pub id: String,
    pub split: String,
    pub clean: String,
    pub visual_clean: String,
    pub labels: String,
    /// Test split only.
    pub noise_kind: Option<NoiseKind>,
    pub noise: Option<String>,
    pub visual_occluded: Option<String>,
    pub mixtures: Vec<MixtureEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub utterances: Vec<UtteranceEntry>,
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn load(data_dir: &Path) -> Result<Self> {
        read_json(&data_dir.join("manifest.json"))
    }

    pub fn split(&self, split: &str) -> impl Iterator<Item = &UtteranceEntry> {
        let split = split.to_string();
        self.utterances.iter().filter(move |u| u.split == split)
    }
}

fn snr_tag(snr: f64) -> String {
    let s = format!("{snr}");
    format!("snr{}", s.replace('-', "m").replace('.', "p"))
}

/// Writes one utterance's files and returns its manifest entry.
fn write_utterance(
    cfg: &RunConfig,
    dir: &Path,
    id: &str,
    split: &str,
    index: usize,
    u: &CleanUtterance,
) -> Result<UtteranceEntry> {
    let clean = format!("clean/{id}.wav");
    write_wav(dir.join(&clean), &u.waveform, WavFormat::Float32)?;
    let visual_clean = format!("visual/{id}_clean.feat");
    write_features(dir.join(&visual_clean), &u.visual.values)?;
    let labels = format!("labels/{id}.json");
    write_json(&dir.join(&labels), &u.labels)?;
    let mut entry = UtteranceEntry {
        id: id.to_string(),
        split: split.to_string(),
        clean,
        visual_clean,
        labels,
        noise_kind: None,
        noise: None,
        visual_occluded: None,
        mixtures: Vec::new(),
    };
    if split == "test" {
        let d = &cfg.data;
        let kind = d.noise_kinds[index % d.noise_kinds.len()];
        let noise = synth_noise(
            kind,
            u.waveform.len(),
            u.waveform.sample_rate,
            &mut Rng::substream(cfg.seed, &[0x40, index as u64]),
        )?;
        let noise_path = format!("noise/{id}_{}.wav", kind.name());
        write_wav(dir.join(&noise_path), &noise, WavFormat::Float32)?;
        for &snr in &d.snr_grid {
            let mix = mix_at_snr(&u.waveform, &noise, snr)?;
            let p = format!("mix/{id}_{}.wav", snr_tag(snr));
            write_wav(dir.join(&p), &mix, WavFormat::Float32)?;
            entry.mixtures.push(MixtureEntry { snr_db: snr, path: p });
        }
        let occ = occlude(
            &u.visual,
            d.occlusion_fraction,
            d.occlusion_burst,
            &mut Rng::substream(cfg.seed, &[0x0c, index as u64]),
        )?;
        let p = format!("visual/{id}_occluded.feat");
        write_features(dir.join(&p), &occ.values)?;
        entry.noise_kind = Some(kind);
        entry.noise = Some(noise_path);
        entry.visual_occluded = Some(p);
    }
    Ok(entry)
}

/// Synthesizes the training corpus and the noisy test grid.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Manifest> {
    cfg.echo("synth")?;
    let dir = cfg.data_dir();
    for sub in ["clean", "noise", "mix", "visual", "labels"] {
        create_dir(&dir.join(sub))?;
    }
    let d = &cfg.data;
    let train = synth_corpus(d.train_utterances, d.regimes, d.duration_secs, &cfg.synth, &cfg.stft, cfg.seed)?;
    let test = synth_corpus(
        d.test_utterances,
        d.regimes,
        d.duration_secs,
        &cfg.synth,
        &cfg.stft,
        cfg.seed ^ 0x7e57_7e57,
    )?;
    let jobs: Vec<(String, &str, usize, &CleanUtterance)> = train
        .iter()
        .enumerate()
        .map(|(i, u)| (format!("train{i:03}"), "train", i, u))
        .chain(test.iter().enumerate().map(|(i, u)| (format!("test{i:03}"), "test", i, u)))
        .collect();
    let utterances: Vec<UtteranceEntry> = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|(id, split, i, u)| write_utterance(cfg, &dir, id, split, *i, u))
            .collect::<Result<_>>()
    })?;
    let mut paths: Vec<String> = Vec::new();
    for u in &utterances {
        paths.extend([u.clean.clone(), u.visual_clean.clone(), u.labels.clone()]);
        paths.extend(u.noise.iter().chain(&u.visual_occluded).cloned());
        paths.extend(u.mixtures.iter().map(|m| m.path.clone()));
    }
    let files = paths
        .into_iter()
        .map(|p| {
            let full = dir.join(&p);
            let bytes = fs::metadata(&full).map_err(|e| Error::io(&full, e))?.len();
            Ok(FileEntry {
                sha256: sha256_file(&full)?,
                path: p,
                bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        seed: cfg.seed,
        sample_rate: cfg.synth.sample_rate,
        utterances,
        files,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    log::info!("synth: {} files under {}", manifest.files.len(), dir.display());
    Ok(manifest)
}

fn load_utterance(dir: &Path, u: &UtteranceEntry) -> Result<CleanUtterance> {
    Ok(CleanUtterance {
        waveform: read_wav(dir.join(&u.clean))?,
        visual: VisualSequence::new(read_features(dir.join(&u.visual_clean))?)?,
        labels: read_json(&dir.join(&u.labels))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoints: Vec<PathBuf>,
    pub loss_curves: Vec<Vec<f64>>,
}

/// Trains the audio-only and the audio-visual model on the clean training split.
pub fn cmd_train_vae(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.echo("train-vae")?;
    let dir = cfg.data_dir();
    let manifest = Manifest::load(&dir)?;
    let corpus = manifest
        .split("train")
        .map(|u| load_utterance(&dir, u))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&cfg.model_dir())?;
    let kinds = [ModelKind::AudioOnly, ModelKind::AudioVisual];
    let reports = cfg.pool()?.install(|| {
        kinds
            .par_iter()
            .enumerate()
            .map(|(i, &kind)| {
                let data = training_set(&corpus, &cfg.stft, kind == ModelKind::AudioVisual, None)?;
                train_model(i as u32, kind, &cfg.vae, &data, &cfg.train, cfg.seed)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut summary = TrainSummary {
        checkpoints: Vec::new(),
        loss_curves: Vec::new(),
    };
    for (kind, rep) in kinds.iter().zip(reports) {
        let path = cfg.model_path(*kind);
        let meta = checkpoint::CheckpointMeta::for_model(&rep.model, rep.loss_curve.clone(), cfg.seed);
        checkpoint::save_model(&rep.model, &path, Some(&meta))?;
        log::info!(
            "trained {}: loss {:.3} -> {:.3}",
            kind.name(),
            rep.loss_curve[0],
            rep.loss_curve.last().copied().unwrap_or(f64::NAN)
        );
        summary.checkpoints.push(path);
        summary.loss_curves.push(rep.loss_curve);
    }
    write_json(&cfg.model_dir().join("loss_curves.json"), &summary.loss_curves)?;
    Ok(summary)
}

/// One enhancement job and where its outputs went.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnhancedEntry {
    pub run: String,
    pub utterance: String,
    pub noise: String,
    pub snr_db: f64,
    pub visual: String,
    pub wav: String,
    pub diagnostics: String,
    pub switch: String,
}

/// Final state of one run besides the per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_lambda: Vec<f64>,
    pub final_tau: Vec<Vec<f64>>,
    pub shrinkage_violations: usize,
    pub stopped_early: bool,
    /// Switch marginals, one row per frame.
    pub marginals: Vec<Vec<f64>>,
}

pub fn load_models(cfg: &RunConfig) -> Result<Vec<VaeModel>> {
    [ModelKind::AudioOnly, ModelKind::AudioVisual]
        .iter()
        .map(|&k| load_model(&cfg.model_path(k)))
        .collect()
}

/// Enhances every test mixture with clean and, when present, occluded visuals.
pub fn cmd_enhance(cfg: &RunConfig) -> Result<Vec<EnhancedEntry>> {
    cfg.echo("enhance")?;
    let dir = cfg.data_dir();
    let models = load_models(cfg)?;
    let manifest = Manifest::load(&dir)?;
    let out_dir = cfg.enhanced_dir();
    create_dir(&out_dir)?;

    let mut jobs = Vec::new();
    for (ui, u) in manifest.split("test").enumerate() {
        let mut visuals = vec![("clean", u.visual_clean.clone())];
        if let Some(o) = &u.visual_occluded {
            visuals.push(("occluded", o.clone()));
        }
        for (si, m) in u.mixtures.iter().enumerate() {
            for (vi, (vname, vpath)) in visuals.iter().enumerate() {
                jobs.push((ui, si, vi, u, m, *vname, vpath.clone()));
            }
        }
    }
    let entries = cfg.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(ui, si, vi, u, m, vname, ref vpath)| {
                let run = format!("{}_{}_{}", u.id, snr_tag(m.snr_db), vname);
                let mixture = read_wav(dir.join(&m.path))?;
                let visual = VisualSequence::new(read_features(dir.join(vpath))?)?;
                let ecfg = EnhancerConfig {
                    seed: Rng::substream(cfg.seed, &[0xe4, ui as u64, si as u64, vi as u64]).seed(),
                    ..cfg.enhancer.clone()
                };
                let (w, out) = enhance_waveform(&mixture, Some(&visual), &models, &cfg.stft, &ecfg)?;
                let entry = EnhancedEntry {
                    wav: format!("{run}.wav"),
                    diagnostics: format!("{run}.jsonl"),
                    switch: format!("{run}.json"),
                    run,
                    utterance: u.id.clone(),
                    noise: u.noise_kind.map_or("unknown", |k| k.name()).to_string(),
                    snr_db: m.snr_db,
                    visual: vname.to_string(),
                };
                write_wav(out_dir.join(&entry.wav), &w, WavFormat::Float32)?;
                let dpath = out_dir.join(&entry.diagnostics);
                fs::write(&dpath, out.diagnostics.to_jsonl()).map_err(|e| Error::io(&dpath, e))?;
                let summary = RunSummary {
                    final_lambda: out.diagnostics.final_lambda.clone(),
                    final_tau: out.diagnostics.final_tau.clone(),
                    shrinkage_violations: out.diagnostics.shrinkage_violations,
                    stopped_early: out.diagnostics.stopped_early,
                    marginals: out.state.switch.marginals.rows_iter().map(|r| r.to_vec()).collect(),
                };
                write_json(&out_dir.join(&entry.switch), &summary)?;
                log::info!("enhanced {}", entry.run);
                Ok(entry)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    write_json(&out_dir.join("index.json"), &entries)?;
    Ok(entries)
}

/// Scores every enhanced run against its clean reference.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.echo("eval")?;
    let dir = cfg.data_dir();
    let manifest = Manifest::load(&dir)?;
    let out_dir = cfg.enhanced_dir();
    let entries: Vec<EnhancedEntry> = read_json(&out_dir.join("index.json"))?;
    let runs = entries
        .iter()
        .map(|e| {
            let u = manifest
                .utterances
                .iter()
                .find(|u| u.id == e.utterance)
                .ok_or_else(|| Error::InvalidInput(format!("run {} names unknown utterance {}", e.run, e.utterance)))?;
            let m = u
                .mixtures
                .iter()
                .find(|m| m.snr_db == e.snr_db)
                .ok_or_else(|| Error::InvalidInput(format!("run {} has no mixture at {} dB", e.run, e.snr_db)))?;
            let clean = read_wav(dir.join(&u.clean))?;
            let mixture = read_wav(dir.join(&m.path))?;
            let enhanced = read_wav(out_dir.join(&e.wav))?;
            let labels: Vec<usize> = read_json(&dir.join(&u.labels))?;
            let summary: RunSummary = read_json(&out_dir.join(&e.switch))?;
            let rows = summary.marginals.len();
            let cols = summary.marginals.first().map_or(0, |r| r.len());
            let mut post = SwitchPosterior::uniform(rows.max(1), cols.max(1));
            post.marginals = RealMatrix::from_vec(rows, cols, summary.marginals.concat())?;
            let condition = Condition {
                noise: e.noise.clone(),
                snr_db: e.snr_db,
                visual: e.visual.clone(),
            };
            evaluate_run(&e.run, condition, &clean, &mixture, &enhanced, Some((&labels, &post)))
        })
        .collect::<Result<Vec<RunMetrics>>>()?;
    let report = EvalReport::from_runs(runs)?;
    let rdir = cfg.report_dir();
    create_dir(&rdir)?;
    write_json(&rdir.join("report.json"), &report)?;
    let mut lines = String::new();
    for r in &report.runs {
        lines.push_str(&serde_json::to_string(r).expect("metrics serialize"));
        lines.push('\n');
    }
    let p = rdir.join("runs.jsonl");
    fs::write(&p, lines).map_err(|e| Error::io(&p, e))?;
    let p = rdir.join("table.txt");
    fs::write(&p, report.table()).map_err(|e| Error::io(&p, e))?;
    Ok(report)
}
