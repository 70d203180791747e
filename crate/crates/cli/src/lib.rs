//! Command implementations behind the `affect` binary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use affect_core::binning::BinningConfig;
use affect_core::eval::{
    self, format_real, run_cv, tsat_curve, tspt_curve, write_atomic, CvConfig, PredictionTrace, PreparedDataset,
    TemporalCurve, TrainedSet,
};
use affect_core::ingest::{load_dataset, DatasetManifest};
use affect_core::model::{load_model, save_model, GroupedModel, ModelSpec, TrainConfig};
use affect_core::preprocess::PreprocessConfig;
use affect_core::synth::{generate_dataset, SynthConfig};
use affect_core::windows::WindowConfig;

#[derive(Debug, Parser)]
#[command(name = "affect", version, about = "Infant affect recognition from face and body landmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Synth(CommonArgs),
    /// Parse and bin every session of the dataset and report per-session statistics.
    IngestCheck(CommonArgs),
    /// Cross-validate over a grid of long window lengths.
    Sweep(CommonArgs),
    /// Cross-validate one configuration and write metrics, trace and curves.
    Evaluate(CommonArgs),
    /// Train on the whole dataset and save the model files.
    Train(CommonArgs),
    /// Write the prediction trace of one session from saved models.
    Predict(CommonArgs),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub long_face_s: Vec<f64>,
    pub long_body_s: Vec<f64>,
    pub models: Vec<ModelSpec>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let grid = vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];
        SweepConfig {
            long_face_s: grid.clone(),
            long_body_s: grid,
            models: vec![ModelSpec::Joint],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictConfig {
    /// Directory holding the files written by `train`.
    pub model_dir: Option<PathBuf>,
    /// Session to trace; defaults to the first session of the manifest.
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub model: ModelSpec,
    pub folds: usize,
    pub binning: BinningConfig,
    pub preprocess: PreprocessConfig,
    pub window: WindowConfig,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    pub sweep: SweepConfig,
    pub predict: PredictConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            manifest: None,
            output_dir: None,
            model: ModelSpec::Joint,
            folds: eval::DEFAULT_FOLDS,
            binning: BinningConfig::default(),
            preprocess: PreprocessConfig::default(),
            window: WindowConfig::default(),
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            sweep: SweepConfig::default(),
            predict: PredictConfig::default(),
        }
    }
}

impl RunConfig {
    /// Strict parse; relative paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        resolve(&mut cfg.manifest);
        resolve(&mut cfg.output_dir);
        resolve(&mut cfg.predict.model_dir);
        Ok(cfg)
    }

    /// Applies `--seed` and `--out`, then propagates the seed.
    pub fn resolve(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &args.out {
            cfg.output_dir = Some(out.clone());
        }
        cfg.synth.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        cfg.binning.validate()?;
        cfg.preprocess.validate()?;
        cfg.window.validate()?;
        cfg.train.validate()?;
        if cfg.folds < 2 {
            bail!("folds must be at least 2");
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }

    fn manifest_path(&self) -> Result<&Path> {
        let p = self
            .manifest
            .as_deref()
            .context("the configuration names no dataset manifest")?;
        if !p.is_file() {
            bail!("manifest {} not found", p.display());
        }
        Ok(p)
    }

    fn cv_config(&self, models: Vec<ModelSpec>) -> CvConfig {
        CvConfig {
            window: self.window,
            train: self.train,
            k: self.folds,
            seed: self.seed,
            models,
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let args = match &cli.command {
        Command::Synth(a)
        | Command::IngestCheck(a)
        | Command::Sweep(a)
        | Command::Evaluate(a)
        | Command::Train(a)
        | Command::Predict(a) => a.clone(),
    };
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let cfg = RunConfig::resolve(&args)?;
    match cli.command {
        Command::Synth(_) => cmd_synth(&cfg).map(|_| ()),
        Command::IngestCheck(_) => cmd_ingest_check(&cfg),
        Command::Sweep(_) => cmd_sweep(&cfg),
        Command::Evaluate(_) => cmd_evaluate(&cfg),
        Command::Train(_) => cmd_train(&cfg).map(|_| ()),
        Command::Predict(_) => cmd_predict(&cfg),
    }
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<PathBuf> {
    let out = cfg.out_dir()?;
    let data = generate_dataset(&cfg.synth, &out)?;
    eprintln!(
        "wrote {} sessions and {}",
        data.manifest.entries.len(),
        data.manifest_path.display()
    );
    Ok(data.manifest_path)
}

fn load_prepared(cfg: &RunConfig) -> Result<PreparedDataset> {
    let manifest = DatasetManifest::load(cfg.manifest_path()?)?;
    let loaded = load_dataset(&manifest, &cfg.binning);
    for (id, err) in &loaded.excluded {
        eprintln!("warning: session {id} excluded: {err}");
    }
    let (data, short) = PreparedDataset::new(&loaded.sessions, &cfg.preprocess, &cfg.window)?;
    for (id, err) in &short {
        eprintln!("warning: session {id} skipped: {err}");
    }
    if data.sessions.is_empty() {
        bail!("no usable sessions");
    }
    Ok(data)
}

pub fn cmd_ingest_check(cfg: &RunConfig) -> Result<()> {
    let manifest = DatasetManifest::load(cfg.manifest_path()?)?;
    let loaded = load_dataset(&manifest, &cfg.binning);
    let mut text = String::from("session_id,infant_id,n_bins,face_valid,body_valid,alert,fussy,excluded\n");
    for s in &loaded.sessions {
        let n = s.n_bins().max(1) as f64;
        let face = s.bins.iter().filter(|b| b.face_valid).count() as f64 / n;
        let body = s.bins.iter().filter(|b| b.body_valid).count() as f64 / n;
        let labels = s.labels();
        let count = |l| labels.iter().filter(|&&x| x == l).count();
        use affect_core::AffectLabel::*;
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.session_id,
            s.infant_id,
            s.n_bins(),
            format_real(face),
            format_real(body),
            count(Alert),
            count(Fussy),
            count(Excluded)
        ));
    }
    write_atomic(&cfg.out_dir()?.join("ingest.csv"), text.as_bytes())?;
    for (id, err) in &loaded.excluded {
        eprintln!("error: session {id}: {err}");
    }
    if !loaded.excluded.is_empty() {
        bail!("{} of {} sessions failed to load", loaded.excluded.len(), manifest.entries.len());
    }
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let data = load_prepared(cfg)?;
    let models = cfg.sweep.models.clone();
    if models.is_empty() {
        bail!("sweep.models is empty");
    }
    let mut text = String::from("model,long_face_s,long_body_s,mean_auc_confident,mean_auc_total,status\n");
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".into(), format_real);
    for &face in &cfg.sweep.long_face_s {
        for &body in &cfg.sweep.long_body_s {
            let window = WindowConfig {
                long_face_s: face,
                long_body_s: body,
                ..cfg.window
            };
            let cell = CvConfig {
                window,
                ..cfg.cv_config(models.clone())
            };
            match run_cv(&data, &cell) {
                Ok(result) => {
                    for m in &result.models {
                        text.push_str(&format!(
                            "{},{},{},{},{},ok\n",
                            m.spec.name(),
                            format_real(face),
                            format_real(body),
                            opt(m.mean_auc_confident()),
                            opt(m.mean_auc_total())
                        ));
                    }
                }
                Err(e) => {
                    eprintln!("warning: cell ({face} s, {body} s) failed: {e}");
                    let reason = e.to_string().replace([',', '\n', '"'], " ");
                    for m in &models {
                        text.push_str(&format!(
                            "{},{},{},nan,nan,failed: {reason}\n",
                            m.name(),
                            format_real(face),
                            format_real(body)
                        ));
                    }
                }
            }
        }
    }
    write_atomic(&cfg.out_dir()?.join("sweep.csv"), text.as_bytes())?;
    Ok(())
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let data = load_prepared(cfg)?;
    let result = run_cv(&data, &cfg.cv_config(vec![cfg.model]))?;
    let out = cfg.out_dir()?;
    let labels = data.bin_labels();
    let bw = cfg.window.bin_width_s;
    let mut tsat: Vec<(ModelSpec, Vec<TemporalCurve>)> = Vec::new();
    let mut tspt: Vec<(ModelSpec, Vec<TemporalCurve>)> = Vec::new();
    for m in &result.models {
        let (a, f) = tsat_curve(&m.trace, &labels, bw);
        tsat.push((m.spec, vec![a, f]));
        let (a, f) = tspt_curve(&m.trace, bw);
        tspt.push((m.spec, vec![a, f]));
    }
    eval::write_metrics(&out.join("metrics.csv"), &result.models)?;
    let traces: Vec<(ModelSpec, &PredictionTrace)> = result.models.iter().map(|m| (m.spec, &m.trace)).collect();
    eval::write_trace(&out.join("trace.csv"), &traces, bw)?;
    eval::write_curves(&out.join("tsat.csv"), &tsat)?;
    eval::write_curves(&out.join("tspt.csv"), &tspt)?;
    for m in &result.models {
        eprintln!(
            "{}: mean AUC confident {:?}, total {:?}",
            m.spec.name(),
            m.mean_auc_confident(),
            m.mean_auc_total()
        );
    }
    Ok(())
}

fn model_file(dir: &Path, spec: ModelSpec) -> PathBuf {
    dir.join(format!("{}.model", spec.name()))
}

/// Trains on every session and writes one file per fitted network
/// (`face.model` and `body.model` for late fusion).
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let data = load_prepared(cfg)?;
    let all: Vec<usize> = (0..data.sessions.len()).collect();
    let set = eval::train_models(&data, &all, &[cfg.model], &cfg.window, &cfg.train, 0)?;
    let out = cfg.out_dir()?;
    let mut written = Vec::new();
    for (spec, model) in &set.models {
        let path = model_file(&out, *spec);
        save_model(model, &path)?;
        written.push(path);
    }
    Ok(written)
}

pub fn cmd_predict(cfg: &RunConfig) -> Result<()> {
    let dir = cfg
        .predict
        .model_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .context("no model directory configured")?;
    let parts: &[ModelSpec] = match cfg.model {
        ModelSpec::Late => &[ModelSpec::Face, ModelSpec::Body],
        ModelSpec::Face => &[ModelSpec::Face],
        ModelSpec::Body => &[ModelSpec::Body],
        ModelSpec::Joint => &[ModelSpec::Joint],
    };
    let models: Vec<(ModelSpec, GroupedModel)> = parts
        .iter()
        .map(|&s| {
            let p = model_file(&dir, s);
            load_model(&p)
                .with_context(|| format!("loading {}", p.display()))
                .map(|m| (s, m))
        })
        .collect::<Result<_>>()?;
    let window = models[0].1.window_config;
    let cfg_window = RunConfig {
        window,
        ..cfg.clone()
    };
    let data = load_prepared(&cfg_window)?;
    let session = match &cfg.predict.session_id {
        Some(id) => data
            .sessions
            .iter()
            .find(|s| &s.features.session_id == id)
            .with_context(|| format!("session {id} not in the dataset"))?,
        None => &data.sessions[0],
    };
    // one shared selection covers every group the models use
    let mut groups = Vec::new();
    for (_, m) in &models {
        groups.extend(m.selection.groups.iter().cloned());
    }
    let selection = affect_core::select::FeatureSelection {
        fold_id: models[0].1.selection.fold_id,
        groups,
    };
    let set = TrainedSet { selection, models };
    let entries = eval::predict_session(&set, cfg.model, session, &window)?;
    let trace = PredictionTrace { entries };
    let out = cfg.out_dir()?;
    eval::write_trace(&out.join("trace.csv"), &[(cfg.model, &trace)], window.bin_width_s)?;
    Ok(())
}
