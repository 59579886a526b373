//! Command-line surface: `train`, `eval`, `sample`, `impute`, and `synth`
//! subcommands over a TOML run config.
//!
//! Exit codes: 0 success, 2 usage/config/data errors, 3 numerical failure
//! (non-finite loss abort). Every subcommand is deterministic given its
//! seed arguments. Commands that fill an output directory write a
//! `manifest.json` last, so a crash leaves no manifest.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, ModelKind};
use crate::data::{
    self, batch_from_indices, batches_in_order, compute_standardization, load_event_sequences,
    load_real_sequences, standardize, synth_coupled_binary, synth_linear_gaussian, Dataset,
    FeatureKind, LinearGaussianParams,
};
use crate::error::{Error, Result};
use crate::estimator::importance_nll;
use crate::model::{
    srnn_nll, storn_bound, Likelihood, RecognitionMode, SrnnModel, StornHyper, StornModel,
};
use crate::optimizer::{fit, fit_srnn, TrainConfig, TrainLog};
use crate::rnn::{InitScheme, SequenceBatch, Transfer};
use crate::seed::{stream_rng, sub_seed};
use crate::tasks::{apply_corruption, generate, impute, window_mse, CorruptionSpec};
use crate::tensor::Tensor;
use rand_distr::Distribution;

// ---------------------------------------------------------------------------
// Run configuration. Every field has a default; unknown keys are rejected.
// ---------------------------------------------------------------------------

fn default_output_dir() -> PathBuf {
    PathBuf::from("storn-run")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed, fanned out to named sub-seeds (init, shuffle, eps, ...).
    pub seed: u64,
    pub output_dir: PathBuf,
    pub model: ModelSection,
    pub data: DataSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            output_dir: default_output_dir(),
            model: ModelSection::default(),
            data: DataSection::default(),
            train: TrainSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// `storn` or `srnn`.
    pub kind: String,
    pub hidden: usize,
    pub recog_hidden: usize,
    pub latent: usize,
    /// Hidden transfer: `logistic`, `tanh`, or `identity`.
    pub transfer: String,
    /// `causal`, `causal-lagged`, or `bidirectional`.
    pub recognition: String,
    /// `bernoulli` or `gaussian`.
    pub likelihood: String,
    /// Output deviation for the gaussian likelihood.
    pub sigma_out: f64,
    /// `glorot-spectral` or `zero`.
    pub init: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "storn".into(),
            hidden: 32,
            recog_hidden: 32,
            latent: 4,
            transfer: "logistic".into(),
            recognition: "causal".into(),
            likelihood: "bernoulli".into(),
            sigma_out: 1.0,
            init: "glorot-spectral".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    /// `events` (binary) or `real` (CSV).
    pub kind: String,
    /// Channel range for the event format.
    pub channels: usize,
    /// Single-file mode: one file split by `split_manifest` or a seeded
    /// 80/10/10 fallback.
    pub path: Option<PathBuf>,
    pub split_manifest: Option<PathBuf>,
    /// Explicit-split mode: all three paths.
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Standardize real data with training-split statistics.
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: "events".into(),
            channels: 88,
            path: None,
            split_manifest: None,
            train: None,
            val: None,
            test: None,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip: f64,
    pub rho: f64,
    pub eps_accum: f64,
    pub momentum: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 16,
            max_epochs: 100,
            patience: 20,
            clip: 10.0,
            rho: 0.95,
            eps_accum: 1e-6,
            momentum: 0.9,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let de = toml::de::Deserializer::parse(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::config(format!("{}: field `{}`: {}", path.display(), e.path(), e.inner())))?;
        // Empty path strings mean "not set".
        for slot in [
            &mut cfg.data.path,
            &mut cfg.data.split_manifest,
            &mut cfg.data.train,
            &mut cfg.data.val,
            &mut cfg.data.test,
        ] {
            if slot.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
                *slot = None;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match self.model.kind.as_str() {
            "storn" | "srnn" => {}
            other => return Err(Error::config(format!("model.kind `{other}` must be storn or srnn"))),
        }
        if self.model.hidden == 0 || self.model.recog_hidden == 0 {
            return Err(Error::config("model.hidden and model.recog_hidden must be positive"));
        }
        if self.model.kind == "storn" && self.model.latent == 0 {
            return Err(Error::config("model.latent must be positive"));
        }
        self.model.transfer.parse::<Transfer>()?;
        self.model.recognition.parse::<RecognitionMode>()?;
        self.model.init.parse::<InitScheme>()?;
        match self.model.likelihood.as_str() {
            "bernoulli" => {}
            "gaussian" => {
                if self.model.sigma_out <= 0.0 {
                    return Err(Error::config("model.sigma_out must be positive"));
                }
            }
            other => {
                return Err(Error::config(format!(
                    "model.likelihood `{other}` must be bernoulli or gaussian"
                )))
            }
        }
        match self.data.kind.as_str() {
            "events" => {
                if self.data.channels == 0 {
                    return Err(Error::config("data.channels must be positive"));
                }
            }
            "real" => {}
            other => {
                return Err(Error::config(format!(
                    "data.kind `{other}` must be events or real"
                )))
            }
        }
        let explicit = [&self.data.train, &self.data.val, &self.data.test];
        let explicit_count = explicit.iter().filter(|p| p.is_some()).count();
        if explicit_count != 0 && explicit_count != 3 {
            return Err(Error::config(
                "data.train/val/test must be given together",
            ));
        }
        if explicit_count == 0 && self.data.path.is_none() {
            return Err(Error::config(
                "data.path (or data.train/val/test) is required",
            ));
        }
        let train_cfg = self.train_config();
        train_cfg.validate()?;
        Ok(())
    }

    fn likelihood(&self) -> Likelihood {
        match self.model.likelihood.as_str() {
            "gaussian" => Likelihood::Gaussian { std: self.model.sigma_out },
            _ => Likelihood::Bernoulli,
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.train.batch_size,
            max_epochs: self.train.max_epochs,
            patience: self.train.patience,
            clip_threshold: self.train.clip,
            seed: self.seed,
            rho: self.train.rho,
            eps_accum: self.train.eps_accum,
            momentum: self.train.momentum,
        }
    }

    fn load_one(&self, path: &Path) -> Result<Dataset> {
        match self.data.kind.as_str() {
            "events" => load_event_sequences(path, self.data.channels),
            _ => load_real_sequences(path),
        }
    }

    /// Loads train/val/test splits per the data section.
    fn load_splits(&self) -> Result<(Dataset, Dataset, Dataset)> {
        if let (Some(tr), Some(va), Some(te)) = (&self.data.train, &self.data.val, &self.data.test)
        {
            Ok((self.load_one(tr)?, self.load_one(va)?, self.load_one(te)?))
        } else {
            let path = self.data.path.as_ref().expect("validated");
            let all = self.load_one(path)?;
            data::split_dataset(&all, self.data.split_manifest.as_deref(), sub_seed(self.seed, "split"))
        }
    }
}

// ---------------------------------------------------------------------------
// Argument parsing.
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(name = "storn", version, about = "Stochastic recurrent sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a TOML config file.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint: variational bound and importance-sampling NLL
    /// per sequence, as CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Importance-sampler draw count.
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Sample prefix-conditioned continuations into a real-sequence CSV.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// File whose first sequence is the stimulus prefix.
        #[arg(long)]
        prefix: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        horizon: i64,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Truncate the stimulus to this many steps.
        #[arg(long)]
        prefix_len: Option<usize>,
    },
    /// Corrupt a window with noise, impute it back, and report window MSE.
    Impute {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Corruption window as `start:end` (half-open).
        #[arg(long)]
        window: String,
        /// Comma-separated channel list (all channels when omitted).
        #[arg(long)]
        channels: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Generate synthetic benchmark datasets with analytic oracles.
    Synth {
        #[command(subcommand)]
        which: SynthCommand,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Tightly coupled binary sequences (all-ones or all-zeros steps).
    Coupled {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 4)]
        features: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Oracle CSV (analytic per-step NLL floors).
        #[arg(long)]
        oracle: Option<PathBuf>,
    },
    /// Scalar linear-Gaussian sequences with exact marginal NLLs.
    LinearGaussian {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Oracle CSV (exact per-sequence NLL).
        #[arg(long)]
        oracle: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        w_in: f64,
        #[arg(long, default_value_t = 0.8)]
        w_lat: f64,
        #[arg(long, default_value_t = 0.3)]
        w_rec: f64,
        #[arg(long, default_value_t = 0.1)]
        b_hid: f64,
        #[arg(long, default_value_t = 1.0)]
        w_out: f64,
        #[arg(long, default_value_t = 0.0)]
        b_out: f64,
        #[arg(long, default_value_t = 0.7)]
        sigma_out: f64,
    },
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

/// Parses and dispatches; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Eval {
            checkpoint,
            data,
            samples,
            seed,
            out,
            batch_size,
        } => cmd_eval(&checkpoint, &data, samples, seed, out.as_deref(), batch_size),
        Command::Sample {
            checkpoint,
            prefix,
            horizon,
            count,
            seed,
            out,
            prefix_len,
        } => cmd_sample(&checkpoint, &prefix, horizon, count, seed, &out, prefix_len),
        Command::Impute {
            checkpoint,
            data,
            window,
            channels,
            seed,
            out_dir,
        } => cmd_impute(&checkpoint, &data, &window, channels.as_deref(), seed, &out_dir),
        Command::Synth { which } => cmd_synth(which),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn write_manifest(dir: &Path, command: &str, files: &[&str]) -> Result<()> {
    let manifest = serde_json::json!({
        "command": command,
        "files": files,
    });
    let mut f = std::fs::File::create(dir.join("manifest.json"))?;
    writeln!(f, "{}", serde_json::to_string_pretty(&manifest).expect("json"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

/// Trains per the config file; writes the best checkpoint, the training-log
/// CSV, a timing CSV, the resolved config snapshot, and the manifest.
pub fn cmd_train(config_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    // The test split is validated here but consumed by `eval`.
    let (mut train_data, mut val_data, _test_data) = cfg.load_splits()?;

    let mut stats = None;
    if cfg.data.kind == "real" && cfg.data.standardize {
        let s = compute_standardization(&train_data)?;
        train_data = standardize(&train_data, &s)?;
        val_data = standardize(&val_data, &s)?;
        stats = Some(s);
    }

    let input = train_data.features();
    let train_cfg = cfg.train_config();
    std::fs::create_dir_all(&cfg.output_dir)?;

    let (model, log): (ModelKind, TrainLog) = match cfg.model.kind.as_str() {
        "srnn" => {
            let model = SrnnModel::init(
                input,
                cfg.model.hidden,
                cfg.likelihood(),
                cfg.model.transfer.parse()?,
                cfg.model.init.parse()?,
                cfg.seed,
            )?;
            let out = fit_srnn(&model, &train_data, &val_data, &train_cfg)?;
            println!(
                "srnn: best validation NLL {:.6} at epoch {}",
                out.best_val_bound, out.best_epoch
            );
            (ModelKind::Srnn(out.model), out.log)
        }
        _ => {
            let hyper = StornHyper {
                input,
                hidden: cfg.model.hidden,
                recog_hidden: cfg.model.recog_hidden,
                latent: cfg.model.latent,
                likelihood: cfg.likelihood(),
                recognition: cfg.model.recognition.parse()?,
                transfer: cfg.model.transfer.parse()?,
                init: cfg.model.init.parse()?,
            };
            let model = StornModel::init(&hyper, cfg.seed)?;
            let out = fit(&model, &train_data, &val_data, &train_cfg)?;
            println!(
                "storn: best validation bound {:.6} at epoch {}",
                out.best_val_bound, out.best_epoch
            );
            (ModelKind::Storn(out.model), out.log)
        }
    };

    let ckpt = Checkpoint {
        model,
        standardization: stats,
    };
    save_checkpoint(&cfg.output_dir.join("checkpoint.bin"), &ckpt)?;
    log.write_csv(std::fs::File::create(cfg.output_dir.join("training_log.csv"))?)?;
    log.write_timing_csv(std::fs::File::create(cfg.output_dir.join("timing.csv"))?)?;
    let snapshot = toml::to_string_pretty(&cfg).map_err(|e| Error::config(e.to_string()))?;
    std::fs::write(cfg.output_dir.join("config.toml"), snapshot)?;
    write_manifest(
        &cfg.output_dir,
        "train",
        &["checkpoint.bin", "training_log.csv", "timing.csv", "config.toml"],
    )?;
    println!("wrote {}", cfg.output_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

fn load_for_model(ckpt: &Checkpoint, path: &Path) -> Result<Dataset> {
    let dataset = match ckpt.model.likelihood() {
        Likelihood::Bernoulli => load_event_sequences(path, ckpt.model.input_dim())?,
        Likelihood::Gaussian { .. } => {
            let d = load_real_sequences(path)?;
            match &ckpt.standardization {
                Some(stats) => standardize(&d, stats)?,
                None => d,
            }
        }
    };
    if dataset.features() != ckpt.model.input_dim() {
        return Err(Error::ShapeMismatch {
            op: "eval",
            lhs: vec![ckpt.model.input_dim()],
            rhs: vec![dataset.features()],
        });
    }
    Ok(dataset)
}

struct EvalRow {
    seq_id: usize,
    steps: usize,
    bound: f64,
    kl: f64,
    recon: f64,
    importance: f64,
    ess: f64,
    log_weight_std: f64,
    standard_error: f64,
}

/// Per-sequence and aggregate NLL report (bound and importance estimate,
/// per sequence and per timestep) as CSV.
pub fn cmd_eval(
    checkpoint: &Path,
    data_path: &Path,
    samples: usize,
    seed: u64,
    out: Option<&Path>,
    batch_size: usize,
) -> Result<()> {
    if samples == 0 {
        return Err(Error::invalid("--samples must be at least 1"));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let dataset = load_for_model(&ckpt, data_path)?;
    let bound_seed = sub_seed(seed, "bound-eps");
    let mut rows: Vec<EvalRow> = Vec::with_capacity(dataset.len());
    for batch in batches_in_order(&dataset, batch_size)? {
        match &ckpt.model {
            ModelKind::Storn(model) => {
                let eps = eval_eps(&batch, model.latent_dim, bound_seed);
                let report = storn_bound(model, &batch.data, &eps)?;
                let est = importance_nll(
                    model,
                    &batch.data,
                    samples,
                    sub_seed(seed, &format!("importance-{}", batch.indices[0])),
                )?;
                for (bi, &global) in batch.indices.iter().enumerate() {
                    rows.push(EvalRow {
                        seq_id: global,
                        steps: report.steps[bi],
                        bound: report.bound[bi],
                        kl: report.kl[bi],
                        recon: report.recon_nll[bi],
                        importance: est.values[bi],
                        ess: est.ess[bi],
                        log_weight_std: est.log_weight_std[bi],
                        standard_error: est.standard_error[bi],
                    });
                }
            }
            ModelKind::Srnn(model) => {
                // No latents: the bound and the importance estimate both
                // coincide with the exact NLL.
                let nll = srnn_nll(model, &batch.data)?;
                for (bi, &global) in batch.indices.iter().enumerate() {
                    rows.push(EvalRow {
                        seq_id: global,
                        steps: nll.steps[bi],
                        bound: nll.per_sequence[bi],
                        kl: 0.0,
                        recon: nll.per_sequence[bi],
                        importance: nll.per_sequence[bi],
                        ess: samples as f64,
                        log_weight_std: 0.0,
                        standard_error: 0.0,
                    });
                }
            }
        }
    }

    // Three averaging units, labeled: per sequence (the raw column), per
    // mask-valid timestep, and per scalar entry (timestep x channel).
    let features = dataset.features();
    let mut text = String::new();
    text.push_str(
        "seq_id,steps,bound,bound_per_step,bound_per_entry,kl,recon_nll,importance_nll,importance_per_step,importance_per_entry,ess,log_weight_std,standard_error\n",
    );
    for r in &rows {
        let steps = r.steps.max(1) as f64;
        let entries = steps * features as f64;
        text.push_str(&format!(
            "{},{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
            r.seq_id,
            r.steps,
            r.bound,
            r.bound / steps,
            r.bound / entries,
            r.kl,
            r.recon,
            r.importance,
            r.importance / steps,
            r.importance / entries,
            r.ess,
            r.log_weight_std,
            r.standard_error,
        ));
    }
    let n = rows.len() as f64;
    let total_steps: usize = rows.iter().map(|r| r.steps).sum();
    let total_entries = (total_steps * features).max(1) as f64;
    let sum = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>();
    let combined_se = rows
        .iter()
        .map(|r| r.standard_error * r.standard_error)
        .sum::<f64>()
        .sqrt()
        / n;
    text.push_str(&format!(
        "aggregate,{},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}\n",
        total_steps,
        sum(|r| r.bound) / n,
        sum(|r| r.bound) / total_steps.max(1) as f64,
        sum(|r| r.bound) / total_entries,
        sum(|r| r.kl) / n,
        sum(|r| r.recon) / n,
        sum(|r| r.importance) / n,
        sum(|r| r.importance) / total_steps.max(1) as f64,
        sum(|r| r.importance) / total_entries,
        sum(|r| r.ess) / n,
        sum(|r| r.log_weight_std) / n,
        combined_se,
    ));
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

/// Deterministic per-sequence bound draws: one stream per dataset index.
fn eval_eps(batch: &data::Batch, lambda: usize, seed: u64) -> Tensor {
    let (t_len, b) = (batch.data.steps(), batch.data.batch_size());
    let lengths = batch.data.lengths();
    let dist = rand_distr::StandardNormal;
    let mut eps = Tensor::zeros(vec![t_len, b, lambda]);
    for (bi, &global) in batch.indices.iter().enumerate() {
        let mut rng = stream_rng(seed, global as u64);
        for t in 0..lengths[bi] {
            for k in 0..lambda {
                let v: f64 = dist.sample(&mut rng);
                eps.data_mut()[(t * b + bi) * lambda + k] = v;
            }
        }
    }
    eps
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

/// Draws `count` continuations of the prefix file's first sequence and
/// writes them as a real-sequence CSV (prefix verbatim, then the model's
/// output means).
pub fn cmd_sample(
    checkpoint: &Path,
    prefix_path: &Path,
    horizon: i64,
    count: usize,
    seed: u64,
    out: &Path,
    prefix_len: Option<usize>,
) -> Result<()> {
    if horizon < 0 {
        return Err(Error::invalid(format!("--horizon {horizon} must be non-negative")));
    }
    let ckpt = load_checkpoint(checkpoint)?;
    let model = match &ckpt.model {
        ModelKind::Storn(m) => m,
        ModelKind::Srnn(_) => {
            return Err(Error::invalid("sample needs a storn checkpoint"))
        }
    };
    if count == 0 {
        // Header-only CSV: zero sequences.
        let empty = "seq_id,".to_string()
            + &(0..model.input_dim()).map(|i| format!("c{i}")).collect::<Vec<_>>().join(",")
            + "\n";
        std::fs::write(out, empty)?;
        return Ok(());
    }
    let dataset = load_for_model(&ckpt, prefix_path)?;
    let mut stimulus = dataset.sequences[0].clone();
    if let Some(len) = prefix_len {
        let (t_len, k) = stimulus.dims2()?;
        if len == 0 || len > t_len {
            return Err(Error::invalid(format!(
                "--prefix-len {len} outside 1..={t_len}"
            )));
        }
        stimulus = Tensor::from_vec(vec![len, k], stimulus.data()[..len * k].to_vec())?;
    }
    let batch = SequenceBatch::from_sequences(&vec![stimulus; count])?;
    let generated = generate(model, &batch, horizon as usize, sub_seed(seed, "generate"))?;
    let sequences: Vec<Tensor> = (0..count).map(|b| generated.sequence(b)).collect();
    let out_data = Dataset {
        sequences,
        kind: FeatureKind::Real,
        standardization: None,
    };
    data::write_real_sequences(out, &out_data)?;
    println!("wrote {} sequences to {}", count, out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// impute
// ---------------------------------------------------------------------------

fn parse_window(window: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = window.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::invalid(format!("--window `{window}` must be start:end")));
    }
    let start = parts[0].trim().parse().map_err(|_| {
        Error::invalid(format!("--window start `{}` is not a number", parts[0]))
    })?;
    let end = parts[1].trim().parse().map_err(|_| {
        Error::invalid(format!("--window end `{}` is not a number", parts[1]))
    })?;
    Ok((start, end))
}

fn parse_channels(channels: Option<&str>) -> Result<Option<Vec<usize>>> {
    match channels {
        None => Ok(None),
        Some(text) => {
            let list = text
                .split(',')
                .map(|c| {
                    c.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::invalid(format!("bad channel `{c}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Some(list))
        }
    }
}

/// Corrupts the window with seeded noise, imputes it back via the
/// posterior mode, and writes reconstructions plus a per-sequence
/// window-MSE CSV into the output directory.
pub fn cmd_impute(
    checkpoint: &Path,
    data_path: &Path,
    window: &str,
    channels: Option<&str>,
    seed: u64,
    out_dir: &Path,
) -> Result<()> {
    let (start, end) = parse_window(window)?;
    let ckpt = load_checkpoint(checkpoint)?;
    let model = match &ckpt.model {
        ModelKind::Storn(m) => m,
        ModelKind::Srnn(_) => {
            return Err(Error::invalid("impute needs a storn checkpoint"))
        }
    };
    let dataset = load_for_model(&ckpt, data_path)?;
    let batch = batch_from_indices(&dataset, &(0..dataset.len()).collect::<Vec<_>>())?;
    let spec = CorruptionSpec {
        start,
        end,
        channels: parse_channels(channels)?,
        noise_seed: sub_seed(seed, "noise"),
    };
    let corrupted = apply_corruption(&batch.data, &spec)?;
    let imputed = impute(model, &corrupted, &spec)?;
    let window_errors = window_mse(&imputed, &batch.data, &spec)?;
    let noise_errors = window_mse(&corrupted, &batch.data, &spec)?;

    std::fs::create_dir_all(out_dir)?;
    let to_dataset = |b: &SequenceBatch, kind: FeatureKind| Dataset {
        sequences: (0..b.batch_size()).map(|i| b.sequence(i)).collect(),
        kind,
        standardization: None,
    };
    // The corrupted input carries real-valued noise, so it is always
    // written in the real-sequence format; reconstructions use the data's
    // native format.
    let imputed_file;
    match model.likelihood {
        Likelihood::Bernoulli => {
            imputed_file = "imputed.seq";
            data::write_event_sequences(
                &out_dir.join(imputed_file),
                &to_dataset(&imputed, FeatureKind::Binary),
            )?;
        }
        Likelihood::Gaussian { .. } => {
            imputed_file = "imputed.csv";
            data::write_real_sequences(
                &out_dir.join(imputed_file),
                &to_dataset(&imputed, FeatureKind::Real),
            )?;
        }
    }
    data::write_real_sequences(
        &out_dir.join("corrupted.csv"),
        &to_dataset(&corrupted, FeatureKind::Real),
    )?;
    let mut mse_csv = String::from("seq_id,window_mse,noise_mse\n");
    for (i, (w, n)) in window_errors.iter().zip(&noise_errors).enumerate() {
        mse_csv.push_str(&format!("{i},{w:?},{n:?}\n"));
    }
    std::fs::write(out_dir.join("mse.csv"), mse_csv)?;
    write_manifest(out_dir, "impute", &[imputed_file, "corrupted.csv", "mse.csv"])?;
    println!("wrote {}", out_dir.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

fn cmd_synth(which: SynthCommand) -> Result<()> {
    match which {
        SynthCommand::Coupled {
            n,
            steps,
            features,
            seed,
            out,
            oracle,
        } => {
            let synth = synth_coupled_binary(n, steps, features, seed)?;
            data::write_event_sequences(&out, &synth.dataset)?;
            if let Some(oracle_path) = oracle {
                let text = format!(
                    "name,value\ntrue_nll_per_step,{:?}\nfactorized_nll_per_step,{:?}\n",
                    synth.true_nll_per_step, synth.factorized_nll_per_step
                );
                std::fs::write(oracle_path, text)?;
            }
            println!("wrote {} coupled sequences to {}", n, out.display());
        }
        SynthCommand::LinearGaussian {
            n,
            steps,
            seed,
            out,
            oracle,
            w_in,
            w_lat,
            w_rec,
            b_hid,
            w_out,
            b_out,
            sigma_out,
        } => {
            let params = LinearGaussianParams {
                w_in,
                w_lat,
                w_rec,
                b_hid,
                w_out,
                b_out,
                sigma_out,
            };
            let synth = synth_linear_gaussian(n, steps, seed, &params)?;
            data::write_real_sequences(&out, &synth.dataset)?;
            if let Some(oracle_path) = oracle {
                let mut text = String::from("seq_id,marginal_nll\n");
                for (i, v) in synth.nll_per_sequence.iter().enumerate() {
                    text.push_str(&format!("{i},{v:?}\n"));
                }
                std::fs::write(oracle_path, text)?;
            }
            println!("wrote {} linear-gaussian sequences to {}", n, out.display());
        }
    }
    Ok(())
}
