//! Command-line orchestration.
//!
//! Every command resolves a [`RunConfig`] from built-in defaults, then an
//! optional flat TOML file (`--config`), then individual flags, and embeds
//! the resolved config in what it writes. Exit codes: 0 success,
//! 2 usage or invalid configuration, 3 I/O, 4 numerical abort, 1 anything
//! else (for example a corrupt input file).

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoders::{
    decode_all, evaluate, DecoderKind, ErasureMwpmDecoder, FlickerDecoder, MwpmDecoder, StgnnDecoder, VerdictMode,
    WindowDecoder,
};
use crate::error::{Error, Result};
use crate::experiment::{deserialize, sample_dataset, serialize, Dataset, NoiseParams};
use crate::flicker::calibrate_background;
use crate::lattice::{build_layout, Basis};
use crate::matching::build_detector_graph;
use crate::metrics::{latency_bench, EvalReport};
use crate::stgnn::{load_checkpoint, save_checkpoint, ModelConfig, Stgnn, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Matching weights need a non-zero fault rate; noiseless datasets are
/// decoded with this one.
const WEIGHT_FLOOR: f64 = 1e-3;
/// Smallest onset prior handed to the flicker posterior.
const PRIOR_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(Optimizer::Adam),
            "sgd" => Ok(Optimizer::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer {s:?} (expected adam or sgd)"))),
        }
    }
}

/// Flat run configuration. TOML keys are the field names, except `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub d: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub basis: Basis,
    pub p_pauli: f64,
    pub p_meas: f64,
    pub p_loss: f64,
    pub shots: usize,
    pub seed: u64,
    pub decoder: DecoderKind,
    pub threshold: f64,
    pub verdict: VerdictMode,
    /// Flicker onset prior; the dataset's loss rate when unset.
    pub prior_rate: Option<f64>,
    /// Loss-free shots used to calibrate the flicker background rate.
    pub background_shots: usize,

    pub hidden: usize,
    pub heads: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub distance_cap: u16,
    pub lambda_logic: f64,
    pub lambda_loss: f64,
    pub dropout: f64,

    pub optimizer: Optimizer,
    pub learning_rate: f64,
    /// Total epochs; a resumed run stops once the counter reaches it.
    pub epochs: usize,
    /// Zero means full batch.
    pub batch_size: usize,
    /// Zero disables clipping.
    pub clip_norm: f64,
    pub pos_weight: Option<f64>,
    pub resume: bool,

    pub warmup: usize,
    pub repetitions: usize,

    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Training log; defaults to the checkpoint path with `.log` appended.
    pub log: Option<PathBuf>,
    /// Primary output of the command; overrides the matching path above.
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        RunConfig {
            d: 3,
            rounds: 5,
            basis: Basis::Z,
            p_pauli: 0.005,
            p_meas: 0.005,
            p_loss: 0.005,
            shots: 1000,
            seed: 0,
            decoder: DecoderKind::Mwpm,
            threshold: 0.5,
            verdict: VerdictMode::Final,
            prior_rate: None,
            background_shots: 2000,
            hidden: m.hidden,
            heads: m.heads,
            blocks: m.blocks,
            kernel: m.kernel,
            distance_cap: m.distance_cap,
            lambda_logic: m.lambda_logic,
            lambda_loss: m.lambda_loss,
            dropout: m.dropout,
            optimizer: Optimizer::Adam,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            pos_weight: None,
            resume: false,
            warmup: 10,
            repetitions: 100,
            dataset: None,
            checkpoint: None,
            report: None,
            log: None,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn noise(&self) -> Result<NoiseParams> {
        NoiseParams::new(self.p_pauli, self.p_meas, self.p_loss).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            hidden: self.hidden,
            heads: self.heads,
            blocks: self.blocks,
            kernel: self.kernel,
            distance_cap: self.distance_cap,
            lambda_logic: self.lambda_logic,
            lambda_loss: self.lambda_loss,
            dropout: self.dropout,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            adaptive: self.optimizer == Optimizer::Adam,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            pos_weight: self.pos_weight,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
        }
    }

    /// Cross-field checks shared by every command.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.d < 3 || self.d % 2 == 0 {
            return bad(format!("d = {} must be odd and at least 3", self.d));
        }
        if self.rounds == 0 {
            return bad("T must be at least 1".into());
        }
        self.noise()?;
        if self.shots == 0 {
            return bad("shots must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} is outside [0, 1]", self.threshold));
        }
        if let Some(p) = self.prior_rate {
            if !(p > 0.0 && p < 1.0) {
                return bad(format!("prior_rate {p} must lie in (0, 1)"));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.clip_norm < 0.0 {
            return bad(format!("clip_norm {} must be non-negative", self.clip_norm));
        }
        if self.decoder == DecoderKind::Flicker && self.background_shots == 0 {
            return bad("flicker needs background_shots >= 1".into());
        }
        self.model_config().validate()
    }

    fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
        path.clone().ok_or_else(|| Error::Config(format!("no {key} path given")))
    }
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Args, Clone, Debug, Default)]
pub struct Overrides {
    /// Flat TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long = "T", visible_alias = "rounds")]
    pub rounds: Option<usize>,
    #[arg(long, value_parser = clap::value_parser!(Basis))]
    pub basis: Option<Basis>,
    /// Sets p_pauli, p_meas and p_loss at once; the specific flags win.
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub p_pauli: Option<f64>,
    #[arg(long)]
    pub p_meas: Option<f64>,
    #[arg(long)]
    pub p_loss: Option<f64>,
    #[arg(long)]
    pub shots: Option<usize>,
    #[arg(long)]
    pub decoder: Option<DecoderKind>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub verdict: Option<VerdictMode>,
    #[arg(long)]
    pub prior_rate: Option<f64>,
    #[arg(long)]
    pub background_shots: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub kernel: Option<usize>,
    #[arg(long)]
    pub distance_cap: Option<u16>,
    #[arg(long)]
    pub lambda_logic: Option<f64>,
    #[arg(long)]
    pub lambda_loss: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub pos_weight: Option<f64>,
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub repetitions: Option<usize>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

impl Overrides {
    /// Defaults, then the config file, then these flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_toml(&read_text(path)?)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.p {
            (c.p_pauli, c.p_meas, c.p_loss) = (p, p, p);
        }
        macro_rules! apply {
            ($($f:ident),*) => {
                $(if let Some(v) = self.$f.clone() { c.$f = v; })*
            };
        }
        apply!(
            seed, d, rounds, basis, p_pauli, p_meas, p_loss, shots, decoder, threshold, verdict, background_shots,
            hidden, heads, blocks, kernel, distance_cap, lambda_logic, lambda_loss, dropout, optimizer,
            learning_rate, epochs, batch_size, clip_norm, warmup, repetitions
        );
        macro_rules! apply_opt {
            ($($f:ident),*) => {
                $(if self.$f.is_some() { c.$f = self.$f.clone(); })*
            };
        }
        apply_opt!(prior_rate, pos_weight, dataset, checkpoint, report, log, out);
        c.resume |= self.resume;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Parser, Debug)]
#[command(name = "qloss", about = "Surface-code memory experiments with qubit loss")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a dataset of memory-experiment shots.
    Sample(Overrides),
    /// Run a decoder over a dataset and write an evaluation report.
    Decode(Overrides),
    /// Train the network on a dataset and write a checkpoint.
    Train(Overrides),
    /// Measure per-window decode latency.
    Bench(Overrides),
}

/// Runs a parsed command line and returns the line printed on success.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Sample(o) => cmd_sample(&o.resolve()?),
        Command::Decode(o) => cmd_decode(&o.resolve()?).map(|r| summary(&r)),
        Command::Train(o) => cmd_train(&o.resolve()?),
        Command::Bench(o) => cmd_bench(&o.resolve()?).map(|r| summary(&r)),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::InvalidDistance(_)
        | Error::InvalidProbability(_) => EXIT_USAGE,
        Error::Io { .. } => EXIT_IO,
        Error::Numerical(_) | Error::Diverged(_) => EXIT_NUMERICAL,
        _ => EXIT_FAILURE,
    }
}

fn summary(r: &EvalReport) -> String {
    let f = |x: Option<f64>| x.map_or("absent".to_string(), |v| format!("{v:.6}"));
    let mut s = format!(
        "decoder={} shots={} logical_accuracy={} precision={} recall={} f1={}",
        r.decoder,
        r.shots,
        f(r.logical_accuracy),
        f(r.precision),
        f(r.recall),
        f(r.f1)
    );
    if let Some(l) = &r.latency {
        s += &format!(" per_window_ms={:.4} iqr_ms={:.4} windows={}", l.per_window_ms, l.iqr_ms, l.windows_measured);
        if let Some(p) = l.forward_passes_per_window {
            s += &format!(" forward_passes_per_window={p}");
        }
    }
    s
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn load_dataset(config: &RunConfig) -> Result<(Dataset, String)> {
    let path = RunConfig::require(&config.dataset, "dataset")?;
    let bytes = read_bytes(&path)?;
    let hash = sha256_hex(&bytes);
    Ok((deserialize(&bytes)?, hash))
}

fn load_model(config: &RunConfig) -> Result<(Stgnn, usize)> {
    let path = RunConfig::require(&config.checkpoint, "checkpoint")?;
    let c = load_checkpoint(&read_bytes(&path)?)?;
    Ok((c.model, c.epoch))
}

fn config_value(config: &RunConfig) -> serde_json::Value {
    serde_json::to_value(config).expect("config is serializable")
}

/// Samples `shots` shots with the configured code and noise.
pub fn cmd_sample(config: &RunConfig) -> Result<String> {
    let out = RunConfig::require(&config.out.clone().or(config.dataset.clone()), "out")?;
    let layout = build_layout(config.d)?;
    let data = sample_dataset(&layout, config.noise()?, config.rounds, config.basis, config.shots, config.seed)?;
    let bytes = serialize(&data)?;
    write_bytes(&out, &bytes)?;
    Ok(format!(
        "wrote {} shots (d={} T={} basis={}) to {} sha256={}",
        data.len(),
        config.d,
        config.rounds,
        config.basis,
        out.display(),
        sha256_hex(&bytes)
    ))
}

/// Builds the configured decoder for `data` and hands it to `f`.
fn with_decoder<R>(
    config: &RunConfig,
    data: &Dataset,
    f: impl FnOnce(&dyn WindowDecoder) -> Result<R>,
) -> Result<R> {
    let h = &data.header;
    let layout = build_layout(h.d)?;
    match config.decoder {
        DecoderKind::Mwpm | DecoderKind::DeMwpm => {
            let mut noise = h.noise.without_loss();
            if noise.p_pauli == 0.0 && noise.p_meas == 0.0 {
                noise = NoiseParams::new(WEIGHT_FLOOR, WEIGHT_FLOOR, 0.0)?;
            }
            let graph = build_detector_graph(&layout, &noise, h.rounds, h.basis)?;
            if config.decoder == DecoderKind::Mwpm {
                f(&MwpmDecoder { graph: &graph })
            } else {
                f(&ErasureMwpmDecoder { graph: &graph })
            }
        }
        DecoderKind::Flicker => {
            let background =
                calibrate_background(&layout, h.noise, h.rounds, h.basis, config.background_shots, config.seed)?;
            let prior = config.prior_rate.unwrap_or(h.noise.p_loss).max(PRIOR_FLOOR);
            f(&FlickerDecoder {
                layout: &layout,
                basis: h.basis,
                background_rate: background,
                prior_rate: prior,
            })
        }
        DecoderKind::Stgnn => {
            let (model, _) = load_model(config)?;
            if model.layout().distance() != h.d {
                return Err(Error::Config(format!(
                    "checkpoint is for d = {}, dataset has d = {}",
                    model.layout().distance(),
                    h.d
                )));
            }
            f(&StgnnDecoder { model: &model })
        }
    }
}

/// Decodes every shot of the dataset; writes the report when a path is set.
pub fn cmd_decode(config: &RunConfig) -> Result<EvalReport> {
    let (data, hash) = load_dataset(config)?;
    let mut report = with_decoder(config, &data, |dec| {
        let outputs = decode_all(dec, &data.shots)?;
        evaluate(&dec.name(), &outputs, &data.shots, config.threshold, config.verdict)
    })?;
    report.dataset_sha256 = Some(hash);
    report.config = Some(config_value(config));
    if let Some(path) = config.out.as_ref().or(config.report.as_ref()) {
        write_bytes(path, report.to_json().as_bytes())?;
    }
    Ok(report)
}

/// Trains from scratch, or from `checkpoint` when `resume` is set, until the
/// epoch counter reaches `epochs`. Writes the checkpoint and one log line
/// per epoch.
pub fn cmd_train(config: &RunConfig) -> Result<String> {
    let (data, hash) = load_dataset(config)?;
    let h = &data.header;
    let out = RunConfig::require(&config.out.clone().or(config.checkpoint.clone()), "checkpoint")?;
    let (model, start) = if config.resume {
        load_model(config)?
    } else {
        (Stgnn::new(config.model_config(), &build_layout(h.d)?)?, 0)
    };
    if model.layout().distance() != h.d {
        return Err(Error::Config(format!(
            "model is for d = {}, dataset has d = {}",
            model.layout().distance(),
            h.d
        )));
    }
    let log_path = config.log.clone().unwrap_or_else(|| {
        let mut p = out.clone().into_os_string();
        p.push(".log");
        PathBuf::from(p)
    });
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(config.resume)
        .write(true)
        .truncate(!config.resume)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = std::io::BufWriter::new(file);
    writeln!(log, "# dataset_sha256={hash} config={}", config_value(config)).map_err(|e| Error::io(&log_path, e))?;

    let mut trainer = Trainer::resume(model, config.train_config(), start);
    let mut io_error = None;
    let result = trainer.run(&data.shots, |line| {
        let written = writeln!(log, "{line}").and_then(|_| log.flush());
        match written {
            Ok(()) => true,
            Err(e) => {
                io_error = Some(e);
                false
            }
        }
    });
    if let Some(e) = io_error {
        return Err(Error::io(&log_path, e));
    }
    result?;
    write_bytes(&out, &save_checkpoint(&trainer.model, trainer.epoch))?;

    let dec = StgnnDecoder { model: &trainer.model };
    let outputs = decode_all(&dec, &data.shots)?;
    let report = evaluate("stgnn", &outputs, &data.shots, config.threshold, config.verdict)?;
    Ok(format!(
        "epoch={} checkpoint={} log={} train_logical_accuracy={:.6} train_loss_precision={:.6} train_loss_recall={:.6}",
        trainer.epoch,
        out.display(),
        log_path.display(),
        report.logical_accuracy.unwrap_or(f64::NAN),
        report.precision.unwrap_or(f64::NAN),
        report.recall.unwrap_or(f64::NAN)
    ))
}

/// Times single-window decodes over the dataset.
pub fn cmd_bench(config: &RunConfig) -> Result<EvalReport> {
    let (data, hash) = load_dataset(config)?;
    let stats = with_decoder(config, &data, |dec| {
        let decode = |r: &_| dec.decode(r).map(|_| ());
        if dec.forward_passes().is_some() {
            let counter = || dec.forward_passes().unwrap_or(0);
            latency_bench(&data.shots, config.warmup, config.repetitions, decode, Some(counter))
        } else {
            latency_bench(&data.shots, config.warmup, config.repetitions, decode, None::<fn() -> u64>)
        }
    })?;
    let report = EvalReport {
        decoder: config.decoder.to_string(),
        dataset_sha256: Some(hash),
        shots: data.len(),
        latency: Some(stats),
        config: Some(config_value(config)),
        ..Default::default()
    };
    if let Some(path) = config.out.as_ref().or(config.report.as_ref()) {
        write_bytes(path, report.to_json().as_bytes())?;
    }
    Ok(report)
}
