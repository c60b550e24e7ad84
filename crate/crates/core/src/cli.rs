//! The `rqsm` command line.
//!
//! Every subcommand accepts `--config <file>` with flat `key = value` lines
//! whose keys are the long flag names without dashes (`M`, `NR`, `snr`,
//! `max-frames`, ...). Flags given on the command line override the file.
//! The selector and the seed never fall back to a default.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::complexity::{complexity_table, parse_cases, reference_cases};
use crate::dnn::{dataset_rng, generate_dataset, train_with_progress, Checkpoint, ModelMetadata, TrainConfig};
use crate::error::{Error, Result};
use crate::selfcheck;
use crate::sim::{parse_snr_grid, to_csv, write_csv, SelectorKind, Simulator, SweepConfig};

#[derive(Debug, Parser)]
#[command(name = "rqsm", version, about = "RIS-assisted RQSM link simulator with COAS and learned antenna selection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo BER sweep over an SNR grid, written as CSV.
    Simulate(SimulateArgs),
    /// Generate a COAS-labelled dataset, train the selector, write a checkpoint.
    Train(TrainArgs),
    /// Generate a COAS-labelled dataset and write it as CSV.
    Dataset(DatasetArgs),
    /// Real-multiplication counts of COAS and the network, as CSV.
    Complexity(ComplexityArgs),
    /// Run a fast subset of the invariant checks.
    Selfcheck,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// coas, dnn, random or first.
    #[arg(long)]
    pub selector: Option<String>,
    #[arg(long = "M")]
    pub m: Option<usize>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "NR")]
    pub nr: Option<usize>,
    #[arg(long = "NS")]
    pub ns: Option<usize>,
    /// Symbol energy (default 1).
    #[arg(long)]
    pub es: Option<f64>,
    /// SNR grid in dB: `start:step:stop`, a comma list, or `inf`.
    #[arg(long)]
    pub snr: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Frames per SNR point at most (default 10^7).
    #[arg(long)]
    pub max_frames: Option<u64>,
    /// Stop a point once this many bit errors were seen (default 200).
    #[arg(long)]
    pub min_errors: Option<u64>,
    /// Model checkpoint, required for `--selector dnn`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output CSV (stdout when absent).
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Append rows to an existing CSV instead of overwriting it.
    #[arg(long)]
    pub append: bool,
    /// Simulate frames on all cores. Results do not change.
    #[arg(long)]
    pub parallel: bool,
    /// Write 0 in the wall_time_s column so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "NR")]
    pub nr: Option<usize>,
    #[arg(long = "NS")]
    pub ns: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dataset size (default 10^6).
    #[arg(long)]
    pub samples: Option<usize>,
    /// Default 400.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Optional cap on Adam steps.
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Minibatch size (default 256).
    #[arg(long)]
    pub batch: Option<usize>,
    /// Default 0.0005.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Validation share (default 0.1).
    #[arg(long)]
    pub val_split: Option<f64>,
    /// Hidden widths, comma separated (default 256,256,256,256).
    #[arg(long)]
    pub hidden: Option<String>,
    /// Checkpoint path.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long = "NR")]
    pub nr: Option<usize>,
    #[arg(long = "NS")]
    pub ns: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub val_split: Option<f64>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ComplexityArgs {
    /// Cases file (`case,layer_sizes,N,N_R,N_S`); the three reference cases
    /// when absent.
    #[arg(long)]
    pub cases: Option<PathBuf>,
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            what: "config file",
            msg: format!("line {}: expected `key = value`", i + 1),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Flag-over-file lookup for one subcommand.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&Path>, allowed: &[&str]) -> Result<Self> {
        let file = match path {
            Some(p) => parse_config_file(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
            None => BTreeMap::new(),
        };
        if let Some(k) = file.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::config(format!("unknown key {k:?} in config file")));
        }
        Ok(Settings { file })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(format!("config key {key}: cannot parse {v:?}"))),
        }
    }

    fn require<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.get(flag, key)?
            .ok_or_else(|| Error::config(format!("--{key} is required (flag or config file)")))
    }

    fn flag(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.get::<bool>(None, key)?.unwrap_or(false))
    }
}

fn parse_hidden(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("hidden widths: cannot parse {s:?}")))
        })
        .collect()
}

fn emit(out: Option<&Path>, text: &str, stdout: &mut dyn Write) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e)),
        None => stdout
            .write_all(text.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

const SIMULATE_KEYS: &[&str] = &[
    "selector", "M", "N", "NR", "NS", "es", "snr", "seed", "max-frames", "min-errors", "model", "out",
    "append", "parallel", "no-timing",
];

/// Builds the sweep configuration from flags and the optional config file.
pub fn sweep_config(args: &SimulateArgs) -> Result<SweepConfig> {
    let s = Settings::load(args.config.as_deref(), SIMULATE_KEYS)?;
    let selector: SelectorKind = s.require::<String>(args.selector.clone(), "selector")?.parse()?;
    let seed = s.require(args.seed, "seed")?;
    let mut c = SweepConfig::new(
        s.require(args.m, "M")?,
        s.require(args.n, "N")?,
        s.require(args.nr, "NR")?,
        s.require(args.ns, "NS")?,
        selector,
        seed,
    );
    c.snr_grid_db = parse_snr_grid(&s.require::<String>(args.snr.clone(), "snr")?)?;
    if let Some(es) = s.get(args.es, "es")? {
        c.symbol_energy = es;
    }
    if let Some(v) = s.get(args.max_frames, "max-frames")? {
        c.max_frames = v;
    }
    if let Some(v) = s.get(args.min_errors, "min-errors")? {
        c.min_bit_errors = v;
    }
    c.model_path = s.get(args.model.clone(), "model")?;
    c.parallel = s.flag(args.parallel, "parallel")?;
    c.record_wall_time = !s.flag(args.no_timing, "no-timing")?;
    if selector != SelectorKind::Dnn && c.model_path.is_some() {
        return Err(Error::config("--model only applies to --selector dnn"));
    }
    c.validate()?;
    Ok(c)
}

fn simulate(args: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let config = sweep_config(args)?;
    let s = Settings::load(args.config.as_deref(), SIMULATE_KEYS)?;
    let out: Option<PathBuf> = s.get(args.out.clone(), "out")?;
    let append = s.flag(args.append, "append")?;
    let records = Simulator::new(config)?.run_sweep()?;
    match out {
        Some(p) => write_csv(&p, &records, append),
        None => emit(None, &to_csv(&records), stdout),
    }
}

/// Resolves the training configuration and dataset dimensions.
pub fn train_config(args: &TrainArgs) -> Result<(TrainConfig, (usize, usize, usize), PathBuf)> {
    const KEYS: &[&str] = &[
        "N", "NR", "NS", "seed", "samples", "epochs", "max-iterations", "batch", "lr", "val-split", "hidden", "out",
        "quiet",
    ];
    let s = Settings::load(args.config.as_deref(), KEYS)?;
    let dims = (s.require(args.n, "N")?, s.require(args.nr, "NR")?, s.require(args.ns, "NS")?);
    let d = TrainConfig::default();
    let config = TrainConfig {
        n_samples: s.get(args.samples, "samples")?.unwrap_or(d.n_samples),
        validation_fraction: s.get(args.val_split, "val-split")?.unwrap_or(d.validation_fraction),
        minibatch: s.get(args.batch, "batch")?.unwrap_or(d.minibatch),
        learning_rate: s.get(args.lr, "lr")?.unwrap_or(d.learning_rate),
        epochs: s.get(args.epochs, "epochs")?.unwrap_or(d.epochs),
        max_iterations: s.get(args.max_iterations, "max-iterations")?,
        hidden_layers: match s.get::<String>(args.hidden.clone(), "hidden")? {
            Some(h) => parse_hidden(&h)?,
            None => d.hidden_layers,
        },
        seed: s.require(args.seed, "seed")?,
        ..d
    };
    config.validate()?;
    let out = s.require(args.out.clone(), "out")?;
    Ok((config, dims, out))
}

fn train(args: &TrainArgs) -> Result<()> {
    let (config, (n, nr, ns), out) = train_config(args)?;
    let data = generate_dataset(config.n_samples, n, nr, ns, config.validation_fraction, &mut dataset_rng(config.seed))?;
    let quiet = args.quiet;
    let outcome = train_with_progress(&data, &config, |e| {
        if !quiet {
            eprintln!(
                "epoch {:4}  train loss {:.4} acc {:.4}  val loss {:.4} acc {:.4}  {:.1}s",
                e.epoch, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy, e.seconds
            );
        }
    })?;
    let last = outcome.history.last().expect("history has epoch 0");
    let metadata = ModelMetadata {
        n_reflectors: n,
        n_rx: nr,
        n_sel: ns,
        seed: config.seed,
        config_hash: config.hash(),
        train_config: Some(config.clone()),
        epochs_run: last.epoch,
        validation_accuracy: Some(last.val_accuracy),
    };
    Checkpoint::new(outcome.params, metadata)?.save(&out)
}

fn dataset(args: &DatasetArgs) -> Result<()> {
    const KEYS: &[&str] = &["N", "NR", "NS", "seed", "samples", "val-split", "out"];
    let s = Settings::load(args.config.as_deref(), KEYS)?;
    let seed = s.require(args.seed, "seed")?;
    let samples = s.get(args.samples, "samples")?.unwrap_or(TrainConfig::default().n_samples);
    let split = s.get(args.val_split, "val-split")?.unwrap_or(0.1);
    let out: PathBuf = s.require(args.out.clone(), "out")?;
    let data = generate_dataset(
        samples,
        s.require(args.n, "N")?,
        s.require(args.nr, "NR")?,
        s.require(args.ns, "NS")?,
        split,
        &mut dataset_rng(seed),
    )?;
    data.write_csv(&out)
}

fn complexity(args: &ComplexityArgs, stdout: &mut dyn Write) -> Result<()> {
    let cases = match &args.cases {
        Some(p) => parse_cases(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => reference_cases(),
    };
    emit(args.out.as_deref(), &complexity_table(&cases)?, stdout)
}

fn run_selfcheck(stdout: &mut dyn Write) -> Result<()> {
    let checks = selfcheck::run_all();
    let mut failed = 0;
    for c in &checks {
        let mark = if c.passed { "PASS" } else { "FAIL" };
        writeln!(stdout, "{mark}  {:<28} {}", c.name, c.detail).map_err(|e| Error::io("<stdout>", e))?;
        failed += usize::from(!c.passed);
    }
    if failed > 0 {
        return Err(Error::InvalidArgument(format!("{failed} self-check(s) failed")));
    }
    Ok(())
}

/// Executes a parsed command line.
pub fn execute(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Simulate(a) => simulate(a, stdout),
        Command::Train(a) => train(a),
        Command::Dataset(a) => dataset(a),
        Command::Complexity(a) => complexity(a, stdout),
        Command::Selfcheck => run_selfcheck(stdout),
    }
}
