//! Monte Carlo BER measurement.
//!
//! Every frame draws from its own ChaCha stream, keyed by `(seed, frame
//! index)`, so results do not depend on scheduling or thread count. Each
//! frame consumes its stream in a fixed order (channel, then bits, then
//! noise) whatever the selector is, so runs with the same seed see the same
//! channels and noise across selectors and SNR points. The random selector
//! draws from a second, independent stream.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{binomial, coas_select, AntennaSubset, ChannelMatrix, SelectedChannel};
use crate::dnn::{predict_subset, Checkpoint, MlpParams};
use crate::error::{Error, Result};
use crate::phy::{ris_phases, Modem, SystemConfig};

pub const CSV_HEADER: &str = "selector,M,N,N_R,N_S,snr_db,frames,bit_errors,ber,seed,wall_time_s";

/// Frames simulated between stop-rule checks.
const CHUNK: u64 = 1024;

/// Salt separating the selector stream from the frame stream.
const SELECTOR_STREAM_SALT: u64 = 0x5e1e_c7a2_d0c0_ffee;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectorKind {
    Coas,
    Dnn,
    Random,
    /// Always the lowest-label subset `{1, .., N_S}`.
    First,
}

impl SelectorKind {
    pub fn name(self) -> &'static str {
        match self {
            SelectorKind::Coas => "coas",
            SelectorKind::Dnn => "dnn",
            SelectorKind::Random => "random",
            SelectorKind::First => "first",
        }
    }
}

impl std::fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coas" => Ok(SelectorKind::Coas),
            "dnn" => Ok(SelectorKind::Dnn),
            "random" => Ok(SelectorKind::Random),
            "first" => Ok(SelectorKind::First),
            _ => Err(Error::config(format!(
                "unknown selector {s:?} (expected coas, dnn, random or first)"
            ))),
        }
    }
}

/// A ready-to-use antenna selector.
#[derive(Debug, Clone)]
pub enum Selector {
    Coas,
    Dnn(Arc<MlpParams>),
    Random,
    First,
}

impl Selector {
    pub fn kind(&self) -> SelectorKind {
        match self {
            Selector::Coas => SelectorKind::Coas,
            Selector::Dnn(_) => SelectorKind::Dnn,
            Selector::Random => SelectorKind::Random,
            Selector::First => SelectorKind::First,
        }
    }

    pub fn select<R: Rng + ?Sized>(&self, h: &ChannelMatrix, n_sel: usize, rng: &mut R) -> Result<SelectedChannel> {
        match self {
            Selector::Coas => coas_select(h, n_sel),
            Selector::Dnn(params) => SelectedChannel::from_subset(h, predict_subset(params, h, n_sel)?),
            Selector::Random => {
                let total = binomial(h.n_rx(), n_sel) as usize;
                let label = rng.random_range(1..=total);
                SelectedChannel::from_subset(h, AntennaSubset::from_label(label, h.n_rx(), n_sel)?)
            }
            Selector::First => SelectedChannel::from_subset(h, AntennaSubset::from_label(1, h.n_rx(), n_sel)?),
        }
    }
}

/// Everything that defines a BER sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub mod_order: usize,
    pub n_reflectors: usize,
    pub n_rx: usize,
    pub n_sel: usize,
    pub symbol_energy: f64,
    pub snr_grid_db: Vec<f64>,
    pub selector: SelectorKind,
    pub max_frames: u64,
    pub min_bit_errors: u64,
    pub seed: u64,
    /// Required for [`SelectorKind::Dnn`].
    pub model_path: Option<PathBuf>,
    /// Spread frames over the rayon pool. Results are identical either way.
    pub parallel: bool,
    /// Record elapsed time per point; off gives byte-reproducible CSV.
    pub record_wall_time: bool,
}

impl SweepConfig {
    /// Defaults for the stop rule: 200 bit errors or 10^7 frames.
    pub fn new(mod_order: usize, n_reflectors: usize, n_rx: usize, n_sel: usize, selector: SelectorKind, seed: u64) -> Self {
        SweepConfig {
            mod_order,
            n_reflectors,
            n_rx,
            n_sel,
            symbol_energy: 1.0,
            snr_grid_db: Vec::new(),
            selector,
            max_frames: 10_000_000,
            min_bit_errors: 200,
            seed,
            model_path: None,
            parallel: false,
            record_wall_time: true,
        }
    }

    pub fn system(&self, noise_variance: f64) -> SystemConfig {
        SystemConfig {
            mod_order: self.mod_order,
            n_reflectors: self.n_reflectors,
            n_rx: self.n_rx,
            n_sel: self.n_sel,
            symbol_energy: self.symbol_energy,
            noise_variance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system(0.0).validate()?;
        if self.symbol_energy.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::config("symbol energy must be positive"));
        }
        if self.max_frames == 0 || self.min_bit_errors == 0 {
            return Err(Error::config("stop rule needs positive max_frames and min_bit_errors"));
        }
        if self.snr_grid_db.iter().any(|s| s.is_nan()) {
            return Err(Error::config("SNR grid contains NaN"));
        }
        Ok(())
    }
}

/// `N_0 = E_s / 10^(snr_db / 10)`. `+∞` dB gives a noiseless channel.
pub fn snr_to_noise(snr_db: f64, symbol_energy: f64) -> Result<f64> {
    if symbol_energy.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::config(format!("symbol energy must be positive, got {symbol_energy}")));
    }
    if snr_db.is_nan() {
        return Err(Error::config("SNR is NaN"));
    }
    Ok(symbol_energy / 10f64.powf(snr_db / 10.0))
}

/// One measured BER point.
#[derive(Debug, Clone, PartialEq)]
pub struct BerRecord {
    pub selector: SelectorKind,
    pub mod_order: usize,
    pub n_reflectors: usize,
    pub n_rx: usize,
    pub n_sel: usize,
    pub snr_db: f64,
    pub frames: u64,
    pub bit_errors: u64,
    pub bits_per_frame: usize,
    pub ber: f64,
    pub seed: u64,
    pub wall_time_s: f64,
}

impl BerRecord {
    pub fn bits(&self) -> u64 {
        self.frames * self.bits_per_frame as u64
    }

    /// Wilson score interval for the bit error probability at normal
    /// quantile `z` (1.96 for 95%). Unlike the plain Wald interval it stays
    /// informative when no errors were seen.
    pub fn confidence_interval(&self, z: f64) -> (f64, f64) {
        let n = self.bits() as f64;
        if n == 0.0 {
            return (0.0, 1.0);
        }
        let p = self.bit_errors as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let center = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        ((center - half).max(0.0), (center + half).min(1.0))
    }

    /// Standard error of the BER estimate (binomial, bits independent).
    pub fn standard_error(&self) -> f64 {
        let n = self.bits() as f64;
        (self.ber * (1.0 - self.ber) / n).sqrt()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.selector,
            self.mod_order,
            self.n_reflectors,
            self.n_rx,
            self.n_sel,
            self.snr_db,
            self.frames,
            self.bit_errors,
            self.ber,
            self.seed,
            self.wall_time_s
        )
    }
}

/// Whether the 95% intervals of `a` lie entirely below those of `b`.
pub fn ci_separated_below(a: &BerRecord, b: &BerRecord) -> bool {
    a.confidence_interval(1.96).1 < b.confidence_interval(1.96).0
}

/// The per-frame random stream.
pub fn frame_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame);
    rng
}

fn selector_rng(seed: u64, frame: u64) -> ChaCha8Rng {
    frame_rng(seed ^ SELECTOR_STREAM_SALT, frame)
}

/// Monte Carlo engine for one configuration and selector.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SweepConfig,
    selector: Selector,
}

impl Simulator {
    /// Builds the selector from the configuration, loading and checking the
    /// model checkpoint when the selector is `dnn`.
    pub fn new(config: SweepConfig) -> Result<Self> {
        config.validate()?;
        let selector = match config.selector {
            SelectorKind::Coas => Selector::Coas,
            SelectorKind::Random => Selector::Random,
            SelectorKind::First => Selector::First,
            SelectorKind::Dnn => {
                let path = config
                    .model_path
                    .as_ref()
                    .ok_or_else(|| Error::config("selector dnn requires a model checkpoint"))?;
                let ck = Checkpoint::load(path)?;
                check_model_fits(&ck, &config)?;
                Selector::Dnn(Arc::new(ck.params))
            }
        };
        Ok(Simulator { config, selector })
    }

    /// Uses an already constructed selector (for example an in-memory model).
    pub fn with_selector(mut config: SweepConfig, selector: Selector) -> Result<Self> {
        config.selector = selector.kind();
        config.validate()?;
        if let Selector::Dnn(params) = &selector {
            let inputs = 2 * config.n_reflectors * config.n_rx;
            let classes = binomial(config.n_rx, config.n_sel) as usize;
            if params.n_inputs() != inputs || params.n_classes() != classes {
                return Err(Error::config(format!(
                    "model has {} inputs and {} classes; configuration needs {inputs} and {classes}",
                    params.n_inputs(),
                    params.n_classes()
                )));
            }
        }
        Ok(Simulator { config, selector })
    }

    pub fn config(&self) -> &SweepConfig {
        &self.config
    }

    /// Bit errors of frame `frame`; the noise level is the modem's.
    pub fn simulate_frame(&self, modem: &Modem, frame: u64) -> Result<u32> {
        let c = &self.config;
        let mut rng = frame_rng(c.seed, frame);
        let h = ChannelMatrix::sample(c.n_reflectors, c.n_rx, &mut rng)?;
        let bits = modem.random_bits(&mut rng);
        let sel = self.selector.select(&h, c.n_sel, &mut selector_rng(c.seed, frame))?;
        let tx = modem.map_bits(&bits)?;
        let phases = ris_phases(&sel, tx.l_re, tx.l_im)?;
        let y = modem.transmit_receive(&sel, &tx, &phases, &mut rng)?;
        let d = modem.ml_detect(&y, &sel)?;
        let out = modem.demap_bits(d.l_re, d.l_im, d.symbol_index);
        Ok(bits.iter().zip(&out).filter(|(a, b)| a != b).count() as u32)
    }

    /// Runs frames until `min_bit_errors` errors or `max_frames` frames,
    /// whichever comes first. The frame that reaches the error target is the
    /// last one counted.
    pub fn run_point(&self, snr_db: f64) -> Result<BerRecord> {
        let c = &self.config;
        let start = Instant::now();
        let n0 = snr_to_noise(snr_db, c.symbol_energy)?;
        let modem = Modem::new(c.system(n0))?;

        let mut frames = 0u64;
        let mut bit_errors = 0u64;
        'outer: while frames < c.max_frames {
            let end = (frames + CHUNK).min(c.max_frames);
            let chunk: Vec<u32> = if c.parallel {
                (frames..end)
                    .into_par_iter()
                    .map(|f| self.simulate_frame(&modem, f))
                    .collect::<Result<_>>()?
            } else {
                (frames..end).map(|f| self.simulate_frame(&modem, f)).collect::<Result<_>>()?
            };
            for e in chunk {
                frames += 1;
                bit_errors += u64::from(e);
                if bit_errors >= c.min_bit_errors {
                    break 'outer;
                }
            }
        }

        let bits_per_frame = modem.bits_per_frame();
        Ok(BerRecord {
            selector: self.selector.kind(),
            mod_order: c.mod_order,
            n_reflectors: c.n_reflectors,
            n_rx: c.n_rx,
            n_sel: c.n_sel,
            snr_db,
            frames,
            bit_errors,
            bits_per_frame,
            ber: bit_errors as f64 / (frames * bits_per_frame as u64) as f64,
            seed: c.seed,
            wall_time_s: if c.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        })
    }

    pub fn run_sweep(&self) -> Result<Vec<BerRecord>> {
        if self.config.snr_grid_db.is_empty() {
            return Err(Error::config("SNR grid is empty"));
        }
        self.config.snr_grid_db.iter().map(|&s| self.run_point(s)).collect()
    }
}

fn check_model_fits(ck: &Checkpoint, config: &SweepConfig) -> Result<()> {
    let m = &ck.metadata;
    if (m.n_reflectors, m.n_rx, m.n_sel) != (config.n_reflectors, config.n_rx, config.n_sel) {
        return Err(Error::config(format!(
            "model was trained for N={}, N_R={}, N_S={} but the sweep uses N={}, N_R={}, N_S={}",
            m.n_reflectors, m.n_rx, m.n_sel, config.n_reflectors, config.n_rx, config.n_sel
        )));
    }
    Ok(())
}

pub fn run_point(config: &SweepConfig, snr_db: f64) -> Result<BerRecord> {
    Simulator::new(config.clone())?.run_point(snr_db)
}

pub fn run_sweep(config: &SweepConfig) -> Result<Vec<BerRecord>> {
    Simulator::new(config.clone())?.run_sweep()
}

/// Header plus one line per record.
pub fn to_csv(records: &[BerRecord]) -> String {
    let mut out = String::new();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for r in records {
        writeln!(out, "{}", r.csv_row()).unwrap();
    }
    out
}

/// Writes records to `path`. With `append`, rows go after existing content
/// and the header is only written when the file is new or empty.
pub fn write_csv(path: &Path, records: &[BerRecord], append: bool) -> Result<()> {
    use std::io::Write;
    let existing = append && std::fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let text = if existing {
        records.iter().map(|r| r.csv_row() + "\n").collect()
    } else {
        to_csv(records)
    };
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Parses `start:step:stop` (inclusive), a comma list, or a single value.
/// `inf` denotes a noiseless point.
pub fn parse_snr_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| Error::Parse {
        what: "SNR grid",
        msg,
    };
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| !v.is_nan())
            .ok_or_else(|| bad(format!("not a number: {s:?}")))
    };
    let text = text.trim();
    if text.is_empty() {
        return Err(bad("empty".into()));
    }
    if text.contains(':') {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 3 {
            return Err(bad(format!("expected start:step:stop, got {text:?}")));
        }
        let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !start.is_finite() || !stop.is_finite() || stop < start {
            return Err(bad(format!("range {text:?} must have a positive step and stop >= start")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        return Ok((0..count).map(|i| start + i as f64 * step).collect());
    }
    text.split(',').map(num).collect()
}
