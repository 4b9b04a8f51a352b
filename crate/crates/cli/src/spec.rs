//! Experiment specification: a TOML file overlaid by command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, ValueEnum};
use serde::Deserialize;
use turnstile_core::robust::{EstimatorParams, Threshold};
use turnstile_core::wrapper::EnsembleSize;
use turnstile_core::StreamConfig;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "TURNSTILE_OUT_DIR";
const DEFAULT_OUT: &str = "turnstile-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Robust,
    BareSketch,
    ExactOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AdversaryKind {
    Random,
    Flip,
    Oscillator,
    Sketch,
    /// Replays `stream_file`.
    Replay,
}

/// A count written as `100000`, `1e5` or `10^5`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Count(pub u64);

impl FromStr for Count {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let bad = || format!("`{s}` is not a positive count (try 100000, 1e5 or 10^5)");
        let value = if let Some((b, e)) = s.split_once('^') {
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            let e: u32 = e.trim().parse().map_err(|_| bad())?;
            b.checked_pow(e).ok_or_else(bad)?
        } else if let Ok(v) = s.parse::<u64>() {
            v
        } else {
            let f: f64 = s.parse().map_err(|_| bad())?;
            if !(f >= 1.0 && f.fract() == 0.0 && f < 2f64.powi(63)) {
                return Err(bad());
            }
            f as u64
        };
        if value == 0 {
            return Err(bad());
        }
        Ok(Count(value))
    }
}

/// Comma-separated counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountList(pub Vec<u64>);

impl FromStr for CountList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',').map(|x| x.parse::<Count>().map(|c| c.0)).collect::<Result<_, _>>().map(CountList)
    }
}

impl fmt::Display for CountList {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u64::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// A count or list of counts in the file: `100000`, `"10^5"`, `[1e4, "10^5"]`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum FileCounts {
    One(u64),
    Text(String),
    Many(Vec<FileCount>),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum FileCount {
    Int(u64),
    Float(f64),
    Text(String),
}

impl FileCounts {
    fn resolve(&self) -> Result<Vec<u64>, String> {
        match self {
            FileCounts::One(v) => Count::from_str(&v.to_string()).map(|c| vec![c.0]),
            FileCounts::Text(s) => s.parse::<CountList>().map(|l| l.0),
            FileCounts::Many(xs) => xs
                .iter()
                .map(|x| match x {
                    FileCount::Int(v) => Count::from_str(&v.to_string()),
                    FileCount::Float(v) => Count::from_str(&v.to_string()),
                    FileCount::Text(s) => Count::from_str(s),
                })
                .map(|c| c.map(|c| c.0))
                .collect(),
        }
    }
}

/// `T` in the file: a number or `"auto"`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
enum FileThreshold {
    Fixed(u64),
    Auto(String),
}

/// The config file. Every key is optional; unknown keys are rejected.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSpec {
    n: Option<u64>,
    m: Option<FileCounts>,
    p: Option<f64>,
    alpha: Option<f64>,
    delta: Option<f64>,
    c_bound: Option<i64>,
    seed: Option<u64>,
    algorithm: Option<Algorithm>,
    adversary: Option<AdversaryKind>,
    flip_index: Option<u64>,
    threshold: Option<FileThreshold>,
    thresholds: Option<FileCounts>,
    k_scale: Option<f64>,
    k: Option<usize>,
    c_k: Option<f64>,
    runs: Option<usize>,
    out: Option<PathBuf>,
    stream_file: Option<PathBuf>,
    sequential: Option<bool>,
    transcripts: Option<bool>,
}

impl FileSpec {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Flags shared by `run` and `sweep`; each overrides the file.
#[derive(Clone, Debug, Default, Args)]
pub struct Flags {
    /// TOML experiment file; flags override its keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Moment order p in [0, 2].
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Universe size.
    #[arg(long)]
    pub n: Option<Count>,
    /// Stream length; `sweep` accepts a list such as 10^4,10^5,10^6.
    #[arg(long)]
    pub m: Option<CountList>,
    /// Bound C on |delta| per update.
    #[arg(long)]
    pub c_bound: Option<i64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub algorithm: Option<Algorithm>,
    #[arg(long, value_enum)]
    pub adversary: Option<AdversaryKind>,
    /// Coordinate used by the flip adversary.
    #[arg(long)]
    pub flip_index: Option<u64>,
    /// Density threshold T; `sweep` accepts a list.
    #[arg(long = "T", value_name = "T", conflicts_with = "auto_t")]
    pub threshold: Option<CountList>,
    /// Choose T from m and p.
    #[arg(long = "auto-T")]
    pub auto_t: bool,
    /// Scale the ensemble-size formula by a factor in (0, 1].
    #[arg(long, conflicts_with = "k")]
    pub k_scale: Option<f64>,
    /// Run exactly this many copies per ensemble.
    #[arg(long)]
    pub k: Option<usize>,
    /// Leading constant of the ensemble-size formula.
    #[arg(long)]
    pub c_k: Option<f64>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Output directory (default: $TURNSTILE_OUT_DIR, else ./turnstile-out).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Replay this stream (one `<index> <delta>` per line); implies the
    /// replay adversary.
    #[arg(long)]
    pub stream_file: Option<PathBuf>,
    /// Run games one after another instead of in parallel.
    #[arg(long)]
    pub sequential: bool,
    /// Write per-run transcripts during sweeps as well.
    #[arg(long)]
    pub transcripts: bool,
}

/// A validated experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub n: u64,
    pub ms: Vec<u64>,
    pub p: f64,
    pub alpha: f64,
    pub delta: f64,
    pub c_bound: i64,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub adversary: AdversaryKind,
    pub flip_index: u64,
    /// Empty means AUTO.
    pub thresholds: Vec<u64>,
    pub size: EnsembleSize,
    pub c_k: Option<f64>,
    pub runs: usize,
    pub out: PathBuf,
    pub stream_file: Option<PathBuf>,
    pub sequential: bool,
    pub transcripts: bool,
}

impl ExperimentSpec {
    /// Overlay `flags` on the file (if any) and validate.
    pub fn resolve(flags: &Flags) -> Result<Self, String> {
        let file = match &flags.config {
            Some(path) => FileSpec::load(path)?,
            None => FileSpec::default(),
        };
        let ms = match (&flags.m, &file.m) {
            (Some(l), _) => l.0.clone(),
            (None, Some(f)) => f.resolve().map_err(|e| format!("m: {e}"))?,
            (None, None) => Vec::new(),
        };
        let thresholds = if flags.auto_t {
            Vec::new()
        } else if let Some(l) = &flags.threshold {
            l.0.clone()
        } else {
            match (&file.threshold, &file.thresholds) {
                (Some(_), Some(_)) => return Err("set either threshold or thresholds, not both".into()),
                (Some(FileThreshold::Fixed(t)), None) => vec![*t],
                (Some(FileThreshold::Auto(s)), None) if s.eq_ignore_ascii_case("auto") => Vec::new(),
                (Some(FileThreshold::Auto(s)), None) => {
                    return Err(format!("threshold: expected a number or \"auto\", got \"{s}\""))
                }
                (None, Some(l)) => l.resolve().map_err(|e| format!("thresholds: {e}"))?,
                (None, None) => Vec::new(),
            }
        };
        let size = if let Some(k) = flags.k {
            EnsembleSize::Fixed(k)
        } else if let Some(s) = flags.k_scale {
            EnsembleSize::Scale(s)
        } else {
            match (file.k, file.k_scale) {
                (Some(_), Some(_)) => return Err("set either k or k_scale, not both".into()),
                (Some(k), None) => EnsembleSize::Fixed(k),
                (None, Some(s)) => EnsembleSize::Scale(s),
                (None, None) => EnsembleSize::Formula,
            }
        };
        let stream_file = flags.stream_file.clone().or(file.stream_file);
        let adversary = flags.adversary.or(file.adversary).unwrap_or(if stream_file.is_some() {
            AdversaryKind::Replay
        } else {
            AdversaryKind::Random
        });
        let out = flags
            .out
            .clone()
            .or(file.out)
            .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        let spec = ExperimentSpec {
            n: flags.n.map(|c| c.0).or(file.n).unwrap_or(1 << 16),
            ms,
            p: flags.p.or(file.p).unwrap_or(2.0),
            alpha: flags.alpha.or(file.alpha).unwrap_or(0.5),
            delta: flags.delta.or(file.delta).unwrap_or(0.2),
            c_bound: flags.c_bound.or(file.c_bound).unwrap_or(1),
            seed: flags.seed.or(file.seed).unwrap_or(0),
            algorithm: flags.algorithm.or(file.algorithm).unwrap_or(Algorithm::Robust),
            adversary,
            flip_index: flags.flip_index.or(file.flip_index).unwrap_or(1),
            thresholds,
            size,
            c_k: flags.c_k.or(file.c_k),
            runs: flags.runs.or(file.runs).unwrap_or(1),
            out,
            stream_file,
            sequential: flags.sequential || file.sequential.unwrap_or(false),
            transcripts: flags.transcripts || file.transcripts.unwrap_or(false),
        };
        spec.validate()?;
        Ok(spec)
    }

    fn validate(&self) -> Result<(), String> {
        if self.runs == 0 {
            return Err("runs must be at least 1".into());
        }
        if self.ms.is_empty() && self.stream_file.is_none() {
            return Err("m is required unless a stream file is replayed".into());
        }
        if (self.adversary == AdversaryKind::Replay) != self.stream_file.is_some() {
            return Err("the replay adversary and --stream-file go together".into());
        }
        if self.flip_index == 0 || self.flip_index > self.n {
            return Err(format!("flip_index must lie in [1, {}]", self.n));
        }
        match self.size {
            EnsembleSize::Scale(s) if !(s > 0.0 && s <= 1.0) => {
                return Err(format!("k_scale must lie in (0, 1], got {s}"))
            }
            EnsembleSize::Fixed(0) => return Err("k must be at least 1".into()),
            _ => {}
        }
        if self.c_k.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return Err("c_k must be positive".into());
        }
        if self.thresholds.contains(&0) {
            return Err("T must be positive".into());
        }
        if self.algorithm != Algorithm::Robust && !(self.thresholds.is_empty() && self.size == EnsembleSize::Formula) {
            return Err("T and ensemble sizes only apply to the robust algorithm".into());
        }
        // Check every stream configuration up front.
        for &m in self.ms.iter().chain(self.ms.is_empty().then_some(&1)) {
            self.stream_config(m, 0).validate().map_err(|e| e.to_string())?;
        }
        if self.p > 2.0 {
            return Err(format!("p must lie in [0, 2], got {}", self.p));
        }
        if self.algorithm == Algorithm::Robust {
            for &m in &self.ms {
                for t in self.threshold_choices() {
                    EstimatorParams::derive(&self.stream_config(m, 0), t).map_err(|e| e.to_string())?;
                }
            }
        }
        Ok(())
    }

    pub fn stream_config(&self, m: u64, seed: u64) -> StreamConfig {
        StreamConfig { n: self.n, m, p: self.p, alpha: self.alpha, delta: self.delta, c_bound: self.c_bound, seed }
    }

    /// The thresholds to play: AUTO when none were given.
    pub fn threshold_choices(&self) -> Vec<Threshold> {
        if self.thresholds.is_empty() {
            vec![Threshold::Auto]
        } else {
            self.thresholds.iter().map(|&t| Threshold::Fixed(t)).collect()
        }
    }
}
