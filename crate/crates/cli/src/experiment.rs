//! Playing games and writing their CSVs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use turnstile_core::harness::stats::loglog_slope;
use turnstile_core::harness::*;
use turnstile_core::hashing::derive;
use turnstile_core::oblivious::make_estimator;
use turnstile_core::par::{map_range, Execution};
use turnstile_core::robust::{auto_threshold, RobustMomentEstimator, RobustOptions, Threshold};
use turnstile_core::stream::{parse_stream, ExactMoment};
use turnstile_core::Update;

use crate::spec::{AdversaryKind, Algorithm, ExperimentSpec};

pub const SCALING_HEADER: &str = "m,threshold,runs,completed,all_correct,max_words,mean_wall_time";
pub const SLOPES_HEADER: &str = "series,variable,points,slope";
pub const STATUS_HEADER: &str = "run,length,status";

/// Summary of one game, kept after its transcript is written.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub summary: String,
    pub status: String,
    pub length: u64,
    pub completed: bool,
    pub violation: bool,
    pub all_correct: bool,
    pub max_words: usize,
    pub wall_time: f64,
    pub threshold: Option<u64>,
}

/// One grid point of an experiment.
struct Point<'a> {
    spec: &'a ExperimentSpec,
    m: u64,
    threshold: Threshold,
    replay: Option<&'a [Update]>,
}

impl Point<'_> {
    fn algorithm(&self, seed: u64, inner: Execution) -> Result<(Box<dyn StreamAlgorithm>, Option<u64>)> {
        let s = self.spec;
        let cfg = s.stream_config(self.m, seed);
        Ok(match s.algorithm {
            Algorithm::Robust => {
                let mut opts = RobustOptions { execution: inner, ..RobustOptions::default().with_size(s.size) };
                if let Some(c_k) = s.c_k {
                    opts.c_k = c_k;
                }
                let e = RobustMomentEstimator::with_options(&cfg, self.threshold, opts)?;
                let t = e.params().threshold;
                (Box::new(e), Some(t))
            }
            Algorithm::BareSketch => (Box::new(BareSketch(make_estimator(s.p, s.alpha, s.n, self.m, seed)?)), None),
            Algorithm::ExactOracle => (Box::new(ExactAlgorithm(ExactMoment::new(s.n, s.p))), None),
        })
    }

    fn adversary(&self, seed: u64, threshold: u64) -> Box<dyn Adversary> {
        let s = self.spec;
        match s.adversary {
            AdversaryKind::Random => Box::new(RandomOblivious::new(seed, s.n, s.c_bound)),
            AdversaryKind::Flip => Box::new(FlipAttack::new(s.flip_index)),
            AdversaryKind::Oscillator => Box::new(DensityOscillator::new(threshold, s.n, seed)),
            AdversaryKind::Sketch => Box::new(SketchAttack::new(s.n, s.p, seed)),
            AdversaryKind::Replay => Box::new(Replay::new(self.replay.unwrap_or_default().to_vec())),
        }
    }

    /// Play run `r`, writing its transcript into `dir` when asked.
    fn play(&self, r: usize, inner: Execution, dir: Option<&Path>) -> Result<RunResult> {
        let s = self.spec;
        let (mut alg, threshold) = self.algorithm(derive(s.seed, 2 * r as u64), inner)?;
        let t_adv = match (threshold, self.threshold) {
            (Some(t), _) | (None, Threshold::Fixed(t)) => t,
            (None, Threshold::Auto) => auto_threshold(s.p, s.n, self.m),
        };
        if s.adversary == AdversaryKind::Oscillator && s.n <= 4 * t_adv {
            bail!("the oscillator needs n > 4T = {}", 4 * t_adv);
        }
        let mut adv = self.adversary(derive(s.seed, 2 * r as u64 + 1), t_adv);
        let cfg =
            GameConfig { n: s.n, m: self.m, p: s.p, alpha: s.alpha, c_bound: s.c_bound, record_steps: dir.is_some() };
        let t = run_game(alg.as_mut(), adv.as_mut(), &cfg);
        if let Some(dir) = dir {
            let path = dir.join(format!("run-{r:04}.csv"));
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            write_transcript_csv(&mut w, &t)?;
            w.flush()?;
        }
        let status = match &t.status {
            RunStatus::Completed => "completed".to_string(),
            RunStatus::Fatal(e) => format!("fatal: {e}"),
            RunStatus::ProtocolViolation(e) => format!("protocol violation: {e}"),
        };
        Ok(RunResult {
            summary: summary_row(r, &t),
            completed: t.status == RunStatus::Completed,
            violation: matches!(t.status, RunStatus::ProtocolViolation(_)),
            status,
            length: t.length,
            all_correct: t.all_correct,
            max_words: t.max_words,
            wall_time: t.wall_time,
            threshold,
        })
    }

    /// All runs of this point; `summary.csv` and `status.csv` go into `dir`.
    fn play_all(&self, dir: &Path, transcripts: bool) -> Result<Vec<RunResult>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let s = self.spec;
        let (outer, inner) = match (s.sequential, s.runs) {
            (true, _) => (Execution::Sequential, Execution::Sequential),
            (false, 1) => (Execution::Sequential, Execution::Auto),
            (false, _) => (Execution::Auto, Execution::Sequential),
        };
        let tdir = transcripts.then_some(dir);
        let results: Vec<RunResult> =
            map_range(s.runs, outer, |r| self.play(r, inner, tdir)).into_iter().collect::<Result<_>>()?;
        let mut summary = String::new();
        let mut status = String::new();
        for (r, res) in results.iter().enumerate() {
            summary.push_str(&res.summary);
            summary.push('\n');
            status.push_str(&format!("{r},{},{}\n", res.length, csv_field(&res.status)));
        }
        fs::write(dir.join("summary.csv"), format!("{SUMMARY_HEADER}\n{summary}"))?;
        fs::write(dir.join("status.csv"), format!("{STATUS_HEADER}\n{status}"))?;
        Ok(results)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// The replay stream named by the spec, if any.
pub fn load_replay(spec: &ExperimentSpec) -> Result<Option<Vec<Update>>> {
    let Some(path) = &spec.stream_file else { return Ok(None) };
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let updates = parse_stream(BufReader::new(file), spec.n, spec.c_bound)
        .with_context(|| format!("reading {}", path.display()))?;
    if updates.is_empty() {
        bail!("{} contains no updates", path.display());
    }
    Ok(Some(updates))
}

/// Outcome of an experiment: whether every game ran to completion.
pub struct Report {
    pub all_completed: bool,
    pub lines: Vec<String>,
}

/// A single configuration played `runs` times.
pub fn run(spec: &ExperimentSpec, replay: Option<&[Update]>) -> Result<Report> {
    if spec.ms.len() > 1 || spec.thresholds.len() > 1 {
        bail!("`run` takes a single m and T; use `sweep` for lists");
    }
    let m = spec.ms.first().copied().or(replay.map(|u| u.len() as u64)).expect("validated");
    let point = Point { spec, m, threshold: spec.threshold_choices()[0], replay };
    let results = point.play_all(&spec.out, true)?;
    let ok = results.iter().filter(|r| r.all_correct).count();
    let done = results.iter().filter(|r| r.completed).count();
    let words = results.iter().map(|r| r.max_words).max().unwrap_or(0);
    let mut lines = vec![format!(
        "{} runs: {done} completed, {ok} all-correct, max words {words}; output in {}",
        results.len(),
        spec.out.display()
    )];
    lines.extend(
        results.iter().enumerate().filter(|(_, r)| !r.completed).map(|(i, r)| format!("run {i}: {}", r.status)),
    );
    Ok(Report { all_completed: results.iter().all(|r| !r.violation), lines })
}

fn threshold_label(t: Threshold) -> String {
    match t {
        Threshold::Auto => "auto".into(),
        Threshold::Fixed(t) => t.to_string(),
    }
}

/// Every (m, T) pair, with `scaling.csv` and `slopes.csv` on top.
pub fn sweep(spec: &ExperimentSpec, replay: Option<&[Update]>) -> Result<Report> {
    let ms: Vec<u64> = if spec.ms.is_empty() { vec![replay.expect("validated").len() as u64] } else { spec.ms.clone() };
    let ts = spec.threshold_choices();
    fs::create_dir_all(&spec.out).with_context(|| format!("creating {}", spec.out.display()))?;
    let mut rows = Vec::new();
    let mut all_completed = true;
    let mut lines = Vec::new();
    for &m in &ms {
        for &t in &ts {
            let point = Point { spec, m, threshold: t, replay };
            let dir: PathBuf = spec.out.join(format!("m{m}_T{}", threshold_label(t)));
            let results = point.play_all(&dir, spec.transcripts)?;
            all_completed &= results.iter().all(|r| !r.violation);
            let words = results.iter().map(|r| r.max_words).max().unwrap_or(0);
            let used_t =
                results.first().and_then(|r| r.threshold).map_or_else(|| threshold_label(t), |t| t.to_string());
            let wall = results.iter().map(|r| r.wall_time).sum::<f64>() / results.len() as f64;
            let done = results.iter().filter(|r| r.completed).count();
            let ok = results.iter().filter(|r| r.all_correct).count();
            lines.push(format!("m={m} T={used_t}: max words {words}, {ok}/{} all-correct", results.len()));
            rows.push((m, t, used_t, results.len(), done, ok, words, wall));
        }
    }
    let mut scaling = format!("{SCALING_HEADER}\n");
    for (m, _, used_t, runs, done, ok, words, wall) in &rows {
        scaling.push_str(&format!("{m},{used_t},{runs},{done},{ok},{words},{wall:.6}\n"));
    }
    fs::write(spec.out.join("scaling.csv"), scaling)?;

    // One series per fixed T across m, and per m across T.
    let mut slopes = format!("{SLOPES_HEADER}\n");
    let mut emit = |series: String, variable: &str, pts: Vec<(f64, f64)>| {
        if let Some(slope) = loglog_slope(&pts) {
            lines.push(format!("slope of max words vs {variable} ({series}): {slope:.3}"));
            slopes.push_str(&format!("{series},{variable},{},{slope:.6}\n", pts.len()));
        }
    };
    for &t in &ts {
        let pts = rows.iter().filter(|r| r.1 == t).map(|r| (r.0 as f64, r.6 as f64)).collect();
        emit(format!("T={}", threshold_label(t)), "m", pts);
    }
    for &m in &ms {
        let pts =
            rows.iter().filter(|r| r.0 == m).filter_map(|r| r.2.parse::<f64>().ok().map(|t| (t, r.6 as f64))).collect();
        if ts.len() > 1 {
            emit(format!("m={m}"), "T", pts);
        }
    }
    fs::write(spec.out.join("slopes.csv"), slopes)?;
    Ok(Report { all_completed, lines })
}
