//! The adaptive two-player game: an adversary picks each update after
//! seeing all previous outputs, the algorithm answers, and an independent
//! exact oracle scores every answer.

mod adversary;
pub mod stats;

use std::io::{self, Write};
use std::time::Instant;

pub use adversary::{Adversary, DensityOscillator, FlipAttack, RandomOblivious, Replay, SketchAttack};

use crate::error::{Error, Result};
use crate::oblivious::{Estimator, ObliviousEstimator};
use crate::robust::{Regime, RobustMomentEstimator};
use crate::stream::{ExactMoment, Update};

/// An algorithm that answers after every update.
pub trait StreamAlgorithm {
    fn process(&mut self, u: Update) -> Result<f64>;
    fn words_used(&self) -> usize;
    fn regime(&self) -> Option<Regime> {
        None
    }
}

impl StreamAlgorithm for RobustMomentEstimator {
    fn process(&mut self, u: Update) -> Result<f64> {
        RobustMomentEstimator::process(self, u)
    }

    fn words_used(&self) -> usize {
        RobustMomentEstimator::words_used(self)
    }

    fn regime(&self) -> Option<Regime> {
        Some(RobustMomentEstimator::regime(self))
    }
}

/// A single oblivious sketch queried after every update.
#[derive(Clone, Debug)]
pub struct BareSketch(pub Estimator);

impl StreamAlgorithm for BareSketch {
    fn process(&mut self, u: Update) -> Result<f64> {
        self.0.update(u);
        Ok(self.0.estimate())
    }

    fn words_used(&self) -> usize {
        self.0.words_used()
    }
}

/// Exact computation with linear space, as a reference algorithm.
#[derive(Clone, Debug)]
pub struct ExactAlgorithm(pub ExactMoment);

impl StreamAlgorithm for ExactAlgorithm {
    fn process(&mut self, u: Update) -> Result<f64> {
        self.0.apply(u)?;
        Ok(self.0.value())
    }

    fn words_used(&self) -> usize {
        self.0.vector().words_used() + 2
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameConfig {
    pub n: u64,
    pub m: u64,
    pub p: f64,
    pub alpha: f64,
    pub c_bound: i64,
    /// Keep per-step records (otherwise only the summary is filled).
    pub record_steps: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub update: Update,
    pub output: f64,
    pub true_value: f64,
    /// `||v||_0` of the oracle vector.
    pub true_density: usize,
    pub correct: bool,
    pub regime: Option<Regime>,
    pub words_used: usize,
}

/// How a game ended.
#[derive(Clone, Debug, PartialEq)]
pub enum RunStatus {
    Completed,
    /// The algorithm aborted (recovery failure, budget exhaustion).
    Fatal(Error),
    /// The adversary emitted an invalid update.
    ProtocolViolation(Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameTranscript {
    pub steps: Vec<StepRecord>,
    pub length: u64,
    pub all_correct: bool,
    pub first_failure: Option<u64>,
    pub max_words: usize,
    pub regime_changes: u64,
    pub status: RunStatus,
    pub wall_time: f64,
}

pub fn is_correct(output: f64, truth: f64, alpha: f64) -> bool {
    (1.0 - alpha) * truth <= output && output <= (1.0 + alpha) * truth
}

/// Play one game of at most `cfg.m` rounds.
pub fn run_game(alg: &mut dyn StreamAlgorithm, adv: &mut dyn Adversary, cfg: &GameConfig) -> GameTranscript {
    let start = Instant::now();
    let mut oracle = ExactMoment::new(cfg.n, cfg.p);
    let mut updates = Vec::new();
    let mut outputs = Vec::new();
    let mut t = GameTranscript {
        steps: Vec::new(),
        length: 0,
        all_correct: true,
        first_failure: None,
        max_words: alg.words_used(),
        regime_changes: 0,
        status: RunStatus::Completed,
        wall_time: 0.0,
    };
    let mut regime = alg.regime();
    for step in 1..=cfg.m {
        let Some(u) = adv.next_update(&updates, &outputs) else { break };
        if let Err(e) = u.validate(cfg.n, cfg.c_bound) {
            t.status = RunStatus::ProtocolViolation(e);
            break;
        }
        let output = match alg.process(u) {
            Ok(y) => y,
            Err(e) => {
                t.status = RunStatus::Fatal(e);
                t.all_correct = false;
                t.first_failure.get_or_insert(step);
                break;
            }
        };
        oracle.apply(u).expect("validated update");
        let truth = oracle.value();
        let correct = is_correct(output, truth, cfg.alpha);
        if !correct {
            t.all_correct = false;
            t.first_failure.get_or_insert(step);
        }
        let words = alg.words_used();
        t.max_words = t.max_words.max(words);
        let now = alg.regime();
        if now != regime {
            t.regime_changes += 1;
            regime = now;
        }
        t.length = step;
        if cfg.record_steps {
            t.steps.push(StepRecord {
                step,
                update: u,
                output,
                true_value: truth,
                true_density: oracle.vector().density(),
                correct,
                regime: now,
                words_used: words,
            });
        }
        updates.push(u);
        outputs.push(output);
    }
    t.wall_time = start.elapsed().as_secs_f64();
    t
}

pub const TRANSCRIPT_HEADER: &str = "step,index,delta,output,true_value,correct,regime,words_used";
pub const SUMMARY_HEADER: &str = "run,all_correct,first_failure,max_words,wall_time";

/// Write per-step records as CSV.
pub fn write_transcript_csv(mut w: impl Write, t: &GameTranscript) -> io::Result<()> {
    writeln!(w, "{TRANSCRIPT_HEADER}")?;
    for s in &t.steps {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.step,
            s.update.index,
            s.update.delta,
            s.output,
            s.true_value,
            s.correct,
            s.regime.map_or("-", Regime::as_str),
            s.words_used
        )?;
    }
    Ok(())
}

/// One summary row (without the header).
pub fn summary_row(run: usize, t: &GameTranscript) -> String {
    let first = t.first_failure.map_or_else(|| "NA".to_string(), |s| s.to_string());
    format!("{run},{},{first},{},{:.6}", t.all_correct, t.max_words, t.wall_time)
}
