//! The q-query robust wrapper: `k` independent oblivious sketches whose
//! rounded estimates are combined by a differentially private median.
//!
//! Privacy shields each copy's randomness from the adversary, so as long as
//! at most `q` queries are answered, all answers are `(1 +- alpha)`-accurate
//! with probability `1 - delta` even against adaptive streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dp_median::{private_median_index, MedianParams, ValueGrid};
use crate::error::{config, Error, Result};
use crate::hashing::derive;
use crate::oblivious::ObliviousEstimator;
use crate::par::{self, Execution};
use crate::stream::Update;

/// The base privacy level `epsilon = 1/100`.
pub const BASE_EPSILON: f64 = 0.01;
/// Default leading constant of the ensemble-size formula.
///
/// With the median's default constants, `c_k` near 10 is the least value for
/// which the formula size meets the median's database-size precondition; 50
/// leaves the rank error at about a tenth of the ensemble.
pub const DEFAULT_C_K: f64 = 50.0;

/// How many copies to run relative to the formula.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EnsembleSize {
    /// `ceil(c_k / eps' * ln(...))`.
    Formula,
    /// The formula scaled by a factor in `(0, 1]`.
    Scale(f64),
    /// An explicit number of copies.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WrapperParams {
    pub q: u64,
    pub delta: f64,
    pub tau: f64,
    pub alpha: f64,
    pub c_k: f64,
    pub size: EnsembleSize,
}

impl WrapperParams {
    pub fn new(q: u64, delta: f64, tau: f64, alpha: f64) -> Result<Self> {
        let p = WrapperParams { q, delta, tau, alpha, c_k: DEFAULT_C_K, size: EnsembleSize::Formula };
        p.validate()?;
        Ok(p)
    }

    pub fn with_c_k(mut self, c_k: f64) -> Result<Self> {
        self.c_k = c_k;
        self.validate()?;
        Ok(self)
    }

    pub fn with_size(mut self, size: EnsembleSize) -> Result<Self> {
        self.size = size;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if self.q == 0 {
            return Err(config("query budget q must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config("wrapper alpha and delta must lie in (0,1)"));
        }
        if !(self.tau >= 1.0 && self.tau.is_finite()) {
            return Err(config("wrapper tau must be finite and >= 1"));
        }
        if !(self.c_k > 0.0 && self.c_k.is_finite()) {
            return Err(config("c_k must be positive"));
        }
        match self.size {
            EnsembleSize::Scale(s) if !(s > 0.0 && s <= 1.0) => Err(config("ensemble scale must lie in (0,1]")),
            EnsembleSize::Fixed(0) => Err(config("ensemble size must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn epsilon(&self) -> f64 {
        BASE_EPSILON
    }

    /// `delta' = eps * delta / (10 q)`.
    pub fn delta_prime(&self) -> f64 {
        BASE_EPSILON * self.delta / (10.0 * self.q as f64)
    }

    /// `eps' = eps / sqrt(8 q ln(1/delta'))`.
    pub fn epsilon_prime(&self) -> f64 {
        BASE_EPSILON / (8.0 * self.q as f64 * (1.0 / self.delta_prime()).ln()).sqrt()
    }

    /// Unrounded `c_k / eps' * ln(2 q log2(2 tau) / (alpha delta))`.
    pub fn k_formula(&self) -> f64 {
        let q = self.q as f64;
        self.c_k * (1.0 / self.epsilon_prime()) * (2.0 * q * (2.0 * self.tau).log2() / (self.alpha * self.delta)).ln()
    }

    /// Number of copies actually run.
    pub fn k(&self) -> usize {
        let k = match self.size {
            EnsembleSize::Formula => self.k_formula().ceil(),
            EnsembleSize::Scale(s) => (s * self.k_formula()).ceil(),
            EnsembleSize::Fixed(k) => k as f64,
        };
        k.max(1.0) as usize
    }

    /// Per-query privacy of the median. Equals `eps'` at formula size; a
    /// reduced ensemble keeps `eps * k` constant, which preserves the ratio of
    /// the median's rank error to the ensemble size.
    pub fn median_epsilon(&self) -> f64 {
        self.epsilon_prime() * (self.k_formula() / self.k() as f64).max(1.0)
    }

    /// `delta / (2q)`.
    pub fn median_delta(&self) -> f64 {
        self.delta / (2.0 * self.q as f64)
    }

    /// Accuracy each copy must provide: `alpha / 3`.
    pub fn copy_alpha(&self) -> f64 {
        self.alpha / 3.0
    }
}

/// A charged, not yet answered query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryTicket(u64);

impl QueryTicket {
    pub fn number(&self) -> u64 {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct RobustWrapper<E> {
    params: WrapperParams,
    grid: ValueGrid,
    median: MedianParams,
    copies: Vec<E>,
    queries_used: u64,
    query_seed: u64,
    exec: Execution,
}

impl<E: ObliviousEstimator> RobustWrapper<E> {
    /// Build `params.k()` copies; copy `j` is `factory(seed_j)` with
    /// independent derived seeds. The factory must yield
    /// `(1 +- alpha/3)`-approximators.
    pub fn new(params: WrapperParams, factory: impl Fn(u64) -> Result<E>, seed: u64) -> Result<Self> {
        params.validate()?;
        let k = params.k();
        let copies = (0..k).map(|j| factory(derive(seed, j as u64))).collect::<Result<Vec<_>>>()?;
        Ok(RobustWrapper {
            grid: ValueGrid::new(params.alpha, params.tau)?,
            median: MedianParams::new(params.median_epsilon(), params.median_delta())?,
            params,
            copies,
            queries_used: 0,
            query_seed: derive(seed, u64::MAX),
            exec: Execution::Auto,
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn params(&self) -> &WrapperParams {
        &self.params
    }

    pub fn grid(&self) -> &ValueGrid {
        &self.grid
    }

    pub fn median_params(&self) -> &MedianParams {
        &self.median
    }

    pub fn k(&self) -> usize {
        self.copies.len()
    }

    pub fn copies(&self) -> &[E] {
        &self.copies
    }

    pub fn queries_used(&self) -> u64 {
        self.queries_used
    }

    pub fn budget(&self) -> u64 {
        self.params.q
    }

    pub fn update(&mut self, u: Update) {
        self.add(u.index, u.delta);
    }

    /// Feed one linear update to every copy.
    pub fn add(&mut self, index: u64, delta: i64) {
        let heavy = self.copies.first().is_some_and(|c| c.words_used() >= 1024);
        let mode = if heavy { self.exec } else { Execution::Sequential };
        par::for_each_mut(&mut self.copies, mode, |c| c.add(index, delta));
    }

    /// Raw estimates of all copies.
    pub fn estimates(&self) -> Vec<f64> {
        par::map_slice(&self.copies, self.exec, |c| c.estimate())
    }

    /// Charge one query against the budget.
    pub fn begin_query(&mut self) -> Result<QueryTicket> {
        if self.queries_used >= self.params.q {
            return Err(Error::QueryBudgetExhausted(self.params.q));
        }
        self.queries_used += 1;
        Ok(QueryTicket(self.queries_used))
    }

    /// Answer a charged query from the current copies, with randomness derived
    /// from the wrapper seed and the ticket number.
    pub fn answer(&self, ticket: QueryTicket) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive(self.query_seed, ticket.0));
        self.private_answer(&mut rng)
    }

    /// Charge and answer one query with caller-supplied randomness.
    pub fn query<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<f64> {
        self.begin_query()?;
        self.private_answer(rng)
    }

    fn private_answer<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        let db: Vec<usize> = self.estimates().into_iter().map(|x| self.grid.round_index(x)).collect();
        let idx = private_median_index(&db, self.grid.len(), &self.median, rng)?;
        Ok(self.grid.value(idx))
    }

    /// Copies, the median's database, and a handful of scalars.
    pub fn words_used(&self) -> usize {
        self.copies.iter().map(|c| c.words_used()).sum::<usize>() + self.copies.len() + 8
    }
}
