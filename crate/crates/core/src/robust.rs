//! The regime-switching robust moment estimator.
//!
//! While the frequency vector has fewer than `4T` nonzeros it is stored
//! exactly and every output is the exact moment. Once it becomes dense, the
//! output is a cached estimate refreshed every `interval` steps from a
//! q-query robust wrapper; a dense vector's moment cannot move by more than a
//! `(1 +- alpha)` factor within one interval, so staleness is harmless and
//! the query budget (and hence the ensemble size) stays sublinear in `m`. A
//! second wrapper tracks the number of nonzeros; when it drops to `2T` the
//! vector is recovered exactly from a sparse-recovery sketch.

use std::collections::{HashMap, VecDeque};

use crate::error::{config, Error, Result};
use crate::hashing::derive;
use crate::oblivious::{make_estimator, Estimator};
use crate::par::Execution;
use crate::recovery::RecoverySketch;
use crate::stream::{moment_term, SparseVector, StreamConfig, Update};
use crate::wrapper::{EnsembleSize, QueryTicket, RobustWrapper, WrapperParams, DEFAULT_C_K};

/// Accuracy of the density wrapper.
pub const DENSITY_ALPHA: f64 = 0.25;
/// Smallest admissible threshold (so that `floor(T/10) >= 1`).
pub const MIN_THRESHOLD: u64 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Regime {
    Sparse,
    Dense,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Sparse => "sparse",
            Regime::Dense => "dense",
        }
    }
}

/// The density threshold `T`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Threshold {
    /// Balance the two regimes' space.
    Auto,
    Fixed(u64),
}

/// `ceil(x)` that ignores floating-point noise just above an integer.
fn robust_ceil(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as u64
    } else {
        x.ceil() as u64
    }
}

/// Threshold balancing the sparse (`~T`) and dense (`~sqrt(m / interval)`)
/// space: `m^{1/3}` for `p <= 1`, `m^{p/(2p+1)}` for `1 < p <= 2`, and
/// `(mp)^{p/(2p+1)} n^{1 - 5/(2p+1)}` beyond. Raised to at least
/// [`MIN_THRESHOLD`].
pub fn auto_threshold(p: f64, n: u64, m: u64) -> u64 {
    let m = m as f64;
    let t = if p <= 1.0 {
        m.powf(1.0 / 3.0)
    } else if p <= 2.0 {
        m.powf(p / (2.0 * p + 1.0))
    } else {
        (m * p).powf(p / (2.0 * p + 1.0)) * (n as f64).powf(1.0 - 5.0 / (2.0 * p + 1.0))
    };
    robust_ceil(t).max(MIN_THRESHOLD)
}

/// Steps between refreshes of the dense-regime estimate.
pub fn refresh_interval(p: f64, alpha: f64, t: u64) -> u64 {
    let t = t as f64;
    let raw = if p <= 1.0 { alpha * t / 4.0 } else { alpha / (32.0 * p) * (alpha * t / 16.0).powf(1.0 / p) };
    (raw.floor() as u64).max(1)
}

/// Derived parameters of the estimator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorParams {
    pub p: f64,
    pub n: u64,
    pub m: u64,
    pub alpha: f64,
    pub delta: f64,
    pub c_bound: i64,
    pub threshold: u64,
    /// Sparsity of the recovery sketch, `ceil(4T)`.
    pub k_rec: usize,
    pub interval: u64,
    /// Steps between density refreshes, `floor(T/10)`.
    pub density_period: u64,
    /// `ceil(m / floor(T/10))`.
    pub q_density: u64,
    /// `ceil(m / interval)`.
    pub q_approx: u64,
}

impl EstimatorParams {
    /// Derive every budget. Accepts any `p >= 0`, including `p > 2` for which
    /// no estimator can be built.
    pub fn derive(cfg: &StreamConfig, threshold: Threshold) -> Result<Self> {
        cfg.validate()?;
        let t = match threshold {
            Threshold::Auto => auto_threshold(cfg.p, cfg.n, cfg.m),
            Threshold::Fixed(t) if t < MIN_THRESHOLD => {
                return Err(config(format!("threshold T must be at least {MIN_THRESHOLD}, got {t}")))
            }
            Threshold::Fixed(t) => t,
        };
        let interval = refresh_interval(cfg.p, cfg.alpha, t);
        let density_period = t / 10;
        Ok(EstimatorParams {
            p: cfg.p,
            n: cfg.n,
            m: cfg.m,
            alpha: cfg.alpha,
            delta: cfg.delta,
            c_bound: cfg.c_bound,
            threshold: t,
            k_rec: 4 * t as usize,
            interval,
            density_period,
            q_density: cfg.m.div_ceil(density_period),
            q_approx: cfg.m.div_ceil(interval),
        })
    }

    /// Value range of the density wrapper: `min(n, m)`.
    pub fn tau_density(&self) -> f64 {
        self.n.min(self.m) as f64
    }

    /// Value range of the moment wrapper: `min(n, m)` for `p = 0`, else
    /// `(mC)^max(p, 1)`, since `F_p(v) <= ||v||_1^max(p,1)` and
    /// `||v||_1 <= mC`.
    pub fn tau_approx(&self) -> f64 {
        if self.p == 0.0 {
            self.tau_density()
        } else {
            (self.m as f64 * self.c_bound as f64).powf(self.p.max(1.0))
        }
    }
}

/// Whether idle wrappers are updated during the sparse regime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum FanOut {
    /// Every update reaches every copy immediately.
    Eager,
    /// While sparse, wrappers stay frozen at the vector known when the sparse
    /// phase began; scheduled queries are charged on time and the most recent
    /// one per wrapper is answered on the switch to dense, after bringing the
    /// copies to the exact vector of its step. Outputs are identical to
    /// [`FanOut::Eager`]: sparse-regime outputs never read the wrappers, a
    /// refresh overwrites the previous one, and the copies are linear.
    #[default]
    Deferred,
}

/// Knobs beyond the stream configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RobustOptions {
    pub c_k: f64,
    pub density_size: EnsembleSize,
    pub approx_size: EnsembleSize,
    pub fanout: FanOut,
    pub execution: Execution,
}

impl Default for RobustOptions {
    fn default() -> Self {
        RobustOptions {
            c_k: DEFAULT_C_K,
            density_size: EnsembleSize::Formula,
            approx_size: EnsembleSize::Formula,
            fanout: FanOut::default(),
            execution: Execution::Auto,
        }
    }
}

impl RobustOptions {
    /// The same ensemble size for both wrappers.
    pub fn with_size(mut self, size: EnsembleSize) -> Self {
        self.density_size = size;
        self.approx_size = size;
        self
    }
}

/// Exact moment of the sparse-regime vector.
#[derive(Clone, Debug)]
enum ExactSum {
    /// `p` in {0, 1, 2}: an exact integer accumulator.
    Integer { p: u32, acc: u128 },
    /// Fractional `p`: a balanced summation tree over per-coordinate terms.
    Tree(SumTree),
}

impl ExactSum {
    fn new(p: f64) -> Self {
        if p == 0.0 || p == 1.0 || p == 2.0 {
            ExactSum::Integer { p: p as u32, acc: 0 }
        } else {
            ExactSum::Tree(SumTree::new(p))
        }
    }

    fn change(&mut self, index: u64, old: i64, new: i64) {
        match self {
            ExactSum::Integer { p, acc } => {
                let term = |x: i64| (x.unsigned_abs() as u128).pow(*p) * (x != 0) as u128;
                *acc = *acc - term(old) + term(new);
            }
            ExactSum::Tree(t) => t.set(index, new),
        }
    }

    fn value(&self) -> f64 {
        match self {
            ExactSum::Integer { acc, .. } => *acc as f64,
            ExactSum::Tree(t) => t.total(),
        }
    }

    fn reset_from(&mut self, v: &SparseVector) {
        match self {
            ExactSum::Integer { p, acc } => {
                *acc = v.iter().map(|(_, x)| (x.unsigned_abs() as u128).pow(*p)).sum();
            }
            ExactSum::Tree(t) => {
                *t = SumTree::new(t.p);
                v.iter().for_each(|(i, x)| t.set(i, x));
            }
        }
    }

    fn words_used(&self) -> usize {
        match self {
            ExactSum::Integer { .. } => 2,
            ExactSum::Tree(t) => t.words_used(),
        }
    }
}

/// Complete binary tree of partial sums over slots holding `|v_i|^p`.
/// Each update recomputes the `O(log T)` sums on one leaf-to-root path.
#[derive(Clone, Debug)]
pub struct SumTree {
    p: f64,
    leaves: usize,
    nodes: Vec<f64>,
    slot_of: HashMap<u64, usize>,
    free: Vec<usize>,
    used: usize,
}

impl SumTree {
    pub fn new(p: f64) -> Self {
        SumTree { p, leaves: 1, nodes: vec![0.0; 2], slot_of: HashMap::new(), free: Vec::new(), used: 0 }
    }

    /// Set coordinate `index` to frequency `x` (0 removes it).
    pub fn set(&mut self, index: u64, x: i64) {
        let slot = match (self.slot_of.get(&index).copied(), x) {
            (None, 0) => return,
            (Some(s), 0) => {
                self.slot_of.remove(&index);
                self.free.push(s);
                s
            }
            (Some(s), _) => s,
            (None, _) => {
                let s = self.free.pop().unwrap_or_else(|| {
                    self.used += 1;
                    self.used - 1
                });
                if s >= self.leaves {
                    self.grow();
                }
                self.slot_of.insert(index, s);
                s
            }
        };
        let mut i = self.leaves + slot;
        self.nodes[i] = moment_term(x, self.p);
        while i > 1 {
            i /= 2;
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    fn grow(&mut self) {
        let old = self.leaves;
        self.leaves *= 2;
        let mut nodes = vec![0.0; 2 * self.leaves];
        nodes[self.leaves..self.leaves + old].copy_from_slice(&self.nodes[old..2 * old]);
        for i in (1..self.leaves).rev() {
            nodes[i] = nodes[2 * i] + nodes[2 * i + 1];
        }
        self.nodes = nodes;
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn words_used(&self) -> usize {
        self.nodes.len() + 2 * self.slot_of.len() + self.free.len()
    }
}

/// The adversarially robust F_p estimator.
#[derive(Clone, Debug)]
pub struct RobustMomentEstimator {
    params: EstimatorParams,
    options: RobustOptions,
    regime: Regime,
    count: u64,
    v: SparseVector,
    exact: ExactSum,
    m_approx: f64,
    k_approx: f64,
    sparse: RecoverySketch,
    density: RobustWrapper<Estimator>,
    approx: RobustWrapper<Estimator>,
    /// Vector the frozen wrappers have absorbed (deferred fan-out, sparse regime).
    base: Option<SparseVector>,
    /// Recent updates while frozen, with their step numbers.
    history: VecDeque<(u64, Update)>,
    pending_density: Option<(u64, QueryTicket)>,
    pending_approx: Option<(u64, QueryTicket)>,
    transitions: u64,
}

impl RobustMomentEstimator {
    pub fn new(cfg: &StreamConfig, threshold: Threshold) -> Result<Self> {
        Self::with_options(cfg, threshold, RobustOptions::default())
    }

    pub fn with_options(cfg: &StreamConfig, threshold: Threshold, options: RobustOptions) -> Result<Self> {
        let params = EstimatorParams::derive(cfg, threshold)?;
        if cfg.p > 2.0 {
            return Err(Error::UnsupportedMoment(cfg.p));
        }
        let (n, m, p) = (cfg.n, cfg.m, cfg.p);
        let density_params =
            WrapperParams::new(params.q_density, cfg.delta / 2.0, params.tau_density(), DENSITY_ALPHA)?
                .with_c_k(options.c_k)?
                .with_size(options.density_size)?;
        let approx_params = WrapperParams::new(params.q_approx, cfg.delta / 2.0, params.tau_approx(), cfg.alpha / 4.0)?
            .with_c_k(options.c_k)?
            .with_size(options.approx_size)?;
        let density_alpha = density_params.copy_alpha();
        let approx_alpha = approx_params.copy_alpha();
        let density =
            RobustWrapper::new(density_params, |s| make_estimator(0.0, density_alpha, n, m, s), derive(cfg.seed, 1))?
                .with_execution(options.execution);
        let approx =
            RobustWrapper::new(approx_params, |s| make_estimator(p, approx_alpha, n, m, s), derive(cfg.seed, 2))?
                .with_execution(options.execution);
        let deferred = options.fanout == FanOut::Deferred;
        Ok(RobustMomentEstimator {
            params,
            options,
            regime: Regime::Sparse,
            count: 0,
            v: SparseVector::new(n),
            exact: ExactSum::new(p),
            m_approx: 0.0,
            k_approx: 0.0,
            sparse: RecoverySketch::new(n, params.k_rec, derive(cfg.seed, 0)),
            density,
            approx,
            base: deferred.then(|| SparseVector::new(n)),
            history: VecDeque::new(),
            pending_density: None,
            pending_approx: None,
            transitions: 0,
        })
    }

    pub fn params(&self) -> &EstimatorParams {
        &self.params
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Number of regime changes so far.
    pub fn transitions(&self) -> u64 {
        self.transitions
    }

    pub fn density_wrapper(&self) -> &RobustWrapper<Estimator> {
        &self.density
    }

    pub fn approx_wrapper(&self) -> &RobustWrapper<Estimator> {
        &self.approx
    }

    /// The explicit vector; meaningful only in the sparse regime.
    pub fn sparse_vector(&self) -> &SparseVector {
        &self.v
    }

    fn frozen(&self) -> bool {
        self.base.is_some()
    }

    /// Process one update and return this step's output.
    pub fn process(&mut self, u: Update) -> Result<f64> {
        if self.count >= self.params.m {
            return Err(Error::StreamTooLong(self.params.m));
        }
        u.validate(self.params.n, self.params.c_bound)?;
        self.count += 1;
        let t = self.count;

        self.sparse.update(u);
        if self.frozen() {
            self.history.push_back((t, u));
            let keep = self.params.density_period.max(self.params.interval) as usize;
            while self.history.len() > keep {
                self.history.pop_front();
            }
        } else {
            self.density.update(u);
            self.approx.update(u);
        }

        if t % self.params.density_period == 0 {
            let ticket = self.density.begin_query()?;
            if self.frozen() {
                self.pending_density = Some((t, ticket));
            } else {
                self.k_approx = self.density.answer(ticket)?;
            }
        }
        if t % self.params.interval == 0 {
            let ticket = self.approx.begin_query()?;
            if self.frozen() {
                self.pending_approx = Some((t, ticket));
            } else {
                self.m_approx = self.approx.answer(ticket)?;
            }
        }

        match self.regime {
            Regime::Sparse => {
                let (old, new) = self.v.apply(u)?;
                self.exact.change(u.index, old, new);
                let y = self.exact.value();
                if self.v.density() as u64 >= 4 * self.params.threshold {
                    self.enter_dense()?;
                }
                Ok(y)
            }
            Regime::Dense => {
                let y = self.m_approx;
                if self.k_approx <= 2.0 * self.params.threshold as f64 {
                    self.v = self.sparse.recover().map_err(|_| Error::RecoveryFailed(t))?;
                    self.exact.reset_from(&self.v);
                    self.regime = Regime::Sparse;
                    self.transitions += 1;
                    if self.options.fanout == FanOut::Deferred {
                        self.base = Some(self.v.clone());
                    }
                }
                Ok(y)
            }
        }
    }

    fn enter_dense(&mut self) -> Result<()> {
        if let Some(base) = self.base.take() {
            let history = std::mem::take(&mut self.history);
            if let Some(k) = catch_up(&mut self.density, &base, &self.v, &history, self.pending_density.take())? {
                self.k_approx = k;
            }
            if let Some(m) = catch_up(&mut self.approx, &base, &self.v, &history, self.pending_approx.take())? {
                self.m_approx = m;
            }
        }
        self.v.clear();
        self.exact.reset_from(&self.v);
        self.regime = Regime::Dense;
        self.transitions += 1;
        Ok(())
    }

    /// Space in words across all components.
    pub fn words_used(&self) -> usize {
        let frozen = self.base.as_ref().map_or(0, |b| b.words_used()) + 2 * self.history.len();
        self.v.words_used()
            + self.exact.words_used()
            + self.sparse.words_used()
            + self.density.words_used()
            + self.approx.words_used()
            + frozen
            + 12
    }
}

/// Bring a frozen wrapper from `base` to `now`, answering its pending query
/// at the vector of the query's step on the way.
fn catch_up(
    w: &mut RobustWrapper<Estimator>,
    base: &SparseVector,
    now: &SparseVector,
    history: &VecDeque<(u64, Update)>,
    pending: Option<(u64, QueryTicket)>,
) -> Result<Option<f64>> {
    let Some((step, ticket)) = pending else {
        now.diff_from(base).into_iter().for_each(|(i, d)| w.add(i, d));
        return Ok(None);
    };
    let mut then = now.clone();
    for &(s, u) in history.iter().rev().take_while(|(s, _)| *s > step) {
        debug_assert!(s > step);
        then.add(u.index, -u.delta)?;
    }
    then.diff_from(base).into_iter().for_each(|(i, d)| w.add(i, d));
    let answer = w.answer(ticket)?;
    now.diff_from(&then).into_iter().for_each(|(i, d)| w.add(i, d));
    Ok(Some(answer))
}
