//! Turnstile stream domain types and the exact ground-truth oracle.

use std::collections::BTreeMap;
use std::io::BufRead;

use crate::error::{config, Error, Result};

/// Largest supported stream length.
pub const MAX_STREAM_LEN: u64 = 1 << 40;

/// One turnstile event: add `delta` to coordinate `index` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Update {
    pub index: u64,
    pub delta: i64,
}

impl Update {
    /// A validated update over universe `[1, n]` with `|delta| <= c_bound`.
    pub fn new(index: u64, delta: i64, n: u64, c_bound: i64) -> Result<Self> {
        let u = Update { index, delta };
        u.validate(n, c_bound)?;
        Ok(u)
    }

    pub fn validate(&self, n: u64, c_bound: i64) -> Result<()> {
        if self.index == 0 || self.index > n {
            return Err(Error::IndexOutOfRange { index: self.index, n });
        }
        if self.delta == 0 || self.delta.unsigned_abs() > c_bound.unsigned_abs() {
            return Err(Error::InvalidDelta { delta: self.delta, bound: c_bound });
        }
        Ok(())
    }

    /// The update that undoes this one.
    pub fn inverse(self) -> Self {
        Update { index: self.index, delta: -self.delta }
    }
}

/// Global parameters of a stream and of the estimators run over it.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamConfig {
    /// Universe size; indices live in `[1, n]`.
    pub n: u64,
    /// Upper bound on the stream length.
    pub m: u64,
    /// Moment exponent.
    pub p: f64,
    pub alpha: f64,
    pub delta: f64,
    /// Bound on `|delta|` of each update.
    pub c_bound: i64,
    pub seed: u64,
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(config("n and m must be at least 1"));
        }
        if self.m > MAX_STREAM_LEN {
            return Err(config(format!("m must not exceed 2^40, got {}", self.m)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(config(format!("alpha must lie in (0,1), got {}", self.alpha)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(config(format!("delta must lie in (0,1), got {}", self.delta)));
        }
        if !(self.p >= 0.0 && self.p.is_finite()) {
            return Err(config(format!("p must be a finite value >= 0, got {}", self.p)));
        }
        if self.c_bound < 1 {
            return Err(config("the delta bound C must be at least 1"));
        }
        if (self.m as u128) * (self.c_bound as u128) > (1u128 << 60) {
            return Err(config("m * C must not exceed 2^60"));
        }
        Ok(())
    }

    /// Upper bound on any `|v_i|` reachable within the stream.
    pub fn max_frequency(&self) -> u64 {
        self.m.saturating_mul(self.c_bound as u64)
    }
}

/// Exact frequency vector holding only nonzero coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SparseVector {
    n: u64,
    entries: BTreeMap<u64, i64>,
}

impl SparseVector {
    pub fn new(n: u64) -> Self {
        SparseVector { n, entries: BTreeMap::new() }
    }

    pub fn from_entries(n: u64, entries: impl IntoIterator<Item = (u64, i64)>) -> Result<Self> {
        let mut v = SparseVector::new(n);
        for (i, x) in entries {
            v.add(i, x)?;
        }
        Ok(v)
    }

    pub fn dimension(&self) -> u64 {
        self.n
    }

    pub fn get(&self, index: u64) -> i64 {
        self.entries.get(&index).copied().unwrap_or(0)
    }

    /// Number of nonzero coordinates, `||v||_0`.
    pub fn density(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.entries.iter().map(|(&i, &x)| (i, x))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Add `delta` to coordinate `index`; returns the (old, new) value.
    pub fn add(&mut self, index: u64, delta: i64) -> Result<(i64, i64)> {
        if index == 0 || index > self.n {
            return Err(Error::IndexOutOfRange { index, n: self.n });
        }
        if delta == 0 {
            let x = self.get(index);
            return Ok((x, x));
        }
        let slot = self.entries.entry(index).or_insert(0);
        let old = *slot;
        *slot += delta;
        let new = *slot;
        if new == 0 {
            self.entries.remove(&index);
        }
        Ok((old, new))
    }

    pub fn apply(&mut self, u: Update) -> Result<(i64, i64)> {
        self.add(u.index, u.delta)
    }

    /// Nonzero coordinates of `self - base`, in index order.
    pub fn diff_from(&self, base: &SparseVector) -> Vec<(u64, i64)> {
        let mut out = Vec::new();
        let mut a = self.entries.iter().peekable();
        let mut b = base.entries.iter().peekable();
        loop {
            match (a.peek(), b.peek()) {
                (Some(&(&i, &x)), Some(&(&j, &y))) => {
                    if i == j {
                        if x != y {
                            out.push((i, x - y));
                        }
                        a.next();
                        b.next();
                    } else if i < j {
                        out.push((i, x));
                        a.next();
                    } else {
                        out.push((j, -y));
                        b.next();
                    }
                }
                (Some(&(&i, &x)), None) => {
                    out.push((i, x));
                    a.next();
                }
                (None, Some(&(&j, &y))) => {
                    out.push((j, -y));
                    b.next();
                }
                (None, None) => return out,
            }
        }
    }

    /// Space in words: index and value per stored entry.
    pub fn words_used(&self) -> usize {
        2 * self.entries.len()
    }
}

/// Functional form of [`SparseVector::apply`].
pub fn apply_update(v: &SparseVector, u: Update) -> Result<SparseVector> {
    let mut out = v.clone();
    out.apply(u)?;
    Ok(out)
}

/// `||v||_0`.
pub fn density(v: &SparseVector) -> usize {
    v.density()
}

/// `|x|^p` with the convention `0^p = 0` (also for `p = 0`).
#[inline]
pub fn moment_term(x: i64, p: f64) -> f64 {
    if x == 0 {
        0.0
    } else if p == 0.0 {
        1.0
    } else if p == 1.0 {
        x.unsigned_abs() as f64
    } else if p == 2.0 {
        let a = x.unsigned_abs() as f64;
        a * a
    } else {
        (x.unsigned_abs() as f64).powf(p)
    }
}

/// Exact `sum |x|^p` when `p` is 0, 1 or 2.
pub fn integer_moment(v: &SparseVector, p: f64) -> Option<u128> {
    let it = v.entries.values();
    if p == 0.0 {
        Some(v.entries.len() as u128)
    } else if p == 1.0 {
        Some(it.map(|x| x.unsigned_abs() as u128).sum())
    } else if p == 2.0 {
        Some(it.map(|x| (x.unsigned_abs() as u128).pow(2)).sum())
    } else {
        None
    }
}

/// `F_p(v) = sum_i |v_i|^p`, exact for integer `p <= 2`.
pub fn moment(v: &SparseVector, p: f64) -> f64 {
    match integer_moment(v, p) {
        Some(x) => x as f64,
        None => {
            // Neumaier summation keeps the result independent of magnitude spread.
            let (mut s, mut c) = (0.0f64, 0.0f64);
            for &x in v.entries.values() {
                let t = moment_term(x, p);
                let y = s + t;
                c += if s.abs() >= t.abs() { (s - y) + t } else { (t - y) + s };
                s = y;
            }
            s + c
        }
    }
}

#[derive(Clone, Debug)]
enum Acc {
    Exact(u128),
    Real { sum: f64, comp: f64, since_refresh: u32 },
}

/// Incrementally maintained exact moment: the ground-truth oracle.
#[derive(Clone, Debug)]
pub struct ExactMoment {
    v: SparseVector,
    p: f64,
    acc: Acc,
}

const REFRESH_EVERY: u32 = 1024;

impl ExactMoment {
    pub fn new(n: u64, p: f64) -> Self {
        let acc = if p == 0.0 || p == 1.0 || p == 2.0 {
            Acc::Exact(0)
        } else {
            Acc::Real { sum: 0.0, comp: 0.0, since_refresh: 0 }
        };
        ExactMoment { v: SparseVector::new(n), p, acc }
    }

    pub fn apply(&mut self, u: Update) -> Result<()> {
        let (old, new) = self.v.apply(u)?;
        let p = self.p;
        match &mut self.acc {
            Acc::Exact(s) => {
                let term = |x: i64| -> u128 {
                    let a = x.unsigned_abs() as u128;
                    if p == 0.0 {
                        (a != 0) as u128
                    } else if p == 1.0 {
                        a
                    } else {
                        a * a
                    }
                };
                *s = *s - term(old) + term(new);
            }
            Acc::Real { sum, comp, since_refresh } => {
                *since_refresh += 1;
                if *since_refresh >= REFRESH_EVERY {
                    *sum = moment(&self.v, p);
                    *comp = 0.0;
                    *since_refresh = 0;
                } else {
                    for t in [moment_term(new, p), -moment_term(old, p)] {
                        let y = *sum + t;
                        *comp += if sum.abs() >= t.abs() { (*sum - y) + t } else { (t - y) + *sum };
                        *sum = y;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn value(&self) -> f64 {
        match &self.acc {
            Acc::Exact(s) => *s as f64,
            Acc::Real { sum, comp, .. } => (sum + comp).max(0.0),
        }
    }

    pub fn vector(&self) -> &SparseVector {
        &self.v
    }

    pub fn p(&self) -> f64 {
        self.p
    }
}

/// Exact flip number: the longest chain `0 <= j_1 < ... < j_t <= m` of prefix
/// indices in which `F_p(v^(j_l))` is not a `(1 +- alpha)`-approximation of
/// `F_p(v^(j_{l+1}))`. The initial all-zero vector is prefix 0, so any stream
/// (including the empty one) has flip number at least 1.
///
/// A greedy anchor scan can undercount (it may commit to an anchor that blocks
/// a longer chain), so this solves the longest-chain recurrence exactly with
/// prefix/suffix maximum Fenwick trees in `O(m log m)`.
pub fn flip_number(updates: &[Update], p: f64, alpha: f64) -> u64 {
    let n = updates.iter().map(|u| u.index).max().unwrap_or(1);
    let mut oracle = ExactMoment::new(n, p);
    let mut values = Vec::with_capacity(updates.len() + 1);
    values.push(0.0);
    for &u in updates {
        oracle.apply(u).expect("indices bounded by construction");
        values.push(oracle.value());
    }
    longest_flip_chain(&values, alpha)
}

/// Longest chain over a value sequence; see [`flip_number`].
pub fn longest_flip_chain(values: &[f64], alpha: f64) -> u64 {
    if values.is_empty() {
        return 0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup();
    let k = sorted.len();
    // below: prefix maxima over ranks; above: prefix maxima over reversed ranks.
    let mut below = MaxFenwick::new(k);
    let mut above = MaxFenwick::new(k);
    let mut best = 0;
    for &x in values {
        let lo = (1.0 - alpha) * x;
        let hi = (1.0 + alpha) * x;
        // Ranks r with sorted[r] < lo, and ranks with sorted[r] > hi.
        let n_below = sorted.partition_point(|&y| y < lo);
        let n_above = k - sorted.partition_point(|&y| y <= hi);
        let chain = 1 + below.max_prefix(n_below).max(above.max_prefix(n_above));
        let r = sorted.partition_point(|&y| y < x);
        below.raise(r, chain);
        above.raise(k - 1 - r, chain);
        best = best.max(chain);
    }
    best
}

struct MaxFenwick(Vec<u64>);

impl MaxFenwick {
    fn new(k: usize) -> Self {
        MaxFenwick(vec![0; k + 1])
    }

    fn raise(&mut self, pos: usize, val: u64) {
        let mut i = pos + 1;
        while i < self.0.len() {
            self.0[i] = self.0[i].max(val);
            i += i & i.wrapping_neg();
        }
    }

    /// Maximum over positions `0..len`.
    fn max_prefix(&self, len: usize) -> u64 {
        let mut i = len;
        let mut m = 0;
        while i > 0 {
            m = m.max(self.0[i]);
            i -= i & i.wrapping_neg();
        }
        m
    }
}

/// Parse the replay format: one `<index> <delta>` per line, `#` comments.
pub fn parse_stream(reader: impl BufRead, n: u64, c_bound: i64) -> Result<Vec<Update>> {
    let mut out = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: ln + 1, msg: e.to_string() })?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::Parse { line: ln + 1, msg };
        let mut parts = t.split_whitespace();
        let (Some(i), Some(d), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(bad(format!("expected `<index> <delta>`, got `{t}`")));
        };
        let index = i.parse::<u64>().map_err(|e| bad(format!("index `{i}`: {e}")))?;
        let delta = d.parse::<i64>().map_err(|e| bad(format!("delta `{d}`: {e}")))?;
        out.push(Update::new(index, delta, n, c_bound).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}
