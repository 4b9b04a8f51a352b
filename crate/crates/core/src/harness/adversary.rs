//! Built-in adversaries.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hashing::hash;
use crate::stream::{ExactMoment, Update};

/// A player choosing each update after seeing every previous update and
/// output. Returning `None` ends the stream early.
pub trait Adversary {
    fn next_update(&mut self, updates: &[Update], outputs: &[f64]) -> Option<Update>;
}

/// Uniform random coordinates and nonzero deltas, ignoring all outputs.
pub struct RandomOblivious {
    rng: ChaCha8Rng,
    n: u64,
    c_bound: i64,
}

impl RandomOblivious {
    pub fn new(seed: u64, n: u64, c_bound: i64) -> Self {
        RandomOblivious { rng: ChaCha8Rng::seed_from_u64(seed), n, c_bound: c_bound.max(1) }
    }
}

impl Adversary for RandomOblivious {
    fn next_update(&mut self, _: &[Update], _: &[f64]) -> Option<Update> {
        let index = self.rng.random_range(1..=self.n);
        let mag = self.rng.random_range(1..=self.c_bound);
        let delta = if self.rng.random::<bool>() { mag } else { -mag };
        Some(Update { index, delta })
    }
}

/// `(i, +1), (i, -1)` repeated: the moment alternates between 1 and 0.
pub struct FlipAttack {
    index: u64,
}

impl FlipAttack {
    pub fn new(index: u64) -> Self {
        FlipAttack { index }
    }
}

impl Adversary for FlipAttack {
    fn next_update(&mut self, updates: &[Update], _: &[f64]) -> Option<Update> {
        let delta = if updates.len() % 2 == 0 { 1 } else { -1 };
        Some(Update { index: self.index, delta })
    }
}

/// Distinct coordinates not yet in the vector, drawn pseudorandomly.
struct FreshIndices {
    seed: u64,
    counter: u64,
    n: u64,
}

impl FreshIndices {
    /// `None` once every coordinate is taken.
    fn next(&mut self, taken: impl Fn(u64) -> bool) -> Option<u64> {
        for _ in 0..64 {
            self.counter += 1;
            let i = 1 + hash(self.seed, self.counter) % self.n;
            if !taken(i) {
                return Some(i);
            }
        }
        // Nearly full: scan onward from the last draw.
        let start = hash(self.seed, self.counter) % self.n;
        (0..self.n).map(|j| 1 + (start + j) % self.n).find(|&i| !taken(i))
    }
}

/// Inserts fresh coordinates until `4T` are nonzero, then deletes random
/// ones down to `T`, repeatedly: every cycle crosses both regime thresholds.
pub struct DensityOscillator {
    threshold: u64,
    rising: bool,
    live: Vec<u64>,
    members: HashSet<u64>,
    fresh: FreshIndices,
    rng: ChaCha8Rng,
}

impl DensityOscillator {
    pub fn new(threshold: u64, n: u64, seed: u64) -> Self {
        assert!(n > 4 * threshold, "universe too small to oscillate");
        DensityOscillator {
            threshold,
            rising: true,
            live: Vec::new(),
            members: HashSet::new(),
            fresh: FreshIndices { seed, counter: 0, n },
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0xd1b5_4a32_d192_ed03),
        }
    }
}

impl Adversary for DensityOscillator {
    fn next_update(&mut self, _: &[Update], _: &[f64]) -> Option<Update> {
        let live = self.live.len() as u64;
        if self.rising && live >= 4 * self.threshold {
            self.rising = false;
        } else if !self.rising && live <= self.threshold {
            self.rising = true;
        }
        if self.rising {
            let members = &self.members;
            let i = self.fresh.next(|i| members.contains(&i))?;
            self.members.insert(i);
            self.live.push(i);
            Some(Update { index: i, delta: 1 })
        } else {
            let pos = self.rng.random_range(0..self.live.len());
            let i = self.live.swap_remove(pos);
            self.members.remove(&i);
            Some(Update { index: i, delta: -1 })
        }
    }
}

/// Adaptive attack on a linear sketch: probe a fresh coordinate, keep it if
/// the reported-to-true ratio did not increase, otherwise delete it again.
/// Kept coordinates accumulate where the sketch underestimates.
pub struct SketchAttack {
    oracle: ExactMoment,
    fresh: FreshIndices,
    probe: Option<(u64, f64)>,
}

impl SketchAttack {
    pub fn new(n: u64, p: f64, seed: u64) -> Self {
        SketchAttack { oracle: ExactMoment::new(n, p), fresh: FreshIndices { seed, counter: 0, n }, probe: None }
    }

    fn ratio(&self, outputs: &[f64]) -> f64 {
        let truth = self.oracle.value();
        match outputs.last() {
            Some(&y) if truth > 0.0 => y / truth,
            _ => f64::INFINITY,
        }
    }

    fn emit(&mut self, u: Update) -> Option<Update> {
        self.oracle.apply(u).ok()?;
        Some(u)
    }
}

impl Adversary for SketchAttack {
    fn next_update(&mut self, _: &[Update], outputs: &[f64]) -> Option<Update> {
        if let Some((i, before)) = self.probe.take() {
            if self.ratio(outputs) > before {
                return self.emit(Update { index: i, delta: -1 });
            }
        }
        let before = self.ratio(outputs);
        let v = self.oracle.vector();
        let i = self.fresh.next(|i| v.get(i) != 0)?;
        self.probe = Some((i, before));
        self.emit(Update { index: i, delta: 1 })
    }
}

/// Plays back a fixed stream.
pub struct Replay {
    updates: Vec<Update>,
    pos: usize,
}

impl Replay {
    pub fn new(updates: Vec<Update>) -> Self {
        Replay { updates, pos: 0 }
    }
}

impl Adversary for Replay {
    fn next_update(&mut self, _: &[Update], _: &[f64]) -> Option<Update> {
        let u = self.updates.get(self.pos).copied();
        self.pos += 1;
        u
    }
}
