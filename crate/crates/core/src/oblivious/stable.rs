use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, OnceLock};

use super::blob::{BlobKind, BlobReader, BlobWriter};
use super::ObliviousEstimator;
use crate::error::{config, Error, Result};
use crate::hashing::{derive, hash, unit_open, WyRand};

/// Projections hold variates in fixed point with this many fractional bits,
/// so updates are exact integer arithmetic and the sketch is exactly linear.
pub const FRACTION_BITS: u32 = 10;
const SCALE: f64 = (1u64 << FRACTION_BITS) as f64;
/// Variates are clamped to `+-2^31` before scaling (probability ~1e-9 at p = 1).
const CLAMP: f64 = (1u64 << 31) as f64;
/// Normal quantile used to size the sketch: per-prefix success ~0.90.
const SIZING_Z: f64 = 1.645;

/// Cauchy variates come from a 4096-cell quantile table (12 random bits each);
/// the two extreme cells are resampled exactly from further random bits.
const CELL_BITS: u32 = 12;
const CELLS: usize = 1 << CELL_BITS;

/// Indyk-style p-stable projection sketch for `0 < p < 2`.
///
/// Projection `j` is `sum_i v_i s_{j,i}` where `s_{j,i}` is a standard
/// symmetric p-stable variate regenerated from `(seed, i, j)` on demand. The
/// median of `|projection|` concentrates at `median(|S|) * F_p^{1/p}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StableSketch {
    p: f64,
    alpha: f64,
    seed: u64,
    column_seed: u64,
    tail_seed: u64,
    median_abs: f64,
    proj: Vec<i64>,
    hint: MedianHint,
}

/// Last median of `|projection|`, used only to speed up the next selection.
#[derive(Debug, Default)]
struct MedianHint(AtomicU64);

impl Clone for MedianHint {
    fn clone(&self) -> Self {
        MedianHint(AtomicU64::new(self.0.load(Ordering::Relaxed)))
    }
}

impl PartialEq for MedianHint {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl StableSketch {
    pub fn new(p: f64, alpha: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::UnsupportedMoment(p));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(config(format!("alpha must lie in (0,1), got {alpha}")));
        }
        Ok(Self::with_rows(p, alpha, seed, stable_rows(p, alpha)))
    }

    fn with_rows(p: f64, alpha: f64, seed: u64, rows: usize) -> Self {
        StableSketch {
            p,
            alpha,
            seed,
            column_seed: derive(seed, 0),
            tail_seed: derive(seed, 1),
            median_abs: stable_abs_median(p),
            proj: vec![0; rows],
            hint: MedianHint::default(),
        }
    }

    pub fn rows(&self) -> usize {
        self.proj.len()
    }

    /// Raw fixed-point projections.
    pub fn projections(&self) -> &[i64] {
        &self.proj
    }

    /// The fixed-point variates of coordinate `index`, one per projection.
    pub fn column(&self, index: u64) -> Vec<i64> {
        let mut col = vec![0; self.proj.len()];
        self.visit(&mut col, index, |slot, s| *slot = s);
        col
    }

    #[inline(always)]
    fn visit<F: FnMut(&mut i64, i64)>(&self, out: &mut [i64], index: u64, mut f: F) {
        let mut rng = WyRand::new(hash(self.column_seed, index));
        if self.p != 1.0 {
            for slot in out.iter_mut() {
                let theta = PI * (unit_open(rng.next_u64()) - 0.5);
                let w = -unit_open(rng.next_u64()).ln();
                f(slot, to_fixed(cms_variate(self.p, theta, w)));
            }
            return;
        }
        // Extreme cells are rare (1 in 2048); remember where they fell and
        // patch them afterwards with exact draws.
        let table = cauchy_table();
        let mut edges = [(0u32, 0u16); 32];
        let mut n_edges = 0usize;
        let mut visit_cell = |slot: &mut i64, j: usize, h: usize| {
            if h.wrapping_sub(1) >= CELLS - 2 {
                if n_edges < edges.len() {
                    edges[n_edges] = (j as u32, h as u16);
                }
                n_edges += 1;
            }
            f(slot, table[h] as i64);
        };
        let mut chunks = out.chunks_exact_mut(5);
        let mut j = 0;
        for chunk in &mut chunks {
            let w = rng.next_u64();
            for (q, slot) in chunk.iter_mut().enumerate() {
                let h = ((w >> (CELL_BITS * q as u32)) as usize) & (CELLS - 1);
                visit_cell(slot, j + q, h);
            }
            j += 5;
        }
        let w = rng.next_u64();
        for (q, slot) in chunks.into_remainder().iter_mut().enumerate() {
            let h = ((w >> (CELL_BITS * q as u32)) as usize) & (CELLS - 1);
            visit_cell(slot, j + q, h);
        }
        if n_edges > edges.len() {
            self.fix_all_cauchy_tails(out, index, f);
            return;
        }
        for &(j, h) in &edges[..n_edges] {
            let (j, h) = (j as usize, h as usize);
            // Linear in the variate: undo the table value, apply the exact one.
            f(&mut out[j], -(table[h] as i64));
            f(&mut out[j], self.cauchy_tail(index, j, h));
        }
    }

    /// Replay a whole column and patch every extreme cell.
    #[cold]
    #[inline(never)]
    fn fix_all_cauchy_tails<F: FnMut(&mut i64, i64)>(&self, out: &mut [i64], index: u64, mut f: F) {
        let table = cauchy_table();
        let mut rng = WyRand::new(hash(self.column_seed, index));
        let mut w = 0;
        for (j, slot) in out.iter_mut().enumerate() {
            let q = j % 5;
            if q == 0 {
                w = rng.next_u64();
            }
            let h = ((w >> (CELL_BITS * q as u32)) as usize) & (CELLS - 1);
            if h == 0 || h == CELLS - 1 {
                f(slot, -(table[h] as i64));
                f(slot, self.cauchy_tail(index, j, h));
            }
        }
    }

    #[cold]
    fn cauchy_tail(&self, index: u64, j: usize, cell: usize) -> i64 {
        let x = unit_open(hash(hash(self.tail_seed, index), j as u64));
        let u = (cell as f64 + x) / CELLS as f64;
        to_fixed((PI * (u - 0.5)).tan())
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = BlobReader::open(bytes, BlobKind::Stable)?;
        let p = r.f64()?;
        let alpha = r.f64()?;
        let seed = r.u64()?;
        let proj = r.i64s()?;
        r.finish()?;
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::Blob(format!("invalid p {p}")));
        }
        let mut s = Self::with_rows(p, alpha, seed, proj.len());
        s.proj = proj;
        Ok(s)
    }
}

impl ObliviousEstimator for StableSketch {
    fn add(&mut self, index: u64, delta: i64) {
        let mut proj = std::mem::take(&mut self.proj);
        match delta {
            1 => self.visit(&mut proj, index, |y, s| *y = y.wrapping_add(s)),
            -1 => self.visit(&mut proj, index, |y, s| *y = y.wrapping_sub(s)),
            d => self.visit(&mut proj, index, |y, s| *y = y.wrapping_add(s.wrapping_mul(d))),
        }
        self.proj = proj;
    }

    fn estimate(&self) -> f64 {
        let hint = self.hint.0.load(Ordering::Relaxed);
        let med = median_abs(&self.proj, hint);
        self.hint.0.store(med, Ordering::Relaxed);
        let norm = med as f64 / SCALE / self.median_abs;
        if self.p == 1.0 {
            norm
        } else {
            norm.powf(self.p)
        }
    }

    fn words_used(&self) -> usize {
        // Projections, seed, and the cached scaling constant.
        self.proj.len() + 2
    }

    fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(BlobKind::Stable).f64(self.p).f64(self.alpha).u64(self.seed).i64s(&self.proj).finish()
    }
}

/// Element of rank `len / 2` among `|y|`.
///
/// Projections drift slowly between queries, so the previous median is a
/// good pivot: one pass counts the values below a narrow window
/// around it and gathers the few values inside; the exact answer is
/// selected from the window, or from everything if the window missed.
pub fn median_abs(ys: &[i64], hint: u64) -> u64 {
    let k = ys.len() / 2;
    if hint > 0 && ys.len() >= 64 {
        let lo = hint - hint / 16;
        let width = hint / 8;
        let mut below = 0usize;
        let mut window = Vec::with_capacity(ys.len() / 8);
        for y in ys {
            let a = y.unsigned_abs();
            below += (a < lo) as usize;
            if a.wrapping_sub(lo) <= width {
                window.push(a);
            }
        }
        if below <= k && k < below + window.len() {
            let (_, m, _) = window.select_nth_unstable(k - below);
            return *m;
        }
    }
    let mut a: Vec<u64> = ys.iter().map(|y| y.unsigned_abs()).collect();
    let (_, m, _) = a.select_nth_unstable(k);
    *m
}

#[inline]
fn to_fixed(s: f64) -> i64 {
    (s.clamp(-CLAMP, CLAMP) * SCALE).round() as i64
}

/// Chambers-Mallows-Stuck transform: `theta` uniform on `(-pi/2, pi/2)` and
/// `w` standard exponential give a standard symmetric p-stable variate with
/// characteristic function `exp(-|t|^p)`.
pub fn cms_variate(p: f64, theta: f64, w: f64) -> f64 {
    if p == 1.0 {
        return theta.tan();
    }
    let a = (p * theta).sin() / theta.cos().powf(1.0 / p);
    a * ((((1.0 - p) * theta).cos()) / w).powf((1.0 - p) / p)
}

fn cauchy_table() -> &'static [i32; CELLS] {
    static TABLE: OnceLock<Box<[i32; CELLS]>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let v: Vec<i32> = (0..CELLS)
            .map(|h| {
                let u = (h as f64 + 0.5) / CELLS as f64;
                ((PI * (u - 0.5)).tan() * SCALE).round() as i32
            })
            .collect();
        v.into_boxed_slice().try_into().expect("table size")
    })
}

/// `P(|S| <= x)` for standard symmetric p-stable `S`, by quadrature over the
/// angle of the Chambers-Mallows-Stuck representation: conditioned on the
/// angle, `|S| <= x` is an event on the exponential variable with closed form.
pub fn stable_abs_cdf(p: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if p == 1.0 {
        return 2.0 / PI * x.atan();
    }
    const N: usize = 20_000;
    let e = (1.0 - p) / p;
    let h = FRAC_PI_2 / N as f64;
    let mut acc = 0.0;
    for i in 0..N {
        let theta = (i as f64 + 0.5) * h;
        let a = ((p * theta).sin() / theta.cos().powf(1.0 / p) * (((1.0 - p) * theta).cos()).powf(e)).abs();
        let g = if a == 0.0 {
            1.0
        } else {
            let c = x / a;
            if p < 1.0 {
                (-c.powf(-1.0 / e)).exp()
            } else {
                -(-c.powf(-1.0 / e)).exp_m1()
            }
        };
        acc += g;
    }
    (acc * h * 2.0 / PI).clamp(0.0, 1.0)
}

/// `(median |S|, density of |S| at the median)`, computed once per `p`.
fn abs_stats(p: f64) -> (f64, f64) {
    static CACHE: OnceLock<Mutex<HashMap<u64, (f64, f64)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&s) = cache.lock().expect("cache lock").get(&p.to_bits()) {
        return s;
    }
    let mut hi = 1.0;
    while stable_abs_cdf(p, hi) < 0.5 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if stable_abs_cdf(p, mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let med = 0.5 * (lo + hi);
    let d = 1e-4 * med;
    let dens = (stable_abs_cdf(p, med + d) - stable_abs_cdf(p, med - d)) / (2.0 * d);
    let stats = (med, dens);
    cache.lock().expect("cache lock").insert(p.to_bits(), stats);
    stats
}

/// Median of `|S|` for a standard symmetric p-stable `S`.
pub fn stable_abs_median(p: f64) -> f64 {
    abs_stats(p).0
}

/// Number of projections for a `(1 +- alpha)` estimate with probability ~0.90.
///
/// The sample median of `r` draws has standard deviation
/// `1 / (2 f(med) sqrt(r))`; raising to the power `p` multiplies the relative
/// error by `p`.
pub fn stable_rows(p: f64, alpha: f64) -> usize {
    let (med, dens) = abs_stats(p);
    let rel = p / (2.0 * dens * med);
    ((SIZING_Z * rel / alpha).powi(2).ceil() as usize).max(1)
}
