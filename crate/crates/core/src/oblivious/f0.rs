use super::blob::{BlobKind, BlobReader, BlobWriter};
use super::ObliviousEstimator;
use crate::error::{Error, Result};
use crate::hashing::{derive, fadd, field_element, fmul, from_i64, hash};

/// Buckets per level are `ceil(F0_BUCKET_FACTOR / alpha^2)`.
pub const F0_BUCKET_FACTOR: f64 = 11.0;

/// Distinct-elements (F0) sketch for turnstile streams.
///
/// Coordinates are subsampled into nested levels: level `l` holds the indices
/// whose level hash has at least `l` trailing zeros, so level 0 sees all of
/// them. Each level hashes its indices into `B` buckets; a bucket stores the
/// fingerprint `sum v_i w(i)` over GF(2^61 - 1), which is nonzero exactly when
/// some coordinate in it is nonzero (up to a `1/P` false-zero chance). The
/// estimate reads the number of nonzero buckets at the lowest level that is at
/// most half full and inverts the bucket-occupancy law, scaled by `2^level`.
#[derive(Clone, Debug, PartialEq)]
pub struct F0Sketch {
    alpha: f64,
    n: u64,
    seed: u64,
    buckets: usize,
    levels: usize,
    level_seed: u64,
    weight_seed: u64,
    bucket_seeds: Vec<u64>,
    cells: Vec<u64>,
    nonzero: Vec<u64>,
}

impl F0Sketch {
    pub fn new(alpha: f64, n: u64, seed: u64) -> Self {
        let buckets = ((F0_BUCKET_FACTOR / (alpha * alpha)).ceil() as usize).max(2);
        Self::with_shape(alpha, n, seed, buckets)
    }

    fn with_shape(alpha: f64, n: u64, seed: u64, buckets: usize) -> Self {
        let levels = Self::levels_for(n);
        F0Sketch {
            alpha,
            n,
            seed,
            buckets,
            levels,
            level_seed: derive(seed, 0),
            weight_seed: derive(seed, 1),
            bucket_seeds: (0..levels).map(|l| derive(seed, 2 + l as u64)).collect(),
            cells: vec![0; levels * buckets],
            nonzero: vec![0; levels],
        }
    }

    /// `ceil(log2 n) + 1` levels.
    pub fn levels_for(n: u64) -> usize {
        let ceil_log = if n <= 1 { 0 } else { 64 - (n - 1).leading_zeros() as usize };
        ceil_log + 1
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// Deepest level holding `index`.
    #[inline]
    pub fn top_level(&self, index: u64) -> usize {
        (hash(self.level_seed, index).trailing_zeros() as usize).min(self.levels - 1)
    }

    #[inline]
    pub fn bucket(&self, level: usize, index: u64) -> usize {
        (hash(self.bucket_seeds[level], index) % self.buckets as u64) as usize
    }

    #[inline]
    pub fn weight(&self, index: u64) -> u64 {
        field_element(hash(self.weight_seed, index))
    }

    /// Number of nonzero buckets per level.
    pub fn occupancy(&self) -> &[u64] {
        &self.nonzero
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = BlobReader::open(bytes, BlobKind::F0)?;
        let alpha = r.f64()?;
        let n = r.u64()?;
        let seed = r.u64()?;
        let buckets = r.u64()? as usize;
        let cells = r.u64s()?;
        r.finish()?;
        let mut s = Self::with_shape(alpha, n, seed, buckets);
        if cells.len() != s.cells.len() {
            return Err(Error::Blob("cell count mismatch".into()));
        }
        for (l, chunk) in cells.chunks(buckets).enumerate() {
            s.nonzero[l] = chunk.iter().filter(|&&c| c != 0).count() as u64;
        }
        s.cells = cells;
        Ok(s)
    }
}

impl ObliviousEstimator for F0Sketch {
    #[inline]
    fn add(&mut self, index: u64, delta: i64) {
        let w = fmul(self.weight(index), from_i64(delta));
        for level in 0..=self.top_level(index) {
            let b = self.bucket(level, index);
            let cell = &mut self.cells[level * self.buckets + b];
            let was_zero = *cell == 0;
            *cell = fadd(*cell, w);
            match (was_zero, *cell == 0) {
                (true, false) => self.nonzero[level] += 1,
                (false, true) => self.nonzero[level] -= 1,
                _ => {}
            }
        }
    }

    fn estimate(&self) -> f64 {
        let b = self.buckets as f64;
        let level = (0..self.levels).find(|&l| 2 * self.nonzero[l] <= self.buckets as u64).unwrap_or(self.levels - 1);
        let nz = (self.nonzero[level] as f64).min(b - 1.0);
        let scale = (level as f64).exp2();
        scale * (-b * (-nz / b).ln_1p())
    }

    fn words_used(&self) -> usize {
        // Cells, per-level occupancy counters and bucket seeds, two other seeds.
        self.cells.len() + 2 * self.levels + 2
    }

    fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(BlobKind::F0)
            .f64(self.alpha)
            .u64(self.n)
            .u64(self.seed)
            .u64(self.buckets as u64)
            .u64s(&self.cells)
            .finish()
    }
}
