use super::blob::{BlobKind, BlobReader, BlobWriter};
use super::ObliviousEstimator;
use crate::error::Result;
use crate::hashing::{derive, hash};

/// Independent rows; the estimate is their median.
pub const F2_ROWS: usize = 5;
/// Buckets per row are `ceil(F2_BUCKET_FACTOR / alpha^2)`.
pub const F2_BUCKET_FACTOR: f64 = 3.5;

/// Bucketed AMS / CountSketch second-moment sketch.
///
/// Each row hashes coordinates into `b` buckets with a random sign; a row's
/// sum of squared counters is an unbiased F2 estimate with variance at most
/// `2 F2^2 / b`. Row sums of squares are maintained incrementally.
#[derive(Clone, Debug, PartialEq)]
pub struct F2Sketch {
    alpha: f64,
    seed: u64,
    buckets: usize,
    row_seeds: [u64; F2_ROWS],
    counters: Vec<i64>,
    sum_sq: [i128; F2_ROWS],
}

impl F2Sketch {
    pub fn new(alpha: f64, seed: u64) -> Self {
        let buckets = (F2_BUCKET_FACTOR / (alpha * alpha)).ceil() as usize;
        Self::with_shape(alpha, seed, buckets.max(1))
    }

    fn with_shape(alpha: f64, seed: u64, buckets: usize) -> Self {
        F2Sketch {
            alpha,
            seed,
            buckets,
            row_seeds: std::array::from_fn(|r| derive(seed, r as u64)),
            counters: vec![0; F2_ROWS * buckets],
            sum_sq: [0; F2_ROWS],
        }
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    /// Bucket and sign of `index` in `row`.
    #[inline]
    pub fn locate(&self, row: usize, index: u64) -> (usize, i64) {
        let h = hash(self.row_seeds[row], index);
        let bucket = ((h >> 1) % self.buckets as u64) as usize;
        (bucket, if h & 1 == 0 { 1 } else { -1 })
    }

    /// Raw counters, row-major.
    pub fn counters(&self) -> &[i64] {
        &self.counters
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = BlobReader::open(bytes, BlobKind::F2)?;
        let alpha = r.f64()?;
        let seed = r.u64()?;
        let buckets = r.u64()? as usize;
        let counters = r.i64s()?;
        r.finish()?;
        if counters.len() != F2_ROWS * buckets {
            return Err(crate::Error::Blob("counter count mismatch".into()));
        }
        let mut s = Self::with_shape(alpha, seed, buckets);
        for (row, chunk) in counters.chunks(buckets).enumerate() {
            s.sum_sq[row] = chunk.iter().map(|&c| (c as i128) * (c as i128)).sum();
        }
        s.counters = counters;
        Ok(s)
    }
}

impl ObliviousEstimator for F2Sketch {
    #[inline]
    fn add(&mut self, index: u64, delta: i64) {
        for row in 0..F2_ROWS {
            let (b, sign) = self.locate(row, index);
            let cell = &mut self.counters[row * self.buckets + b];
            let d = sign * delta;
            let old = *cell as i128;
            *cell = cell.wrapping_add(d);
            self.sum_sq[row] += (2 * old + d as i128) * d as i128;
        }
    }

    fn estimate(&self) -> f64 {
        let mut rows = self.sum_sq;
        rows.sort_unstable();
        rows[F2_ROWS / 2] as f64
    }

    fn words_used(&self) -> usize {
        // Counters, two words per 128-bit row sum, seed.
        self.counters.len() + 2 * F2_ROWS + 1
    }

    fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(BlobKind::F2)
            .f64(self.alpha)
            .u64(self.seed)
            .u64(self.buckets as u64)
            .i64s(&self.counters)
            .finish()
    }
}
