//! Classical (oblivious) turnstile moment sketches.
//!
//! Each sketch is linear in the frequency vector, so its state after a stream
//! depends only on the aggregated vector and the seed. For any fixed stream
//! prefix the estimate is a `(1 +- alpha)`-approximation with probability at
//! least 9/10 over the seed; nothing is promised against adaptive inputs.

mod blob;
mod f0;
mod f2;
mod stable;

pub use blob::{BlobKind, BlobReader, BlobWriter};
pub use f0::{F0Sketch, F0_BUCKET_FACTOR};
pub use f2::{F2Sketch, F2_BUCKET_FACTOR, F2_ROWS};
pub use stable::{
    cms_variate, median_abs, stable_abs_cdf, stable_abs_median, stable_rows, StableSketch, FRACTION_BITS,
};

use crate::error::{config, Error, Result};
use crate::stream::Update;

/// Behaviour shared by every oblivious sketch.
pub trait ObliviousEstimator: Send + Sync {
    /// Linear update by an arbitrary signed amount.
    fn add(&mut self, index: u64, delta: i64);

    fn update(&mut self, u: Update) {
        self.add(u.index, u.delta);
    }

    /// Point estimate of the moment of the current vector.
    fn estimate(&self) -> f64;

    /// Fixed space of the sketch in 64-bit words.
    fn words_used(&self) -> usize;

    /// Versioned little-endian serialization of the sketch state.
    fn to_blob(&self) -> Vec<u8>;
}

/// Static dispatch over the supported sketches.
#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    F0(F0Sketch),
    F2(F2Sketch),
    Stable(StableSketch),
}

impl ObliviousEstimator for Estimator {
    #[inline]
    fn add(&mut self, index: u64, delta: i64) {
        match self {
            Estimator::F0(s) => s.add(index, delta),
            Estimator::F2(s) => s.add(index, delta),
            Estimator::Stable(s) => s.add(index, delta),
        }
    }

    fn estimate(&self) -> f64 {
        match self {
            Estimator::F0(s) => s.estimate(),
            Estimator::F2(s) => s.estimate(),
            Estimator::Stable(s) => s.estimate(),
        }
    }

    fn words_used(&self) -> usize {
        match self {
            Estimator::F0(s) => s.words_used(),
            Estimator::F2(s) => s.words_used(),
            Estimator::Stable(s) => s.words_used(),
        }
    }

    fn to_blob(&self) -> Vec<u8> {
        match self {
            Estimator::F0(s) => s.to_blob(),
            Estimator::F2(s) => s.to_blob(),
            Estimator::Stable(s) => s.to_blob(),
        }
    }
}

impl Estimator {
    /// Rebuild any sketch from its blob.
    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        match BlobReader::peek_kind(bytes)? {
            BlobKind::F0 => F0Sketch::from_blob(bytes).map(Estimator::F0),
            BlobKind::F2 => F2Sketch::from_blob(bytes).map(Estimator::F2),
            BlobKind::Stable => StableSketch::from_blob(bytes).map(Estimator::Stable),
            other => Err(Error::Blob(format!("{other:?} is not an oblivious estimator"))),
        }
    }
}

/// Build the sketch for moment `p`: F0 for `p = 0`, the bucketed F2 sketch for
/// `p = 2` and the p-stable projection sketch for `0 < p < 2`.
///
/// `m` does not change the sketch shape: counters are full 64-bit words, which
/// is enough for any stream the crate accepts.
pub fn make_estimator(p: f64, alpha: f64, n: u64, m: u64, seed: u64) -> Result<Estimator> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(config(format!("alpha must lie in (0,1), got {alpha}")));
    }
    if n == 0 || m == 0 {
        return Err(config("n and m must be at least 1"));
    }
    if p == 0.0 {
        Ok(Estimator::F0(F0Sketch::new(alpha, n, seed)))
    } else if p == 2.0 {
        Ok(Estimator::F2(F2Sketch::new(alpha, seed)))
    } else if p > 0.0 && p < 2.0 {
        Ok(Estimator::Stable(StableSketch::new(p, alpha, seed)?))
    } else {
        Err(Error::UnsupportedMoment(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dispatch_by_moment() {
        assert!(matches!(make_estimator(2.0, 0.1, 64, 64, 1), Ok(Estimator::F2(_))));
        assert!(matches!(make_estimator(0.0, 0.25, 64, 64, 1), Ok(Estimator::F0(_))));
        assert!(matches!(make_estimator(1.0, 0.5, 64, 64, 1), Ok(Estimator::Stable(_))));
        assert!(matches!(make_estimator(3.0, 0.5, 64, 64, 1), Err(Error::UnsupportedMoment(_))));
        assert!(make_estimator(1.0, 1.5, 64, 64, 1).is_err());
    }

    #[test]
    fn blobs_round_trip_through_the_enum() {
        for p in [0.0, 1.0, 2.0] {
            let mut e = make_estimator(p, 0.5, 256, 100, 9).unwrap();
            for i in 1..40u64 {
                e.add(i * 3 % 256 + 1, if i % 3 == 0 { -1 } else { 2 });
            }
            let back = Estimator::from_blob(&e.to_blob()).unwrap();
            assert_eq!(back, e);
            assert_eq!(back.estimate(), e.estimate());
        }
    }
}
