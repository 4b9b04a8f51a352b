//! Exact k-sparse recovery from a linear sketch by verified IBLT peeling.
//!
//! Each of `d = 4` rows hashes every coordinate into one of `2k` buckets that
//! hold `(sum v_i, sum i v_i, sum v_i r^i)`, the last over GF(2^61 - 1). A
//! bucket holding a single coordinate ("pure") reveals it; removing it from
//! every row may make further buckets pure. A decoded vector is returned only
//! if re-encoding it reproduces every word of the sketch, so a wrong answer
//! can never be returned unverified, however the input was chosen.

use crate::error::{Error, Result};
use crate::hashing::{derive, fadd, field_element, fmul, fpow, from_i64, fsub, hash};
use crate::oblivious::{BlobKind, BlobReader, BlobWriter};
use crate::stream::{SparseVector, Update};

/// Peeling rows.
pub const RECOVERY_ROWS: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct RecoverySketch {
    n: u64,
    k: usize,
    seed: u64,
    buckets: usize,
    base: u64,
    row_seeds: [u64; RECOVERY_ROWS],
    count: Vec<i64>,
    /// Wrapping sum of `i * v_i`; exact whenever the true sum fits in 63 bits.
    index_sum: Vec<i64>,
    fingerprint: Vec<u64>,
}

impl RecoverySketch {
    pub fn new(n: u64, k: usize, seed: u64) -> Self {
        let k = k.max(1);
        let buckets = 2 * k;
        let cells = RECOVERY_ROWS * buckets;
        RecoverySketch {
            n,
            k,
            seed,
            buckets,
            base: field_element(derive(seed, 0)),
            row_seeds: std::array::from_fn(|r| derive(seed, 1 + r as u64)),
            count: vec![0; cells],
            index_sum: vec![0; cells],
            fingerprint: vec![0; cells],
        }
    }

    pub fn sparsity(&self) -> usize {
        self.k
    }

    #[inline]
    fn cell(&self, row: usize, index: u64) -> usize {
        row * self.buckets + (hash(self.row_seeds[row], index) % self.buckets as u64) as usize
    }

    /// Fingerprint of `delta` at `index`: `delta * r^index`.
    #[inline]
    fn term(&self, index: u64, delta: i64) -> u64 {
        fmul(fpow(self.base, index), from_i64(delta))
    }

    pub fn add(&mut self, index: u64, delta: i64) {
        let fp = self.term(index, delta);
        for row in 0..RECOVERY_ROWS {
            let c = self.cell(row, index);
            self.count[c] = self.count[c].wrapping_add(delta);
            self.index_sum[c] = self.index_sum[c].wrapping_add((index as i64).wrapping_mul(delta));
            self.fingerprint[c] = fadd(self.fingerprint[c], fp);
        }
    }

    pub fn update(&mut self, u: Update) {
        self.add(u.index, u.delta);
    }

    /// The `(index, value)` held by cell `c` if it is a verified singleton.
    fn pure(&self, count: &[i64], isum: &[i64], fp: &[u64], c: usize) -> Option<(u64, i64)> {
        let v = count[c];
        if v == 0 || isum[c].checked_rem(v) != Some(0) {
            return None;
        }
        let i = isum[c].checked_div(v)?;
        if i < 1 || i as u64 > self.n {
            return None;
        }
        let i = i as u64;
        (fp[c] == self.term(i, v)).then_some((i, v))
    }

    /// Decode the sketched vector. Succeeds w.h.p. whenever it is k-sparse.
    pub fn recover(&self) -> Result<SparseVector> {
        let mut count = self.count.clone();
        let mut isum = self.index_sum.clone();
        let mut fp = self.fingerprint.clone();
        let mut out = SparseVector::new(self.n);
        let mut stack: Vec<usize> = (0..count.len()).filter(|&c| count[c] != 0).collect();
        let cap = self.k * RECOVERY_ROWS;
        let mut peeled = 0;
        while let Some(c) = stack.pop() {
            let Some((i, v)) = self.pure(&count, &isum, &fp, c) else { continue };
            if peeled == cap {
                return Err(Error::NotRecoverable);
            }
            peeled += 1;
            out.add(i, v)?;
            let t = self.term(i, v);
            for row in 0..RECOVERY_ROWS {
                let d = self.cell(row, i);
                count[d] = count[d].wrapping_sub(v);
                isum[d] = isum[d].wrapping_sub((i as i64).wrapping_mul(v));
                fp[d] = fsub(fp[d], t);
                if count[d] != 0 || fp[d] != 0 {
                    stack.push(d);
                }
            }
        }
        if count.iter().any(|&x| x != 0) || isum.iter().any(|&x| x != 0) || fp.iter().any(|&x| x != 0) {
            return Err(Error::NotRecoverable);
        }
        self.verify(&out)?;
        Ok(out)
    }

    /// Accept `candidate` only if its encoding matches this sketch word for word.
    pub fn verify(&self, candidate: &SparseVector) -> Result<()> {
        let mut enc = RecoverySketch::new(self.n, self.k, self.seed);
        for (i, v) in candidate.iter() {
            enc.add(i, v);
        }
        if enc.count == self.count && enc.index_sum == self.index_sum && enc.fingerprint == self.fingerprint {
            Ok(())
        } else {
            Err(Error::NotRecoverable)
        }
    }

    /// Raw `(count, index_sum, fingerprint)` of every cell, row-major.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, u64)> + '_ {
        (0..self.count.len()).map(|c| (self.count[c], self.index_sum[c], self.fingerprint[c]))
    }

    /// Cell of `index` in `row` (for auditing bucket contents).
    pub fn cell_of(&self, row: usize, index: u64) -> usize {
        self.cell(row, index)
    }

    pub fn words_used(&self) -> usize {
        3 * self.count.len() + RECOVERY_ROWS + 2
    }

    pub fn to_blob(&self) -> Vec<u8> {
        BlobWriter::new(BlobKind::Recovery)
            .u64(self.n)
            .u64(self.k as u64)
            .u64(self.seed)
            .i64s(&self.count)
            .i64s(&self.index_sum)
            .u64s(&self.fingerprint)
            .finish()
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let mut r = BlobReader::open(bytes, BlobKind::Recovery)?;
        let n = r.u64()?;
        let k = r.u64()? as usize;
        let seed = r.u64()?;
        let mut s = RecoverySketch::new(n, k, seed);
        let (count, isum, fp) = (r.i64s()?, r.i64s()?, r.u64s()?);
        r.finish()?;
        if count.len() != s.count.len() || isum.len() != s.count.len() || fp.len() != s.count.len() {
            return Err(Error::Blob("cell count mismatch".into()));
        }
        s.count = count;
        s.index_sum = isum;
        s.fingerprint = fp;
        Ok(s)
    }
}
