//! Seeded mixing functions and arithmetic in the Mersenne field GF(2^61 - 1).
//!
//! Every pseudorandom choice a sketch makes is a pure function of its seed and
//! the inputs, so sketch state is reproducible and never stores randomness.

/// The Mersenne prime 2^61 - 1.
pub const MERSENNE_61: u64 = (1 << 61) - 1;

/// SplitMix64 finalizer: a bijective avalanche mix of 64 bits.
#[inline]
pub fn mix64(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hash of `x` under `seed`.
#[inline]
pub fn hash(seed: u64, x: u64) -> u64 {
    mix64(seed ^ mix64(x.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

/// Derive the seed of the `i`-th child from a parent seed.
#[inline]
pub fn derive(seed: u64, i: u64) -> u64 {
    hash(seed ^ 0x5851_f42d_4c95_7f2d, i)
}

/// Uniform double in (0, 1) from the top 52 bits, never exactly 0 or 1.
#[inline]
pub fn unit_open(x: u64) -> f64 {
    ((x >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
}

/// Wyrand: a tiny counter-based generator used in hot loops.
#[derive(Clone, Debug)]
pub struct WyRand(u64);

impl WyRand {
    pub fn new(seed: u64) -> Self {
        WyRand(seed)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0xa076_1d64_78bd_642f);
        let t = (self.0 as u128).wrapping_mul((self.0 ^ 0xe703_7ed1_a0b4_28db) as u128);
        ((t >> 64) ^ t) as u64
    }
}

/// Reduce an element below 2^122 modulo 2^61 - 1.
#[inline]
fn reduce128(x: u128) -> u64 {
    let lo = (x as u64) & MERSENNE_61;
    let hi = (x >> 61) as u64;
    let s = lo + (hi & MERSENNE_61) + ((x >> 122) as u64);
    let s = (s & MERSENNE_61) + (s >> 61);
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[inline]
pub fn fadd(a: u64, b: u64) -> u64 {
    let s = a + b;
    if s >= MERSENNE_61 {
        s - MERSENNE_61
    } else {
        s
    }
}

#[inline]
pub fn fsub(a: u64, b: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + MERSENNE_61 - b
    }
}

#[inline]
pub fn fmul(a: u64, b: u64) -> u64 {
    reduce128(a as u128 * b as u128)
}

pub fn fpow(mut base: u64, mut exp: u64) -> u64 {
    let mut acc = 1u64;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = fmul(acc, base);
        }
        base = fmul(base, base);
        exp >>= 1;
    }
    acc
}

/// Map a signed integer into the field.
#[inline]
pub fn from_i64(x: i64) -> u64 {
    let r = x.unsigned_abs() % MERSENNE_61;
    if x < 0 && r != 0 {
        MERSENNE_61 - r
    } else {
        r
    }
}

/// Field element derived from a seed, never 0 or 1.
pub fn field_element(seed: u64) -> u64 {
    2 + mix64(seed) % (MERSENNE_61 - 2)
}
