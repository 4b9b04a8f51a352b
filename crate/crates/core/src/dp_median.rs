//! Differentially private median over a finite geometric value grid.
//!
//! The mechanism is the exponential mechanism with the rank utility
//! `u(S, x) = -max(0, 2#{s < x} - |S|, 2#{s > x} - |S|)`, which has
//! sensitivity 1 under adding or removing one element, sampled with
//! probability proportional to `exp(eps * u / 2)`. Grid points between two
//! consecutive data values share a utility, so sampling runs over at most
//! `2|S| + 1` groups with the Gumbel-max trick (a `ln(group size)` offset
//! makes it exact), followed by a uniform pick inside the winning group.

use rand::Rng;

use crate::error::{config, Error, Result};

/// `{0} ∪ {(1 + alpha/3)^j : j >= 0} ∩ [1, tau)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueGrid {
    alpha: f64,
    tau: f64,
    /// The grid points in increasing order, starting with 0.
    points: Vec<f64>,
}

impl ValueGrid {
    pub fn new(alpha: f64, tau: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(config(format!("grid alpha must lie in (0,1), got {alpha}")));
        }
        if !(tau >= 1.0 && tau.is_finite()) {
            return Err(config(format!("grid tau must be finite and >= 1, got {tau}")));
        }
        let ratio = 1.0 + alpha / 3.0;
        let points = std::iter::once(0.0).chain((0..).map(|j| ratio.powi(j)).take_while(|&x| x < tau)).collect();
        Ok(ValueGrid { alpha, tau, points })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    /// `|X| = 1 + ceil(log_{1 + alpha/3} tau)`.
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid point with the given index (0 is the value 0).
    pub fn value(&self, index: usize) -> f64 {
        self.points[index]
    }

    /// Index of the smallest grid point `>= x`, truncated to the top point.
    pub fn round_index(&self, x: f64) -> usize {
        if x <= 0.0 {
            return 0;
        }
        self.points.partition_point(|&g| g < x).min(self.points.len() - 1)
    }

    pub fn round(&self, x: f64) -> f64 {
        self.value(self.round_index(x))
    }
}

/// Parameters of the private median.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MedianParams {
    pub epsilon: f64,
    pub delta: f64,
    pub c_gamma: f64,
    pub c_size: f64,
}

pub const DEFAULT_C_GAMMA: f64 = 4.0;
pub const DEFAULT_C_SIZE: f64 = 8.0;

impl MedianParams {
    /// `epsilon` may exceed 1: ensembles scaled below their formula size
    /// spend a proportionally larger per-query budget.
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(config(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(config(format!("delta must lie in (0,1), got {delta}")));
        }
        Ok(MedianParams { epsilon, delta, c_gamma: DEFAULT_C_GAMMA, c_size: DEFAULT_C_SIZE })
    }

    /// Rank-error bound `c_gamma / eps * ln(|X| / delta)`.
    pub fn gamma(&self, grid_len: usize) -> f64 {
        self.c_gamma / self.epsilon * (grid_len as f64 / self.delta).ln()
    }

    /// Smallest admissible database, `ceil(c_size / eps * ln(|X| / delta))`.
    pub fn min_size(&self, grid_len: usize) -> usize {
        (self.c_size / self.epsilon * (grid_len as f64 / self.delta).ln()).ceil().max(1.0) as usize
    }
}

/// Median utility of grid point `x` for a database given as grid indices.
pub fn utility(db: &[usize], x: usize) -> i64 {
    let below = db.iter().filter(|&&s| s < x).count() as i64;
    let above = db.iter().filter(|&&s| s > x).count() as i64;
    group_utility(below, above, db.len() as i64)
}

#[inline]
fn group_utility(below: i64, above: i64, size: i64) -> i64 {
    -(2 * below - size).max(2 * above - size).max(0)
}

/// Standard Gumbel variate.
fn gumbel<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u = crate::hashing::unit_open(rng.random::<u64>());
    -(-u.ln()).ln()
}

/// Private median of a database of grid indices; returns a grid index.
pub fn private_median_index<R: Rng + ?Sized>(
    db: &[usize],
    grid_len: usize,
    params: &MedianParams,
    rng: &mut R,
) -> Result<usize> {
    let required = params.min_size(grid_len);
    if db.len() < required {
        return Err(Error::DatabaseTooSmall { size: db.len(), required });
    }
    if let Some(&bad) = db.iter().find(|&&s| s >= grid_len) {
        return Err(config(format!("database value index {bad} outside the grid")));
    }
    let mut sorted = db.to_vec();
    sorted.sort_unstable();
    let size = sorted.len() as i64;
    let half_eps = params.epsilon / 2.0;

    // (start, count, utility) groups in increasing grid order.
    let mut best: Option<(f64, usize, usize)> = None;
    let mut consider = |start: usize, count: usize, u: i64, rng: &mut R| {
        if count == 0 {
            return;
        }
        let score = half_eps * u as f64 + (count as f64).ln() + gumbel(rng);
        if best.is_none_or(|(b, _, _)| score > b) {
            best = Some((score, start, count));
        }
    };
    let mut next = 0usize;
    let mut below = 0i64;
    let mut i = 0;
    while i < sorted.len() {
        let d = sorted[i];
        let mult = sorted[i..].iter().take_while(|&&s| s == d).count() as i64;
        consider(next, d - next, group_utility(below, size - below, size), rng);
        consider(d, 1, group_utility(below, size - below - mult, size), rng);
        below += mult;
        next = d + 1;
        i += mult as usize;
    }
    consider(next, grid_len - next, group_utility(below, 0, size), rng);
    let (_, start, count) = best.expect("grid is nonempty");
    Ok(if count == 1 { start } else { start + rng.random_range(0..count) })
}

/// Private median of values, each rounded onto `grid` first.
pub fn private_median<R: Rng + ?Sized>(
    values: &[f64],
    grid: &ValueGrid,
    params: &MedianParams,
    rng: &mut R,
) -> Result<f64> {
    let db: Vec<usize> = values.iter().map(|&x| grid.round_index(x)).collect();
    private_median_index(&db, grid.len(), params, rng).map(|i| grid.value(i))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_shape_and_rounding() {
        let g = ValueGrid::new(0.3, 100.0).unwrap();
        // 1.1^48 < 100 <= 1.1^49, so 49 powers plus zero.
        assert_eq!(g.len(), 50);
        assert_eq!(g.round(0.0), 0.0);
        assert_eq!(g.round(1.0), 1.0);
        assert!((g.round(1.05) - 1.1).abs() < 1e-12);
        assert_eq!(g.round(0.2), 1.0);
        assert_eq!(g.round(1e9), g.value(g.len() - 1));
        assert!(g.value(g.len() - 1) < 100.0);
    }

    #[test]
    fn grid_rounding_is_idempotent() {
        let g = ValueGrid::new(0.5, 1e6).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.round_index(g.value(i)), i);
        }
    }

    #[test]
    fn tiny_tau() {
        let g = ValueGrid::new(0.5, 1.0).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.round(5.0), 0.0);
        // 7/6 to the 4th is 1.85 and to the 5th 2.16: five powers below 2.
        assert_eq!(ValueGrid::new(0.5, 2.0).unwrap().len(), 6);
    }

    #[test]
    fn too_small_database() {
        let p = MedianParams::new(0.5, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let need = p.min_size(64);
        let db = vec![3usize; need - 1];
        assert!(matches!(private_median_index(&db, 64, &p, &mut rng), Err(Error::DatabaseTooSmall { .. })));
        assert!(private_median_index(&vec![3usize; need], 64, &p, &mut rng).is_ok());
    }

    #[test]
    fn unanimous_database() {
        let g = ValueGrid::new(0.5, 1e3).unwrap();
        let p = MedianParams::new(0.5, 0.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = g.value(10);
        let hits = (0..500).filter(|_| private_median(&vec![x; 500], &g, &p, &mut rng).unwrap() == x).count();
        assert!(hits as f64 >= 0.9 * 500.0);
    }
}
