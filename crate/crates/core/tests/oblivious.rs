use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use proptest::prelude::*;
use turnstile_core::hashing::{fadd, fmul, from_i64};
use turnstile_core::oblivious::*;
use turnstile_core::Error;

const N: u64 = 1 << 12;

fn entries() -> impl Strategy<Value = Vec<(u64, i64)>> {
    prop::collection::vec((1..=N, -5i64..=5), 0..40)
}

fn aggregate(us: &[(u64, i64)]) -> BTreeMap<u64, i64> {
    let mut v = BTreeMap::new();
    for &(i, d) in us {
        *v.entry(i).or_insert(0) += d;
    }
    v.retain(|_, x| *x != 0);
    v
}

fn feed<E: ObliviousEstimator>(s: &mut E, us: &[(u64, i64)]) {
    for &(i, d) in us {
        s.add(i, d);
    }
}

fn sketches(seed: u64) -> Vec<Estimator> {
    vec![
        make_estimator(0.0, 0.3, N, 100, seed).unwrap(),
        make_estimator(2.0, 0.3, N, 100, seed).unwrap(),
        make_estimator(1.0, 0.3, N, 100, seed).unwrap(),
        make_estimator(0.5, 0.3, N, 100, seed).unwrap(),
        make_estimator(1.5, 0.3, N, 100, seed).unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn state_depends_only_on_the_aggregate(us in entries(), seed in any::<u64>()) {
        // Feeding the aggregated vector in one step per coordinate must give
        // the same state as the raw stream in any order.
        let agg = aggregate(&us);
        let mut reversed = us.clone();
        reversed.reverse();
        for (a, (b, c)) in sketches(seed).into_iter().zip(sketches(seed).into_iter().zip(sketches(seed))) {
            let (mut a, mut b, mut c) = (a, b, c);
            feed(&mut a, &us);
            feed(&mut b, &reversed);
            feed(&mut c, &agg.iter().map(|(&i, &x)| (i, x)).collect::<Vec<_>>());
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&a, &c);
        }
    }

    #[test]
    fn inverse_stream_cancels(us in entries(), seed in any::<u64>()) {
        for mut s in sketches(seed) {
            let fresh = s.clone();
            feed(&mut s, &us);
            let inverse: Vec<(u64, i64)> = us.iter().map(|&(i, d)| (i, -d)).collect();
            feed(&mut s, &inverse);
            prop_assert_eq!(&s, &fresh);
            prop_assert_eq!(s.estimate(), 0.0);
        }
    }

    #[test]
    fn f2_counters_are_signed_bucket_sums(us in entries(), seed in any::<u64>()) {
        let mut s = F2Sketch::new(0.3, seed);
        feed(&mut s, &us);
        let b = s.buckets();
        let mut want = vec![0i64; F2_ROWS * b];
        for (&i, &x) in &aggregate(&us) {
            for row in 0..F2_ROWS {
                let (bucket, sign) = s.locate(row, i);
                want[row * b + bucket] += sign * x;
            }
        }
        prop_assert_eq!(s.counters(), &want[..]);
        let mut rows: Vec<i128> = want.chunks(b).map(|c| c.iter().map(|&x| (x as i128).pow(2)).sum()).collect();
        rows.sort_unstable();
        prop_assert_eq!(s.estimate(), rows[F2_ROWS / 2] as f64);
    }

    #[test]
    fn stable_projections_are_dot_products(us in entries(), seed in any::<u64>(), p in prop::sample::select(vec![0.5, 1.0, 1.5])) {
        let mut s = StableSketch::new(p, 0.5, seed).unwrap();
        feed(&mut s, &us);
        let mut want = vec![0i64; s.rows()];
        for (&i, &x) in &aggregate(&us) {
            for (w, c) in want.iter_mut().zip(s.column(i)) {
                *w = w.wrapping_add(c.wrapping_mul(x));
            }
        }
        prop_assert_eq!(s.projections(), &want[..]);
    }

    #[test]
    fn f0_occupancy_matches_nonzero_buckets(us in entries(), seed in any::<u64>()) {
        let mut s = F0Sketch::new(0.3, N, seed);
        feed(&mut s, &us);
        let agg = aggregate(&us);
        for level in 0..s.levels() {
            let hit: BTreeSet<usize> = agg
                .keys()
                .filter(|&&i| s.top_level(i) >= level)
                .map(|&i| s.bucket(level, i))
                .collect();
            // A bucket's fingerprint vanishes only on a 2^-61 coincidence.
            let fingerprints: BTreeSet<usize> = hit
                .iter()
                .copied()
                .filter(|&b| {
                    agg.iter()
                        .filter(|(&i, _)| s.top_level(i) >= level && s.bucket(level, i) == b)
                        .fold(0u64, |acc, (&i, &x)| fadd(acc, fmul(s.weight(i), from_i64(x))))
                        != 0
                })
                .collect();
            prop_assert_eq!(s.occupancy()[level], fingerprints.len() as u64);
        }
    }

    #[test]
    fn blobs_round_trip(us in entries(), seed in any::<u64>()) {
        for mut s in sketches(seed) {
            feed(&mut s, &us);
            let back = Estimator::from_blob(&s.to_blob()).unwrap();
            prop_assert_eq!(back.estimate(), s.estimate());
            prop_assert_eq!(back.words_used(), s.words_used());
            prop_assert_eq!(&back, &s);
        }
    }
}

#[test]
fn f0_estimate_inverts_occupancy() {
    let mut s = F0Sketch::new(0.25, 1 << 16, 3);
    for i in 1..=3000u64 {
        s.add(i * 7, 1);
    }
    let b = s.buckets() as f64;
    let occ = s.occupancy();
    let level = (0..s.levels()).find(|&l| 2.0 * occ[l] as f64 <= b).unwrap();
    let nz = occ[level] as f64;
    let want = 2f64.powi(level as i32) * b * (b / (b - nz)).ln();
    assert!((s.estimate() - want).abs() <= 1e-9 * want);
}

#[test]
fn corrupted_blobs_are_rejected() {
    let s = make_estimator(2.0, 0.5, 10, 10, 1).unwrap();
    let mut blob = s.to_blob();
    assert!(matches!(Estimator::from_blob(&blob[..blob.len() - 1]), Err(Error::Blob(_))));
    blob[0] ^= 0xff;
    assert!(matches!(Estimator::from_blob(&blob), Err(Error::Blob(_))));
    assert!(matches!(Estimator::from_blob(&[]), Err(Error::Blob(_))));
}

#[test]
fn unsupported_moments_are_rejected() {
    for p in [-1.0, 2.5, 3.0, f64::NAN] {
        assert!(matches!(make_estimator(p, 0.5, 10, 10, 1), Err(Error::UnsupportedMoment(_))));
    }
    assert!(make_estimator(1.0, 1.5, 10, 10, 1).is_err());
}

/// Empirical characteristic function of the projection variates against
/// `exp(-|t|^p)`, the defining property of a standard symmetric p-stable law.
#[test]
fn projection_variates_are_p_stable() {
    for p in [0.5, 1.0, 1.5] {
        let s = StableSketch::new(p, 0.05, 77).unwrap();
        let scale = (1u64 << FRACTION_BITS) as f64;
        let xs: Vec<f64> = (1..=40u64).flat_map(|i| s.column(i)).map(|c| c as f64 / scale).collect();
        for t in [0.25, 0.5, 1.0, 2.0] {
            let phi = xs.iter().map(|x| (t * x).cos()).sum::<f64>() / xs.len() as f64;
            let want = (-f64::powf(t, p)).exp();
            // Standard error of a mean of cosines is at most 1/sqrt(len).
            let tol = 4.0 / (xs.len() as f64).sqrt() + 2.0 * t / scale;
            assert!((phi - want).abs() < tol, "p={p} t={t}: {phi} vs {want}");
        }
        // The sketch's scaling constant is the median of |X|.
        let mut abs: Vec<f64> = xs.iter().map(|x| x.abs()).collect();
        let mid = abs.len() / 2;
        let med = *abs.select_nth_unstable_by(mid, f64::total_cmp).1;
        let want = stable_abs_median(p);
        assert!((med - want).abs() < 0.02 * want, "p={p}: median {med} vs {want}");
    }
}

/// Kolmogorov-Smirnov distance of the p = 1 variates to the Cauchy law,
/// whose CDF is `1/2 + atan(x)/pi`.
#[test]
fn cauchy_variates_pass_ks() {
    let s = StableSketch::new(1.0, 0.05, 5).unwrap();
    let scale = (1u64 << FRACTION_BITS) as f64;
    let mut xs: Vec<f64> = (1..=40u64).flat_map(|i| s.column(i)).map(|c| c as f64 / scale).collect();
    xs.sort_by(f64::total_cmp);
    let len = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(j, &x)| {
            let f = 0.5 + x.atan() / PI;
            (f - j as f64 / len).abs().max((f - (j + 1) as f64 / len).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value 1.63/sqrt(len), plus the 2^-12 table granularity.
    assert!(d < 1.63 / len.sqrt() + 1.0 / 4096.0, "KS distance {d}");
}

#[test]
fn median_of_abs_matches_sorting() {
    let mut rng = turnstile_core::hashing::WyRand::new(1);
    for len in [1usize, 2, 63, 64, 65, 1000] {
        let ys: Vec<i64> = (0..len).map(|_| (rng.next_u64() % 2001) as i64 - 1000).collect();
        let mut abs: Vec<u64> = ys.iter().map(|y| y.unsigned_abs()).collect();
        abs.sort_unstable();
        let want = abs[len / 2];
        for hint in [0, want, want + 1, want / 3 + 1, 5000] {
            assert_eq!(median_abs(&ys, hint), want);
        }
    }
}

#[test]
fn words_reflect_shape() {
    let f2 = F2Sketch::new(0.5, 1);
    assert_eq!(f2.words_used(), F2_ROWS * f2.buckets() + 2 * F2_ROWS + 1);
    let f0 = F0Sketch::new(0.5, 1 << 10, 1);
    assert_eq!(f0.words_used(), f0.levels() * f0.buckets() + 2 * f0.levels() + 2);
    let st = StableSketch::new(1.0, 0.5, 1).unwrap();
    assert_eq!(st.words_used(), st.rows() + 2);
}
