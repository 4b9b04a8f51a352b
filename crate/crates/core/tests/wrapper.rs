use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use turnstile_core::oblivious::{make_estimator, Estimator, ObliviousEstimator};
use turnstile_core::par::Execution;
use turnstile_core::wrapper::*;
use turnstile_core::Error;

fn wrapper(p: f64, q: u64, k: usize, seed: u64) -> RobustWrapper<Estimator> {
    let params = WrapperParams::new(q, 0.2, 1e4, 0.5).unwrap().with_size(EnsembleSize::Fixed(k)).unwrap();
    RobustWrapper::new(params, |s| make_estimator(p, params.copy_alpha(), 1 << 10, 1 << 10, s), seed).unwrap()
}

/// The parameter chain recomputed from its definition.
fn reference(q: u64, delta: f64, tau: f64, alpha: f64, c_k: f64) -> (f64, f64, f64) {
    let eps = 1.0 / 100.0;
    let delta_p = eps * delta / (10.0 * q as f64);
    let eps_p = eps / (8.0 * q as f64 * (1.0 / delta_p).ln()).sqrt();
    let k = c_k * (1.0 / eps_p) * (2.0 * q as f64 * (2.0 * tau).log2() / (alpha * delta)).ln();
    (delta_p, eps_p, k)
}

#[test]
fn parameter_chain_matches_recomputation() {
    for q in [1u64, 7, 100, 5000, 100_000] {
        for delta in [0.01, 0.2, 0.5] {
            for tau in [1.0, 2.0, 1e6] {
                for c_k in [1.0, 50.0] {
                    let p = WrapperParams::new(q, delta, tau, 0.5).unwrap().with_c_k(c_k).unwrap();
                    let (dp, ep, k) = reference(q, delta, tau, 0.5, c_k);
                    assert_eq!(p.delta_prime(), dp);
                    assert_eq!(p.epsilon_prime(), ep);
                    assert_eq!(p.k_formula(), k);
                    assert_eq!(p.k(), (k.ceil() as usize).max(1));
                }
            }
        }
    }
}

#[test]
fn worked_example_epsilon_prime() {
    let p = WrapperParams::new(100, 0.1, 1e6, 0.5).unwrap();
    assert!((p.delta_prime() - 1e-6).abs() < 1e-20);
    assert!((p.epsilon_prime() - 9.5e-5).abs() < 0.05e-5);
    assert_eq!(p.epsilon(), 0.01);
    assert_eq!(p.median_delta(), 0.1 / 200.0);
}

#[test]
fn scaled_ensembles_round_up() {
    let p = WrapperParams::new(1000, 0.2, 1e5, 0.5).unwrap();
    let s = p.with_size(EnsembleSize::Scale(0.01)).unwrap();
    assert_eq!(s.k(), (0.01 * p.k_formula()).ceil() as usize);
    assert!(p.with_size(EnsembleSize::Scale(1.5)).is_err());
    assert!(p.with_size(EnsembleSize::Fixed(0)).is_err());
    assert!(WrapperParams::new(0, 0.2, 1e5, 0.5).is_err());
    assert!(WrapperParams::new(1, 0.2, 0.5, 0.5).is_err());
}

#[test]
fn budget_is_a_hard_limit() {
    let mut w = wrapper(2.0, 3, 24, 1);
    w.add(1, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for used in 1..=3 {
        w.query(&mut rng).unwrap();
        assert_eq!(w.queries_used(), used);
    }
    assert!(matches!(w.query(&mut rng), Err(Error::QueryBudgetExhausted(3))));
    assert!(matches!(w.begin_query(), Err(Error::QueryBudgetExhausted(3))));
    assert_eq!(w.queries_used(), 3);
}

#[test]
fn empty_stream_answers_zero() {
    for p in [0.0, 1.0, 2.0] {
        let mut w = wrapper(p, 5, 24, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(w.query(&mut rng).unwrap(), 0.0);
    }
}

#[test]
fn single_insert_is_approximated() {
    let runs = 100;
    let ok = (0..runs)
        .filter(|&r| {
            let mut w = wrapper(2.0, 10, 24, 100 + r);
            w.add(1, 1);
            let mut rng = ChaCha8Rng::seed_from_u64(r);
            let y = w.query(&mut rng).unwrap();
            (0.5..=1.5).contains(&y)
        })
        .count();
    assert!(ok as f64 >= 0.8 * runs as f64, "{ok}/{runs}");
}

#[test]
fn most_copies_are_accurate_on_a_fixed_schedule() {
    // Fixed stream, fixed query points: at each, at least 4/5 of the copies
    // must be within alpha/3 of the truth in most trials.
    let mut good = 0;
    let trials = 20;
    for t in 0..trials {
        let mut w = wrapper(2.0, 10, 30, 500 + t);
        let mut f2 = 0i64;
        let mut v = vec![0i64; 201];
        let mut all_ok = true;
        for step in 1..=200u64 {
            let i = 1 + (step * 37) % 200;
            w.add(i, 1);
            f2 += 2 * v[i as usize] + 1;
            v[i as usize] += 1;
            if step % 40 == 0 {
                let a = w.params().copy_alpha();
                let right = w.estimates().iter().filter(|&&e| (e - f2 as f64).abs() <= a * f2 as f64).count();
                all_ok &= right * 5 >= 4 * w.k();
            }
        }
        good += all_ok as usize;
    }
    assert!(good * 10 >= trials as usize * 8, "{good}/{trials}");
}

#[test]
fn tickets_make_answers_reproducible() {
    let mut a = wrapper(1.0, 10, 20, 7);
    let mut b = wrapper(1.0, 10, 20, 7);
    for i in 1..50 {
        a.add(i, 1);
        b.add(i, 1);
    }
    let ta = a.begin_query().unwrap();
    let tb = b.begin_query().unwrap();
    assert_eq!(ta, tb);
    assert_eq!(a.answer(ta.clone()).unwrap(), b.answer(tb).unwrap());
    assert_eq!(a.answer(ta.clone()).unwrap(), a.answer(ta).unwrap());
}

#[test]
fn execution_modes_agree() {
    let mut seq = wrapper(1.0, 4, 8, 3).with_execution(Execution::Sequential);
    let mut par = wrapper(1.0, 4, 8, 3).with_execution(Execution::Parallel);
    for i in 1..100 {
        seq.add(i % 17 + 1, if i % 3 == 0 { -1 } else { 1 });
        par.add(i % 17 + 1, if i % 3 == 0 { -1 } else { 1 });
    }
    assert_eq!(seq.estimates(), par.estimates());
    let t = seq.begin_query().unwrap();
    let u = par.begin_query().unwrap();
    assert_eq!(seq.answer(t).unwrap(), par.answer(u).unwrap());
}

#[test]
fn words_count_copies_and_database() {
    let w = wrapper(2.0, 4, 10, 1);
    let copies: usize = w.copies().iter().map(|c| c.words_used()).sum();
    assert_eq!(w.words_used(), copies + 10 + 8);
}
