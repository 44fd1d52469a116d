//! Oracle-equivalence tests: the production paths against independent
//! exhaustive scans and finite differences from the testkit.

use quadnet::core::EmbeddingSet;
use quadnet::encoder::{grad_check, grad_check_with_fault};
use quadnet::error::Error;
use quadnet::eval::{kmeans, recall_at_k};
use quadnet::mining::{
    select_hardest_negative, select_positives_method1, select_positives_method2,
};
use quadnet::testkit::{
    canonical_partition, fd_gradient, oracle_hardest_negative, oracle_min_inertia_partition,
    oracle_positives_method1, oracle_positives_method2, oracle_recall_at_k, random_embedding_set,
    random_grad_instance,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

#[test]
fn mining_matches_exhaustive_scan_on_random_sets() {
    for seed in 0..6u64 {
        let mut sizes = StdRng::seed_from_u64(seed ^ 0xabcd);
        let n = sizes.random_range(40..140);
        let dim = sizes.random_range(2..8);
        let set = random_embedding_set(seed, n, dim, 4, 3);
        for r in 0..set.len() {
            match (oracle_hardest_negative(r, &set), select_hardest_negative(r, &set)) {
                (Some(expected), Ok(got)) => assert_eq!(expected, got, "seed {seed} r {r}"),
                (None, Err(Error::Degenerate(_))) => continue,
                (oracle, got) => panic!("seed {seed} r {r}: oracle {oracle:?} vs impl {got:?}"),
            }
            let n_idx = select_hardest_negative(r, &set).unwrap();
            match (
                oracle_positives_method1(r, n_idx, &set),
                select_positives_method1(r, n_idx, &set),
            ) {
                (Some(expected), Ok(got)) => assert_eq!(expected, got, "m1 seed {seed} r {r}"),
                (None, Err(Error::Degenerate(_))) => {}
                (oracle, got) => panic!("m1 seed {seed} r {r}: {oracle:?} vs {got:?}"),
            }
            match (
                oracle_positives_method2(r, n_idx, &set),
                select_positives_method2(r, n_idx, &set),
            ) {
                (Some(expected), Ok(got)) => assert_eq!(expected, got, "m2 seed {seed} r {r}"),
                (None, Err(Error::Degenerate(_))) => {}
                (oracle, got) => panic!("m2 seed {seed} r {r}: {oracle:?} vs {got:?}"),
            }
        }
    }
}

/// Integer grid constructions that force exact distance ties and force
/// the in-sphere fallback of both methods.
#[test]
fn mining_matches_oracle_on_tie_and_fallback_constructions() {
    // rows 1 and 2 tie at distance 2 from the reference (other coarse);
    // rows 3 and 4 are fine mates inside the sphere; row 5 ties the
    // sphere radius exactly; row 6 is the P- pool
    let rows = vec![
        vec![0.0, 0.0],  // 0 (A, a)
        vec![2.0, 0.0],  // 1 (B, c) tie
        vec![0.0, 2.0],  // 2 (B, c) tie
        vec![1.0, 0.0],  // 3 (A, a) inside
        vec![0.0, 1.0],  // 4 (A, a) inside, same radius as 3? no: 1.0
        vec![-2.0, 0.0], // 5 (A, a) exactly on the sphere
        vec![0.5, 0.5],  // 6 (A, b) inside
    ];
    let labels = vec![(0, 0), (1, 2), (1, 2), (0, 0), (0, 0), (0, 0), (0, 1)];
    let set = EmbeddingSet::from_rows(rows, labels, (0..7).collect()).unwrap();

    let n = select_hardest_negative(0, &set).unwrap();
    assert_eq!(n, oracle_hardest_negative(0, &set).unwrap());
    assert_eq!(n, 1, "tie must break to the smaller index");

    // no fine mate clears the radius (5 sits exactly on it), so both
    // methods fall back to the farthest pool member
    let m1 = select_positives_method1(0, n, &set).unwrap();
    let m2 = select_positives_method2(0, n, &set).unwrap();
    assert_eq!(m1, oracle_positives_method1(0, n, &set).unwrap());
    assert_eq!(m2, oracle_positives_method2(0, n, &set).unwrap());
    assert_eq!(m1.0, 5);
    assert_eq!(m2.0, 5);

    // equidistant fine mates: 3 and 4 tie once 5 is removed and the
    // radius shrinks below 1; rebuild with a nearer negative
    let rows = vec![
        vec![0.0, 0.0],  // 0 (A, a)
        vec![0.5, 0.0],  // 1 (B, c) negative, radius 0.5
        vec![1.0, 0.0],  // 2 (A, a) outside, d = 1
        vec![0.0, 1.0],  // 3 (A, a) outside, d = 1 (tie with 2)
        vec![0.25, 0.25], // 4 (A, b)
    ];
    let labels = vec![(0, 0), (1, 2), (0, 0), (0, 0), (0, 1)];
    let set = EmbeddingSet::from_rows(rows, labels, (0..5).collect()).unwrap();
    let n = select_hardest_negative(0, &set).unwrap();
    let m2 = select_positives_method2(0, n, &set).unwrap();
    assert_eq!(m2, oracle_positives_method2(0, n, &set).unwrap());
    assert_eq!(m2.0, 2, "method 2 tie must break to the smaller index");
    let m1 = select_positives_method1(0, n, &set).unwrap();
    assert_eq!(m1, oracle_positives_method1(0, n, &set).unwrap());
    // method 1 keys on distance to the negative: d(n,2) = 0.5 beats
    // d(n,3) ~ 1.118
    assert_eq!(m1.0, 2);
}

#[test]
fn recall_matches_brute_force_scan() {
    for seed in 0..8u64 {
        let mut sizes = StdRng::seed_from_u64(seed ^ 0x77);
        let n = sizes.random_range(10..60);
        let dim = sizes.random_range(1..6);
        let set = random_embedding_set(seed.wrapping_add(100), n, dim, 3, 2);
        for k in [1usize, 2, 5, n - 1] {
            let got = recall_at_k(&set, k).unwrap();
            let expected = oracle_recall_at_k(&set, k);
            assert_eq!(got, expected, "seed {seed} k {k}");
        }
    }
}

#[test]
fn kmeans_matches_exhaustive_minimal_inertia_partition() {
    for seed in 0..10u64 {
        let mut gen = StdRng::seed_from_u64(seed ^ 0x5ca1e);
        let n = gen.random_range(4..=8);
        let k = gen.random_range(2..=3usize.min(n));
        let set = random_embedding_set(seed.wrapping_add(500), n, 2, 2, 2);
        let assignment = kmeans(&set, k, seed).unwrap();
        let (oracle_inertia, oracle_assign) = oracle_min_inertia_partition(&set, k);
        let got = canonical_partition(&assignment);
        assert_eq!(
            got, oracle_assign,
            "seed {seed} n {n} k {k}: inertia target {oracle_inertia}"
        );
    }
}

/// Above the exact-search cutoff the Lloyd path runs; on instances still
/// small enough to enumerate it must reach the exhaustive optimum.
#[test]
fn lloyd_path_reaches_the_exhaustive_optimum_just_above_the_cutoff() {
    fn inertia(set: &EmbeddingSet, assign: &[usize], k: usize) -> f64 {
        let dim = set.dim();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            for (d, v) in set.row(i).iter().enumerate() {
                sums[a][d] += v;
            }
        }
        let mut total = 0.0;
        for (i, &a) in assign.iter().enumerate() {
            for (d, v) in set.row(i).iter().enumerate() {
                let c = sums[a][d] / counts[a] as f64;
                total += (v - c) * (v - c);
            }
        }
        total
    }
    for seed in 0..12u64 {
        let n = 11 + (seed as usize % 2);
        let k = 2 + (seed as usize % 2);
        let set = random_embedding_set(seed.wrapping_add(9000), n, 2, 2, 2);
        let got = kmeans(&set, k, seed).unwrap();
        let (oracle_inertia, _) = oracle_min_inertia_partition(&set, k);
        let got_inertia = inertia(&set, &got, k);
        assert!(
            got_inertia <= oracle_inertia * (1.0 + 1e-9),
            "seed {seed} n {n} k {k}: Lloyd inertia {got_inertia} vs optimum {oracle_inertia}"
        );
    }
}

/// Recall@K depends only on the distance ordering, so any rotation of
/// the embedding space must leave it unchanged.
#[test]
fn recall_is_invariant_under_orthogonal_transforms() {
    for seed in 0..5u64 {
        let set = random_embedding_set(seed.wrapping_add(4000), 50, 4, 3, 2);
        // compose seeded Givens rotations over all coordinate pairs
        let mut rng = StdRng::seed_from_u64(seed ^ 0x417);
        let mut rows: Vec<Vec<f64>> = (0..set.len()).map(|i| set.row(i).to_vec()).collect();
        for a in 0..4 {
            for b in (a + 1)..4 {
                let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
                let (sin, cos) = theta.sin_cos();
                for row in rows.iter_mut() {
                    let (x, y) = (row[a], row[b]);
                    row[a] = cos * x - sin * y;
                    row[b] = sin * x + cos * y;
                }
            }
        }
        let rotated =
            EmbeddingSet::from_rows(rows, set.labels().to_vec(), set.ids().to_vec()).unwrap();
        for k in [1usize, 3, 7] {
            assert_eq!(
                recall_at_k(&set, k).unwrap(),
                recall_at_k(&rotated, k).unwrap(),
                "seed {seed} k {k}"
            );
        }
    }
}

#[test]
fn finite_differences_are_exact_on_a_quadratic() {
    // f(x) = 2 x0^2 + 3 x0 x1 - x1^2 + 5 x1; grad = (4 x0 + 3 x1, 3 x0 - 2 x1 + 5)
    let f = |v: &[f64]| 2.0 * v[0] * v[0] + 3.0 * v[0] * v[1] - v[1] * v[1] + 5.0 * v[1];
    let point = [0.7, -1.3];
    let grad = fd_gradient(f, &point, 1e-5);
    let exact = [4.0 * 0.7 + 3.0 * (-1.3), 3.0 * 0.7 - 2.0 * (-1.3) + 5.0];
    assert!((grad[0] - exact[0]).abs() <= 1e-10, "{grad:?}");
    assert!((grad[1] - exact[1]).abs() <= 1e-10, "{grad:?}");
}

#[test]
fn encoder_gradients_match_finite_differences_on_random_nets() {
    let mut checked = 0usize;
    let mut seed = 0u64;
    while checked < 10 {
        seed += 1;
        let Some(instance) = random_grad_instance(seed, 5, vec![5], 4, 2, 4, 2) else {
            continue;
        };
        let batch = instance.batch();
        let report = grad_check(&instance.params, &batch, &instance.hyper, 1e-5).unwrap();
        assert!(
            report.max_rel_error <= 1e-4,
            "seed {seed}: {report:?}"
        );
        let faulted =
            grad_check_with_fault(&instance.params, &batch, &instance.hyper, 1e-5, true).unwrap();
        assert!(faulted.max_rel_error > 0.1, "seed {seed}: {faulted:?}");
        checked += 1;
    }
}
