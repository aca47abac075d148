//! Exact-count oracles: the multichoose summation identities, the census
//! and repulsion-weight formulas against full enumeration, and the
//! batches-to-pairs identity linking the repulsion sums to weighted
//! pairwise inner products.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use simplexlab_core::*;

#[test]
fn multichoose_summation_identities_to_30() {
    for n in 1..=30u64 {
        for m in 1..=30u64 {
            let comb_sum: u128 = (0..=m).map(|j| multichoose(n, j).unwrap()).sum();
            assert_eq!(comb_sum, multichoose(n + 1, m).unwrap());

            assert_eq!(
                multichoose(n + 1, m).unwrap(),
                multichoose(n, m).unwrap() + multichoose(n + 1, m - 1).unwrap()
            );

            let weighted: u128 = (1..=m)
                .map(|j| {
                    let rest = if n == 1 {
                        // 0-element ground set: only the empty multiset.
                        if m == j { 1 } else { 0 }
                    } else {
                        multichoose(n - 1, m - j).unwrap()
                    };
                    j as u128 * rest
                })
                .sum();
            assert_eq!(weighted, multichoose(n, m).unwrap() * m as u128 / n as u128);
        }
    }
}

fn label_fixtures(n: usize, k: usize) -> Vec<LabelVector> {
    let mut out = Vec::new();
    if n % k == 0 {
        out.push(LabelVector::balanced(n, k).unwrap());
    }
    // Round-robin assignment covers every class for n >= k.
    if n >= k {
        out.push(LabelVector::new((0..n).map(|i| i % k).collect(), k).unwrap());
        // A skewed assignment: class 0 absorbs the tail.
        let mut skew: Vec<usize> = (0..k).collect();
        skew.extend(std::iter::repeat(0).take(n - k));
        out.push(LabelVector::new(skew, k).unwrap());
    }
    out
}

#[test]
fn census_matches_enumeration_for_all_small_instances() {
    for n in 2..=6usize {
        for k in [2usize, 3] {
            if k > n {
                continue;
            }
            for b in 2..=4usize {
                for labels in label_fixtures(n, k) {
                    let census = census(&labels, b).unwrap();
                    let mut tally = vec![vec![0u128; b + 1]; k];
                    for batch in enumerate_batches(n, b).unwrap() {
                        let cm = batch.class_multiplicities(&labels).unwrap();
                        for y in 0..k {
                            tally[y][cm[y]] += 1;
                        }
                    }
                    assert_eq!(census.counts_yl, tally, "N={n} K={k} b={b}");
                    for l in 0..=b {
                        assert_eq!(
                            census.m_l[l],
                            (0..k).map(|y| tally[y][l]).sum::<u128>()
                        );
                    }
                    assert_eq!(census.total_batches, multichoose(n as u64, b as u64).unwrap());
                }
            }
        }
    }
}

#[test]
fn k_factor_matches_brute_force_for_all_small_instances() {
    for n in 2..=6usize {
        for k in [2usize, 3] {
            if k > n {
                continue;
            }
            for b in 2..=4usize {
                for labels in label_fixtures(n, k) {
                    for y in 0..k {
                        if labels.count(y) == 0 || labels.count(y) == n {
                            continue;
                        }
                        for l in 1..b {
                            let formula = k_factor(&labels, y, l, b).unwrap();
                            for n_idx in 0..n {
                                if labels.label(n_idx) != y {
                                    continue;
                                }
                                for m_idx in 0..n {
                                    if labels.label(m_idx) == y {
                                        continue;
                                    }
                                    let brute = brute_force_k_factor(
                                        &labels, y, l, b, n_idx, m_idx,
                                    )
                                    .unwrap();
                                    assert!(
                                        (brute - formula).abs()
                                            <= 1e-12 * formula.abs().max(1.0),
                                        "N={n} K={k} b={b} y={y} l={l} ({n_idx},{m_idx}): \
                                         {brute} vs {formula}"
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn batches_to_pairs_identity_on_random_configurations() {
    // For every l in 2..b-1, summing the repulsion functional over the
    // partition class equals the weighted pairwise inner-product sum.
    let mut rng = ChaCha8Rng::seed_from_u64(7001);
    for case in 0..100 {
        let k = rng.random_range(2..=3usize);
        let n = rng.random_range(k.max(3)..=6usize);
        let b = rng.random_range(3..=4usize);
        // Labels covering every class.
        let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        labels.shuffle(&mut rng);
        let y = LabelVector::new(labels, k).unwrap();

        let mut pts = ndarray::Array2::<f64>::zeros((n, 2));
        for v in pts.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let z = project_to_sphere(&PointConfig::free(pts).unwrap(), 1.0).unwrap();

        for l in 2..b {
            let mut lhs = 0.0;
            for batch in enumerate_batches(n, b).unwrap() {
                let cm = batch.class_multiplicities(&y).unwrap();
                for class in 0..k {
                    if cm[class] == l {
                        lhs += s_rep(&z, &y, &batch, class).unwrap();
                    }
                }
            }
            let mut rhs = 0.0;
            for class in 0..k {
                let weight = k_factor(&y, class, l, b).unwrap();
                for n_idx in 0..n {
                    if y.label(n_idx) != class {
                        continue;
                    }
                    for m_idx in 0..n {
                        if y.label(m_idx) == class {
                            continue;
                        }
                        rhs += weight * z.row(n_idx).dot(&z.row(m_idx));
                    }
                }
            }
            let scale = lhs.abs().max(rhs.abs()).max(1e-3);
            assert!(
                (lhs - rhs).abs() <= 1e-9 * scale,
                "case {case} l={l}: {lhs} vs {rhs}"
            );
        }
    }
}
