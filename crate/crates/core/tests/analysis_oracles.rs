//! Closed forms against independent oracles: absorbing Markov chains,
//! dynamic programming, and exhaustive enumeration.

use codedcache::analysis::*;
use codedcache::coding::Scheme;

fn choose(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Transition row of the covered-count chain: from `c` covered contents,
/// one uniform `M`-subset reaches `c + j` with hypergeometric probability.
fn coverage_step(m: usize, slots: usize, dist: &[f64]) -> Vec<f64> {
    let total = choose(m, slots);
    let mut next = vec![0.0; m + 1];
    for (c, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        for j in 0..=slots.min(m - c) {
            let w = choose(m - c, j) * choose(c, slots - j) / total;
            next[c + j] += p * w;
        }
    }
    next
}

fn coverage_distribution(m: usize, slots: usize, u: usize) -> Vec<f64> {
    let mut dist = vec![0.0; m + 1];
    dist[0] = 1.0;
    for _ in 0..u {
        dist = coverage_step(m, slots, &dist);
    }
    dist
}

/// Expected subsets until full coverage, from the same chain.
fn coverage_expectation(m: usize, slots: usize) -> f64 {
    let mut dist = vec![0.0; m + 1];
    dist[0] = 1.0;
    let mut expectation = 0.0;
    for _ in 0..100_000 {
        let not_done = 1.0 - dist[m];
        if not_done < 1e-15 {
            break;
        }
        expectation += not_done;
        dist = coverage_step(m, slots, &dist);
    }
    expectation
}

#[test]
fn spanning_expectation_matches_rank_chain() {
    for m in 1..=80usize {
        // From rank k a fresh vector is new with probability 1 - 2^(k - m).
        let chain: f64 = (0..m)
            .map(|k| 1.0 / (1.0 - (2.0f64).powi(k as i32 - m as i32)))
            .sum();
        let closed = expected_vectors_uniform(m);
        assert!(
            (chain - closed).abs() < 1e-9 * closed,
            "m={m}: {chain} vs {closed}"
        );
    }
    assert!((expected_vectors_uniform(2) - 10.0 / 3.0).abs() < 1e-12);
}

#[test]
fn coupon_expectation_matches_single_draw_chain() {
    for m in 1..=40 {
        let chain = coverage_expectation(m, 1);
        assert!(
            (chain - coupon_expectation(m)).abs() < 1e-8 * chain,
            "m={m}"
        );
    }
}

#[test]
fn uncoded_expected_nodes_lie_within_bounds() {
    for m in 1..=30 {
        for slots in 1..=m {
            let exact = coverage_expectation(m, slots);
            let (lo, hi) = uncoded_expected_nodes_bounds(m, slots).unwrap();
            assert!(
                exact >= lo - 1e-9 && exact <= hi + 1e-9,
                "m={m} M={slots}: {exact} not in [{lo}, {hi}]"
            );
        }
    }
    let exact = coverage_expectation(100, 25);
    let (lo, hi) = uncoded_expected_nodes_bounds(100, 25).unwrap();
    assert!(exact >= lo && exact <= hi, "{exact} not in [{lo}, {hi}]");
}

#[test]
fn uncoded_hit_matches_coverage_chain() {
    for (m, slots) in [(5, 2), (12, 3), (40, 7), (100, 25), (100, 2)] {
        for u in 0..=(4 * m / slots + 5) {
            let chain = coverage_distribution(m, slots, u)[m];
            let closed = uncoded_hit_probability(m, slots, u).unwrap();
            assert!(
                (chain - closed).abs() < 1e-10,
                "m={m} M={slots} u={u}: {chain} vs {closed}"
            );
        }
    }
}

/// Exact finite-size rank distribution of `l` uniform vectors in `F_2^m`.
fn rank_distribution(l: usize, m: usize) -> Vec<f64> {
    let mut dist = vec![0.0; m + 1];
    dist[0] = 1.0;
    for _ in 0..l {
        let mut next = vec![0.0; m + 1];
        for (k, &p) in dist.iter().enumerate() {
            let stay = (2.0f64).powi(k as i32 - m as i32);
            next[k] += p * stay;
            if k < m {
                next[k + 1] += p * (1.0 - stay);
            }
        }
        dist = next;
    }
    dist
}

#[test]
fn rank_distribution_matches_finite_chain_at_large_m() {
    let m = 64;
    for r in 0..4 {
        let exact = rank_distribution(m + r, m);
        for s in 0..6 {
            let closed = coded_rank_deficiency_probability(m + r, m, s).unwrap();
            assert!(
                (exact[m - s] - closed).abs() < 1e-12,
                "r={r} s={s}: {} vs {closed}",
                exact[m - s]
            );
        }
    }
    for l in [100, 104, 110, 120] {
        let exact = rank_distribution(l, 100)[100];
        assert!(
            (exact - coded_hit_probability(l, 100)).abs() < 1e-12,
            "l={l}"
        );
        assert!(
            (exact - exact_full_rank_probability(l, 100)).abs() < 1e-12,
            "l={l}"
        );
    }
}

/// Rank from the size of the span, built by closure under XOR.
fn span_rank(rows: &[u32]) -> usize {
    let mut span = vec![0u32];
    for &r in rows {
        if !span.contains(&r) {
            let shifted: Vec<u32> = span.iter().map(|v| v ^ r).collect();
            span.extend(shifted);
        }
    }
    span.len().trailing_zeros() as usize
}

#[test]
fn full_rank_probability_matches_enumeration() {
    for m in 1..=10usize {
        for l in 1..=(20 / m) {
            let cells = l * m;
            let mut full = 0u64;
            for bits in 0u64..(1 << cells) {
                let rows: Vec<u32> = (0..l)
                    .map(|i| ((bits >> (i * m)) & ((1 << m) - 1)) as u32)
                    .collect();
                if span_rank(&rows) == m {
                    full += 1;
                }
            }
            let p = full as f64 / (1u64 << cells) as f64;
            assert!(
                (p - exact_full_rank_probability(l, m)).abs() < 1e-15,
                "l={l} m={m}"
            );
        }
    }
    assert_eq!(exact_full_rank_probability(2, 2), 6.0 / 16.0);
}

#[test]
fn bit_zero_probability_matches_parity_recursion() {
    let cases: [&[f64]; 5] = [
        &[0.9],
        &[0.1, 0.7],
        &[0.3; 8],
        &[0.0, 1.0, 0.5],
        &[0.05, 0.95, 0.2, 0.6, 0.33],
    ];
    for p in cases {
        // A bit flips the parity when its coefficient is one (probability
        // one half) and the content bit is one.
        let mut zero = 1.0;
        for &pl in p {
            let flip = 0.5 * pl;
            zero = zero * (1.0 - flip) + (1.0 - zero) * flip;
        }
        let closed = coded_bit_zero_probability(p).unwrap();
        assert!((zero - closed).abs() < 1e-14, "{p:?}");
    }
}

#[test]
fn throughput_and_capacity_laws() {
    let t = throughput_estimate(100.0, 1.0, 100, 10.0, 1.0, 1.0);
    assert!((t - 2.171_472_409_516_259).abs() < 1e-12);
    // Inverse in E[N]: coded N ~ m/M gives throughput ~ M/(m ln n) up to constants.
    let (n, slots) = (2000, 8);
    for m in [32usize, 64, 128] {
        let coded = throughput_estimate(1.0, 1.0, n, m as f64 / slots as f64, 1.0, 1.0);
        let law = capacity_scaling(Scheme::Coded, n, m, slots);
        assert!((coded / law - 1.0).abs() < 1e-12);
    }
}

#[test]
fn formula_ids_are_unique_in_csv() {
    let ids = [
        FormulaId::SpanningDraws,
        FormulaId::CouponCollector,
        FormulaId::DrawNormalizer,
        FormulaId::Throughput,
        FormulaId::UncodedHit,
        FormulaId::RankDistribution,
        FormulaId::CodedHit,
        FormulaId::BitZero,
        FormulaId::CapacityCoded,
        FormulaId::CapacityUncoded,
        FormulaId::CodedNodes,
        FormulaId::UncodedNodes,
    ];
    let names: std::collections::HashSet<&str> = ids.iter().map(FormulaId::as_str).collect();
    assert_eq!(names.len(), ids.len());
    let mut buf = Vec::new();
    let pts: Vec<TheoryPoint> = ids
        .iter()
        .map(|&f| TheoryPoint::new(f, &[("m", 4.0)], 0.5))
        .collect();
    write_theory_csv(&pts, &mut buf).unwrap();
    assert_eq!(
        String::from_utf8(buf).unwrap().lines().count(),
        ids.len() + 1
    );
}
