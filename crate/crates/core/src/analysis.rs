//! Closed-form expectations and probabilities for both caching schemes.
//!
//! These are the theory curves overlaid on simulation output and the
//! oracles the simulator is checked against. Logarithms are natural.
//! Infinite products over `(1 - 2^-i)` stop at `i = 64`; the tail is below
//! double precision.

use std::fmt;
use std::io::Write;

use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::coding::Scheme;
use crate::csvout;
use crate::error::{Error, Result};
use crate::netsim::connectivity_scale;

const PRODUCT_CUTOFF: u32 = 64;

/// Limit of `sum_{i>=1} 1 / (2^i - 1)`.
pub const ERDOS_BORWEIN: f64 = 1.606_695_152_415_291_8;

/// `sum_{i=1}^{m} 1 / (2^i - 1)`, the excess over `m` of the expected number
/// of uniform vectors needed to span `F_2^m`.
pub fn spanning_excess(m: usize) -> f64 {
    (1..=m.min(PRODUCT_CUTOFF as usize))
        .map(|i| 1.0 / ((2.0f64).powi(i as i32) - 1.0))
        .sum()
}

/// Expected number of uniform random vectors of `F_2^m` drawn until they
/// span the space: `m + sum_{i=1}^m 1/(2^i - 1)`.
pub fn expected_vectors_uniform(m: usize) -> f64 {
    assert!(m >= 1, "m must be at least 1");
    m as f64 + spanning_excess(m)
}

/// Expected nodes to decode everything with `slots` coded slots per node,
/// `(m + c3) / M`.
pub fn expected_nodes_coded(m: usize, slots: usize) -> f64 {
    assert!(slots >= 1, "M must be at least 1");
    expected_vectors_uniform(m) / slots as f64
}

/// Node-granular version, `ceil((m + c3) / M)`; used for hop curves.
pub fn expected_nodes_coded_ceil(m: usize, slots: usize) -> f64 {
    expected_nodes_coded(m, slots).ceil()
}

pub fn harmonic(m: usize) -> f64 {
    (1..=m).map(|i| 1.0 / i as f64).sum()
}

/// Classic coupon collector expectation `m H_m`.
pub fn coupon_expectation(m: usize) -> f64 {
    assert!(m >= 1, "m must be at least 1");
    m as f64 * harmonic(m)
}

/// `d(m, M) = sum_{j=0}^{M-1} m / (m - j)`: expected single draws to fill one
/// cache of `M` distinct contents.
pub fn group_draw_normalizer(m: usize, slots: usize) -> Result<f64> {
    if slots == 0 || slots > m {
        return Err(Error::contract(
            "group_draw_normalizer",
            format!("need 1 <= M <= m (M={slots}, m={m})"),
        ));
    }
    Ok((0..slots).map(|j| m as f64 / (m - j) as f64).sum())
}

/// Bounds `[m H_m / d, 1 + m H_m / d]` on the expected number of uncoded
/// nodes needed until every content is cached somewhere.
pub fn uncoded_expected_nodes_bounds(m: usize, slots: usize) -> Result<(f64, f64)> {
    let lo = coupon_expectation(m) / group_draw_normalizer(m, slots)?;
    Ok((lo, lo + 1.0))
}

fn binomial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

/// `num / den` as f64, for `den > 0`.
fn ratio_to_f64(num: &BigInt, den: &BigInt) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let sign = if num.is_negative() { -1.0 } else { 1.0 };
    let num = num.abs();
    // Scale so the integer quotient carries at least 64 significant bits.
    let shift = den.bits() as i64 - num.bits() as i64 + 64;
    let quotient = if shift >= 0 {
        (num << shift as u64) / den
    } else {
        (num >> (-shift) as u64) / den
    };
    sign * quotient.to_f64().unwrap_or(f64::INFINITY) * (2.0f64).powi(-shift as i32)
}

/// Probability that `u` uncoded caches of `M` distinct contents, each a
/// uniform `M`-subset of `m`, jointly hold all `m` contents:
///
/// `sum_{j=0}^{m-M} (-1)^j C(m,j) (C(m-j,M) / C(m,M))^u`.
///
/// The alternating sum cancels catastrophically in floating point, so it is
/// evaluated exactly over big integers and converted once at the end.
pub fn uncoded_hit_probability(m: usize, slots: usize, u: usize) -> Result<f64> {
    if slots == 0 || slots > m {
        return Err(Error::contract(
            "uncoded_hit_probability",
            format!("need 1 <= M <= m (M={slots}, m={m})"),
        ));
    }
    if u * slots < m {
        return Ok(0.0);
    }
    let exp =
        u32::try_from(u).map_err(|_| Error::contract("uncoded_hit_probability", "u too large"))?;
    let mut numerator = BigInt::zero();
    for j in 0..=(m - slots) {
        let term = binomial(m, j) * binomial(m - j, slots).pow(exp);
        if j % 2 == 0 {
            numerator += term;
        } else {
            numerator -= term;
        }
    }
    let denominator = binomial(m, slots).pow(exp);
    Ok(ratio_to_f64(&numerator, &denominator).clamp(0.0, 1.0))
}

fn tail_product(from: u32) -> f64 {
    (from.max(1)..=PRODUCT_CUTOFF)
        .map(|i| 1.0 - (0.5f64).powi(i as i32))
        .product()
}

/// Limiting probability, as `m` grows, that an `l x m` uniform binary
/// matrix has rank `m - s`:
///
/// `2^{-s(s+r)} prod_{i>s} (1 - 2^-i) / prod_{j=1}^{r+s} (1 - 2^-j)`, `r = l - m`.
pub fn coded_rank_deficiency_probability(l: usize, m: usize, s: usize) -> Result<f64> {
    if m == 0 || l < m {
        return Err(Error::contract(
            "coded_rank_deficiency_probability",
            format!("need l >= m >= 1 (l={l}, m={m})"),
        ));
    }
    if s > m {
        return Ok(0.0);
    }
    let r = l - m;
    let scale = (0.5f64).powf((s * (s + r)) as f64);
    let head = tail_product(s as u32 + 1);
    let denom: f64 = (1..=(r + s).min(PRODUCT_CUTOFF as usize))
        .map(|j| 1.0 - (0.5f64).powi(j as i32))
        .product();
    Ok(scale * head / denom)
}

/// Limiting full-rank probability of `l` uniform vectors in `F_2^m`:
/// zero below `m`, otherwise `prod_{i=l-m+1}^{inf} (1 - 2^-i)`.
pub fn coded_hit_probability(l: usize, m: usize) -> f64 {
    if l < m {
        return 0.0;
    }
    let start = l - m + 1;
    if start > PRODUCT_CUTOFF as usize {
        return 1.0;
    }
    tail_product(start as u32)
}

/// Exact full-rank probability at finite size, `prod_{i=0}^{m-1} (1 - 2^{i-l})`.
/// Differs from [`coded_hit_probability`] at small `m`.
pub fn exact_full_rank_probability(l: usize, m: usize) -> f64 {
    if l < m {
        return 0.0;
    }
    (0..m)
        .map(|i| 1.0 - (2.0f64).powi(i as i32 - l as i32))
        .product()
}

/// Probability a coded bit is zero when content bit `l` is one with
/// probability `p[l]`: `(1 + prod (1 - p_l)) / 2`.
pub fn coded_bit_zero_probability(p: &[f64]) -> Result<f64> {
    let mut prod = 1.0;
    for &pl in p {
        if !(0.0..=1.0).contains(&pl) {
            return Err(Error::contract(
                "coded_bit_zero_probability",
                format!("probability {pl} outside [0,1]"),
            ));
        }
        prod *= 1.0 - pl;
    }
    Ok(0.5 * (1.0 + prod))
}

/// Per-node throughput from the mean node count per request,
/// `W / (n E[N] Q (c2 c1 s(n))^2)`.
pub fn throughput_estimate(w: f64, q: f64, n: usize, expected_nodes: f64, c1: f64, c2: f64) -> f64 {
    let s = connectivity_scale(n);
    w / (n as f64 * expected_nodes * q * (c2 * c1 * s).powi(2))
}

/// Capacity laws with unit constant, for trend curves only:
/// `M / (m ln n)` coded, `M / (m ln m ln n)` uncoded.
pub fn capacity_scaling(scheme: Scheme, n: usize, m: usize, slots: usize) -> f64 {
    let base = slots as f64 / (m as f64 * (n as f64).ln());
    match scheme {
        Scheme::Coded => base,
        Scheme::Uncoded => base / (m as f64).ln(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FormulaId {
    /// Expected spanning draws.
    SpanningDraws,
    /// Coupon collector `m H_m`.
    CouponCollector,
    /// `d(m, M)`.
    DrawNormalizer,
    /// Throughput from hop counts.
    Throughput,
    /// Uncoded hit probability.
    UncodedHit,
    /// Rank distribution.
    RankDistribution,
    /// Coded hit probability.
    CodedHit,
    BitZero,
    CapacityCoded,
    CapacityUncoded,
    /// `ceil((m + c3) / M)`.
    CodedNodes,
    /// `m H_m / d(m, M)`.
    UncodedNodes,
}

impl FormulaId {
    pub fn as_str(&self) -> &'static str {
        match self {
            FormulaId::SpanningDraws => "spanning_draws",
            FormulaId::CouponCollector => "coupon_collector",
            FormulaId::DrawNormalizer => "draw_normalizer",
            FormulaId::Throughput => "throughput",
            FormulaId::UncodedHit => "uncoded_hit",
            FormulaId::RankDistribution => "rank_distribution",
            FormulaId::CodedHit => "coded_hit",
            FormulaId::BitZero => "bitzero",
            FormulaId::CapacityCoded => "capacity_coded",
            FormulaId::CapacityUncoded => "capacity_uncoded",
            FormulaId::CodedNodes => "coded_nodes",
            FormulaId::UncodedNodes => "uncoded_nodes",
        }
    }
}

impl fmt::Display for FormulaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parameter columns of the theory CSV, in order.
pub const THEORY_PARAMS: [&str; 10] = ["m", "M", "u", "l", "n", "s", "W", "Q", "c1", "c2"];

/// One evaluated formula.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryPoint {
    pub formula: FormulaId,
    /// Named inputs; names come from [`THEORY_PARAMS`].
    pub inputs: Vec<(&'static str, f64)>,
    pub value: f64,
}

impl TheoryPoint {
    pub fn new(formula: FormulaId, inputs: &[(&'static str, f64)], value: f64) -> Self {
        Self {
            formula,
            inputs: inputs.to_vec(),
            value,
        }
    }

    pub fn input(&self, name: &str) -> Option<f64> {
        self.inputs
            .iter()
            .find(|(k, _)| *k == name)
            .map(|&(_, v)| v)
    }
}

pub fn theory_csv_header() -> String {
    format!("formula_id,{},value", THEORY_PARAMS.join(","))
}

pub fn theory_csv_row(p: &TheoryPoint) -> String {
    let params: Vec<String> = THEORY_PARAMS
        .iter()
        .map(|k| csvout::opt_float(p.input(k)))
        .collect();
    format!(
        "{},{},{}",
        p.formula,
        params.join(","),
        csvout::float(p.value)
    )
}

pub fn write_theory_csv<W: Write>(points: &[TheoryPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{}", theory_csv_header())?;
    for p in points {
        writeln!(out, "{}", theory_csv_row(p))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn spanning_expectation_examples() {
        assert_eq!(expected_vectors_uniform(1), 2.0);
        assert!(close(expected_vectors_uniform(2), 10.0 / 3.0, 1e-12));
        let excess = expected_vectors_uniform(200) - 200.0;
        assert!(close(excess, 1.6067, 1e-4));
        assert!(close(spanning_excess(200), ERDOS_BORWEIN, 1e-15));
        assert_eq!(expected_nodes_coded_ceil(100, 25), 5.0);
    }

    #[test]
    fn coupon_examples() {
        assert_eq!(coupon_expectation(1), 1.0);
        assert!(close(coupon_expectation(2), 3.0, 1e-12));
        assert!(close(coupon_expectation(3), 5.5, 1e-12));
    }

    #[test]
    fn normalizer_examples_and_bounds() {
        assert_eq!(group_draw_normalizer(10, 1).unwrap(), 1.0);
        assert!(close(
            group_draw_normalizer(4, 2).unwrap(),
            1.0 + 4.0 / 3.0,
            1e-12
        ));
        for m in 1..30 {
            assert!(close(
                group_draw_normalizer(m, m).unwrap(),
                coupon_expectation(m),
                1e-9
            ));
            for slots in 1..=m {
                let d = group_draw_normalizer(m, slots).unwrap();
                let hi = (slots * m) as f64 / (m - slots + 1) as f64;
                assert!(d >= slots as f64 - 1e-12 && d <= hi + 1e-12);
            }
        }
        assert!(group_draw_normalizer(3, 4).is_err());
        assert!(group_draw_normalizer(3, 0).is_err());
    }

    #[test]
    fn uncoded_hit_examples() {
        assert_eq!(uncoded_hit_probability(10, 3, 3).unwrap(), 0.0);
        assert!(close(uncoded_hit_probability(7, 7, 1).unwrap(), 1.0, 1e-15));
        assert!(close(uncoded_hit_probability(2, 1, 2).unwrap(), 0.5, 1e-15));
        assert!(uncoded_hit_probability(2, 3, 2).is_err());
        // Large, heavily cancelling case stays a probability.
        let p = uncoded_hit_probability(100, 25, 4).unwrap();
        assert!((0.0..1e-6).contains(&p));
    }

    #[test]
    fn uncoded_hit_is_monotone() {
        let mut prev = 0.0;
        for u in 0..80 {
            let p = uncoded_hit_probability(100, 25, u).unwrap();
            assert!(p + 1e-15 >= prev, "u={u}");
            prev = p;
        }
        assert!(prev > 0.99);
    }

    #[test]
    fn rank_distribution_examples() {
        let p0 = coded_rank_deficiency_probability(50, 50, 0).unwrap();
        assert!(close(p0, 0.288_788_095_086_602_4, 1e-12));
        let p1 = coded_rank_deficiency_probability(51, 50, 0).unwrap();
        assert!(close(p1, 0.577_576_190_173_204_9, 1e-12));
        assert!(close(p1, p0 / 0.5, 1e-15));
        for r in 0..4 {
            let total: f64 = (0..=200)
                .map(|s| coded_rank_deficiency_probability(200 + r, 200, s).unwrap())
                .sum();
            assert!(close(total, 1.0, 1e-6), "r={r} total={total}");
        }
        assert!(coded_rank_deficiency_probability(9, 10, 0).is_err());
        assert_eq!(coded_rank_deficiency_probability(10, 10, 11).unwrap(), 0.0);
    }

    #[test]
    fn coded_hit_examples() {
        assert_eq!(coded_hit_probability(99, 100), 0.0);
        assert!(coded_hit_probability(120, 100) >= 1.0 - (0.5f64).powi(20));
        assert!(close(coded_hit_probability(120, 100), 1.0, 1e-6));
        assert!(close(
            coded_hit_probability(100, 100),
            coded_rank_deficiency_probability(100, 100, 0).unwrap(),
            1e-15
        ));
        let mut prev = 0.0;
        for l in 90..200 {
            let p = coded_hit_probability(l, 100);
            assert!(p >= prev);
            prev = p;
        }
        // Small sizes: exact value sits above the limit.
        assert!(close(exact_full_rank_probability(2, 2), 0.375, 1e-15));
        assert!(coded_hit_probability(2, 2) < 0.29);
    }

    #[test]
    fn bit_zero_examples() {
        assert_eq!(coded_bit_zero_probability(&[0.0; 5]).unwrap(), 1.0);
        assert_eq!(coded_bit_zero_probability(&[0.5]).unwrap(), 0.75);
        let p = coded_bit_zero_probability(&[0.3; 64]).unwrap();
        assert!(close(p, 0.5, 1e-9));
        assert!(close(
            1.0 - coded_bit_zero_probability(&[0.9]).unwrap(),
            0.45,
            1e-12
        ));
        assert!(coded_bit_zero_probability(&[1.2]).is_err());
    }

    #[test]
    fn throughput_examples() {
        let base = throughput_estimate(100.0, 1.0, 100, 10.0, 1.0, 1.0);
        assert!(close(base, 100.0 / (10.0 * 100f64.ln()), 1e-12));
        assert!(close(base, 2.171, 1e-3));
        assert!(close(
            throughput_estimate(200.0, 1.0, 100, 10.0, 1.0, 1.0),
            2.0 * base,
            1e-12
        ));
        let m = 50.0;
        let a = throughput_estimate(1.0, 8.0, 1000, m / 5.0, 1.0, 3.0);
        let b = throughput_estimate(1.0, 8.0, 1000, 2.0 * m / 5.0, 1.0, 3.0);
        assert!(close(b / a, 0.5, 1e-12));
    }

    #[test]
    fn capacity_examples() {
        let (n, m, slots) = (1000, 100, 10);
        let ratio = capacity_scaling(Scheme::Coded, n, m, slots)
            / capacity_scaling(Scheme::Uncoded, n, m, slots);
        assert!(close(ratio, (m as f64).ln(), 1e-12));
        assert!(close(
            capacity_scaling(Scheme::Coded, n, 2 * m, slots),
            capacity_scaling(Scheme::Coded, n, m, slots) / 2.0,
            1e-15
        ));
        // n = e, m = e^2 evaluated through the same expression with real inputs.
        let e = std::f64::consts::E;
        let uncoded = 4.0 / (e * e * (e * e).ln() * e.ln());
        assert!(close(uncoded, 4.0 / (2.0 * e * e), 1e-12));
    }

    #[test]
    fn theory_csv_layout() {
        let p = TheoryPoint::new(FormulaId::CodedHit, &[("m", 100.0), ("l", 104.0)], 0.9);
        assert_eq!(
            theory_csv_header(),
            "formula_id,m,M,u,l,n,s,W,Q,c1,c2,value"
        );
        assert_eq!(
            theory_csv_row(&p),
            "coded_hit,1.00000000e2,,,1.04000000e2,,,,,,,9.00000000e-1"
        );
    }
}
