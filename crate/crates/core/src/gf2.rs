//! Bit-packed linear algebra over GF(2).
//!
//! Vectors are packed into `u64` words, bit `i` living in word `i / 64` at
//! position `i % 64`. Bits at positions `>= len` are always zero, so word-wise
//! equality and XOR never see garbage in the tail.
//!
//! Elimination is incremental: rows are consumed in input order and each new
//! row is reduced against the existing pivots, taking the lowest-index set bit
//! of the remainder as its pivot column. That order is what fixes the
//! coefficients [`solve`] returns for underdetermined systems.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{check_len, Error, Result};

const WORD_BITS: usize = 64;

fn word_count(len: usize) -> usize {
    len.div_ceil(WORD_BITS)
}

/// A fixed-length vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; word_count(len)],
        }
    }

    /// The unit vector with a single one at `index` (0-based).
    pub fn unit(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(index, true);
        v
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self {
            len,
            words: vec![u64::MAX; word_count(len)],
        };
        v.mask_tail();
        v
    }

    /// Draws `len` independent fair bits.
    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = Self {
            len,
            words: (0..word_count(len)).map(|_| rng.gen::<u64>()).collect(),
        };
        v.mask_tail();
        v
    }

    /// Draws `len` independent bits, each one with probability `p_one`.
    pub fn bernoulli<R: Rng + ?Sized>(len: usize, p_one: f64, rng: &mut R) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            if rng.gen::<f64>() < p_one {
                v.set(i, true);
            }
        }
        v
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Builds a vector from the low `len` bits of `value` (bit 0 first).
    pub fn from_u64(len: usize, value: u64) -> Self {
        let mut v = Self::zeros(len);
        if len > 0 {
            v.words[0] = value;
        }
        v.mask_tail();
        v
    }

    fn mask_tail(&mut self) {
        let rem = self.len % WORD_BITS;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(
            i < self.len,
            "bit index {i} out of range (len={})",
            self.len
        );
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, i: usize, value: bool) {
        assert!(
            i < self.len,
            "bit index {i} out of range (len={})",
            self.len
        );
        let mask = 1u64 << (i % WORD_BITS);
        if value {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    pub fn flip(&mut self, i: usize) {
        assert!(
            i < self.len,
            "bit index {i} out of range (len={})",
            self.len
        );
        self.words[i / WORD_BITS] ^= 1u64 << (i % WORD_BITS);
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Index of the lowest set bit, if any.
    pub fn lowest_one(&self) -> Option<usize> {
        self.words
            .iter()
            .enumerate()
            .find(|(_, &w)| w != 0)
            .map(|(i, w)| i * WORD_BITS + w.trailing_zeros() as usize)
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let t = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * WORD_BITS + t)
                }
            })
        })
    }

    /// In-place XOR. Panics on length mismatch; use [`BitVector::try_xor_assign`]
    /// where the lengths come from the caller.
    pub fn xor_assign(&mut self, other: &BitVector) {
        assert_eq!(self.len, other.len, "xor of vectors with different lengths");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn try_xor_assign(&mut self, other: &BitVector) -> Result<()> {
        check_len("xor", self.len, other.len)?;
        self.xor_assign(other);
        Ok(())
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    /// Number of positions where the two vectors differ.
    pub fn hamming_distance(&self, other: &BitVector) -> usize {
        assert_eq!(self.len, other.len);
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }

    /// Packs into bytes, bit `i` at byte `i / 8`, most significant bit first.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in self.iter_ones() {
            out[i / 8] |= 0x80 >> (i % 8);
        }
        out
    }

    /// Inverse of [`BitVector::to_bytes`]; bits past `len` must be zero.
    pub fn from_bytes(len: usize, bytes: &[u8]) -> Result<Self> {
        check_len("from_bytes", len.div_ceil(8), bytes.len())?;
        let mut v = Self::zeros(len);
        for (bi, &byte) in bytes.iter().enumerate() {
            for k in 0..8 {
                if byte & (0x80 >> k) != 0 {
                    let i = bi * 8 + k;
                    if i >= len {
                        return Err(Error::contract("from_bytes", "nonzero padding bits"));
                    }
                    v.set(i, true);
                }
            }
        }
        Ok(v)
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.to_bytes())
    }

    pub fn from_hex(len: usize, s: &str) -> Result<Self> {
        let bytes = hex::decode(s).map_err(|e| Error::contract("from_hex", e.to_string()))?;
        Self::from_bytes(len, &bytes)
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

/// Prints bit 0 first, e.g. `1100`.
impl fmt::Display for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.get(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::contract(
                    "parse bits",
                    format!("invalid char {other:?}"),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_bits(&bits))
    }
}

/// An `l x m` matrix over GF(2), stored as rows.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitVector>,
}

impl BitMatrix {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            rows: Vec::new(),
        }
    }

    pub fn from_rows(cols: usize, rows: Vec<BitVector>) -> Result<Self> {
        for r in &rows {
            check_len("matrix row", cols, r.len())?;
        }
        Ok(Self { cols, rows })
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        Self {
            cols,
            rows: (0..rows).map(|_| BitVector::random(cols, rng)).collect(),
        }
    }

    pub fn push_row(&mut self, row: BitVector) -> Result<()> {
        check_len("matrix row", self.cols, row.len())?;
        self.rows.push(row);
        Ok(())
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[BitVector] {
        &self.rows
    }

    pub fn rank(&self) -> usize {
        rank(self)
    }
}

/// Incremental row-echelon basis.
///
/// `pivots[c]` holds the reduced row whose lowest set bit is column `c`.
/// Optionally tracks, for every pivot row, which input rows were XORed to
/// produce it.
#[derive(Clone, Debug)]
pub struct EchelonBasis {
    cols: usize,
    rank: usize,
    inserted: usize,
    pivots: Vec<Option<BitVector>>,
    combos: Option<Vec<Option<BitVector>>>,
    combo_len: usize,
}

impl EchelonBasis {
    /// Basis without coefficient tracking; rank and membership only.
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            rank: 0,
            inserted: 0,
            pivots: vec![None; cols],
            combos: None,
            combo_len: 0,
        }
    }

    /// Basis that records combinations over at most `max_rows` inserted rows.
    pub fn with_tracking(cols: usize, max_rows: usize) -> Self {
        Self {
            combos: Some(vec![None; cols]),
            combo_len: max_rows,
            ..Self::new(cols)
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn is_full(&self) -> bool {
        self.rank == self.cols
    }

    /// Adds a row; returns true when it raised the rank.
    pub fn insert(&mut self, row: &BitVector) -> Result<bool> {
        check_len("basis insert", self.cols, row.len())?;
        let index = self.inserted;
        self.inserted += 1;
        let mut v = row.clone();
        let mut combo = match &self.combos {
            Some(_) => {
                if index >= self.combo_len {
                    return Err(Error::contract(
                        "basis insert",
                        format!("tracking capacity {} exceeded", self.combo_len),
                    ));
                }
                Some(BitVector::unit(self.combo_len, index))
            }
            None => None,
        };
        while let Some(p) = v.lowest_one() {
            match &self.pivots[p] {
                Some(pivot) => {
                    v.xor_assign(pivot);
                    if let (Some(c), Some(combos)) = (combo.as_mut(), &self.combos) {
                        c.xor_assign(combos[p].as_ref().expect("combo for pivot"));
                    }
                }
                None => {
                    self.pivots[p] = Some(v);
                    if let Some(combos) = self.combos.as_mut() {
                        combos[p] = combo;
                    }
                    self.rank += 1;
                    return Ok(true);
                }
            }
        }
        Ok(false)
    }

    /// True if `target` lies in the span of the rows inserted so far.
    pub fn contains(&self, target: &BitVector) -> bool {
        assert_eq!(target.len(), self.cols);
        let mut v = target.clone();
        while let Some(p) = v.lowest_one() {
            match &self.pivots[p] {
                Some(pivot) => v.xor_assign(pivot),
                None => return false,
            }
        }
        true
    }

    /// Coefficients over the inserted rows reproducing `target`, when tracked
    /// and spanned. The result has length `max_rows` from construction.
    pub fn express(&self, target: &BitVector) -> Option<BitVector> {
        let combos = self.combos.as_ref()?;
        assert_eq!(target.len(), self.cols);
        let mut v = target.clone();
        let mut coeffs = BitVector::zeros(self.combo_len);
        while let Some(p) = v.lowest_one() {
            let pivot = self.pivots[p].as_ref()?;
            v.xor_assign(pivot);
            coeffs.xor_assign(combos[p].as_ref().expect("combo for pivot"));
        }
        Some(coeffs)
    }
}

/// Dimension of the row span.
pub fn rank(matrix: &BitMatrix) -> usize {
    let mut basis = EchelonBasis::new(matrix.cols);
    for row in &matrix.rows {
        // Row lengths are checked at construction.
        basis.insert(row).expect("well-formed matrix");
        if basis.is_full() {
            break;
        }
    }
    basis.rank()
}

/// Finds `c` with `XOR_{i: c_i = 1} rows[i] == target`, or `None` when the
/// target is outside the row span.
pub fn solve(basis: &BitMatrix, target: &BitVector) -> Result<Option<BitVector>> {
    check_len("solve", basis.cols, target.len())?;
    let mut ech = EchelonBasis::with_tracking(basis.cols, basis.row_count());
    for row in &basis.rows {
        ech.insert(row)?;
    }
    Ok(ech.express(target))
}

/// XOR of the vectors selected by one-coefficients.
///
/// An empty vector list yields the empty vector.
pub fn xor_combine(vectors: &[BitVector], coefficients: &BitVector) -> Result<BitVector> {
    check_len(
        "xor_combine coefficients",
        vectors.len(),
        coefficients.len(),
    )?;
    let len = vectors.first().map_or(0, BitVector::len);
    let mut out = BitVector::zeros(len);
    for v in vectors {
        check_len("xor_combine vector", len, v.len())?;
    }
    for i in coefficients.iter_ones() {
        out.xor_assign(&vectors[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bv(s: &str) -> BitVector {
        s.parse().unwrap()
    }

    fn mat(rows: &[&str]) -> BitMatrix {
        let rows: Vec<_> = rows.iter().map(|r| bv(r)).collect();
        BitMatrix::from_rows(rows[0].len(), rows).unwrap()
    }

    #[test]
    fn rank_examples() {
        assert_eq!(mat(&["100", "010", "001"]).rank(), 3);
        assert_eq!(mat(&["0000", "0000", "0000", "0000"]).rank(), 0);
        assert_eq!(mat(&["1100", "0110", "1010"]).rank(), 2);
        assert_eq!(BitMatrix::new(5).rank(), 0);
    }

    #[test]
    fn solve_examples() {
        let c = solve(&mat(&["10", "01"]), &bv("01")).unwrap();
        assert_eq!(c, Some(bv("01")));
        let c = solve(&mat(&["1100", "0110"]), &bv("1010")).unwrap();
        assert_eq!(c, Some(bv("11")));
        let c = solve(&mat(&["1100"]), &bv("0011")).unwrap();
        assert_eq!(c, None);
    }

    #[test]
    fn solve_picks_first_rows_when_underdetermined() {
        // Row 2 duplicates row 0; elimination keeps row 0 as the pivot.
        let c = solve(&mat(&["100", "010", "100"]), &bv("110")).unwrap();
        assert_eq!(c, Some(bv("110")));
    }

    #[test]
    fn solve_rejects_mismatch() {
        let err = solve(&mat(&["1100"]), &bv("101")).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn xor_combine_examples() {
        let vs = [bv("1010"), bv("0101")];
        assert_eq!(xor_combine(&vs, &bv("11")).unwrap(), bv("1111"));
        assert_eq!(xor_combine(&vs, &bv("00")).unwrap(), bv("0000"));
        let same = [bv("1010"), bv("1010")];
        assert_eq!(xor_combine(&same, &bv("11")).unwrap(), bv("0000"));
        assert!(xor_combine(&vs, &bv("1")).is_err());
        assert_eq!(xor_combine(&[], &BitVector::zeros(0)).unwrap().len(), 0);
    }

    #[test]
    fn tail_bits_stay_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in [1, 63, 64, 65, 130] {
            let v = BitVector::random(len, &mut rng);
            let rem = len % 64;
            if rem != 0 {
                assert_eq!(v.words().last().unwrap() >> rem, 0);
            }
            assert_eq!(BitVector::ones(len).count_ones(), len);
            assert!(v.xor(&v).is_zero());
        }
    }

    #[test]
    fn byte_and_hex_forms() {
        let v = bv("1000000011");
        assert_eq!(v.to_bytes(), vec![0x80, 0xC0]);
        assert_eq!(v.to_hex(), "80c0");
        assert_eq!(BitVector::from_hex(10, "80c0").unwrap(), v);
        assert!(BitVector::from_bytes(10, &[0x80, 0xC1]).is_err());
    }

    #[test]
    fn iter_ones_matches_get() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = BitVector::random(200, &mut rng);
        let ones: Vec<_> = v.iter_ones().collect();
        let expected: Vec<_> = (0..200).filter(|&i| v.get(i)).collect();
        assert_eq!(ones, expected);
        assert_eq!(v.lowest_one(), expected.first().copied());
    }

    #[test]
    fn tracking_capacity_is_enforced() {
        let mut b = EchelonBasis::with_tracking(4, 1);
        b.insert(&bv("1000")).unwrap();
        assert!(b.insert(&bv("0100")).is_err());
    }
}
