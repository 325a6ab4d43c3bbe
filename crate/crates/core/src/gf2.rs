//! Dense bit-packed linear algebra over GF(2).
//!
//! Matrices are stored row-major with each row padded to a whole number of
//! 64-bit words. Bits beyond `cols` in the last word of a row are always zero,
//! which lets row comparisons and weights work on whole words.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const WORD: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

#[inline]
fn tail_mask(bits: usize) -> u64 {
    match bits % WORD {
        0 => !0,
        r => (1u64 << r) - 1,
    }
}

/// A packed vector over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self { len, words: vec![0; words_for(len)] }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    /// Unit vector with a single bit set at `index`.
    pub fn unit(len: usize, index: usize) -> Self {
        let mut v = Self::zeros(len);
        v.set(index, true);
        v
    }

    pub(crate) fn from_words(len: usize, mut words: Vec<u64>) -> Self {
        words.truncate(words_for(len));
        words.resize(words_for(len), 0);
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(len);
        }
        Self { len, words }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        assert!(i < self.len, "bit index {i} out of range for length {}", self.len);
        self.words[i / WORD] ^= 1u64 << (i % WORD);
    }

    pub fn xor_assign(&mut self, other: &BitVector) {
        assert_eq!(self.len, other.len, "length mismatch in xor");
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a ^= b;
        }
    }

    pub fn xor(&self, other: &BitVector) -> BitVector {
        let mut out = self.clone();
        out.xor_assign(other);
        out
    }

    /// Inner product over GF(2).
    pub fn dot(&self, other: &BitVector) -> bool {
        assert_eq!(self.len, other.len, "length mismatch in dot");
        parity_and(&self.words, &other.words)
    }

    pub fn weight(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn first_one(&self) -> Option<usize> {
        first_one(&self.words)
    }

    /// Indices of set bits in increasing order.
    pub fn ones(&self) -> Ones<'_> {
        Ones { words: &self.words, word_index: 0, current: self.words.first().copied().unwrap_or(0) }
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len).map(|i| self.get(i)).collect()
    }

    /// Concatenation `self ∥ other`.
    pub fn concat(&self, other: &BitVector) -> BitVector {
        let mut out = BitVector::zeros(self.len + other.len);
        for i in self.ones() {
            out.set(i, true);
        }
        for i in other.ones() {
            out.set(self.len + i, true);
        }
        out
    }

    pub fn slice(&self, start: usize, end: usize) -> BitVector {
        assert!(start <= end && end <= self.len);
        let mut out = BitVector::zeros(end - start);
        for i in start..end {
            if self.get(i) {
                out.set(i - start, true);
            }
        }
        out
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({self})")
    }
}

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
        let s = s.trim();
        let mut v = BitVector::zeros(s.len());
        for (i, c) in s.chars().enumerate() {
            match c {
                '0' => {}
                '1' => v.set(i, true),
                other => return Err(Error::Parse(alloc::format!("unexpected character {other:?} in bit string"))),
            }
        }
        Ok(v)
    }
}

/// Iterator over set bit positions.
pub struct Ones<'a> {
    words: &'a [u64],
    word_index: usize,
    current: u64,
}

impl Iterator for Ones<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        loop {
            if self.current != 0 {
                let bit = self.current.trailing_zeros() as usize;
                self.current &= self.current - 1;
                return Some(self.word_index * WORD + bit);
            }
            self.word_index += 1;
            if self.word_index >= self.words.len() {
                return None;
            }
            self.current = self.words[self.word_index];
        }
    }
}

#[inline]
fn parity_and(a: &[u64], b: &[u64]) -> bool {
    let mut acc = 0u64;
    for (x, y) in a.iter().zip(b) {
        acc ^= x & y;
    }
    acc.count_ones() & 1 == 1
}

#[inline]
fn first_one(words: &[u64]) -> Option<usize> {
    words
        .iter()
        .enumerate()
        .find(|(_, &w)| w != 0)
        .map(|(i, w)| i * WORD + w.trailing_zeros() as usize)
}

#[inline]
fn xor_into(dst: &mut [u64], src: &[u64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a ^= b;
    }
}

/// A dense row-major matrix over GF(2).
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
}

impl BitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self { rows, cols, stride, data: vec![0; rows * stride] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from rows of equal length.
    pub fn from_rows(rows: &[BitVector]) -> Result<Self> {
        let cols = rows.first().map_or(0, BitVector::len);
        Self::from_rows_with_cols(rows, cols)
    }

    /// Like [`BitMatrix::from_rows`] but with an explicit width, so an empty
    /// row list still yields a `0 × cols` matrix.
    pub fn from_rows_with_cols(rows: &[BitVector], cols: usize) -> Result<Self> {
        let mut m = Self::zeros(rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch { op: "from_rows", left: (i, r.len()), right: (rows.len(), cols) });
            }
            m.row_words_mut(i).copy_from_slice(r.words());
        }
        Ok(m)
    }

    /// Builds a matrix from 0/1 entries; panics on ragged input.
    pub fn from_dense(entries: &[&[u8]]) -> Self {
        let cols = entries.first().map_or(0, |r| r.len());
        let mut m = Self::zeros(entries.len(), cols);
        for (i, row) in entries.iter().enumerate() {
            assert_eq!(row.len(), cols, "ragged dense matrix");
            for (j, &e) in row.iter().enumerate() {
                if e & 1 == 1 {
                    m.set(i, j, true);
                }
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        debug_assert!(r < self.rows && c < self.cols);
        (self.data[r * self.stride + c / WORD] >> (c % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(r < self.rows && c < self.cols, "entry ({r},{c}) out of range");
        let mask = 1u64 << (c % WORD);
        let w = &mut self.data[r * self.stride + c / WORD];
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn row_words(&self, r: usize) -> &[u64] {
        &self.data[r * self.stride..(r + 1) * self.stride]
    }

    #[inline]
    fn row_words_mut(&mut self, r: usize) -> &mut [u64] {
        &mut self.data[r * self.stride..(r + 1) * self.stride]
    }

    pub fn row(&self, r: usize) -> BitVector {
        BitVector::from_words(self.cols, self.row_words(r).to_vec())
    }

    pub fn row_vectors(&self) -> Vec<BitVector> {
        (0..self.rows).map(|r| self.row(r)).collect()
    }

    pub fn column(&self, c: usize) -> BitVector {
        let mut v = BitVector::zeros(self.rows);
        for r in 0..self.rows {
            if self.get(r, c) {
                v.set(r, true);
            }
        }
        v
    }

    /// Column indices of the nonzero entries of row `r`.
    pub fn row_ones(&self, r: usize) -> Ones<'_> {
        let w = self.row_words(r);
        Ones { words: w, word_index: 0, current: w.first().copied().unwrap_or(0) }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&w| w == 0)
    }

    pub(crate) fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let s = self.stride;
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (head, tail) = self.data.split_at_mut(hi * s);
        head[lo * s..(lo + 1) * s].swap_with_slice(&mut tail[..s]);
    }

    /// `row[dst] ^= row[src]`.
    pub(crate) fn xor_row(&mut self, dst: usize, src: usize) {
        debug_assert_ne!(dst, src);
        let s = self.stride;
        if dst < src {
            let (head, tail) = self.data.split_at_mut(src * s);
            xor_into(&mut head[dst * s..(dst + 1) * s], &tail[..s]);
        } else {
            let (head, tail) = self.data.split_at_mut(dst * s);
            xor_into(&mut tail[..s], &head[src * s..(src + 1) * s]);
        }
    }

    /// `[self | v]` with `v` as an extra last column.
    pub(crate) fn with_column(&self, v: &BitVector) -> BitMatrix {
        assert_eq!(v.len(), self.rows);
        let mut out = BitMatrix::zeros(self.rows, self.cols + 1);
        for r in 0..self.rows {
            out.row_words_mut(r)[..self.stride].copy_from_slice(self.row_words(r));
            if v.get(r) {
                out.set(r, self.cols, true);
            }
        }
        out
    }

    pub fn transpose(&self) -> BitMatrix {
        let mut t = BitMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in self.row_ones(r) {
                t.set(c, r, true);
            }
        }
        t
    }

    /// Product over GF(2).
    pub fn mat_mul(&self, other: &BitMatrix) -> Result<BitMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "mat_mul",
                left: (self.rows, self.cols),
                right: (other.rows, other.cols),
            });
        }
        let mut out = BitMatrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            let dst = r * out.stride;
            for k in self.row_ones(r) {
                xor_into(&mut out.data[dst..dst + out.stride], other.row_words(k));
            }
        }
        Ok(out)
    }

    /// Matrix-vector product over GF(2).
    pub fn mat_vec(&self, v: &BitVector) -> Result<BitVector> {
        if self.cols != v.len() {
            return Err(Error::DimensionMismatch { op: "mat_vec", left: (self.rows, self.cols), right: (v.len(), 1) });
        }
        let mut out = BitVector::zeros(self.rows);
        for r in 0..self.rows {
            if parity_and(self.row_words(r), v.words()) {
                out.set(r, true);
            }
        }
        Ok(out)
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hstack(&self, other: &BitMatrix) -> Result<BitMatrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch { op: "hstack", left: (self.rows, self.cols), right: (other.rows, other.cols) });
        }
        let mut out = BitMatrix::zeros(self.rows, self.cols + other.cols);
        for r in 0..self.rows {
            out.row_words_mut(r)[..self.stride].copy_from_slice(self.row_words(r));
            for c in other.row_ones(r) {
                out.set(r, self.cols + c, true);
            }
        }
        Ok(out)
    }

    /// Vertical concatenation `[self; other]`.
    pub fn vstack(&self, other: &BitMatrix) -> Result<BitMatrix> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch { op: "vstack", left: (self.rows, self.cols), right: (other.rows, other.cols) });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(BitMatrix { rows: self.rows + other.rows, cols: self.cols, stride: self.stride, data })
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &BitMatrix) -> BitMatrix {
        let mut out = BitMatrix::zeros(self.rows * other.rows, self.cols * other.cols);
        for r1 in 0..self.rows {
            for c1 in self.row_ones(r1) {
                for r2 in 0..other.rows {
                    for c2 in other.row_ones(r2) {
                        out.set(r1 * other.rows + r2, c1 * other.cols + c2, true);
                    }
                }
            }
        }
        out
    }

    /// In-place reduced row echelon form. Returns the pivot column of each
    /// leading row; rows past `pivots.len()` are zero.
    fn reduce(&mut self) -> Vec<usize> {
        let mut pivots = Vec::new();
        let mut rank = 0;
        for c in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let Some(p) = (rank..self.rows).find(|&r| self.get(r, c)) else { continue };
            self.swap_rows(rank, p);
            for r in 0..self.rows {
                if r != rank && self.get(r, c) {
                    self.xor_row(r, rank);
                }
            }
            pivots.push(c);
            rank += 1;
        }
        pivots
    }

    pub fn rank(&self) -> usize {
        self.clone().reduce().len()
    }

    /// A basis of the right kernel `{v : M v = 0}`.
    pub fn kernel_basis(&self) -> Vec<BitVector> {
        let mut m = self.clone();
        let pivots = m.reduce();
        let mut is_pivot = vec![false; self.cols];
        for &p in &pivots {
            is_pivot[p] = true;
        }
        let mut basis = Vec::with_capacity(self.cols - pivots.len());
        for free in (0..self.cols).filter(|&c| !is_pivot[c]) {
            let mut v = BitVector::zeros(self.cols);
            v.set(free, true);
            for (r, &p) in pivots.iter().enumerate() {
                if m.get(r, free) {
                    v.set(p, true);
                }
            }
            basis.push(v);
        }
        basis
    }

    pub fn in_row_space(&self, v: &BitVector) -> bool {
        assert_eq!(v.len(), self.cols, "vector length must match column count");
        let mut basis = XorBasis::new(self.cols);
        for r in 0..self.rows {
            basis.insert(self.row(r));
        }
        basis.reduce(v.clone()).is_zero()
    }

    /// Inverse of a square matrix, or `None` when singular.
    pub fn inverse(&self) -> Option<BitMatrix> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut aug = self.hstack(&BitMatrix::identity(n)).ok()?;
        let pivots = aug.reduce();
        if pivots.len() < n || pivots[n - 1] != n - 1 {
            return None;
        }
        let mut inv = BitMatrix::zeros(n, n);
        for r in 0..n {
            for c in 0..n {
                if aug.get(r, n + c) {
                    inv.set(r, c, true);
                }
            }
        }
        Some(inv)
    }
}

impl fmt::Debug for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BitMatrix {}x{} [", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "  {}", self.row(r))?;
        }
        write!(f, "]")
    }
}

/// Fixture format: a `rows cols` header line followed by one 0/1 string per row.
impl fmt::Display for BitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.rows, self.cols)?;
        for r in 0..self.rows {
            writeln!(f, "{}", self.row(r))?;
        }
        Ok(())
    }
}

impl FromStr for BitMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s.lines().map(str::trim).filter(|l| !l.is_empty());
        let header = lines.next().ok_or_else(|| Error::Parse("empty matrix text".into()))?;
        let mut dims = header.split_whitespace().map(|t| t.parse::<usize>());
        let (Some(Ok(rows)), Some(Ok(cols)), None) = (dims.next(), dims.next(), dims.next()) else {
            return Err(Error::Parse(alloc::format!("bad matrix header {header:?}")));
        };
        let mut m = BitMatrix::zeros(rows, cols);
        for r in 0..rows {
            let line = lines.next().ok_or_else(|| Error::Parse(alloc::format!("missing row {r}")))?;
            let v: BitVector = line.parse()?;
            if v.len() != cols {
                return Err(Error::Parse(alloc::format!("row {r} has {} entries, expected {cols}", v.len())));
            }
            m.row_words_mut(r).copy_from_slice(v.words());
        }
        if let Some(extra) = lines.next() {
            let extra: String = extra.chars().take(32).collect();
            return Err(Error::Parse(alloc::format!("trailing data after matrix: {extra:?}")));
        }
        Ok(m)
    }
}

/// Incremental basis keyed by lowest set bit.
#[derive(Clone, Debug)]
pub(crate) struct XorBasis {
    by_pivot: Vec<Option<usize>>,
    vectors: Vec<BitVector>,
}

impl XorBasis {
    pub(crate) fn new(len: usize) -> Self {
        Self { by_pivot: vec![None; len], vectors: Vec::new() }
    }

    pub(crate) fn dim(&self) -> usize {
        self.vectors.len()
    }

    pub(crate) fn reduce(&self, mut v: BitVector) -> BitVector {
        while let Some(p) = v.first_one() {
            match self.by_pivot[p] {
                Some(i) => v.xor_assign(&self.vectors[i]),
                None => break,
            }
        }
        v
    }

    /// Inserts `v`; returns false when it was already in the span.
    pub(crate) fn insert(&mut self, v: BitVector) -> bool {
        let v = self.reduce(v);
        match v.first_one() {
            None => false,
            Some(p) => {
                self.by_pivot[p] = Some(self.vectors.len());
                self.vectors.push(v);
                true
            }
        }
    }
}

/// Coset representatives of `span(k) / row(s)`.
///
/// Rows of `s` are sifted into a basis first; vectors of `k` that still add a
/// new pivot are kept in their original form, in input order.
pub fn quotient_basis(k: &[BitVector], s: &BitMatrix) -> Result<Vec<BitVector>> {
    let len = s.cols();
    if let Some(bad) = k.iter().find(|v| v.len() != len) {
        return Err(Error::DimensionMismatch { op: "quotient_basis", left: (1, bad.len()), right: (s.rows(), len) });
    }
    let mut span_k = XorBasis::new(len);
    for v in k {
        span_k.insert(v.clone());
    }
    let dim_k = span_k.dim();
    for r in 0..s.rows() {
        if !span_k.reduce(s.row(r)).is_zero() {
            return Err(Error::InconsistentCode(alloc::format!(
                "row {r} of the quotient denominator lies outside span of the numerator"
            )));
        }
    }

    let mut basis = XorBasis::new(len);
    for r in 0..s.rows() {
        basis.insert(s.row(r));
    }
    let rank_s = basis.dim();
    let mut reps = Vec::new();
    for v in k {
        if basis.insert(v.clone()) {
            reps.push(v.clone());
        }
    }
    debug_assert_eq!(reps.len(), dim_k - rank_s);
    Ok(reps)
}
