//! Narrow-sense primitive binary BCH codes.
//!
//! Bit `i` of a word is the coefficient of `x^i`. Encoding is systematic with
//! the `k` message bits in the high-degree positions `n-k..n` and the parity
//! remainder in positions `0..n-k`. Decoding is hard-decision
//! Berlekamp-Massey followed by a Chien search.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gf2m::{BinaryPolynomial, FieldElement, FieldError, GaloisField};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BchError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("BCH codes are supported for 2 <= m <= 10, got m = {0}")]
    UnsupportedDegree(u32),
    #[error("error-correction capability t must be at least 1")]
    ZeroCapability,
    #[error("BCH(m = {m}, t = {t}) is degenerate: generator degree {degree} leaves no message bits")]
    Degenerate { m: u32, t: usize, degree: usize },
    #[error("expected a word of length {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("unknown code preset {0:?}")]
    UnknownPreset(String),
}

/// Whether a code came straight from the hashing layer or out of a decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeRole {
    Intermediate,
    Final,
}

/// A fixed-length bit sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryCode {
    bits: Vec<bool>,
    role: CodeRole,
}

impl BinaryCode {
    pub fn new(bits: Vec<bool>, role: CodeRole) -> Self {
        Self { bits, role }
    }

    pub fn zeros(len: usize, role: CodeRole) -> Self {
        Self::new(vec![false; len], role)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn into_bits(self) -> Vec<bool> {
        self.bits
    }

    pub fn role(&self) -> CodeRole {
        self.role
    }

    pub fn with_role(mut self, role: CodeRole) -> Self {
        self.role = role;
        self
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn weight(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn hamming_distance(&self, other: &Self) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| a != b).count()
    }

    /// Bitwise XOR; the role of `self` is kept.
    pub fn xor(&self, other: &Self) -> Self {
        let bits = self.bits.iter().zip(&other.bits).map(|(a, b)| a ^ b).collect();
        Self::new(bits, self.role)
    }
}

impl fmt::Display for BinaryCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Dense binary matrix, one `Vec<bool>` per row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<Vec<bool>>,
}

impl BitMatrix {
    pub fn from_rows(cols: usize, rows: Vec<Vec<bool>>) -> Self {
        assert!(rows.iter().all(|r| r.len() == cols), "ragged bit matrix");
        Self { cols, rows }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn col_count(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.rows[r][c]
    }

    pub fn row(&self, r: usize) -> &[bool] {
        &self.rows[r]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[bool]> {
        self.rows.iter().map(Vec::as_slice)
    }

    pub fn nonzero_count(&self) -> usize {
        self.rows.iter().map(|r| r.iter().filter(|&&b| b).count()).sum()
    }

    /// `self * v` over GF(2).
    pub fn mul_vec(&self, v: &[bool]) -> Vec<bool> {
        self.rows
            .iter()
            .map(|r| r.iter().zip(v).fold(false, |acc, (&a, &b)| acc ^ (a & b)))
            .collect()
    }

    /// Reduced row echelon form with zero rows removed.
    pub fn row_reduced(&self) -> Self {
        let mut rows = self.rows.clone();
        let mut pivot_row = 0;
        for col in 0..self.cols {
            let Some(p) = (pivot_row..rows.len()).find(|&r| rows[r][col]) else {
                continue;
            };
            rows.swap(pivot_row, p);
            let pivot = rows[pivot_row].clone();
            for (r, row) in rows.iter_mut().enumerate() {
                if r != pivot_row && row[col] {
                    for (x, &y) in row.iter_mut().zip(&pivot) {
                        *x ^= y;
                    }
                }
            }
            pivot_row += 1;
            if pivot_row == rows.len() {
                break;
            }
        }
        rows.truncate(pivot_row);
        Self { cols: self.cols, rows }
    }

    pub fn rank(&self) -> usize {
        self.row_reduced().row_count()
    }
}

/// Named code configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodePreset {
    Bch15_7,
    Bch63_45,
    Bch255_187,
    Bch1023_933,
}

impl CodePreset {
    pub const ALL: [CodePreset; 4] =
        [Self::Bch15_7, Self::Bch63_45, Self::Bch255_187, Self::Bch1023_933];

    /// `(m, t)` for the preset.
    pub fn params(self) -> (u32, usize) {
        match self {
            Self::Bch15_7 => (4, 2),
            Self::Bch63_45 => (6, 3),
            Self::Bch255_187 => (8, 9),
            Self::Bch1023_933 => (10, 9),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bch15_7 => "bch15_7",
            Self::Bch63_45 => "bch63_45",
            Self::Bch255_187 => "bch255_187",
            Self::Bch1023_933 => "bch1023_933",
        }
    }

    pub fn build(self) -> Result<BchCode, BchError> {
        let (m, t) = self.params();
        BchCode::new(m, t)
    }
}

impl FromStr for CodePreset {
    type Err = BchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| BchError::UnknownPreset(s.to_string()))
    }
}

/// Outcome of hard-decision decoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeResult {
    pub message: Vec<bool>,
    pub codeword: Vec<bool>,
    pub corrected: usize,
    pub success: bool,
}

/// A primitive narrow-sense binary BCH code of length `2^m - 1`.
#[derive(Debug, Clone)]
pub struct BchCode {
    field: GaloisField,
    n: usize,
    k: usize,
    t: usize,
    generator: BinaryPolynomial,
    parity_check: BitMatrix,
}

impl BchCode {
    /// Builds the code with designed capability `t` over the default field for `m`.
    pub fn new(m: u32, t: usize) -> Result<Self, BchError> {
        if !(2..=10).contains(&m) {
            return Err(BchError::UnsupportedDegree(m));
        }
        Self::with_field(GaloisField::with_degree(m)?, t)
    }

    pub fn with_field(field: GaloisField, t: usize) -> Result<Self, BchError> {
        let m = field.m();
        if !(2..=10).contains(&m) {
            return Err(BchError::UnsupportedDegree(m));
        }
        if t == 0 {
            return Err(BchError::ZeroCapability);
        }
        let n = field.order();
        // even powers share a coset with a smaller odd power, so odd j suffice
        let mut generator = BinaryPolynomial::one();
        let mut covered = vec![false; n];
        for j in (1..=2 * t).filter(|j| j % 2 == 1) {
            let j = j % n;
            if covered[j] {
                continue;
            }
            for e in field.conjugacy_class(j) {
                covered[e] = true;
            }
            generator = generator.lcm(&field.minimal_polynomial(j));
        }
        let degree = generator.degree().expect("generator is nonzero");
        if degree >= n {
            return Err(BchError::Degenerate { m, t, degree });
        }
        let k = n - degree;

        let mut rows = Vec::with_capacity(t * m as usize);
        for j in (1..=2 * t).filter(|j| j % 2 == 1) {
            let powers: Vec<FieldElement> = (0..n).map(|i| field.alpha_pow(j * i)).collect();
            for b in 0..m {
                rows.push(powers.iter().map(|p| p.value() >> b & 1 == 1).collect());
            }
        }
        let parity_check = BitMatrix::from_rows(n, rows).row_reduced();
        debug_assert_eq!(parity_check.row_count(), n - k);

        Ok(Self { field, n, k, t, generator, parity_check })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn m(&self) -> u32 {
        self.field.m()
    }

    pub fn field(&self) -> &GaloisField {
        &self.field
    }

    pub fn generator(&self) -> &BinaryPolynomial {
        &self.generator
    }

    pub fn parity_check(&self) -> &BitMatrix {
        &self.parity_check
    }

    /// Short identifier such as `bch(63,45,t=3)`.
    pub fn label(&self) -> String {
        format!("bch({},{},t={})", self.n, self.k, self.t)
    }

    fn check_len(&self, got: usize, expected: usize) -> Result<(), BchError> {
        if got != expected {
            return Err(BchError::Length { expected, got });
        }
        Ok(())
    }

    /// Systematic encoding: message in positions `n-k..n`, parity below.
    pub fn encode(&self, message: &[bool]) -> Result<BinaryCode, BchError> {
        self.check_len(message.len(), self.k)?;
        let r = self.n - self.k;
        let shifted = BinaryPolynomial::from_coeffs(
            std::iter::repeat_n(false, r).chain(message.iter().copied()),
        );
        let parity = shifted.rem(&self.generator)?;
        let mut bits = vec![false; self.n];
        for (i, b) in bits.iter_mut().enumerate().take(r) {
            *b = parity.coeff(i);
        }
        bits[r..].copy_from_slice(message);
        Ok(BinaryCode::new(bits, CodeRole::Final))
    }

    /// The systematic message part of a word.
    pub fn message_part<'a>(&self, word: &'a [bool]) -> &'a [bool] {
        &word[self.n - self.k..]
    }

    /// `S_j = word(alpha^j)` for `j = 1..=2t`.
    pub fn syndrome(&self, word: &[bool]) -> Result<Vec<FieldElement>, BchError> {
        self.check_len(word.len(), self.n)?;
        let mut s = vec![FieldElement::ZERO; 2 * self.t];
        for j in (1..=2 * self.t).filter(|j| j % 2 == 1) {
            s[j - 1] = word
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .fold(FieldElement::ZERO, |acc, (i, _)| acc + self.field.alpha_pow(j * i));
        }
        // S_2j = S_j^2 in characteristic 2
        for j in (2..=2 * self.t).step_by(2) {
            let half = s[j / 2 - 1];
            s[j - 1] = self.field.mul(half, half);
        }
        Ok(s)
    }

    pub fn is_codeword(&self, word: &[bool]) -> Result<bool, BchError> {
        Ok(self.syndrome(word)?.iter().all(|s| s.is_zero()))
    }

    /// Error-locator polynomial (coefficients low degree first) and its length L.
    fn berlekamp_massey(&self, s: &[FieldElement]) -> (Vec<FieldElement>, usize) {
        let f = &self.field;
        let mut c = vec![FieldElement::ONE];
        let mut b = vec![FieldElement::ONE];
        let mut l = 0usize;
        let mut shift = 1usize;
        let mut b_disc = FieldElement::ONE;
        for r in 0..s.len() {
            let mut d = s[r];
            for i in 1..=l.min(c.len() - 1) {
                d = d + f.mul(c[i], s[r - i]);
            }
            if d.is_zero() {
                shift += 1;
                continue;
            }
            let coef = f.div(d, b_disc).expect("previous discrepancy is nonzero");
            let mut next = c.clone();
            if next.len() < b.len() + shift {
                next.resize(b.len() + shift, FieldElement::ZERO);
            }
            for (i, &bi) in b.iter().enumerate() {
                next[i + shift] = next[i + shift] + f.mul(coef, bi);
            }
            if 2 * l <= r {
                b = c;
                l = r + 1 - l;
                b_disc = d;
                shift = 1;
            } else {
                shift += 1;
            }
            c = next;
        }
        while c.len() > 1 && c.last().is_some_and(|x| x.is_zero()) {
            c.pop();
        }
        (c, l)
    }

    /// Hard-decision decoding. On failure the word is passed through with
    /// `success = false` and `corrected = 0`.
    pub fn decode(&self, word: &[bool]) -> Result<DecodeResult, BchError> {
        let s = self.syndrome(word)?;
        let failed = || DecodeResult {
            message: self.message_part(word).to_vec(),
            codeword: word.to_vec(),
            corrected: 0,
            success: false,
        };
        if s.iter().all(|x| x.is_zero()) {
            return Ok(DecodeResult {
                message: self.message_part(word).to_vec(),
                codeword: word.to_vec(),
                corrected: 0,
                success: true,
            });
        }
        let (locator, l) = self.berlekamp_massey(&s);
        let degree = locator.len() - 1;
        if l > self.t || degree != l {
            return Ok(failed());
        }
        // Chien search: position i is in error iff locator(alpha^{-i}) = 0
        let f = &self.field;
        let mut positions = Vec::with_capacity(l);
        for i in 0..self.n {
            let x = f.alpha_pow((self.n - i) % self.n);
            let v = locator.iter().rev().fold(FieldElement::ZERO, |acc, &c| f.mul(acc, x) + c);
            if v.is_zero() {
                positions.push(i);
            }
        }
        if positions.len() != degree {
            return Ok(failed());
        }
        let mut codeword = word.to_vec();
        for &p in &positions {
            codeword[p] ^= true;
        }
        if !self.is_codeword(&codeword)? {
            return Ok(failed());
        }
        Ok(DecodeResult {
            message: self.message_part(&codeword).to_vec(),
            codeword,
            corrected: positions.len(),
            success: true,
        })
    }

    /// Decodes and re-encodes the recovered message. A failed decode re-encodes
    /// the systematic part of the input word.
    pub fn decode_reencode(&self, word: &[bool]) -> Result<(BinaryCode, bool), BchError> {
        let r = self.decode(word)?;
        Ok((self.encode(&r.message)?, r.success))
    }
}
