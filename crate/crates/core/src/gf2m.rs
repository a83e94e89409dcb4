//! Arithmetic over GF(2^m) in the polynomial basis, plus GF(2)[x] polynomials.
//!
//! Field elements are integers whose bit `i` is the coefficient of `x^i`.
//! Multiplication goes through log/antilog tables built once per field.

use std::fmt;
use std::ops::{Add, Mul};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_DEGREE: u32 = 2;
pub const MAX_DEGREE: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("extension degree {0} outside {MIN_DEGREE}..={MAX_DEGREE}")]
    UnsupportedDegree(u32),
    #[error("polynomial {poly:#x} is not a degree-{m} polynomial with nonzero constant term")]
    MalformedPolynomial { m: u32, poly: u32 },
    #[error("polynomial {poly:#x} is not primitive: alpha has order {period}, expected {expected}")]
    NotPrimitive { poly: u32, period: usize, expected: usize },
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("division by the zero polynomial")]
    ZeroDivisor,
    #[error("element {value} does not belong to GF(2^{m})")]
    OutOfField { value: u32, m: u32 },
}

/// Default primitive polynomials, bit `i` = coefficient of `x^i`.
const DEFAULT_PRIMITIVE: [u32; 15] = [
    0x7,     // m=2:  x^2+x+1
    0xB,     // m=3:  x^3+x+1
    0x13,    // m=4:  x^4+x+1
    0x25,    // m=5:  x^5+x^2+1
    0x43,    // m=6:  x^6+x+1
    0x89,    // m=7:  x^7+x^3+1
    0x11D,   // m=8:  x^8+x^4+x^3+x^2+1
    0x211,   // m=9:  x^9+x^4+1
    0x409,   // m=10: x^10+x^3+1
    0x805,   // m=11: x^11+x^2+1
    0x1053,  // m=12: x^12+x^6+x^4+x+1
    0x201B,  // m=13: x^13+x^4+x^3+x+1
    0x4443,  // m=14: x^14+x^10+x^6+x+1
    0x8003,  // m=15: x^15+x+1
    0x1100B, // m=16: x^16+x^12+x^3+x+1
];

/// Extension degree and defining polynomial of a binary extension field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldSpec {
    m: u32,
    primitive_poly: u32,
}

impl FieldSpec {
    /// Checks the shape of the polynomial only; primitivity is verified when
    /// the tables are built in [`GaloisField::new`].
    pub fn new(m: u32, primitive_poly: u32) -> Result<Self, FieldError> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&m) {
            return Err(FieldError::UnsupportedDegree(m));
        }
        let top_ok = primitive_poly >> m == 1;
        if !top_ok || primitive_poly & 1 == 0 {
            return Err(FieldError::MalformedPolynomial { m, poly: primitive_poly });
        }
        Ok(Self { m, primitive_poly })
    }

    pub fn default_for(m: u32) -> Result<Self, FieldError> {
        if !(MIN_DEGREE..=MAX_DEGREE).contains(&m) {
            return Err(FieldError::UnsupportedDegree(m));
        }
        Self::new(m, DEFAULT_PRIMITIVE[(m - MIN_DEGREE) as usize])
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    /// Bit mask of the defining polynomial (bit `i` = coefficient of `x^i`).
    pub fn poly_mask(&self) -> u32 {
        self.primitive_poly
    }

    pub fn primitive_poly(&self) -> BinaryPolynomial {
        BinaryPolynomial::from_mask(self.primitive_poly as u64)
    }

    /// Number of field elements, 2^m.
    pub fn size(&self) -> usize {
        1usize << self.m
    }

    /// Order of the multiplicative group, 2^m - 1.
    pub fn order(&self) -> usize {
        self.size() - 1
    }
}

/// An element of GF(2^m), stored as its polynomial-basis bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct FieldElement(u16);

impl FieldElement {
    pub const ZERO: Self = Self(0);
    pub const ONE: Self = Self(1);

    pub const fn new(value: u16) -> Self {
        Self(value)
    }

    pub const fn value(self) -> u16 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0
    }
}

impl Add for FieldElement {
    type Output = Self;

    #[allow(clippy::suspicious_arithmetic_impl)]
    fn add(self, rhs: Self) -> Self {
        Self(self.0 ^ rhs.0)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

/// GF(2^m) with precomputed log/antilog tables. Immutable once built.
#[derive(Debug, Clone)]
pub struct GaloisField {
    spec: FieldSpec,
    // exp[i] = alpha^i for i in 0..2*order, doubled to skip a modulo in mul
    exp: Vec<u16>,
    // log[a] for a != 0; log[0] is unused
    log: Vec<u32>,
}

impl GaloisField {
    pub fn new(spec: FieldSpec) -> Result<Self, FieldError> {
        let order = spec.order();
        let size = spec.size();
        let mut exp = vec![0u16; 2 * order];
        let mut log = vec![0u32; size];
        let mut seen = vec![false; size];
        let mut value: u32 = 1;
        for i in 0..order {
            if seen[value as usize] {
                return Err(FieldError::NotPrimitive {
                    poly: spec.primitive_poly,
                    period: i,
                    expected: order,
                });
            }
            seen[value as usize] = true;
            exp[i] = value as u16;
            log[value as usize] = i as u32;
            value <<= 1;
            if value >> spec.m & 1 == 1 {
                value ^= spec.primitive_poly;
            }
        }
        if value != 1 {
            // cannot happen for an irreducible polynomial once all nonzero values were visited
            return Err(FieldError::NotPrimitive {
                poly: spec.primitive_poly,
                period: order + 1,
                expected: order,
            });
        }
        let (lo, hi) = exp.split_at_mut(order);
        hi.copy_from_slice(lo);
        Ok(Self { spec, exp, log })
    }

    pub fn with_degree(m: u32) -> Result<Self, FieldError> {
        Self::new(FieldSpec::default_for(m)?)
    }

    pub fn spec(&self) -> FieldSpec {
        self.spec
    }

    pub fn m(&self) -> u32 {
        self.spec.m
    }

    pub fn order(&self) -> usize {
        self.spec.order()
    }

    pub fn element(&self, value: u32) -> Result<FieldElement, FieldError> {
        if value as usize >= self.spec.size() {
            return Err(FieldError::OutOfField { value, m: self.spec.m });
        }
        Ok(FieldElement(value as u16))
    }

    /// alpha^e, with `e` reduced modulo the group order.
    pub fn alpha_pow(&self, e: usize) -> FieldElement {
        FieldElement(self.exp[e % self.order()])
    }

    /// Discrete logarithm base alpha; `None` for zero.
    pub fn log(&self, a: FieldElement) -> Option<usize> {
        (!a.is_zero()).then(|| self.log[a.0 as usize] as usize)
    }

    pub fn add(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        a + b
    }

    pub fn mul(&self, a: FieldElement, b: FieldElement) -> FieldElement {
        if a.is_zero() || b.is_zero() {
            return FieldElement::ZERO;
        }
        let e = self.log[a.0 as usize] + self.log[b.0 as usize];
        FieldElement(self.exp[e as usize])
    }

    pub fn inv(&self, a: FieldElement) -> Result<FieldElement, FieldError> {
        if a.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        let l = self.log[a.0 as usize] as usize;
        Ok(FieldElement(self.exp[(self.order() - l) % self.order()]))
    }

    pub fn div(&self, a: FieldElement, b: FieldElement) -> Result<FieldElement, FieldError> {
        Ok(self.mul(a, self.inv(b)?))
    }

    pub fn pow(&self, a: FieldElement, e: usize) -> FieldElement {
        if e == 0 {
            return FieldElement::ONE;
        }
        if a.is_zero() {
            return FieldElement::ZERO;
        }
        let l = self.log[a.0 as usize] as usize;
        self.alpha_pow((l * (e % self.order())) % self.order())
    }

    /// Evaluates a binary polynomial at `x` by Horner's rule.
    pub fn eval_binary(&self, p: &BinaryPolynomial, x: FieldElement) -> FieldElement {
        p.coeffs.iter().rev().fold(FieldElement::ZERO, |acc, &c| {
            let acc = self.mul(acc, x);
            if c {
                acc + FieldElement::ONE
            } else {
                acc
            }
        })
    }

    /// Exponents of the cyclotomic coset of `i`: {i, 2i, 4i, ...} mod 2^m - 1.
    pub fn conjugacy_class(&self, i: usize) -> Vec<usize> {
        let order = self.order();
        let start = i % order;
        let mut class = vec![start];
        let mut e = (start * 2) % order;
        while e != start {
            class.push(e);
            e = (e * 2) % order;
        }
        class
    }

    /// Minimal polynomial of alpha^i over GF(2).
    pub fn minimal_polynomial(&self, i: usize) -> BinaryPolynomial {
        // product of (x + alpha^e) over the conjugacy class, coefficients in GF(2^m)
        let mut acc: Vec<FieldElement> = vec![FieldElement::ONE];
        for e in self.conjugacy_class(i) {
            let root = self.alpha_pow(e);
            let mut next = vec![FieldElement::ZERO; acc.len() + 1];
            for (j, &c) in acc.iter().enumerate() {
                next[j + 1] = next[j + 1] + c;
                next[j] = next[j] + self.mul(c, root);
            }
            acc = next;
        }
        debug_assert!(acc.iter().all(|c| c.value() <= 1));
        BinaryPolynomial::from_coeffs(acc.into_iter().map(|c| c == FieldElement::ONE))
    }
}

/// A polynomial over GF(2). `coeffs[i]` is the coefficient of `x^i`; the
/// vector never carries trailing zero coefficients.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct BinaryPolynomial {
    coeffs: Vec<bool>,
}

impl BinaryPolynomial {
    pub fn zero() -> Self {
        Self { coeffs: Vec::new() }
    }

    pub fn one() -> Self {
        Self { coeffs: vec![true] }
    }

    pub fn from_coeffs<I: IntoIterator<Item = bool>>(coeffs: I) -> Self {
        let mut p = Self { coeffs: coeffs.into_iter().collect() };
        p.trim();
        p
    }

    pub fn from_mask(mask: u64) -> Self {
        Self::from_coeffs((0..64).map(|i| mask >> i & 1 == 1))
    }

    /// Builds `sum x^e` over the given exponents (repeated exponents cancel).
    pub fn from_exponents(exponents: &[usize]) -> Self {
        let len = exponents.iter().max().map_or(0, |&e| e + 1);
        let mut coeffs = vec![false; len];
        for &e in exponents {
            coeffs[e] ^= true;
        }
        Self::from_coeffs(coeffs)
    }

    /// `x^n + 1` (equal to `x^n - 1` over GF(2)).
    pub fn x_pow_n_minus_one(n: usize) -> Self {
        Self::from_exponents(&[0, n])
    }

    fn trim(&mut self) {
        while self.coeffs.last() == Some(&false) {
            self.coeffs.pop();
        }
    }

    /// `None` stands for the degree of the zero polynomial.
    pub fn degree(&self) -> Option<usize> {
        self.coeffs.len().checked_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeff(&self, i: usize) -> bool {
        self.coeffs.get(i).copied().unwrap_or(false)
    }

    pub fn coeffs(&self) -> &[bool] {
        &self.coeffs
    }

    pub fn weight(&self) -> usize {
        self.coeffs.iter().filter(|&&c| c).count()
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::zero();
        }
        let mut out = vec![false; self.coeffs.len() + rhs.coeffs.len() - 1];
        for (i, _) in self.coeffs.iter().enumerate().filter(|(_, &c)| c) {
            for (j, _) in rhs.coeffs.iter().enumerate().filter(|(_, &c)| c) {
                out[i + j] ^= true;
            }
        }
        Self::from_coeffs(out)
    }

    pub fn div_rem(&self, divisor: &Self) -> Result<(Self, Self), FieldError> {
        let d = divisor.degree().ok_or(FieldError::ZeroDivisor)?;
        let mut rem = self.coeffs.clone();
        let Some(top) = self.degree() else {
            return Ok((Self::zero(), Self::zero()));
        };
        if top < d {
            return Ok((Self::zero(), self.clone()));
        }
        let mut quot = vec![false; top - d + 1];
        for i in (d..=top).rev() {
            if rem[i] {
                quot[i - d] = true;
                for (j, &c) in divisor.coeffs.iter().enumerate() {
                    if c {
                        rem[i - d + j] ^= true;
                    }
                }
            }
        }
        Ok((Self::from_coeffs(quot), Self::from_coeffs(rem)))
    }

    pub fn rem(&self, divisor: &Self) -> Result<Self, FieldError> {
        Ok(self.div_rem(divisor)?.1)
    }

    pub fn gcd(&self, rhs: &Self) -> Self {
        let (mut a, mut b) = (self.clone(), rhs.clone());
        while !b.is_zero() {
            let r = a.rem(&b).expect("b is nonzero");
            a = b;
            b = r;
        }
        a
    }

    /// Least common multiple; the zero polynomial if either side is zero.
    pub fn lcm(&self, rhs: &Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return Self::zero();
        }
        let g = self.gcd(rhs);
        let (q, r) = self.mul(rhs).div_rem(&g).expect("gcd of nonzero polynomials is nonzero");
        debug_assert!(r.is_zero());
        q
    }
}

impl Mul for &BinaryPolynomial {
    type Output = BinaryPolynomial;

    fn mul(self, rhs: Self) -> BinaryPolynomial {
        BinaryPolynomial::mul(self, rhs)
    }
}

impl fmt::Display for BinaryPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        let terms: Vec<String> = (0..self.coeffs.len())
            .rev()
            .filter(|&i| self.coeffs[i])
            .map(|i| match i {
                0 => "1".to_string(),
                1 => "x".to_string(),
                _ => format!("x^{i}"),
            })
            .collect();
        write!(f, "{}", terms.join(" + "))
    }
}
