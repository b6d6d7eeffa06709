//! Laurent polynomials over the rationals in two commuting formal variables
//! `u` and `v`, and ratios of them.
//!
//! The semantic binding throughout the crate is `u = e^{-beta}` and
//! `v = e^{-beta*theta}`. Measures with rational `theta = p/q` may instead
//! bind a single root variable `w = e^{-beta/q}` through the exponent slots
//! `u = w^q, v = w^p`; the arithmetic here is agnostic to that choice.

use num::{BigRational, One, Signed, ToPrimitive, Zero};
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// A Laurent polynomial in `u, v` with exact rational coefficients.
///
/// Terms are keyed by `(u_exponent, v_exponent)`; zero coefficients are never
/// stored, so structural equality is mathematical equality.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FormalWeight {
    terms: BTreeMap<(i32, i32), BigRational>,
}

impl FormalWeight {
    pub fn zero() -> Self {
        FormalWeight::default()
    }

    pub fn one() -> Self {
        Self::constant(BigRational::one())
    }

    pub fn constant(c: BigRational) -> Self {
        Self::monomial(0, 0, c)
    }

    pub fn monomial(ue: i32, ve: i32, c: BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            terms.insert((ue, ve), c);
        }
        FormalWeight { terms }
    }

    pub fn from_int(n: i64) -> Self {
        Self::constant(BigRational::from_integer(n.into()))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn is_one(&self) -> bool {
        self.terms.len() == 1
            && self
                .terms
                .get(&(0, 0))
                .map(|c| c.is_one())
                .unwrap_or(false)
    }

    /// The coefficient view, mainly for serialization and display.
    pub fn terms(&self) -> impl Iterator<Item = (&(i32, i32), &BigRational)> {
        self.terms.iter()
    }

    pub fn as_constant(&self) -> Option<&BigRational> {
        if self.terms.is_empty() {
            return None;
        }
        if self.terms.len() == 1 {
            return self.terms.get(&(0, 0));
        }
        None
    }

    fn insert_term(terms: &mut BTreeMap<(i32, i32), BigRational>, key: (i32, i32), c: BigRational) {
        if c.is_zero() {
            return;
        }
        match terms.entry(key) {
            std::collections::btree_map::Entry::Vacant(e) => {
                e.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut e) => {
                let s = e.get() + &c;
                if s.is_zero() {
                    e.remove();
                } else {
                    *e.get_mut() = s;
                }
            }
        }
    }

    pub fn scaled_monomial(&self, ue: i32, ve: i32, c: &BigRational) -> Self {
        let mut terms = BTreeMap::new();
        if !c.is_zero() {
            for ((a, b), coeff) in &self.terms {
                terms.insert((a + ue, b + ve), coeff * c);
            }
        }
        FormalWeight { terms }
    }

    /// Evaluate at numeric `(u, v)`.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.terms
            .iter()
            .map(|((a, b), c)| c.to_f64().unwrap_or(f64::NAN) * u.powi(*a) * v.powi(*b))
            .sum()
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut acc = FormalWeight::one();
        for _ in 0..n {
            acc = &acc * self;
        }
        acc
    }
}

impl Add for &FormalWeight {
    type Output = FormalWeight;
    fn add(self, rhs: &FormalWeight) -> FormalWeight {
        let mut terms = self.terms.clone();
        for (k, c) in &rhs.terms {
            FormalWeight::insert_term(&mut terms, *k, c.clone());
        }
        FormalWeight { terms }
    }
}

impl Sub for &FormalWeight {
    type Output = FormalWeight;
    fn sub(self, rhs: &FormalWeight) -> FormalWeight {
        let mut terms = self.terms.clone();
        for (k, c) in &rhs.terms {
            FormalWeight::insert_term(&mut terms, *k, -c.clone());
        }
        FormalWeight { terms }
    }
}

impl Neg for &FormalWeight {
    type Output = FormalWeight;
    fn neg(self) -> FormalWeight {
        FormalWeight {
            terms: self.terms.iter().map(|(k, c)| (*k, -c.clone())).collect(),
        }
    }
}

impl Mul for &FormalWeight {
    type Output = FormalWeight;
    fn mul(self, rhs: &FormalWeight) -> FormalWeight {
        let mut terms = BTreeMap::new();
        for ((a1, b1), c1) in &self.terms {
            for ((a2, b2), c2) in &rhs.terms {
                FormalWeight::insert_term(&mut terms, (a1 + a2, b1 + b2), c1 * c2);
            }
        }
        FormalWeight { terms }
    }
}

impl fmt::Display for FormalWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for ((a, b), c) in self.terms.iter().rev() {
            if first {
                if c.is_negative() {
                    write!(f, "-")?;
                }
                first = false;
            } else if c.is_negative() {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let mag = c.abs();
            let has_vars = *a != 0 || *b != 0;
            if !mag.is_one() || !has_vars {
                write!(f, "{mag}")?;
                if has_vars {
                    write!(f, "*")?;
                }
            }
            if *a != 0 {
                write!(f, "u^{a}")?;
            }
            if *b != 0 {
                if *a != 0 {
                    write!(f, "*")?;
                }
                write!(f, "v^{b}")?;
            }
        }
        Ok(())
    }
}

/// A ratio of Laurent polynomials; the exact value carrier for measure
/// weights whose closed forms are rational functions of `u, v`.
///
/// Equality is mathematical (cross-multiplication); no gcd normalization is
/// performed beyond stripping constant denominators.
#[derive(Clone, Debug)]
pub struct WeightRatio {
    num: FormalWeight,
    den: FormalWeight,
}

impl WeightRatio {
    pub fn new(num: FormalWeight, den: FormalWeight) -> Self {
        assert!(!den.is_zero(), "zero denominator in WeightRatio");
        // Fold constant denominators into the numerator.
        if let Some(c) = den.as_constant() {
            let inv = BigRational::one() / c;
            return WeightRatio {
                num: num.scaled_monomial(0, 0, &inv),
                den: FormalWeight::one(),
            };
        }
        WeightRatio { num, den }
    }

    pub fn from_weight(num: FormalWeight) -> Self {
        WeightRatio {
            num,
            den: FormalWeight::one(),
        }
    }

    pub fn zero() -> Self {
        Self::from_weight(FormalWeight::zero())
    }

    pub fn one() -> Self {
        Self::from_weight(FormalWeight::one())
    }

    pub fn constant(c: BigRational) -> Self {
        Self::from_weight(FormalWeight::constant(c))
    }

    pub fn monomial(ue: i32, ve: i32, c: BigRational) -> Self {
        Self::from_weight(FormalWeight::monomial(ue, ve, c))
    }

    pub fn num(&self) -> &FormalWeight {
        &self.num
    }

    pub fn den(&self) -> &FormalWeight {
        &self.den
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn recip(&self) -> Self {
        Self::new(self.den.clone(), self.num.clone())
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.num.eval(u, v) / self.den.eval(u, v)
    }

    pub fn as_constant(&self) -> Option<BigRational> {
        if self.num.is_zero() && self.den.as_constant().is_some() {
            return Some(BigRational::zero());
        }
        match (self.num.as_constant(), self.den.as_constant()) {
            (Some(n), Some(d)) => Some(n / d),
            _ => None,
        }
    }
}

impl PartialEq for WeightRatio {
    fn eq(&self, other: &Self) -> bool {
        // a/b == c/d  <=>  a*d == c*b
        if std::ptr::eq(self, other) {
            return true;
        }
        if self.den == other.den {
            return self.num == other.num;
        }
        &self.num * &other.den == &other.num * &self.den
    }
}

impl Add for &WeightRatio {
    type Output = WeightRatio;
    fn add(self, rhs: &WeightRatio) -> WeightRatio {
        if self.den == rhs.den {
            return WeightRatio::new(&self.num + &rhs.num, self.den.clone());
        }
        WeightRatio::new(
            &(&self.num * &rhs.den) + &(&rhs.num * &self.den),
            &self.den * &rhs.den,
        )
    }
}

impl Sub for &WeightRatio {
    type Output = WeightRatio;
    fn sub(self, rhs: &WeightRatio) -> WeightRatio {
        if self.den == rhs.den {
            return WeightRatio::new(&self.num - &rhs.num, self.den.clone());
        }
        WeightRatio::new(
            &(&self.num * &rhs.den) - &(&rhs.num * &self.den),
            &self.den * &rhs.den,
        )
    }
}

impl Mul for &WeightRatio {
    type Output = WeightRatio;
    fn mul(self, rhs: &WeightRatio) -> WeightRatio {
        WeightRatio::new(&self.num * &rhs.num, &self.den * &rhs.den)
    }
}

impl fmt::Display for WeightRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den.is_one() {
            write!(f, "{}", self.num)
        } else {
            write!(f, "({}) / ({})", self.num, self.den)
        }
    }
}

/// Parse/format helpers for exact rationals in reports and configs ("3/4").
pub fn rational_to_string(r: &BigRational) -> String {
    if r.denom().is_one() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

pub fn rational_from_string(s: &str) -> Option<BigRational> {
    let s = s.trim();
    match s.split_once('/') {
        Some((n, d)) => {
            let n: num::BigInt = n.trim().parse().ok()?;
            let d: num::BigInt = d.trim().parse().ok()?;
            if d.is_zero() {
                return None;
            }
            Some(BigRational::new(n, d))
        }
        None => {
            let n: num::BigInt = s.parse().ok()?;
            Some(BigRational::from_integer(n))
        }
    }
}
