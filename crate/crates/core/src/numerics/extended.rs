//! 128-bit significand log-domain scalar backed by `astro-float`.

use std::cell::RefCell;
use std::cmp::Ordering;
use std::fmt;

use astro_float::{BigFloat, Consts, RoundingMode, Sign};

use super::Real;

/// Significand width in bits.
pub const EXT_BITS: usize = 128;

const RM: RoundingMode = RoundingMode::ToEven;

thread_local! {
    static CONSTS: RefCell<Consts> = RefCell::new(Consts::new().expect("constants cache"));
}

#[derive(Clone)]
pub struct Ext(BigFloat);

impl Ext {
    pub fn inner(&self) -> &BigFloat {
        &self.0
    }
}

impl fmt::Debug for Ext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ext({})", self.0)
    }
}

impl PartialEq for Ext {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl PartialOrd for Ext {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

/// Nearest `f64` to a `BigFloat`, read off the top mantissa word.
pub(crate) fn big_to_f64(v: &BigFloat) -> f64 {
    if v.is_nan() {
        return f64::NAN;
    }
    if v.is_inf_pos() {
        return f64::INFINITY;
    }
    if v.is_inf_neg() {
        return f64::NEG_INFINITY;
    }
    let Some((words, _, sign, exponent, _)) = v.as_raw_parts() else {
        return f64::NAN;
    };
    let Some(top) = words.last() else {
        return 0.0;
    };
    if *top == 0 {
        return 0.0;
    }
    // value = 0.m * 2^e with the most significant word last
    let word_bits = (std::mem::size_of_val(top) * 8) as i32;
    let mantissa = *top as f64 / 2f64.powi(word_bits);
    let mut e = exponent;
    let mut value = mantissa;
    while e > 1000 {
        value *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        value *= 2f64.powi(-1000);
        e += 1000;
    }
    value *= 2f64.powi(e);
    if sign == Sign::Neg {
        -value
    } else {
        value
    }
}

impl Real for Ext {
    fn from_f64(v: f64) -> Self {
        Ext(BigFloat::from_f64(v, EXT_BITS))
    }
    fn to_f64(&self) -> f64 {
        big_to_f64(&self.0)
    }
    fn add(&self, other: &Self) -> Self {
        Ext(self.0.add(&other.0, EXT_BITS, RM))
    }
    fn sub(&self, other: &Self) -> Self {
        Ext(self.0.sub(&other.0, EXT_BITS, RM))
    }
    fn mul(&self, other: &Self) -> Self {
        Ext(self.0.mul(&other.0, EXT_BITS, RM))
    }
    fn mul_f64(&self, k: f64) -> Self {
        self.mul(&Ext::from_f64(k))
    }
    fn add_f64(&self, k: f64) -> Self {
        self.add(&Ext::from_f64(k))
    }
    fn neg(&self) -> Self {
        Ext(self.0.neg())
    }
    fn exp(&self) -> Self {
        CONSTS.with(|cc| Ext(self.0.exp(EXT_BITS, RM, &mut cc.borrow_mut())))
    }
    fn ln(&self) -> Self {
        CONSTS.with(|cc| Ext(self.0.ln(EXT_BITS, RM, &mut cc.borrow_mut())))
    }
    fn ln_1p(&self) -> Self {
        let one = BigFloat::from_f64(1.0, EXT_BITS);
        let arg = self.0.add(&one, EXT_BITS, RM);
        CONSTS.with(|cc| Ext(arg.ln(EXT_BITS, RM, &mut cc.borrow_mut())))
    }
    fn half(&self) -> Self {
        self.mul_f64(0.5)
    }
    fn is_finite(&self) -> bool {
        !self.0.is_inf() && !self.0.is_nan()
    }
    fn infinity() -> Self {
        Ext::from_f64(f64::INFINITY)
    }
}
