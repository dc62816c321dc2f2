//! Signed two's-complement fixed-point numbers with an explicit `(I,F)` format.
//!
//! A format carries `I` integer bits and `F` fraction bits plus one sign bit,
//! so a value occupies `1 + I + F` bits and lies in `[-2^I, 2^I - 2^-F]`.
//! Every constructor and every arithmetic result saturates into that range;
//! rounding is round-half-to-even throughout.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Widest supported datapath, sign bit included.
pub const MAX_TOTAL_BITS: u32 = 32;

/// Extra accumulator bits beyond a full-width product.
pub const ACC_GUARD_BITS: u32 = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QError {
    #[error("invalid format ({int_bits},{frac_bits}): need I >= 0, F >= 1 and 1 + I + F <= 32")]
    InvalidFormat { int_bits: u32, frac_bits: u32 },
    #[error("cannot parse fixed-point format {0:?}; expected \"(I,F)\"")]
    Parse(String),
    #[error("non-finite value {0} cannot be quantized")]
    NonFinite(f64),
    #[error("format mismatch: {0} vs {1}")]
    FormatMismatch(QFormat, QFormat),
    #[error("accumulator scale mismatch: accumulator holds 2^-{acc} values, operand product is 2^-{operand}")]
    ScaleMismatch { acc: u32, operand: u32 },
    #[error("accumulator overflow: partial sum exceeds {headroom}-bit headroom")]
    AccumulatorOverflow { headroom: u32 },
}

/// `(I,F)` fixed-point format.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct QFormat {
    int_bits: u8,
    frac_bits: u8,
}

impl QFormat {
    pub fn new(int_bits: u32, frac_bits: u32) -> Result<Self, QError> {
        if frac_bits < 1 || 1 + int_bits + frac_bits > MAX_TOTAL_BITS {
            return Err(QError::InvalidFormat { int_bits, frac_bits });
        }
        Ok(Self {
            int_bits: int_bits as u8,
            frac_bits: frac_bits as u8,
        })
    }

    #[inline]
    pub fn int_bits(self) -> u32 {
        self.int_bits as u32
    }

    #[inline]
    pub fn frac_bits(self) -> u32 {
        self.frac_bits as u32
    }

    /// Datapath width including the sign bit.
    pub fn total_bits(self) -> u32 {
        1 + self.int_bits() + self.frac_bits()
    }

    #[inline]
    pub fn max_raw(self) -> i64 {
        (1i64 << (self.int_bits() + self.frac_bits())) - 1
    }

    #[inline]
    pub fn min_raw(self) -> i64 {
        -(1i64 << (self.int_bits() + self.frac_bits()))
    }

    /// Value of one least-significant bit, `2^-F`.
    pub fn step(self) -> f64 {
        (-(self.frac_bits() as f64)).exp2()
    }

    pub fn max_value(self) -> f64 {
        self.max_raw() as f64 * self.step()
    }

    pub fn min_value(self) -> f64 {
        self.min_raw() as f64 * self.step()
    }

    /// Bits an accumulator needs to sum 2^16 full-width products of this format.
    pub fn acc_headroom_bits(self) -> u32 {
        2 * self.total_bits() + ACC_GUARD_BITS
    }

    #[inline]
    fn saturate(self, raw: i128) -> i32 {
        raw.clamp(self.min_raw() as i128, self.max_raw() as i128) as i32
    }
}

impl fmt::Display for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.int_bits, self.frac_bits)
    }
}

impl fmt::Debug for QFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for QFormat {
    type Err = QError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || QError::Parse(s.to_string());
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(err)?;
        let (i, f) = inner.split_once(',').ok_or_else(err)?;
        let i: u32 = i.trim().parse().map_err(|_| err())?;
        let f: u32 = f.trim().parse().map_err(|_| err())?;
        QFormat::new(i, f)
    }
}

impl Serialize for QFormat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for QFormat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Parses a comma-separated list such as `"(2,12),(2,12),(1,12)"`.
pub fn parse_format_list(s: &str) -> Result<Vec<QFormat>, QError> {
    let mut out = Vec::new();
    let mut rest = s.trim();
    while !rest.is_empty() {
        let end = rest.find(')').ok_or_else(|| QError::Parse(s.to_string()))?;
        out.push(rest[..=end].parse()?);
        rest = rest[end + 1..].trim_start();
        rest = rest.strip_prefix(',').unwrap_or(rest).trim_start();
    }
    if out.is_empty() {
        return Err(QError::Parse(s.to_string()));
    }
    Ok(out)
}

/// Divides by `2^shift` with round-half-to-even. Negative shifts scale up.
#[inline]
pub fn shift_round_half_even(v: i128, shift: i32) -> i128 {
    if shift <= 0 {
        return v << (-shift);
    }
    let shift = shift as u32;
    let floor = v >> shift;
    let rem = v - (floor << shift);
    let half = 1i128 << (shift - 1);
    match rem.cmp(&half) {
        Ordering::Less => floor,
        Ordering::Greater => floor + 1,
        Ordering::Equal => floor + (floor & 1),
    }
}

/// Integer division with round-half-to-even; `den` must be positive.
#[inline]
pub fn div_round_half_even(num: i128, den: i128) -> i128 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        Ordering::Less => q,
        Ordering::Greater => q + 1,
        Ordering::Equal => q + (q & 1),
    }
}

/// A value `raw * 2^-F` in a given format.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct QValue {
    raw: i32,
    fmt: QFormat,
}

impl QValue {
    pub fn zero(fmt: QFormat) -> Self {
        Self { raw: 0, fmt }
    }

    /// Builds a value from a scaled integer, saturating to the format bounds.
    pub fn from_raw(raw: i64, fmt: QFormat) -> Self {
        Self {
            raw: fmt.saturate(raw as i128),
            fmt,
        }
    }

    /// Re-expresses an exact `raw * 2^-frac_bits` quantity in `fmt`, rounding once.
    pub fn from_scaled(raw: i128, frac_bits: u32, fmt: QFormat) -> Self {
        let shift = frac_bits as i32 - fmt.frac_bits() as i32;
        // Saturate before a left shift can overflow.
        let r = if shift < 0 {
            let lim = (fmt.max_raw() as i128) >> (-shift);
            shift_round_half_even(raw.clamp(-lim - 1, lim + 1), shift)
        } else {
            shift_round_half_even(raw, shift)
        };
        Self {
            raw: fmt.saturate(r),
            fmt,
        }
    }

    #[inline]
    pub fn raw(self) -> i32 {
        self.raw
    }

    #[inline]
    pub fn fmt(self) -> QFormat {
        self.fmt
    }

    pub fn to_real(self) -> f64 {
        self.raw as f64 * self.fmt.step()
    }

    pub fn is_zero(self) -> bool {
        self.raw == 0
    }

    /// Converts to another format with a single rounding.
    pub fn requantize(self, fmt: QFormat) -> Self {
        if fmt == self.fmt {
            return self;
        }
        Self::from_scaled(self.raw as i128, self.fmt.frac_bits(), fmt)
    }

    pub fn neg(self) -> Self {
        Self::from_raw(-(self.raw as i64), self.fmt)
    }

    /// Exact multiplication by `2^k`, saturating.
    pub fn shl(self, k: u32) -> Self {
        Self::from_raw((self.raw as i64) << k, self.fmt)
    }
}

impl fmt::Debug for QValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.to_real(), self.fmt)
    }
}

impl fmt::Display for QValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_real())
    }
}

impl PartialOrd for QValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.fmt == other.fmt {
            Some(self.raw.cmp(&other.raw))
        } else {
            // Compare exactly at the finer scale.
            let fa = self.fmt.frac_bits();
            let fb = other.fmt.frac_bits();
            let f = fa.max(fb);
            let a = (self.raw as i128) << (f - fa);
            let b = (other.raw as i128) << (f - fb);
            Some(a.cmp(&b))
        }
    }
}

/// Nearest representable value, ties to even, saturating out-of-range inputs.
pub fn quantize(x: f64, fmt: QFormat) -> Result<QValue, QError> {
    if !x.is_finite() {
        return Err(QError::NonFinite(x));
    }
    Ok(quantize_finite(x, fmt))
}

/// [`quantize`] for inputs already known to be finite; NaN maps to zero.
pub(crate) fn quantize_finite(x: f64, fmt: QFormat) -> QValue {
    let scaled = x * (fmt.frac_bits() as f64).exp2();
    // Scaling by a power of two is exact, so this is a single rounding of x.
    let r = scaled.round_ties_even();
    let raw = if r >= fmt.max_raw() as f64 {
        fmt.max_raw()
    } else if r <= fmt.min_raw() as f64 {
        fmt.min_raw()
    } else {
        r as i64
    };
    QValue::from_raw(raw, fmt)
}

pub fn q_add(a: QValue, b: QValue) -> Result<QValue, QError> {
    if a.fmt != b.fmt {
        return Err(QError::FormatMismatch(a.fmt, b.fmt));
    }
    Ok(QValue::from_raw(a.raw as i64 + b.raw as i64, a.fmt))
}

pub fn q_sub(a: QValue, b: QValue) -> Result<QValue, QError> {
    if a.fmt != b.fmt {
        return Err(QError::FormatMismatch(a.fmt, b.fmt));
    }
    Ok(QValue::from_raw(a.raw as i64 - b.raw as i64, a.fmt))
}

/// Exact product at scale `2^-(Fa+Fb)`, rounded once into `out_fmt`.
#[inline]
pub fn q_mul(a: QValue, b: QValue, out_fmt: QFormat) -> QValue {
    let p = a.raw as i128 * b.raw as i128;
    QValue::from_scaled(p, a.fmt.frac_bits() + b.fmt.frac_bits(), out_fmt)
}

/// Wide multiply-accumulate register.
///
/// Holds an exact sum of products at a fixed scale; nothing is rounded until
/// [`WideAcc::finalize`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WideAcc {
    raw: i128,
    frac_bits: u32,
    headroom: u32,
}

impl WideAcc {
    /// Accumulator for products of `lhs`-format and `rhs`-format operands.
    pub fn for_product(lhs: QFormat, rhs: QFormat) -> Self {
        let widest = lhs.total_bits().max(rhs.total_bits());
        Self {
            raw: 0,
            frac_bits: lhs.frac_bits() + rhs.frac_bits(),
            headroom: 2 * widest + ACC_GUARD_BITS,
        }
    }

    /// Accumulator for plain sums of `fmt` values.
    pub fn for_sum(fmt: QFormat) -> Self {
        Self {
            raw: 0,
            frac_bits: fmt.frac_bits(),
            headroom: fmt.acc_headroom_bits(),
        }
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn headroom_bits(&self) -> u32 {
        self.headroom
    }

    pub fn to_real(&self) -> f64 {
        self.raw as f64 * (-(self.frac_bits as f64)).exp2()
    }

    #[inline]
    fn add_raw(&mut self, v: i128) -> Result<(), QError> {
        let next = self.raw + v;
        let lim = 1i128 << (self.headroom - 1);
        if next >= lim || next < -lim {
            return Err(QError::AccumulatorOverflow {
                headroom: self.headroom,
            });
        }
        self.raw = next;
        Ok(())
    }

    #[inline]
    pub fn mac(&mut self, a: QValue, b: QValue) -> Result<(), QError> {
        let scale = a.fmt.frac_bits() + b.fmt.frac_bits();
        if scale != self.frac_bits {
            return Err(QError::ScaleMismatch {
                acc: self.frac_bits,
                operand: scale,
            });
        }
        self.add_raw(a.raw as i128 * b.raw as i128)
    }

    /// Adds a single value whose scale matches the accumulator.
    pub fn add(&mut self, v: QValue) -> Result<(), QError> {
        if v.fmt.frac_bits() != self.frac_bits {
            return Err(QError::ScaleMismatch {
                acc: self.frac_bits,
                operand: v.fmt.frac_bits(),
            });
        }
        self.add_raw(v.raw as i128)
    }

    /// Rounds the exact sum once into `out_fmt`.
    pub fn finalize(&self, out_fmt: QFormat) -> QValue {
        QValue::from_scaled(self.raw, self.frac_bits, out_fmt)
    }

    /// Rounds `sum / n` once into `out_fmt`.
    pub fn finalize_mean(&self, n: u32, out_fmt: QFormat) -> QValue {
        assert!(n > 0, "mean over zero terms");
        // Work at the finer of the two scales so the division rounds once.
        let f = self.frac_bits.max(out_fmt.frac_bits());
        let num = self.raw << (f - self.frac_bits);
        let q = div_round_half_even(num, n as i128);
        QValue::from_scaled(q, f, out_fmt)
    }
}

/// Free-function form of [`WideAcc::mac`].
pub fn mac(mut acc: WideAcc, a: QValue, b: QValue) -> Result<WideAcc, QError> {
    acc.mac(a, b)?;
    Ok(acc)
}

/// Free-function form of [`WideAcc::finalize`].
pub fn finalize(acc: &WideAcc, out_fmt: QFormat) -> QValue {
    acc.finalize(out_fmt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;
    use proptest::prelude::*;

    fn f(i: u32, fr: u32) -> QFormat {
        QFormat::new(i, fr).unwrap()
    }

    // Oracle: exact rational x rounded half-even to a multiple of 2^-F.
    fn oracle_round(x: Ratio<i128>, fmt: QFormat) -> i128 {
        let scaled = x * Ratio::from_integer(1i128 << fmt.frac_bits());
        let fl = scaled.floor();
        let diff = scaled - fl;
        let half = Ratio::new(1, 2);
        let mut r = *fl.numer();
        if diff > half || (diff == half && r & 1 == 1) {
            r += 1;
        }
        r.clamp(fmt.min_raw() as i128, fmt.max_raw() as i128)
    }

    #[test]
    fn format_bounds() {
        let q = f(2, 12);
        assert_eq!(q.total_bits(), 15);
        assert_eq!(q.max_value(), 4.0 - 1.0 / 4096.0);
        assert_eq!(q.min_value(), -4.0);
        assert!(QFormat::new(0, 0).is_err());
        assert!(QFormat::new(20, 12).is_err());
        assert!(QFormat::new(0, 31).is_ok());
    }

    #[test]
    fn format_text_form() {
        assert_eq!("(2,12)".parse::<QFormat>().unwrap(), f(2, 12));
        assert_eq!(" ( 3 , 10 ) ".parse::<QFormat>().unwrap(), f(3, 10));
        assert_eq!(f(1, 13).to_string(), "(1,13)");
        assert!("2,12".parse::<QFormat>().is_err());
        assert!("(2,0)".parse::<QFormat>().is_err());
        let list = parse_format_list("(2,12),(2,12), (1,12),(3,10)").unwrap();
        assert_eq!(list.len(), 4);
        assert_eq!(list[3], f(3, 10));
        assert!(parse_format_list("").is_err());
    }

    #[test]
    fn quantize_examples() {
        let q = f(2, 12);
        let half = quantize(0.5, q).unwrap();
        assert_eq!(half.raw(), 2048);
        assert_eq!(half.to_real(), 0.5);

        let third = quantize(1.0 / 3.0, q).unwrap();
        assert_eq!(third.raw() as i128, oracle_round(Ratio::new(1, 3), q));
        assert_eq!(third.to_real(), 1365.0 / 4096.0);

        assert_eq!(quantize(5.0, q).unwrap().to_real(), 3.999755859375);
        assert_eq!(quantize(-9.0, q).unwrap().to_real(), -4.0);
        assert!(matches!(quantize(f64::NAN, q), Err(QError::NonFinite(_))));
        assert!(quantize(f64::INFINITY, q).is_err());
    }

    #[test]
    fn quantize_ties_to_even() {
        let q = f(2, 2);
        // 0.125 = 0.5 LSB, 0.375 = 1.5 LSB
        assert_eq!(quantize(0.125, q).unwrap().raw(), 0);
        assert_eq!(quantize(0.375, q).unwrap().raw(), 2);
        assert_eq!(quantize(-0.125, q).unwrap().raw(), 0);
        assert_eq!(quantize(-0.375, q).unwrap().raw(), -2);
    }

    #[test]
    fn add_sub_examples() {
        let q = f(2, 12);
        let v = |x| quantize(x, q).unwrap();
        assert_eq!(q_add(v(0.25), v(0.25)).unwrap().to_real(), 0.5);
        let top = QValue::from_raw(q.max_raw(), q);
        assert_eq!(q_add(top, v(1.0)).unwrap(), top);
        assert!(q_add(v(0.5), v(-0.5)).unwrap().is_zero());
        assert_eq!(q_sub(v(0.5), v(0.75)).unwrap().to_real(), -0.25);
        let other = quantize(0.5, f(3, 10)).unwrap();
        assert!(matches!(q_add(v(0.5), other), Err(QError::FormatMismatch(..))));
    }

    #[test]
    fn mul_examples() {
        let q = f(2, 12);
        let v = |x| quantize(x, q).unwrap();
        assert_eq!(q_mul(v(0.5), v(0.5), q).to_real(), 0.25);

        let third = v(1.0 / 3.0);
        let exact = Ratio::new(1365i128, 4096) * Ratio::from_integer(3);
        let got = q_mul(third, v(3.0), q);
        assert_eq!(got.raw() as i128, oracle_round(exact, q));
        assert_eq!(got, quantize(4095.0 / 4096.0, q).unwrap());

        for x in [-3.5, -0.001, 0.0, 1.75, 3.9] {
            assert!(q_mul(v(x), v(0.0), q).is_zero());
        }
    }

    #[test]
    fn mac_examples() {
        let q = f(2, 12);
        let v = |x| quantize(x, q).unwrap();
        let mut acc = WideAcc::for_product(q, q);
        acc.mac(v(0.5), v(0.5)).unwrap();
        acc.mac(v(0.25), v(0.25)).unwrap();
        assert_eq!(acc.finalize(q).to_real(), 0.3125);

        assert!(WideAcc::for_product(q, q).finalize(q).is_zero());

        // 1000 (1/3)^2 terms: exact rational sum rounded once.
        let third = v(1.0 / 3.0);
        let mut acc = WideAcc::for_product(q, q);
        for _ in 0..1000 {
            acc = mac(acc, third, third).unwrap();
        }
        let term = Ratio::new(1365i128, 4096);
        let exact = term * term * Ratio::from_integer(1000);
        let got = finalize(&acc, q);
        assert_eq!(got.raw() as i128, oracle_round(exact, q));
        // 111.1 saturates in (2,12)
        assert_eq!(got.raw() as i64, q.max_raw());
        let wide = f(8, 12);
        assert_eq!(
            acc.finalize(wide).raw() as i128,
            oracle_round(exact, wide)
        );
    }

    #[test]
    fn mac_scale_and_overflow_errors() {
        let q = f(2, 12);
        let mut acc = WideAcc::for_product(q, q);
        let a = quantize(1.0, q).unwrap();
        let b = quantize(1.0, f(2, 10)).unwrap();
        assert!(matches!(acc.mac(a, b), Err(QError::ScaleMismatch { .. })));

        let big = f(15, 16);
        let m = QValue::from_raw(big.min_raw(), big);
        let mut acc = WideAcc::for_product(big, big);
        let mut res = Ok(());
        for _ in 0..(1 << 17) {
            res = acc.mac(m, m);
            if res.is_err() {
                break;
            }
        }
        assert!(matches!(res, Err(QError::AccumulatorOverflow { .. })));
    }

    #[test]
    fn headroom_covers_two_pow_16_terms() {
        let big = f(15, 16);
        let m = QValue::from_raw(big.min_raw(), big);
        let mut acc = WideAcc::for_product(big, big);
        for _ in 0..(1 << 16) - 1 {
            acc.mac(m, m).unwrap();
        }
    }

    #[test]
    fn mean_rounds_once() {
        let q = f(2, 4);
        let mut acc = WideAcc::for_sum(q);
        for r in [1, 2] {
            acc.add(QValue::from_raw(r, q)).unwrap();
        }
        // 3/2 LSB -> 2 (even)
        assert_eq!(acc.finalize_mean(2, q).raw(), 2);
        let mut acc = WideAcc::for_sum(q);
        for r in [1, 0] {
            acc.add(QValue::from_raw(r, q)).unwrap();
        }
        assert_eq!(acc.finalize_mean(2, q).raw(), 0);
        let mut acc = WideAcc::for_sum(q);
        acc.add(QValue::from_raw(-3, q)).unwrap();
        assert_eq!(acc.finalize_mean(2, q).raw(), -2);
    }

    #[test]
    fn rounding_helpers() {
        assert_eq!(shift_round_half_even(5, 1), 2);
        assert_eq!(shift_round_half_even(7, 1), 4);
        assert_eq!(shift_round_half_even(-5, 1), -2);
        assert_eq!(shift_round_half_even(-7, 1), -4);
        assert_eq!(shift_round_half_even(3, -2), 12);
        assert_eq!(div_round_half_even(7, 2), 4);
        assert_eq!(div_round_half_even(-7, 2), -4);
        assert_eq!(div_round_half_even(5, 2), 2);
        assert_eq!(div_round_half_even(-10, 3), -3);
    }

    fn any_format() -> impl Strategy<Value = QFormat> {
        (0u32..8, 1u32..20).prop_map(|(i, fr)| QFormat::new(i, fr).unwrap())
    }

    proptest! {
        #[test]
        fn idempotent(fmt in any_format(), raw in any::<i32>()) {
            let q = QValue::from_raw(raw as i64, fmt);
            prop_assert_eq!(quantize(q.to_real(), fmt).unwrap(), q);
        }

        #[test]
        fn error_bound(fmt in any_format(), t in 0.0f64..1.0) {
            let x = fmt.min_value() + t * (fmt.max_value() - fmt.min_value());
            let q = quantize(x, fmt).unwrap();
            prop_assert!((q.to_real() - x).abs() <= fmt.step() / 2.0);
        }

        #[test]
        fn monotone(fmt in any_format(), x in -300.0f64..300.0, y in -300.0f64..300.0) {
            let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
            prop_assert!(quantize(lo, fmt).unwrap() <= quantize(hi, fmt).unwrap());
        }

        #[test]
        fn saturation_total(fmt in any_format(), a in any::<i32>(), b in any::<i32>(), out in any_format()) {
            let a = QValue::from_raw(a as i64, fmt);
            let b = QValue::from_raw(b as i64, fmt);
            for v in [q_add(a, b).unwrap(), q_sub(a, b).unwrap(), q_mul(a, b, out), a.neg()] {
                prop_assert!((v.raw() as i64) >= v.fmt().min_raw());
                prop_assert!((v.raw() as i64) <= v.fmt().max_raw());
            }
        }

        #[test]
        fn single_rounding_dot(
            fmt in (0u32..4, 4u32..14).prop_map(|(i, fr)| QFormat::new(i, fr).unwrap()),
            out in (0u32..6, 4u32..16).prop_map(|(i, fr)| QFormat::new(i, fr).unwrap()),
            pairs in prop::collection::vec((any::<i32>(), any::<i32>()), 0..=64),
        ) {
            let mut acc = WideAcc::for_product(fmt, fmt);
            let mut exact = Ratio::from_integer(0i128);
            let scale = 1i128 << fmt.frac_bits();
            for (a, b) in pairs {
                let a = QValue::from_raw(a as i64, fmt);
                let b = QValue::from_raw(b as i64, fmt);
                acc.mac(a, b).unwrap();
                exact += Ratio::new(a.raw() as i128, scale) * Ratio::new(b.raw() as i128, scale);
            }
            prop_assert_eq!(acc.finalize(out).raw() as i128, oracle_round(exact, out));
        }
    }
}
