//! Arithmetic domain the training engine is generic over.
//!
//! [`QValue`] gives the bit-exact fixed-point datapath. Every IEEE float type
//! (through [`num_traits::Float`]) gives the "infinite F" bypass: formats are
//! accepted and ignored, and every operation is the plain float operation.

use std::fmt::Debug;

use num_traits::Float;

use crate::qnum::{self, QError, QFormat, QValue, WideAcc};

pub trait Scalar: Copy + Debug + PartialEq + PartialOrd + Send + Sync + 'static {
    /// Exact (or widest available) dot-product / sum accumulator.
    type Acc: Copy + Debug;

    /// Whether values carry a fixed-point format.
    const QUANTIZED: bool;

    fn from_real(x: f64, fmt: QFormat) -> Self;
    fn to_real(self) -> f64;
    fn zero(fmt: QFormat) -> Self;

    fn add(self, rhs: Self) -> Self;
    /// Product rounded into `out`.
    fn mul(self, rhs: Self, out: QFormat) -> Self;
    fn neg(self) -> Self;

    fn acc_product(lhs: QFormat, rhs: QFormat) -> Self::Acc;
    fn acc_sum(fmt: QFormat) -> Self::Acc;
    fn mac(acc: &mut Self::Acc, a: Self, b: Self) -> Result<(), QError>;
    fn acc_add(acc: &mut Self::Acc, v: Self) -> Result<(), QError>;
    fn finish(acc: &Self::Acc, out: QFormat) -> Self;
    fn finish_mean(acc: &Self::Acc, n: u32, out: QFormat) -> Self;
}

impl Scalar for QValue {
    type Acc = WideAcc;
    const QUANTIZED: bool = true;

    #[inline]
    fn from_real(x: f64, fmt: QFormat) -> Self {
        qnum::quantize_finite(x, fmt)
    }
    #[inline]
    fn to_real(self) -> f64 {
        QValue::to_real(self)
    }
    #[inline]
    fn zero(fmt: QFormat) -> Self {
        QValue::zero(fmt)
    }
    #[inline]
    fn add(self, rhs: Self) -> Self {
        QValue::from_raw(self.raw() as i64 + rhs.raw() as i64, self.fmt())
    }
    #[inline]
    fn mul(self, rhs: Self, out: QFormat) -> Self {
        qnum::q_mul(self, rhs, out)
    }
    #[inline]
    fn neg(self) -> Self {
        QValue::neg(self)
    }
    #[inline]
    fn acc_product(lhs: QFormat, rhs: QFormat) -> WideAcc {
        WideAcc::for_product(lhs, rhs)
    }
    #[inline]
    fn acc_sum(fmt: QFormat) -> WideAcc {
        WideAcc::for_sum(fmt)
    }
    #[inline]
    fn mac(acc: &mut WideAcc, a: Self, b: Self) -> Result<(), QError> {
        acc.mac(a, b)
    }
    #[inline]
    fn acc_add(acc: &mut WideAcc, v: Self) -> Result<(), QError> {
        acc.add(v)
    }
    #[inline]
    fn finish(acc: &WideAcc, out: QFormat) -> Self {
        acc.finalize(out)
    }
    #[inline]
    fn finish_mean(acc: &WideAcc, n: u32, out: QFormat) -> Self {
        acc.finalize_mean(n, out)
    }
}

impl<T> Scalar for T
where
    T: Float + Debug + Send + Sync + 'static,
{
    type Acc = T;
    const QUANTIZED: bool = false;

    #[inline]
    fn from_real(x: f64, _fmt: QFormat) -> Self {
        T::from(x).unwrap_or_else(T::nan)
    }
    #[inline]
    fn to_real(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
    #[inline]
    fn zero(_fmt: QFormat) -> Self {
        T::zero()
    }
    #[inline]
    fn add(self, rhs: Self) -> Self {
        self + rhs
    }
    #[inline]
    fn mul(self, rhs: Self, _out: QFormat) -> Self {
        self * rhs
    }
    #[inline]
    fn neg(self) -> Self {
        -self
    }
    #[inline]
    fn acc_product(_lhs: QFormat, _rhs: QFormat) -> T {
        T::zero()
    }
    #[inline]
    fn acc_sum(_fmt: QFormat) -> T {
        T::zero()
    }
    #[inline]
    fn mac(acc: &mut T, a: Self, b: Self) -> Result<(), QError> {
        *acc = *acc + a * b;
        Ok(())
    }
    #[inline]
    fn acc_add(acc: &mut T, v: Self) -> Result<(), QError> {
        *acc = *acc + v;
        Ok(())
    }
    #[inline]
    fn finish(acc: &T, _out: QFormat) -> Self {
        *acc
    }
    #[inline]
    fn finish_mean(acc: &T, n: u32, _out: QFormat) -> Self {
        *acc / T::from(n).unwrap_or_else(T::one)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt() -> QFormat {
        QFormat::new(2, 12).unwrap()
    }

    #[test]
    fn float_bypass_ignores_format() {
        let coarse = QFormat::new(0, 1).unwrap();
        let x = <f64 as Scalar>::from_real(1.0 / 3.0, coarse);
        assert_eq!(x, 1.0 / 3.0);
        assert_eq!(x.mul(3.0, coarse), 1.0);
        let mut acc = f64::acc_product(coarse, coarse);
        f64::mac(&mut acc, 0.1, 0.2).unwrap();
        assert_eq!(f64::finish(&acc, coarse), 0.1 * 0.2);
    }

    #[test]
    fn quantized_dot_rounds_once() {
        let q = fmt();
        let a = QValue::from_real(0.3, q);
        let mut acc = QValue::acc_product(q, q);
        let mut per_term = QValue::zero(q);
        for _ in 0..3 {
            QValue::mac(&mut acc, a, a).unwrap();
            per_term = per_term.add(a.mul(a, q));
        }
        let once = QValue::finish(&acc, q);
        let exact = 3.0 * (1229.0f64 / 4096.0).powi(2);
        assert!((once.to_real() - exact).abs() <= q.step() / 2.0);
        assert_ne!(once, per_term);
    }

    #[test]
    fn f32_is_a_scalar() {
        let q = fmt();
        let x = <f32 as Scalar>::from_real(0.5, q);
        assert_eq!(x.mul(x, q).to_real(), 0.25);
        assert!(!<f32 as Scalar>::QUANTIZED);
        assert!(<QValue as Scalar>::QUANTIZED);
    }
}
