use crate::qnum::QFormat;
use crate::scalar::Scalar;

use super::EngineError;

/// Flat row-major tensor whose elements share one storage format.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorQ<S> {
    dims: Vec<usize>,
    data: Vec<S>,
    fmt: QFormat,
}

impl<S: Scalar> TensorQ<S> {
    pub fn new(dims: Vec<usize>, data: Vec<S>, fmt: QFormat) -> Result<Self, EngineError> {
        let want: usize = dims.iter().product();
        if want != data.len() {
            return Err(EngineError::Shape(format!(
                "dims {dims:?} need {want} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data, fmt })
    }

    pub fn zeros(dims: Vec<usize>, fmt: QFormat) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: vec![S::zero(fmt); n],
            fmt,
        }
    }

    /// Rounds each real into `fmt`.
    pub fn from_reals(dims: Vec<usize>, values: &[f64], fmt: QFormat) -> Result<Self, EngineError> {
        let data = values.iter().map(|&v| S::from_real(v, fmt)).collect();
        Self::new(dims, data, fmt)
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_real()).collect()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn fmt(&self) -> QFormat {
        self.fmt
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<S>, fmt: QFormat) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data, fmt }
    }
}
