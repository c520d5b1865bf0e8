use nalgebra::RealField;
use ndarray::{LinalgScalar, ScalarOperand};

/// Scalar type the trainable stack is generic over.
///
/// Training runs in `f32`; gradient checks run the same code in `f64`.
pub trait Real:
    RealField + Copy + LinalgScalar + ScalarOperand + Default + Send + Sync + std::iter::Sum + 'static
{
    fn of(x: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}
