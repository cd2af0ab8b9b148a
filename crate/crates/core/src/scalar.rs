use std::fmt::Debug;

use num_traits::{Float, FromPrimitive};

/// Real scalar used for embeddings, scores and metrics.
pub trait Scalar: Float + FromPrimitive + Debug + Send + Sync + 'static {
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 converts to any float")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }

    /// Tolerance for "unit norm" checks: 1e-6, or a few ulps for coarse types.
    fn norm_tolerance() -> Self {
        Self::of(1e-6).max(Self::epsilon() * Self::of(32.0))
    }
}

impl<T> Scalar for T where T: Float + FromPrimitive + Debug + Send + Sync + 'static {}

pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub(crate) fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Scales to unit length; the zero vector is returned unchanged.
pub(crate) fn normalize<T: Scalar>(mut v: Vec<T>) -> Vec<T> {
    let n = norm(&v);
    if n > T::zero() {
        for x in &mut v {
            *x = *x / n;
        }
    }
    v
}
