use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point scalar the engine is generic over: `f32` or `f64`.
///
/// `Display` must print the shortest decimal that parses back to the same
/// value; the text formats rely on it for lossless round-trips.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only for non-representable input,
    /// which cannot happen for the two implementors.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable in scalar type")
    }

    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable in scalar type")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Index of the largest element, lowest index on ties. `None` for empty input.
pub fn argmax<T: Scalar>(values: &[T]) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn l2_norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Scales `v` to unit L2 norm in place.
///
/// Vectors already within a few ulps of unit norm are left untouched, so the
/// operation is exactly idempotent. Returns `false` for zero or non-finite
/// norms (the vector is then unchanged).
pub fn normalize_in_place<T: Scalar>(v: &mut [T]) -> bool {
    let tol = T::epsilon() * T::lit(4.0) * T::from_usize_lossy(v.len().max(1)).sqrt();
    for _ in 0..4 {
        let norm = l2_norm(v);
        if !norm.is_finite() || norm <= T::zero() {
            return false;
        }
        if (norm - T::one()).abs() <= tol {
            return true;
        }
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    true
}
