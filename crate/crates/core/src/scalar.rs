use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating point type the solver core is generic over.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Constraint satisfaction tolerance.
    fn feas_tol() -> Self;
    /// Distance from 0/1 at which a binary counts as integral.
    fn int_tol() -> Self;
    /// Smallest acceptable pivot magnitude.
    fn pivot_tol() -> Self;
    /// Entries below this are flushed to zero in the tableau.
    fn drop_tol() -> Self;

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits scalar type")
    }
}

impl Scalar for f64 {
    fn feas_tol() -> Self {
        1e-6
    }
    fn int_tol() -> Self {
        1e-6
    }
    fn pivot_tol() -> Self {
        1e-9
    }
    fn drop_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn feas_tol() -> Self {
        1e-3
    }
    fn int_tol() -> Self {
        1e-4
    }
    fn pivot_tol() -> Self {
        1e-5
    }
    fn drop_tol() -> Self {
        1e-7
    }
}
