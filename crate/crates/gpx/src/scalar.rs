//! Scalar abstraction for the numeric core.
//!
//! Expression evaluation, fitness, fidelity metrics and the closed-form
//! solvers are generic over [`Real`]; the crate root exports concrete
//! `f64` aliases for everyday use.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar usable throughout the numeric core.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Display + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, for literals and configuration values.
    fn from_config(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal must convert into the scalar type")
    }
}

impl<T> Real for T where
    T: Float + FromPrimitive + ToPrimitive + Sum + Display + Debug + Send + Sync + 'static
{
}
