//! Floating-point abstraction used by every numerical kernel in this crate.
//!
//! All algorithms are written against [`Scalar`] so the same code runs in
//! `f32` and `f64`.  Concrete `f64` aliases for the main types live at the
//! crate root; `f32` is mostly useful for quick experiments and for checking
//! that an algorithm's accuracy claims are not precision flukes.

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::{de::DeserializeOwned, Serialize};
use std::fmt::{Debug, Display, LowerExp};
use std::iter::Sum;
use std::ops::{AddAssign, SubAssign};

/// Scalar type for the numerical kernels: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + Serialize
    + DeserializeOwned
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` constant.  Panics only when the value is not
    /// representable, which no constant used by this crate is.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("constant representable in scalar type")
    }

    /// Widens to `f64` for reporting and error messages.
    fn lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
