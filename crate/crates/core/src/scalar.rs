//! Scalar abstraction shared by every numeric module.
//!
//! All geometry, sensing, channel and beamforming code is written against
//! [`Real`], so the same pipeline runs in `f32` (fast sweeps) or `f64`
//! (reference results). The crate root exports `f64` aliases for the
//! common types.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar type.
    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("literal representable in scalar type")
    }

    /// Lossy conversion back to `f64` for reporting.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::from_usize(n).expect("count representable in scalar type")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Speed of light used throughout (m/s).
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Converts a power level in dBm into watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Converts a power level in watts into dBm.
pub fn watts_to_dbm(watts: f64) -> f64 {
    10.0 * watts.log10() + 30.0
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let two_pi = T::TAU();
    let mut r = a % two_pi;
    if r < T::zero() {
        r = r + two_pi;
    }
    // `-tiny + 2π` rounds to exactly 2π.
    if r >= two_pi {
        r = T::zero();
    }
    r
}
