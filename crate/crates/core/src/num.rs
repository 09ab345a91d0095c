//! Scalar abstraction shared by the geometry, dynamics, loss and kernel code.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Real scalar usable throughout the numeric core: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Converts an `f64` constant; exact for `f64`, rounded for `f32`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    #[inline]
    fn two() -> Self {
        Self::one() + Self::one()
    }

    #[inline]
    fn half() -> Self {
        Self::lit(0.5)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle<T: Real>(a: T) -> T {
    let pi = T::PI();
    let two_pi = pi + pi;
    if a > -pi && a <= pi {
        return a;
    }
    let mut r = a % two_pi;
    if r <= -pi {
        r = r + two_pi;
    } else if r > pi {
        r = r - two_pi;
    }
    r
}

/// Signed shortest-arc difference `to - from`, in `(-pi, pi]`.
pub fn angle_diff<T: Real>(to: T, from: T) -> T {
    wrap_angle(to - from)
}

/// Shortest-arc interpolation between two headings.
pub fn lerp_angle<T: Real>(a: T, b: T, alpha: T) -> T {
    wrap_angle(a + angle_diff(b, a) * alpha)
}

#[inline]
pub fn lerp<T: Real>(a: T, b: T, alpha: T) -> T {
    a + (b - a) * alpha
}
