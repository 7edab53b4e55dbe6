//! Scalar abstraction shared by every numerical module.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar the simulator can run on (`f32` or `f64`).
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Panics only if the target cannot represent it at all.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable in scalar type")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
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

/// CODATA 2018 exact SI constants and a few derived ones.
pub mod consts {
    /// Boltzmann constant, J/K.
    pub const K_B: f64 = 1.380_649e-23;
    /// Reduced Planck constant, J·s.
    pub const HBAR: f64 = 1.054_571_817e-34;
    /// Atomic mass unit, kg.
    pub const AMU: f64 = 1.660_539_066_60e-27;
}

/// Hermite smoothstep on `[0, 1]`, clamped outside.
#[inline]
pub fn smoothstep<T: Real>(u: T) -> T {
    if u <= T::zero() {
        T::zero()
    } else if u >= T::one() {
        T::one()
    } else {
        u * u * (T::lit(3.0) - T::two() * u)
    }
}

/// Derivative of [`smoothstep`] with respect to its argument.
#[inline]
pub fn smoothstep_deriv<T: Real>(u: T) -> T {
    if u <= T::zero() || u >= T::one() {
        T::zero()
    } else {
        T::lit(6.0) * u * (T::one() - u)
    }
}

/// Window that is exactly one on `[lo, hi]` and falls smoothly to zero over `edge` outside it.
/// Returns `(value, d value / du)`.
#[inline]
pub fn window<T: Real>(u: T, lo: T, hi: T, edge: T) -> (T, T) {
    let a = (u - lo + edge) / edge;
    let b = (hi + edge - u) / edge;
    let (sa, sb) = (smoothstep(a), smoothstep(b));
    let d = smoothstep_deriv(a) * sb / edge - sa * smoothstep_deriv(b) / edge;
    (sa * sb, d)
}
