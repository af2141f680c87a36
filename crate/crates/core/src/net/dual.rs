//! Scalar dual numbers `a + εb` with `ε² = 0`, used for forward-mode
//! derivatives through the elementwise parts of the network.

use std::ops::{Add, Mul, Neg, Sub};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub primal: f64,
    pub tangent: f64,
}

const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
// 1 / sqrt(2π)
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x Φ(x)`.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

/// `d/dx [x Φ(x)] = Φ(x) + x φ(x)`.
#[inline]
pub fn gelu_prime(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// `(gelu(x), gelu_prime(x))` sharing one `erf`; bitwise equal to the separate calls.
#[inline]
pub fn gelu_with_prime(x: f64) -> (f64, f64) {
    let e1 = 1.0 + libm::erf(x * FRAC_1_SQRT_2);
    (0.5 * x * e1, 0.5 * e1 + x * INV_SQRT_2PI * (-0.5 * x * x).exp())
}

impl Dual {
    pub const fn new(primal: f64, tangent: f64) -> Self {
        Self { primal, tangent }
    }

    pub const fn constant(primal: f64) -> Self {
        Self { primal, tangent: 0.0 }
    }

    pub const fn variable(primal: f64) -> Self {
        Self { primal, tangent: 1.0 }
    }

    #[inline]
    pub fn gelu(self) -> Self {
        Self::new(gelu(self.primal), gelu_prime(self.primal) * self.tangent)
    }

    #[inline]
    pub fn exp(self) -> Self {
        let e = self.primal.exp();
        Self::new(e, e * self.tangent)
    }

    #[inline]
    pub fn scale(self, c: f64) -> Self {
        Self::new(c * self.primal, c * self.tangent)
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.primal + rhs.primal, self.tangent + rhs.tangent)
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.primal - rhs.primal, self.tangent - rhs.tangent)
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, rhs: Self) -> Self {
        Self::new(self.primal * rhs.primal, self.primal * rhs.tangent + self.tangent * rhs.primal)
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.primal, -self.tangent)
    }
}
