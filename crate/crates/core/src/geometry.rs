//! Minimal 3-vector used for world points and directions (millimetres).

use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// A 3-vector, serialized as a JSON array `[x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[T; 3]", into = "[T; 3]")]
#[serde(bound = "T: Real")]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> From<[T; 3]> for Vec3<T> {
    fn from(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

impl<T: Real> From<Vec3<T>> for [T; 3] {
    fn from(v: Vec3<T>) -> Self {
        [v.x, v.y, v.z]
    }
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero(), T::zero())
    }

    pub fn x_axis() -> Self {
        Self::new(T::one(), T::zero(), T::zero())
    }

    pub fn y_axis() -> Self {
        Self::new(T::zero(), T::one(), T::zero())
    }

    pub fn z_axis() -> Self {
        Self::new(T::zero(), T::zero(), T::one())
    }

    /// Unit vector along world axis `0`, `1` or `2`.
    pub fn axis(i: usize) -> Self {
        match i {
            0 => Self::x_axis(),
            1 => Self::y_axis(),
            _ => Self::z_axis(),
        }
    }

    #[inline]
    pub fn dot(&self, o: &Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(&self, o: &Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm_squared(&self) -> T {
        self.dot(self)
    }

    #[inline]
    pub fn norm(&self) -> T {
        self.norm_squared().sqrt()
    }

    /// Returns `None` when the norm is not above `eps`.
    pub fn try_normalize(&self, eps: T) -> Option<Self> {
        let n = self.norm();
        if n > eps && n.is_finite() {
            Some(*self * (T::one() / n))
        } else {
            None
        }
    }

    pub fn distance(&self, o: &Self) -> T {
        (*self - *o).norm()
    }

    pub fn component_mul(&self, o: &Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn component_div(&self, o: &Self) -> Self {
        Self::new(self.x / o.x, self.y / o.y, self.z / o.z)
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Vec3<U> {
        Vec3::new(f(self.x), f(self.y), f(self.z))
    }

    pub fn cast<U: Real>(&self) -> Vec3<U> {
        self.map(|c| U::lit(c.as_f64()))
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        self.into()
    }

    /// Component-wise minimum.
    pub fn inf(&self, o: &Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    /// Component-wise maximum.
    pub fn sup(&self, o: &Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    /// Acute angle to `o` in degrees, ignoring sign: `acos(min(1, |a·b|))`.
    /// Both vectors are expected to be unit length.
    pub fn acute_angle_deg(&self, o: &Self) -> T {
        self.dot(o).abs().min(T::one()).acos().to_degrees()
    }
}

impl<T: Real> Index<usize> for Vec3<T> {
    type Output = T;
    fn index(&self, i: usize) -> &T {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl<T: Real> Add for Vec3<T> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl<T: Real> AddAssign for Vec3<T> {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real> Sub for Vec3<T> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl<T: Real> Mul<T> for Vec3<T> {
    type Output = Self;
    #[inline]
    fn mul(self, s: T) -> Self {
        Self::new(self.x * s, self.y * s, self.z * s)
    }
}

impl<T: Real> Neg for Vec3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y, -self.z)
    }
}
