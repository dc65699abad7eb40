//! Scalar abstraction and the small fixed-size linear algebra the pipeline runs on.
//!
//! Everything numeric is generic over [`Real`] so the exact same code paths can run
//! in `f32` (training) and `f64` (gradient checking).

use num_traits::{Float, FromPrimitive};
use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

/// Floating-point scalar for the whole pipeline.
pub trait Real:
    Float
    + FromPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Display
    + Debug
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Lower an `f64` constant into the active scalar type.
#[inline(always)]
pub fn cst<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("constant not representable")
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Inverse of [`sigmoid`]; `p` must lie strictly inside (0, 1).
#[inline]
pub fn logit<T: Real>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

// ---------------------------------------------------------------------------
// Vectors
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec2<T> {
    pub x: T,
    pub y: T,
}

impl<T: Real> Vec2<T> {
    #[inline]
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::new(T::zero(), T::zero())
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Vec3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Vec3<T> {
    #[inline]
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    #[inline]
    pub fn zero() -> Self {
        Self::splat(T::zero())
    }

    #[inline]
    pub fn splat(v: T) -> Self {
        Self::new(v, v, v)
    }

    #[inline]
    pub fn dot(self, o: Self) -> T {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Self) -> Self {
        Self::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm(self) -> T {
        self.dot(self).sqrt()
    }

    /// Unit vector, or `fallback` when the norm underflows.
    #[inline]
    pub fn normalized_or(self, fallback: Self) -> Self {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            self * n.recip()
        } else {
            fallback
        }
    }

    /// Component-wise product.
    #[inline]
    pub fn comp_mul(self, o: Self) -> Self {
        Self::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    #[inline]
    pub fn map(self, f: impl Fn(T) -> T) -> Self {
        Self::new(f(self.x), f(self.y), f(self.z))
    }

    #[inline]
    pub fn min_comp(self, o: Self) -> Self {
        Self::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    #[inline]
    pub fn max_comp(self, o: Self) -> Self {
        Self::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    #[inline]
    pub fn max_element(self) -> T {
        self.x.max(self.y).max(self.z)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }

    pub fn cast<U: Real>(self) -> Vec3<U> {
        Vec3::new(
            cst(self.x.to_f64().unwrap()),
            cst(self.y.to_f64().unwrap()),
            cst(self.z.to_f64().unwrap()),
        )
    }
}

impl<T: Real> From<[T; 3]> for Vec3<T> {
    fn from(a: [T; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}

macro_rules! vec_ops {
    ($ty:ident { $($f:ident),+ }) => {
        impl<T: Real> Add for $ty<T> {
            type Output = Self;
            #[inline]
            fn add(self, o: Self) -> Self {
                Self { $($f: self.$f + o.$f),+ }
            }
        }
        impl<T: Real> Sub for $ty<T> {
            type Output = Self;
            #[inline]
            fn sub(self, o: Self) -> Self {
                Self { $($f: self.$f - o.$f),+ }
            }
        }
        impl<T: Real> Neg for $ty<T> {
            type Output = Self;
            #[inline]
            fn neg(self) -> Self {
                Self { $($f: -self.$f),+ }
            }
        }
        impl<T: Real> Mul<T> for $ty<T> {
            type Output = Self;
            #[inline]
            fn mul(self, s: T) -> Self {
                Self { $($f: self.$f * s),+ }
            }
        }
        impl<T: Real> AddAssign for $ty<T> {
            #[inline]
            fn add_assign(&mut self, o: Self) {
                $(self.$f += o.$f;)+
            }
        }
    };
}

vec_ops!(Vec2 { x, y });
vec_ops!(Vec3 { x, y, z });

// ---------------------------------------------------------------------------
// Matrices
// ---------------------------------------------------------------------------

/// Row-major 3x3 matrix.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Mat3<T> {
    pub m: [[T; 3]; 3],
}

impl<T: Real> Mat3<T> {
    pub fn zeros() -> Self {
        Self {
            m: [[T::zero(); 3]; 3],
        }
    }

    pub fn identity() -> Self {
        let mut r = Self::zeros();
        for i in 0..3 {
            r.m[i][i] = T::one();
        }
        r
    }

    pub fn from_diagonal(d: Vec3<T>) -> Self {
        let mut r = Self::zeros();
        r.m[0][0] = d.x;
        r.m[1][1] = d.y;
        r.m[2][2] = d.z;
        r
    }

    pub fn transpose(&self) -> Self {
        let mut r = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = self.m[j][i];
            }
        }
        r
    }

    pub fn matmul(&self, o: &Self) -> Self {
        let mut r = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut s = T::zero();
                for k in 0..3 {
                    s += self.m[i][k] * o.m[k][j];
                }
                r.m[i][j] = s;
            }
        }
        r
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3<T>) -> Vec3<T> {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    /// Frobenius inner product.
    pub fn frob_dot(&self, o: &Self) -> T {
        let mut s = T::zero();
        for i in 0..3 {
            for j in 0..3 {
                s += self.m[i][j] * o.m[i][j];
            }
        }
        s
    }

    pub fn outer(a: Vec3<T>, b: Vec3<T>) -> Self {
        let a = a.to_array();
        let b = b.to_array();
        let mut r = Self::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = a[i] * b[j];
            }
        }
        r
    }

    pub fn add(&self, o: &Self) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] += o.m[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: T) -> Self {
        let mut r = *self;
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] *= s;
            }
        }
        r
    }

    pub fn row(&self, i: usize) -> Vec3<T> {
        Vec3::new(self.m[i][0], self.m[i][1], self.m[i][2])
    }

    pub fn col(&self, j: usize) -> Vec3<T> {
        Vec3::new(self.m[0][j], self.m[1][j], self.m[2][j])
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Mat3<U> {
        let mut r = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                r.m[i][j] = cst(self.m[i][j].to_f64().unwrap());
            }
        }
        r
    }
}

/// Symmetric 2x2 matrix stored as its three independent entries.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Real> Sym2<T> {
    pub fn det(self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    /// Inverse; caller guarantees positive determinant.
    pub fn inverse(self) -> Self {
        let inv_det = self.det().recip();
        Sym2 {
            xx: self.yy * inv_det,
            xy: -self.xy * inv_det,
            yy: self.xx * inv_det,
        }
    }

    pub fn largest_eigenvalue(self) -> T {
        let mid = cst::<T>(0.5) * (self.xx + self.yy);
        let disc = (mid * mid - self.det()).max(T::zero());
        mid + disc.sqrt()
    }

    pub fn to_full(self) -> [[T; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }
}

/// 2x3 matrix as two rows.
pub type Mat23<T> = [[T; 3]; 2];

/// `M * v` for a 2x3 matrix.
#[inline]
pub fn mat23_mul_vec3<T: Real>(m: &Mat23<T>, v: Vec3<T>) -> Vec2<T> {
    Vec2::new(
        m[0][0] * v.x + m[0][1] * v.y + m[0][2] * v.z,
        m[1][0] * v.x + m[1][1] * v.y + m[1][2] * v.z,
    )
}

/// `M^T * v` for a 2x3 matrix.
#[inline]
pub fn mat23_t_mul_vec2<T: Real>(m: &Mat23<T>, v: Vec2<T>) -> Vec3<T> {
    Vec3::new(
        m[0][0] * v.x + m[1][0] * v.y,
        m[0][1] * v.x + m[1][1] * v.y,
        m[0][2] * v.x + m[1][2] * v.y,
    )
}

/// `A * B` with A 2x3 and B 3x3.
pub fn mat23_mul_mat3<T: Real>(a: &Mat23<T>, b: &Mat3<T>) -> Mat23<T> {
    let mut r = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            let mut s = T::zero();
            for k in 0..3 {
                s += a[i][k] * b.m[k][j];
            }
            r[i][j] = s;
        }
    }
    r
}

/// `V * M * V^T` reduced to its symmetric 2x2 form (M symmetric).
pub fn sandwich_23<T: Real>(v: &Mat23<T>, m: &Mat3<T>) -> Sym2<T> {
    let vm = mat23_mul_mat3(v, m);
    let dot = |a: &[T; 3], b: &[T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    Sym2 {
        xx: dot(&vm[0], &v[0]),
        xy: dot(&vm[0], &v[1]),
        yy: dot(&vm[1], &v[1]),
    }
}

/// `G * V` with G full 2x2 and V 2x3.
pub fn mat2_mul_mat23<T: Real>(g: &[[T; 2]; 2], v: &Mat23<T>) -> Mat23<T> {
    let mut r = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            r[i][j] = g[i][0] * v[0][j] + g[i][1] * v[1][j];
        }
    }
    r
}

/// `V^T * G * V` as a full 3x3 matrix (V 2x3, G full 2x2).
pub fn vt_g_v<T: Real>(v: &Mat23<T>, g: &[[T; 2]; 2]) -> Mat3<T> {
    let gv = mat2_mul_mat23(g, v);
    let mut r = Mat3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            r.m[i][j] = v[0][i] * gv[0][j] + v[1][i] * gv[1][j];
        }
    }
    r
}

// ---------------------------------------------------------------------------
// Quaternions
// ---------------------------------------------------------------------------

/// Quaternion stored (w, x, y, z); kept unnormalized, normalized on use.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quat<T> {
    pub w: T,
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Quat<T> {
    pub fn new(w: T, x: T, y: T, z: T) -> Self {
        Self { w, x, y, z }
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero(), T::zero(), T::zero())
    }

    pub fn norm(self) -> T {
        (self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn normalized(self) -> Self {
        let n = self.norm();
        if n > T::zero() && n.is_finite() {
            let inv = n.recip();
            Self::new(self.w * inv, self.x * inv, self.y * inv, self.z * inv)
        } else {
            Self::identity()
        }
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn rotation_matrix(self) -> Mat3<T> {
        let q = self.normalized();
        let (w, x, y, z) = (q.w, q.x, q.y, q.z);
        let two = cst::<T>(2.0);
        Mat3 {
            m: [
                [
                    T::one() - two * (y * y + z * z),
                    two * (x * y - w * z),
                    two * (x * z + w * y),
                ],
                [
                    two * (x * y + w * z),
                    T::one() - two * (x * x + z * z),
                    two * (y * z - w * x),
                ],
                [
                    two * (x * z - w * y),
                    two * (y * z + w * x),
                    T::one() - two * (x * x + y * y),
                ],
            ],
        }
    }

    pub fn to_array(self) -> [T; 4] {
        [self.w, self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn cast<U: Real>(self) -> Quat<U> {
        Quat::new(
            cst(self.w.to_f64().unwrap()),
            cst(self.x.to_f64().unwrap()),
            cst(self.y.to_f64().unwrap()),
            cst(self.z.to_f64().unwrap()),
        )
    }
}

impl<T: Real> From<[T; 4]> for Quat<T> {
    fn from(a: [T; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

// ---------------------------------------------------------------------------
// Axis-aligned bounding box
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Aabb<T> {
    pub min: Vec3<T>,
    pub max: Vec3<T>,
}

impl<T: Real> Aabb<T> {
    pub fn new(min: Vec3<T>, max: Vec3<T>) -> Self {
        Self { min, max }
    }

    /// Unit cube centered at the origin, edge length 2.
    pub fn unit() -> Self {
        Self::new(Vec3::splat(-T::one()), Vec3::splat(T::one()))
    }

    pub fn from_points<I: IntoIterator<Item = Vec3<T>>>(points: I) -> Option<Self> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut bb = Self::new(first, first);
        for p in it {
            bb.min = bb.min.min_comp(p);
            bb.max = bb.max.max_comp(p);
        }
        Some(bb)
    }

    /// Grown by `frac` of its extent on every side (degenerate axes get a floor).
    pub fn expanded(&self, frac: T) -> Self {
        let ext = self.extent();
        let floor = cst::<T>(1e-3);
        let pad = Vec3::new(
            (ext.x * frac).max(floor),
            (ext.y * frac).max(floor),
            (ext.z * frac).max(floor),
        );
        Self::new(self.min - pad, self.max + pad)
    }

    pub fn extent(&self) -> Vec3<T> {
        self.max - self.min
    }

    pub fn diagonal(&self) -> T {
        self.extent().norm()
    }

    pub fn center(&self) -> Vec3<T> {
        (self.min + self.max) * cst(0.5)
    }

    /// Map a point into [0,1]^3, clamping points outside the box.
    pub fn normalize_clamped(&self, p: Vec3<T>) -> Vec3<T> {
        let ext = self.extent();
        let f = |v: T, lo: T, e: T| {
            if e > T::zero() {
                ((v - lo) / e).max(T::zero()).min(T::one())
            } else {
                T::zero()
            }
        };
        Vec3::new(
            f(p.x, self.min.x, ext.x),
            f(p.y, self.min.y, ext.y),
            f(p.z, self.min.z, ext.z),
        )
    }

    pub fn cast<U: Real>(&self) -> Aabb<U> {
        Aabb::new(self.min.cast(), self.max.cast())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quaternion_rotation_is_orthonormal() {
        let q = Quat::new(0.3f64, -0.5, 0.7, 0.2);
        let r = q.rotation_matrix();
        let rtr = r.transpose().matmul(&r);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_relative_eq!(rtr.m[i][j], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn sym2_inverse_roundtrip() {
        let s = Sym2 {
            xx: 2.0f64,
            xy: 0.3,
            yy: 1.5,
        };
        let inv = s.inverse();
        let prod_xx = s.xx * inv.xx + s.xy * inv.xy;
        let prod_xy = s.xx * inv.xy + s.xy * inv.yy;
        assert_relative_eq!(prod_xx, 1.0, epsilon = 1e-12);
        assert_relative_eq!(prod_xy, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn aabb_normalize_clamps() {
        let bb = Aabb::new(Vec3::new(0.0f32, 0.0, 0.0), Vec3::new(2.0, 2.0, 2.0));
        let p = bb.normalize_clamped(Vec3::new(1.0, -5.0, 7.0));
        assert_eq!(p, Vec3::new(0.5, 0.0, 1.0));
    }

    #[test]
    fn sigmoid_logit_inverse() {
        for &x in &[-5.0f64, -0.2, 0.0, 1.3, 8.0] {
            assert_relative_eq!(logit(sigmoid(x)), x, epsilon = 1e-9);
        }
    }
}
