//! Rotations, twists, wrenches and their Adjoint actions.
//!
//! Twists are stacked angular-first, `(omega; v)`, and wrenches torque-first,
//! `(tau; F)`, so the power pairing is a plain dot product of the two stacks.

use nalgebra::{Matrix3, Matrix6, Rotation3, Vector3, Vector6};
use std::ops::{Add, Mul, Neg, Sub};

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Mat6 = Matrix6<f64>;
pub type Rotation = Rotation3<f64>;

const SERIES_EPS: f64 = 1e-6;

pub fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

/// Inverse of [`skew`]; ignores the symmetric part of `m`.
pub fn unskew(m: &Mat3) -> Vec3 {
    0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Exponential map so(3) -> SO(3) (Rodrigues).
pub fn exp_so3(theta: &Vec3) -> Rotation {
    let t2 = theta.norm_squared();
    let t = t2.sqrt();
    let (a, b) = if t < SERIES_EPS {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (t.sin() / t, (1.0 - t.cos()) / t2)
    };
    let k = skew(theta);
    Rotation::from_matrix_unchecked(Mat3::identity() + a * k + b * k * k)
}

/// Logarithm SO(3) -> so(3), valid for rotation angles below pi.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let t = c.acos();
    let w = unskew(m);
    if t < SERIES_EPS {
        w * (1.0 + t * t / 6.0)
    } else {
        w * (t / t.sin())
    }
}

/// Right (body) Jacobian of the exponential map: `omega_body = J(theta) * theta_dot`.
///
/// `J = I - (1 - cos t)/t^2 K + (t - sin t)/t^3 K^2` with `K = skew(theta)`.
pub fn body_jacobian(theta: &Vec3) -> Mat3 {
    let t2 = theta.norm_squared();
    let t = t2.sqrt();
    let (a, b) = if t < SERIES_EPS {
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        ((1.0 - t.cos()) / t2, (t - t.sin()) / (t2 * t))
    };
    let k = skew(theta);
    Mat3::identity() - a * k + b * k * k
}

/// Closed-form inverse of [`body_jacobian`], valid for `|theta| < 2 pi`.
pub fn body_jacobian_inv(theta: &Vec3) -> Mat3 {
    let t2 = theta.norm_squared();
    let t = t2.sqrt();
    let c = if t < SERIES_EPS {
        1.0 / 12.0 + t2 / 720.0
    } else {
        1.0 / t2 - (1.0 + t.cos()) / (2.0 * t * t.sin())
    };
    let k = skew(theta);
    Mat3::identity() + 0.5 * k + c * k * k
}

/// Rotation about a unit axis.
pub fn axis_rotation(axis: &Vec3, angle: f64) -> Rotation {
    exp_so3(&(axis * angle))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub omega: Vec3,
    pub v: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub tau: Vec3,
    pub force: Vec3,
}

macro_rules! six_vector {
    ($t:ident, $a:ident, $b:ident) => {
        impl $t {
            pub const fn new($a: Vec3, $b: Vec3) -> Self {
                Self { $a, $b }
            }

            pub fn zero() -> Self {
                Self::default()
            }

            pub fn from_vec6(x: &Vec6) -> Self {
                Self {
                    $a: x.fixed_rows::<3>(0).into_owned(),
                    $b: x.fixed_rows::<3>(3).into_owned(),
                }
            }

            pub fn to_vec6(&self) -> Vec6 {
                let mut x = Vec6::zeros();
                x.fixed_rows_mut::<3>(0).copy_from(&self.$a);
                x.fixed_rows_mut::<3>(3).copy_from(&self.$b);
                x
            }

            pub fn is_finite(&self) -> bool {
                self.$a.iter().chain(self.$b.iter()).all(|x| x.is_finite())
            }
        }

        impl Add for $t {
            type Output = Self;
            fn add(self, o: Self) -> Self {
                Self::new(self.$a + o.$a, self.$b + o.$b)
            }
        }

        impl Sub for $t {
            type Output = Self;
            fn sub(self, o: Self) -> Self {
                Self::new(self.$a - o.$a, self.$b - o.$b)
            }
        }

        impl Neg for $t {
            type Output = Self;
            fn neg(self) -> Self {
                Self::new(-self.$a, -self.$b)
            }
        }

        impl Mul<f64> for $t {
            type Output = Self;
            fn mul(self, s: f64) -> Self {
                Self::new(self.$a * s, self.$b * s)
            }
        }
    };
}

six_vector!(Twist, omega, v);
six_vector!(Wrench, tau, force);

/// Rigid transform acting on twists as `[[R, 0], [r~ R, R]]`.
///
/// `rot` maps source-frame components to target-frame components and `r` is
/// the source origin expressed in the target frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointTransform {
    pub rot: Rotation,
    pub r: Vec3,
}

impl AdjointTransform {
    pub fn new(rot: Rotation, r: Vec3) -> Self {
        Self { rot, r }
    }

    pub fn identity() -> Self {
        Self { rot: Rotation::identity(), r: Vec3::zeros() }
    }

    pub fn matrix(&self) -> Mat6 {
        let r = *self.rot.matrix();
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&self.r) * r));
        m
    }

    /// `Ad^{-T}`, the action on wrenches.
    pub fn coadjoint_matrix(&self) -> Mat6 {
        let r = *self.rot.matrix();
        let mut m = Mat6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
        m.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&self.r) * r));
        m
    }

    /// `self ∘ other`: first `other`, then `self`.
    pub fn compose(&self, other: &AdjointTransform) -> AdjointTransform {
        AdjointTransform { rot: self.rot * other.rot, r: self.r + self.rot * other.r }
    }

    pub fn inverse(&self) -> AdjointTransform {
        let rt = self.rot.inverse();
        AdjointTransform { rot: rt, r: -(rt * self.r) }
    }
}

pub fn adjoint_apply(a: &AdjointTransform, v: &Twist) -> Twist {
    let omega = a.rot * v.omega;
    Twist { omega, v: a.rot * v.v + a.r.cross(&omega) }
}

pub fn coadjoint_apply(a: &AdjointTransform, w: &Wrench) -> Wrench {
    let force = a.rot * w.force;
    Wrench { tau: a.rot * w.tau + a.r.cross(&force), force }
}

pub fn small_adjoint(v: &Twist) -> Mat6 {
    let w = skew(&v.omega);
    let mut m = Mat6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(&v.v));
    m
}

/// `[[I, 0], [r~, I]]`.
pub fn point_shift(r: &Vec3) -> Mat6 {
    let mut m = Mat6::identity();
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&skew(r));
    m
}

pub fn pairing(w: &Wrench, v: &Twist) -> f64 {
    w.tau.dot(&v.omega) + w.force.dot(&v.v)
}
