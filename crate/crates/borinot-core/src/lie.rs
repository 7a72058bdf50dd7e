//! Minimal SO(3)/SE(3) manifold arithmetic.
//!
//! Rotations are unit quaternions kept in canonical form (`w >= 0`, so the
//! double cover never leaks out) and renormalized after every composition.
//! Poses compose rotation and translation with the usual SE(3) group law.
//!
//! The retraction pair `boxplus`/`boxminus` uses the *right* perturbation
//! convention throughout the crate:
//!
//! ```text
//! p ⊕ v = p ∘ exp(v)          a ⊖ b = log(b⁻¹ ∘ a)
//! ```
//!
//! so `(b ⊕ v) ⊖ b = v` and tangent vectors live in the body frame of the
//! base pose. Tangent vectors store the linear part first, `[lin; ang]`.
//!
//! Angles below `1e-5` rad switch to second-order Taylor expansions of the
//! trigonometric coefficients; the SO(3) log at exactly pi resolves the axis
//! sign ambiguity by making the largest-magnitude axis component positive.

use nalgebra::{Matrix3, Matrix6, Quaternion, Vector3, Vector6};

use crate::scalar::Real;

/// Angle threshold below which Taylor expansions replace closed forms.
const TAYLOR_EPS: f64 = 1e-5;

/// Element of the tangent space of SE(3): linear part first, angular second.
///
/// Units depend on context: (m, rad) for pose increments, (m/s, rad/s) for
/// twists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Tangent6<S: Real> {
    pub linear: Vector3<S>,
    pub angular: Vector3<S>,
}

impl<S: Real> Tangent6<S> {
    pub fn new(linear: Vector3<S>, angular: Vector3<S>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector(v: &Vector6<S>) -> Self {
        Self::new(v.fixed_rows::<3>(0).into(), v.fixed_rows::<3>(3).into())
    }

    pub fn as_vector(&self) -> Vector6<S> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.angular);
        v
    }

    pub fn scaled(&self, s: S) -> Self {
        Self::new(self.linear * s, self.angular * s)
    }

    pub fn norm(&self) -> S {
        (self.linear.norm_squared() + self.angular.norm_squared()).sqrt()
    }
}

impl<S: Real> std::ops::Add for Tangent6<S> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.linear + rhs.linear, self.angular + rhs.angular)
    }
}

impl<S: Real> std::ops::Sub for Tangent6<S> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.linear - rhs.linear, self.angular - rhs.angular)
    }
}

impl<S: Real> std::ops::Neg for Tangent6<S> {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.linear, -self.angular)
    }
}

/// 3D rotation as a canonical unit quaternion (`w >= 0`, unit norm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation<S: Real> {
    q: Quaternion<S>,
}

impl<S: Real> Rotation<S> {
    pub fn identity() -> Self {
        Self {
            q: Quaternion::new(S::one(), S::zero(), S::zero(), S::zero()),
        }
    }

    /// Build from raw quaternion components; normalizes and canonicalizes.
    pub fn from_quaternion(w: S, x: S, y: S, z: S) -> Self {
        Self::canonical(Quaternion::new(w, x, y, z))
    }

    pub fn from_axis_angle(axis: &Vector3<S>, angle: S) -> Self {
        let n = axis.norm();
        if n == S::zero() {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    fn canonical(q: Quaternion<S>) -> Self {
        let mut q = q / q.norm();
        if q.w < S::zero() {
            q = -q;
        }
        Self { q }
    }

    pub fn quaternion(&self) -> &Quaternion<S> {
        &self.q
    }

    /// (w, x, y, z) components of the canonical quaternion.
    pub fn wxyz(&self) -> [S; 4] {
        [self.q.w, self.q.i, self.q.j, self.q.k]
    }

    pub fn inverse(&self) -> Self {
        // Unit quaternion: inverse is the conjugate. w is preserved, so the
        // result stays canonical.
        Self { q: self.q.conjugate() }
    }

    pub fn matrix(&self) -> Matrix3<S> {
        let (w, x, y, z) = (self.q.w, self.q.i, self.q.j, self.q.k);
        let two = S::scalar(2.0);
        Matrix3::new(
            S::one() - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
            two * (x * y + w * z),
            S::one() - two * (x * x + z * z),
            two * (y * z - w * x),
            two * (x * z - w * y),
            two * (y * z + w * x),
            S::one() - two * (x * x + y * y),
        )
    }

    /// Rotation angle in [0, pi].
    pub fn angle(&self) -> S {
        let n = self.q.imag().norm();
        S::scalar(2.0) * n.atan2(self.q.w)
    }

    /// SO(3) exponential: axis-angle vector to rotation.
    pub fn exp(omega: &Vector3<S>) -> Self {
        let theta = omega.norm();
        let half = theta * S::scalar(0.5);
        // sin(theta/2)/theta, Taylor below the threshold.
        let k = if theta < S::scalar(TAYLOR_EPS) {
            S::scalar(0.5) - theta * theta * S::scalar(1.0 / 48.0)
        } else {
            half.sin() / theta
        };
        let v = omega * k;
        Self::canonical(Quaternion::new(half.cos(), v.x, v.y, v.z))
    }

    /// SO(3) logarithm: axis-angle vector with angle in [0, pi].
    pub fn log(&self) -> Vector3<S> {
        let v = self.q.imag();
        let n = v.norm();
        let w = self.q.w;
        if n < S::scalar(TAYLOR_EPS) {
            // theta/n = 2/w * (1 - n^2/(3 w^2)) to second order.
            let r = n / w;
            return v * (S::scalar(2.0) / w) * (S::one() - r * r / S::scalar(3.0));
        }
        let theta = S::scalar(2.0) * n.atan2(w);
        let mut axis_angle = v * (theta / n);
        if w < S::scalar(1e-9) {
            // Angle at (or numerically at) pi: both +axis and -axis encode the
            // same rotation. Pick the axis whose largest component is positive.
            let a = axis_angle;
            let mut dominant = a.x;
            if a.y.abs() > dominant.abs() {
                dominant = a.y;
            }
            if a.z.abs() > dominant.abs() {
                dominant = a.z;
            }
            if dominant < S::zero() {
                axis_angle = -axis_angle;
            }
        }
        axis_angle
    }
}

impl<S: Real> std::ops::Mul for Rotation<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::canonical(self.q * rhs.q)
    }
}

impl<S: Real> std::ops::Mul<Vector3<S>> for Rotation<S> {
    type Output = Vector3<S>;
    fn mul(self, v: Vector3<S>) -> Vector3<S> {
        // q v q* expanded: v + 2 w (im x v) + 2 im x (im x v)
        let im = self.q.imag();
        let t = im.cross(&v) * S::scalar(2.0);
        v + t * self.q.w + im.cross(&t)
    }
}

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<S: Real> {
    pub rotation: Rotation<S>,
    pub translation: Vector3<S>,
}

impl<S: Real> Pose<S> {
    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation<S>, translation: Vector3<S>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(translation: Vector3<S>) -> Self {
        Self::new(Rotation::identity(), translation)
    }

    pub fn inverse(&self) -> Self {
        let rinv = self.rotation.inverse();
        Self::new(rinv, -(rinv * self.translation))
    }

    /// Transform a point expressed in this pose's frame into the parent frame.
    pub fn transform_point(&self, p: &Vector3<S>) -> Vector3<S> {
        self.rotation * *p + self.translation
    }

    /// SE(3) exponential.
    pub fn exp(tau: &Tangent6<S>) -> Self {
        let rotation = Rotation::exp(&tau.angular);
        let v = so3_left_jacobian(&tau.angular);
        Self::new(rotation, v * tau.linear)
    }

    /// SE(3) logarithm, inverse of [`Pose::exp`] for angles below pi.
    pub fn log(&self) -> Tangent6<S> {
        let angular = self.rotation.log();
        let vinv = so3_left_jacobian_inv(&angular);
        Tangent6::new(vinv * self.translation, angular)
    }

    /// Right-perturbation retraction: `self ∘ exp(v)`.
    pub fn boxplus(&self, v: &Tangent6<S>) -> Self {
        *self * Self::exp(v)
    }

    /// Right-perturbation difference: `log(other⁻¹ ∘ self)`.
    pub fn boxminus(&self, other: &Self) -> Tangent6<S> {
        (other.inverse() * *self).log()
    }
}

impl<S: Real> std::ops::Mul for Pose<S> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        Self::new(
            self.rotation * rhs.rotation,
            self.rotation * rhs.translation + self.translation,
        )
    }
}

/// Skew-symmetric (cross-product) matrix of a 3-vector.
pub fn skew<S: Real>(v: &Vector3<S>) -> Matrix3<S> {
    Matrix3::new(
        S::zero(),
        -v.z,
        v.y,
        v.z,
        S::zero(),
        -v.x,
        -v.y,
        v.x,
        S::zero(),
    )
}

/// SO(3) left Jacobian: `I + B [θ]ₓ + C [θ]ₓ²` with `B = (1-cosθ)/θ²`,
/// `C = (θ-sinθ)/θ³`. Also the V-matrix of the SE(3) exponential.
pub fn so3_left_jacobian<S: Real>(theta: &Vector3<S>) -> Matrix3<S> {
    let t = theta.norm();
    let (b, c) = if t < S::scalar(TAYLOR_EPS) {
        let t2 = t * t;
        (
            S::scalar(0.5) - t2 * S::scalar(1.0 / 24.0),
            S::scalar(1.0 / 6.0) - t2 * S::scalar(1.0 / 120.0),
        )
    } else {
        let half = t * S::scalar(0.5);
        let s = half.sin();
        // 1 - cos t = 2 sin²(t/2) avoids cancellation at small angles.
        (
            S::scalar(2.0) * s * s / (t * t),
            (t - t.sin()) / (t * t * t),
        )
    };
    let sk = skew(theta);
    Matrix3::identity() + sk * b + sk * sk * c
}

/// Inverse of the SO(3) left Jacobian: `I - ½[θ]ₓ + D [θ]ₓ²`.
pub fn so3_left_jacobian_inv<S: Real>(theta: &Vector3<S>) -> Matrix3<S> {
    let t = theta.norm();
    let d = if t < S::scalar(TAYLOR_EPS) {
        S::scalar(1.0 / 12.0) + t * t * S::scalar(1.0 / 720.0)
    } else {
        // (1 - (θ/2)·cot(θ/2)) / θ², written with 2 sin²(θ/2) so it stays
        // stable all the way to θ = pi.
        let half = t * S::scalar(0.5);
        let s = half.sin();
        (S::one() - t * t.sin() / (S::scalar(4.0) * s * s)) / (t * t)
    };
    let sk = skew(theta);
    Matrix3::identity() - sk * S::scalar(0.5) + sk * sk * d
}

/// Q-block of the SE(3) left Jacobian (Barfoot's closed form).
fn se3_q_matrix<S: Real>(rho: &Vector3<S>, theta: &Vector3<S>) -> Matrix3<S> {
    let t = theta.norm();
    let t2 = t * t;
    let (c1, m2, m3) = if t < S::scalar(0.1) {
        let t4 = t2 * t2;
        (
            S::scalar(1.0 / 6.0) - t2 * S::scalar(1.0 / 120.0) + t4 * S::scalar(1.0 / 5040.0),
            -S::scalar(1.0 / 24.0) + t2 * S::scalar(1.0 / 720.0) - t4 * S::scalar(1.0 / 40320.0),
            -S::scalar(1.0 / 120.0) + t2 * S::scalar(1.0 / 5040.0) - t4 * S::scalar(1.0 / 362880.0),
        )
    } else {
        let t3 = t2 * t;
        (
            (t - t.sin()) / t3,
            (S::one() - t2 * S::scalar(0.5) - t.cos()) / (t2 * t2),
            (t - t.sin() - t3 * S::scalar(1.0 / 6.0)) / (t3 * t2),
        )
    };
    let rx = skew(rho);
    let tx = skew(theta);
    let txrx = tx * rx;
    let rxtx = rx * tx;
    let txrxtx = txrx * tx;
    let t1 = txrx + rxtx + txrxtx;
    let t2m = tx * txrx + rxtx * tx - txrxtx * S::scalar(3.0);
    let t3m = txrxtx * tx + tx * txrxtx;
    rx * S::scalar(0.5) + t1 * c1 - t2m * m2 - t3m * ((m2 - m3 * S::scalar(3.0)) * S::scalar(0.5))
}

/// Inverse of the SE(3) left Jacobian in `[lin; ang]` tangent coordinates.
pub fn se3_left_jacobian_inv<S: Real>(tau: &Tangent6<S>) -> Matrix6<S> {
    let ainv = so3_left_jacobian_inv(&tau.angular);
    let q = se3_q_matrix(&tau.linear, &tau.angular);
    let top_right = -ainv * q * ainv;
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&ainv);
    j.fixed_view_mut::<3, 3>(0, 3).copy_from(&top_right);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&ainv);
    j
}

/// Inverse of the SE(3) right Jacobian: `Jr⁻¹(τ) = Jl⁻¹(-τ)`.
///
/// This is the derivative of `log(exp(τ) ∘ exp(δ))` with respect to `δ` at
/// `δ = 0`, i.e. the Jacobian of a right-convention `boxminus` residual with
/// respect to its perturbed argument.
pub fn se3_right_jacobian_inv<S: Real>(tau: &Tangent6<S>) -> Matrix6<S> {
    se3_left_jacobian_inv(&Tangent6::new(-tau.linear, -tau.angular))
}
