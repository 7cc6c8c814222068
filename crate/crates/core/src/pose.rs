//! Rigid-body poses as unit quaternion plus translation.
//!
//! Quaternions are kept on the canonical hemisphere (scalar part >= 0) so a
//! rotation has exactly one representative and component-wise comparisons are
//! well defined. All operations return canonical poses.

use crate::error::Error;
use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

/// Element of SE(3): rotation `q` applied before translation `t`,
/// `x' = q * x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSE3 {
    q: UnitQuaternion<f64>,
    t: Vector3<f64>,
}

impl Default for PoseSE3 {
    fn default() -> Self {
        Self::identity()
    }
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            q: UnitQuaternion::identity(),
            t: Vector3::zeros(),
        }
    }

    /// Builds a pose from an already-unit quaternion, canonicalizing the sign.
    pub fn new(q: UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self {
            q: canonicalize(q),
            t,
        }
    }

    /// Builds a pose from raw quaternion components `(w, x, y, z)`,
    /// normalizing them first.
    pub fn from_parts(
        w: f64,
        x: f64,
        y: f64,
        z: f64,
        t: Vector3<f64>,
    ) -> Result<Self, Error> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(Error::Format(format!(
                "quaternion norm {n} is not usable"
            )));
        }
        Ok(Self::new(UnitQuaternion::new_normalize(q), t))
    }

    /// Converts a 3x3 rotation matrix plus translation.
    ///
    /// Matrices that drift from orthonormality by more than 1e-6 are projected
    /// to the nearest rotation; a non-positive determinant (a reflection) is
    /// rejected.
    pub fn from_rotation_matrix(r: &Matrix3<f64>, t: Vector3<f64>) -> Result<Self, Error> {
        let det = r.determinant();
        if !det.is_finite() || det <= 0.0 {
            return Err(Error::Format(format!(
                "matrix determinant {det:.6e} is not a rotation"
            )));
        }
        let drift = (r.transpose() * r - Matrix3::identity()).abs().max();
        let rot = if drift > 1e-6 { nearest_rotation(r)? } else { *r };
        let q = UnitQuaternion::from_rotation_matrix(&nalgebra::Rotation3::from_matrix_unchecked(
            rot,
        ));
        Ok(Self::new(q, t))
    }

    /// Canonical-hemisphere unit quaternion (scalar part >= 0).
    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        self.q
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.t
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.q.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    /// `self ∘ rhs`: apply `rhs` first, then `self`.
    pub fn compose(&self, rhs: &Self) -> Self {
        Self::new(self.q * rhs.q, self.q * rhs.t + self.t)
    }

    pub fn inverse(&self) -> Self {
        let q_inv = self.q.inverse();
        Self::new(q_inv, -(q_inv * self.t))
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.q * p + self.t
    }

    /// Rotates a direction without translating it.
    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.q * v
    }

    /// Screw-blend between two poses: spherical interpolation of the rotation
    /// and linear interpolation of the translation. Exact at both endpoints.
    pub fn interpolate(&self, other: &Self, s: f64) -> Self {
        if s <= 0.0 {
            return *self;
        }
        if s >= 1.0 {
            return *other;
        }
        let q = slerp(&self.q, &other.q, s);
        let t = self.t + s * (other.t - self.t);
        Self::new(q, t)
    }

    /// Interpolation from the identity toward `self` (fraction `s` of the
    /// motion). Used for intra-sweep pose blending.
    pub fn fraction(&self, s: f64) -> Self {
        Self::identity().interpolate(self, s)
    }

    /// Applies a small update in the left chart used by the solvers:
    /// `q <- exp(phi) * q`, `t <- t + rho`, with `delta = [rho; phi]`.
    pub fn with_increment(&self, delta: &Vector6<f64>) -> Self {
        let rho = Vector3::new(delta[0], delta[1], delta[2]);
        let phi = Vector3::new(delta[3], delta[4], delta[5]);
        Self::new(UnitQuaternion::from_scaled_axis(phi) * self.q, self.t + rho)
    }

    /// Rotation magnitude in radians.
    pub fn rotation_angle(&self) -> f64 {
        self.q.angle()
    }

    /// Rotation distance to another pose, radians.
    pub fn rotation_angle_to(&self, other: &Self) -> f64 {
        self.q.angle_to(&other.q)
    }

    pub fn translation_distance_to(&self, other: &Self) -> f64 {
        (self.t - other.t).norm()
    }

    /// Exact identity test (all components bit-zero / bit-one).
    pub fn is_identity(&self) -> bool {
        let c = self.q.coords;
        c[0] == 0.0 && c[1] == 0.0 && c[2] == 0.0 && c[3] == 1.0 && self.t == Vector3::zeros()
    }

    pub fn is_finite(&self) -> bool {
        self.q.coords.iter().all(|v| v.is_finite()) && self.t.iter().all(|v| v.is_finite())
    }
}

impl std::ops::Mul for PoseSE3 {
    type Output = PoseSE3;
    fn mul(self, rhs: PoseSE3) -> PoseSE3 {
        self.compose(&rhs)
    }
}

impl std::fmt::Display for PoseSE3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = self.q.coords;
        write!(
            f,
            "q=({:.6}, {:.6}, {:.6}, {:.6}) t=({:.6}, {:.6}, {:.6})",
            c[3], c[0], c[1], c[2], self.t[0], self.t[1], self.t[2]
        )
    }
}

/// Fixes the quaternion sign so the scalar part is >= 0; when it is exactly
/// zero the first nonzero vector component decides, making
/// `canonicalize(q) == canonicalize(-q)` hold exactly.
fn canonicalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let c = q.coords; // (x, y, z, w)
    let w = c[3];
    let flip = if w != 0.0 {
        w < 0.0
    } else if c[0] != 0.0 {
        c[0] < 0.0
    } else if c[1] != 0.0 {
        c[1] < 0.0
    } else {
        c[2] < 0.0
    };
    if flip {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

/// Shortest-path spherical interpolation; falls back to normalized linear
/// blending when the inputs are nearly parallel.
fn slerp(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let qa = a.coords;
    let mut qb = b.coords;
    let mut dot = qa.dot(&qb);
    if dot < 0.0 {
        qb = -qb;
        dot = -dot;
    }
    let v = if dot > 1.0 - 1e-12 {
        qa + s * (qb - qa)
    } else {
        let theta = dot.clamp(-1.0, 1.0).acos();
        let sin_theta = theta.sin();
        (((1.0 - s) * theta).sin() * qa + (s * theta).sin() * qb) / sin_theta
    };
    canonicalize(UnitQuaternion::new_normalize(Quaternion::from_vector(v)))
}

/// Projects a near-rotation matrix to the closest true rotation via SVD.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Result<Matrix3<f64>, Error> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Format("svd failed on rotation matrix".into())),
    };
    let d = (u * v_t).determinant();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d.signum())) * v_t;
    if r.determinant() <= 0.0 {
        return Err(Error::Format(
            "matrix projects to a reflection, not a rotation".into(),
        ));
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
        let axis = Vector3::new(
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
        );
        let angle = rng.gen::<f64>() * std::f64::consts::PI;
        let t = Vector3::new(
            rng.gen::<f64>() * 10.0 - 5.0,
            rng.gen::<f64>() * 10.0 - 5.0,
            rng.gen::<f64>() * 10.0 - 5.0,
        );
        PoseSE3::new(
            UnitQuaternion::from_scaled_axis(axis.normalize() * angle),
            t,
        )
    }

    #[test]
    fn identity_composes_as_neutral_element() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            let left = PoseSE3::identity().compose(&p);
            let right = p.compose(&PoseSE3::identity());
            assert!(p.rotation_angle_to(&left) < 1e-12);
            assert!(p.rotation_angle_to(&right) < 1e-12);
            assert!(p.translation_distance_to(&left) < 1e-12);
            assert!(p.translation_distance_to(&right) < 1e-12);
        }
    }

    #[test]
    fn inverse_cancels_to_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let e = p.compose(&p.inverse());
            assert!(e.rotation_angle() < 1e-9);
            assert!(e.translation().norm() < 1e-9);
        }
    }

    #[test]
    fn composition_is_associative() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let c = random_pose(&mut rng);
            let lhs = a.compose(&b).compose(&c);
            let rhs = a.compose(&b.compose(&c));
            assert!(lhs.rotation_angle_to(&rhs) < 1e-9);
            assert!(lhs.translation_distance_to(&rhs) < 1e-9);
        }
    }

    #[test]
    fn hemisphere_canonicalization_is_sign_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let q = p.quaternion();
            let neg = UnitQuaternion::new_unchecked(-q.into_inner());
            let a = PoseSE3::new(q, p.translation());
            let b = PoseSE3::new(neg, p.translation());
            assert_eq!(a.quaternion().coords, b.quaternion().coords);
            assert!(a.quaternion().coords[3] >= 0.0);
        }
    }

    #[test]
    fn canonicalization_handles_zero_scalar_part() {
        let q = UnitQuaternion::new_unchecked(Quaternion::new(0.0, 0.0, -1.0, 0.0));
        let a = PoseSE3::new(q, Vector3::zeros());
        let b = PoseSE3::new(
            UnitQuaternion::new_unchecked(-q.into_inner()),
            Vector3::zeros(),
        );
        assert_eq!(a.quaternion().coords, b.quaternion().coords);
    }

    #[test]
    fn transform_matches_homogeneous_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..50 {
            let p = random_pose(&mut rng);
            let x = Vector3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>());
            let m = p.to_homogeneous();
            let hx = m * x.push(1.0);
            let tx = p.transform_point(&x);
            assert_relative_eq!(hx.xyz(), tx, epsilon = 1e-12);
        }
    }

    #[test]
    fn interpolation_endpoints_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_pose(&mut rng);
        let b = random_pose(&mut rng);
        let s0 = a.interpolate(&b, 0.0);
        let s1 = a.interpolate(&b, 1.0);
        assert_eq!(s0.quaternion().coords, a.quaternion().coords);
        assert_eq!(s0.translation(), a.translation());
        assert_eq!(s1.quaternion().coords, b.quaternion().coords);
        assert_eq!(s1.translation(), b.translation());
    }

    #[test]
    fn interpolation_halfway_halves_the_rotation() {
        let full = PoseSE3::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.8)),
            Vector3::new(2.0, 0.0, 0.0),
        );
        let half = PoseSE3::identity().interpolate(&full, 0.5);
        assert_relative_eq!(half.rotation_angle(), 0.4, epsilon = 1e-12);
        assert_relative_eq!(half.translation()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_reflection_matrix() {
        let r = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(matches!(
            PoseSE3::from_rotation_matrix(&r, Vector3::zeros()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn reorthonormalizes_drifted_rotation() {
        let yaw = UnitQuaternion::from_scaled_axis(Vector3::new(0.0, 0.0, 0.3));
        let mut r = yaw.to_rotation_matrix().into_inner();
        r[(0, 0)] += 1e-4;
        let p = PoseSE3::from_rotation_matrix(&r, Vector3::zeros()).unwrap();
        let rr = p.rotation_matrix();
        let drift = (rr.transpose() * rr - Matrix3::identity()).abs().max();
        assert!(drift < 1e-12);
    }

    #[test]
    fn increment_matches_manual_update() {
        let p = PoseSE3::new(
            UnitQuaternion::from_scaled_axis(Vector3::new(0.1, -0.2, 0.3)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let delta = Vector6::new(0.01, -0.02, 0.03, 0.001, 0.002, -0.003);
        let out = p.with_increment(&delta);
        let expected_q = UnitQuaternion::from_scaled_axis(Vector3::new(0.001, 0.002, -0.003))
            * p.quaternion();
        assert!(out.quaternion().angle_to(&expected_q) < 1e-14);
        assert_relative_eq!(
            out.translation(),
            Vector3::new(1.01, 1.98, 3.03),
            epsilon = 1e-14
        );
    }
}
