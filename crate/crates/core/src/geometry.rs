//! Rotation-group math, rigid poses and the local pose parameterization the
//! optimizer works in.
//!
//! A [`PoseDelta`] is interpreted relative to a [`ReferenceFrame`] fixed at the
//! initial proposal: rotation is a left-multiplied exponential of an
//! axis-angle vector, lateral translation is a pixel offset of the projected
//! object center in the reference patch, and depth is a log ratio against the
//! reference depth.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::camera::{CameraIntrinsics, ZoomedCamera};
use crate::error::{Error, Result};

/// Below this rotation angle `so3_exp` switches to its Taylor expansion.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric matrix `[v]x` with `[v]x w = v × w`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from an axis-angle vector (radians) to a rotation matrix.
pub fn so3_exp(axis_angle: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if !axis_angle.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("so3_exp: non-finite axis-angle vector"));
    }
    let k = skew(axis_angle);
    let theta2 = axis_angle.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < SMALL_ANGLE {
        // sin(t)/t and (1 - cos t)/t^2 to second order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Ok(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map; returns the axis-angle vector with norm in `[0, π]`.
pub fn so3_log(rotation: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(
        rotation[(2, 1)] - rotation[(1, 2)],
        rotation[(0, 2)] - rotation[(2, 0)],
        rotation[(1, 0)] - rotation[(0, 1)],
    );
    let cos = ((rotation.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let sin = 0.5 * w.norm();
    let theta = sin.atan2(cos);
    if theta < SMALL_ANGLE {
        return w * 0.5;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return w * (theta / (2.0 * sin));
    }
    // Near π the antisymmetric part vanishes; recover the axis from R + I.
    let s = (rotation + Matrix3::identity()) * 0.5;
    let col = (0..3)
        .max_by(|&a, &b| s[(a, a)].total_cmp(&s[(b, b)]))
        .unwrap_or(0);
    let mut axis = s.column(col).into_owned();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rigid transform from the object frame into the camera frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    /// Meters, camera frame.
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Matrix3::identity(), Vector3::zeros())
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Result<Self> {
        Ok(Pose::new(so3_exp(&axis_angle)?, translation))
    }

    /// Depth of the object origin along the principal axis.
    pub fn depth(&self) -> f64 {
        self.translation.z
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Composition with an object-frame rotation: `x ↦ R·S·x + t`.
    pub fn with_object_rotation(&self, s: &Matrix3<f64>) -> Pose {
        Pose::new(self.rotation * s, self.translation)
    }

    /// Checks orthonormality and handedness of the rotation and finiteness of
    /// the translation.
    pub fn validate(&self) -> Result<()> {
        if !self.translation.iter().all(|c| c.is_finite())
            || !self.rotation.iter().all(|c| c.is_finite())
        {
            return Err(Error::invalid("pose has non-finite entries"));
        }
        let ortho = self.rotation.transpose() * self.rotation - Matrix3::identity();
        if ortho.amax() > 1e-6 || (self.rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::invalid("pose rotation is not a proper rotation"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let m = &self.rotation;
        PoseRepr {
            r: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = PoseRepr::deserialize(deserializer)?;
        let r = repr.r;
        Ok(Pose::new(
            Matrix3::new(
                r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
            ),
            Vector3::from(repr.t),
        ))
    }
}

/// Geodesic angle between the rotations of two poses, in degrees.
pub fn rotation_angle_between(a: &Pose, b: &Pose) -> f64 {
    let rel = a.rotation * b.rotation.transpose();
    let w = Vector3::new(
        rel[(2, 1)] - rel[(1, 2)],
        rel[(0, 2)] - rel[(2, 0)],
        rel[(1, 0)] - rel[(0, 1)],
    );
    let c = ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    (0.5 * w.norm()).atan2(c).to_degrees()
}

/// Local pose parameters around a [`ReferenceFrame`].
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PoseDelta {
    /// Axis-angle rotation in the camera frame, radians.
    pub theta_r: Vector3<f64>,
    /// Offset of the projected object center, reference-patch pixels.
    pub theta_l: Vector2<f64>,
    /// Log depth ratio.
    pub theta_d: f64,
}

impl PoseDelta {
    pub const DIM: usize = 6;

    pub fn zero() -> Self {
        PoseDelta::default()
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.theta_r.x,
            self.theta_r.y,
            self.theta_r.z,
            self.theta_l.x,
            self.theta_l.y,
            self.theta_d,
        ]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        PoseDelta {
            theta_r: Vector3::new(a[0], a[1], a[2]),
            theta_l: Vector2::new(a[3], a[4]),
            theta_d: a[5],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }
}

/// The fixed linearization point of one refinement run.
#[derive(Clone, Debug)]
pub struct ReferenceFrame {
    pub pose0: Pose,
    /// Projected object center in reference-patch pixels.
    pub projected_center0: Vector2<f64>,
    /// Meters; z-component of the proposal translation.
    pub depth0: f64,
    pub zoom: ZoomedCamera,
}

impl ReferenceFrame {
    pub fn new(
        intrinsics: &CameraIntrinsics,
        pose0: Pose,
        diameter: f64,
        out_resolution: usize,
    ) -> Result<Self> {
        let zoom = ZoomedCamera::around(intrinsics, &pose0, diameter, out_resolution)?;
        let projected_center0 = zoom.project_to_patch(&pose0, &Vector3::zeros())?;
        Ok(ReferenceFrame {
            depth0: pose0.depth(),
            pose0,
            projected_center0,
            zoom,
        })
    }

    /// Maps local parameters to an absolute pose.
    ///
    /// The translation is recovered by back-projecting `projected_center0 +
    /// theta_l` through the reference patch camera at depth
    /// `exp(theta_d) * depth0`. Written as a scaled reference translation plus a
    /// lateral correction, so a zero delta reproduces `pose0` exactly.
    pub fn apply_delta(&self, delta: &PoseDelta) -> Result<Pose> {
        if !delta.is_finite() {
            return Err(Error::invalid("apply_delta: non-finite delta"));
        }
        let rotation = so3_exp(&delta.theta_r)? * self.pose0.rotation;
        let ratio = delta.theta_d.exp();
        let depth = ratio * self.depth0;
        let px_per_patch = self.zoom.patch_side / self.zoom.out_resolution as f64;
        let base = &self.zoom.base;
        let lateral = Vector3::new(
            delta.theta_l.x * px_per_patch * depth / base.fx,
            delta.theta_l.y * px_per_patch * depth / base.fy,
            0.0,
        );
        Ok(Pose::new(rotation, self.pose0.translation * ratio + lateral))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn frame() -> ReferenceFrame {
        let intr = CameraIntrinsics::new(572.4, 573.6, 325.3, 242.0, 640, 480).unwrap();
        let pose0 =
            Pose::from_axis_angle(Vector3::new(0.3, -0.2, 0.1), Vector3::new(0.05, -0.03, 0.8))
                .unwrap();
        ReferenceFrame::new(&intr, pose0, 0.15, 512).unwrap()
    }

    #[test]
    fn exp_of_zero_is_identity() {
        assert_eq!(so3_exp(&Vector3::zeros()).unwrap(), Matrix3::identity());
    }

    #[test]
    fn exp_half_turn_about_x() {
        let r = so3_exp(&Vector3::new(PI, 0.0, 0.0)).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!((r - expected).amax() < 1e-12);
    }

    #[test]
    fn exp_quarter_turn_about_z() {
        let r = so3_exp(&Vector3::new(0.0, 0.0, PI / 2.0)).unwrap();
        assert!((r * Vector3::x() - Vector3::y()).amax() < 1e-12);
        assert!((r * Vector3::y() + Vector3::x()).amax() < 1e-12);
    }

    #[test]
    fn exp_rejects_nan() {
        assert!(matches!(
            so3_exp(&Vector3::new(f64::NAN, 0.0, 0.0)),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn taylor_branch_is_continuous() {
        let v = Vector3::new(3e-9, -2e-9, 5e-9);
        let r = so3_exp(&v).unwrap();
        let expected = Matrix3::identity() + skew(&v);
        assert!((r - expected).amax() < 1e-15);
    }

    #[test]
    fn angle_between_cases() {
        let a = Pose::from_axis_angle(Vector3::new(0.2, 0.4, -0.1), Vector3::zeros()).unwrap();
        assert!(rotation_angle_between(&a, &a).abs() < 1e-6);
        let b = Pose::new(so3_exp(&Vector3::new(0.1, 0.0, 0.0)).unwrap() * a.rotation, a.translation);
        assert_relative_eq!(rotation_angle_between(&a, &b), 5.729577951308232, epsilon = 1e-9);
        let axis = Vector3::new(1.0, 2.0, -1.0).normalize();
        let c = Pose::new(so3_exp(&(axis * PI)).unwrap() * a.rotation, a.translation);
        assert_relative_eq!(rotation_angle_between(&a, &c), 180.0, epsilon = 1e-6);
    }

    #[test]
    fn zero_delta_is_bit_exact() {
        let f = frame();
        let p = f.apply_delta(&PoseDelta::zero()).unwrap();
        assert_eq!(p, f.pose0);
    }

    #[test]
    fn depth_delta_doubles_depth() {
        let f = frame();
        let mut d = PoseDelta::zero();
        d.theta_d = 2f64.ln();
        let p = f.apply_delta(&d).unwrap();
        assert_relative_eq!(p.depth(), 2.0 * f.depth0, max_relative = 1e-12);
        let dir0 = f.pose0.translation.normalize();
        assert!((p.translation.normalize() - dir0).amax() < 1e-12);
    }

    #[test]
    fn lateral_delta_projects_back() {
        let f = frame();
        let mut d = PoseDelta::zero();
        d.theta_l = Vector2::new(10.0, 0.0);
        let p = f.apply_delta(&d).unwrap();
        let c = f.zoom.project_to_patch(&p, &Vector3::zeros()).unwrap();
        assert!((c - f.projected_center0 - Vector2::new(10.0, 0.0)).amax() < 1e-6);
    }

    #[test]
    fn log_inverts_exp_near_pi() {
        let v = Vector3::new(0.0, 1.0, 1.0).normalize() * (PI - 1e-9);
        let back = so3_log(&so3_exp(&v).unwrap());
        assert!((back - v).amax() < 1e-6);
    }

    #[test]
    fn pose_json_layout() {
        let p = Pose::new(Matrix3::identity(), Vector3::new(0.1, 0.2, 0.3));
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"R":[[1.0,0.0,0.0],[0.0,1.0,0.0],[0.0,0.0,1.0]],"t":[0.1,0.2,0.3]}"#);
        let back: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn exp_inverse_is_negation(x in -4.0..4.0f64, y in -4.0..4.0f64, z in -4.0..4.0f64) {
            let v = Vector3::new(x, y, z);
            let prod = so3_exp(&v).unwrap() * so3_exp(&-v).unwrap();
            prop_assert!((prod - Matrix3::identity()).amax() < 1e-9);
        }

        #[test]
        fn angle_matches_axis_angle_norm(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64, s in 0.01..3.1f64) {
            let v = Vector3::new(x, y, z);
            prop_assume!(v.norm() > 1e-3);
            let v = v.normalize() * s;
            let a = Pose::identity();
            let b = Pose::new(so3_exp(&v).unwrap(), Vector3::zeros());
            let deg = rotation_angle_between(&a, &b);
            prop_assert!((deg - s.to_degrees()).abs() <= 1e-6 * s.to_degrees());
        }

        #[test]
        fn delta_round_trip(rx in -0.6..0.6f64, ry in -0.6..0.6f64, rz in -0.6..0.6f64,
                            lx in -40.0..40.0f64, ly in -40.0..40.0f64, d in -0.3..0.3f64) {
            let f = frame();
            let delta = PoseDelta { theta_r: Vector3::new(rx, ry, rz), theta_l: Vector2::new(lx, ly), theta_d: d };
            let p = f.apply_delta(&delta).unwrap();
            let c = f.zoom.project_to_patch(&p, &Vector3::zeros()).unwrap();
            prop_assert!((c - f.projected_center0 - delta.theta_l).amax() < 1e-6);
            prop_assert!((p.depth() - d.exp() * f.depth0).abs() <= 1e-12 * f.depth0);
        }
    }
}
