//! Pose proposals: perturbation sampling around ground truth, proposal files
//! and the negative-depth correction.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProposalSamplerConfig {
    pub p_rotation: f64,
    pub p_lateral: f64,
    pub p_depth: f64,
    /// Standard deviation of the rotation angle, degrees.
    pub rotation_sigma_deg: f64,
    /// Standard deviation of the lateral displacement as a fraction of the
    /// object diameter.
    pub lateral_sigma_fraction: f64,
    /// Standard deviation of the log depth multiplier.
    pub depth_log_sigma: f64,
    pub seed: u64,
}

impl Default for ProposalSamplerConfig {
    fn default() -> Self {
        ProposalSamplerConfig {
            p_rotation: 0.30,
            p_lateral: 0.30,
            p_depth: 0.40,
            rotation_sigma_deg: 45.0,
            lateral_sigma_fraction: 0.1,
            depth_log_sigma: 1.05f64.ln(),
            seed: 0,
        }
    }
}

impl ProposalSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let p = [self.p_rotation, self.p_lateral, self.p_depth];
        if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "category probabilities must be nonnegative and sum to 1, got {p:?}"
            )));
        }
        let s = [self.rotation_sigma_deg, self.lateral_sigma_fraction, self.depth_log_sigma];
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::Config(format!("sigmas must be finite and nonnegative, got {s:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    Rotation,
    Lateral,
    Depth,
}

/// A sampled proposal with the perturbation that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Perturbation {
    pub pose: Pose,
    pub kind: PerturbationKind,
    /// Signed angle (degrees), displacement (meters) or log depth ratio.
    pub magnitude: f64,
}

/// Draws one perturbed copy of `gt`; exactly one of rotation, lateral
/// translation or depth is changed.
pub fn sample_proposal<R: Rng + ?Sized>(
    gt: &Pose,
    diameter: f64,
    cfg: &ProposalSamplerConfig,
    rng: &mut R,
) -> Result<Perturbation> {
    if !(gt.depth() > 0.0) {
        return Err(Error::BehindCamera { depth: gt.depth() });
    }
    let u: f64 = rng.random();
    let kind = if u < cfg.p_rotation {
        PerturbationKind::Rotation
    } else if u < cfg.p_rotation + cfg.p_lateral {
        PerturbationKind::Lateral
    } else {
        PerturbationKind::Depth
    };
    let (pose, magnitude) = match kind {
        PerturbationKind::Rotation => {
            let axis = random_unit_vector(rng);
            let angle = truncated_normal(rng, cfg.rotation_sigma_deg, 180.0);
            // axis through the object center, expressed in the camera frame
            let r = so3_exp(&(axis * angle.to_radians()))? * gt.rotation;
            (Pose::new(r, gt.translation), angle)
        }
        PerturbationKind::Lateral => {
            let sigma = cfg.lateral_sigma_fraction * diameter;
            let z: f64 = rng.sample(StandardNormal);
            let m = (z * sigma).abs();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let t = gt.translation + Vector3::new(m * phi.cos(), m * phi.sin(), 0.0);
            (Pose::new(gt.rotation, t), m)
        }
        PerturbationKind::Depth => {
            let z: f64 = rng.sample(StandardNormal);
            let log_ratio = z * cfg.depth_log_sigma;
            (
                Pose::new(gt.rotation, gt.translation * log_ratio.exp()),
                log_ratio,
            )
        }
    };
    Ok(Perturbation {
        pose,
        kind,
        magnitude,
    })
}

fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// `N(0, sigma)` conditioned on `|x| ≤ limit` by rejection.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64, limit: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma validated finite and positive");
    loop {
        let x = dist.sample(rng);
        if x.abs() <= limit {
            return x;
        }
    }
}

/// Seeded sampler holding its own generator.
#[derive(Clone, Debug)]
pub struct ProposalSampler {
    cfg: ProposalSamplerConfig,
    rng: ChaCha8Rng,
}

impl ProposalSampler {
    pub fn new(cfg: ProposalSamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(ProposalSampler { cfg, rng })
    }

    pub fn config(&self) -> &ProposalSamplerConfig {
        &self.cfg
    }

    pub fn sample(&mut self, gt: &Pose, diameter: f64) -> Result<Perturbation> {
        sample_proposal(gt, diameter, &self.cfg, &mut self.rng)
    }
}

/// 180° rotation about the camera's principal axis.
pub fn principal_axis_flip() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0))
}

/// Moves a pose with negative depth in front of the camera without changing
/// where its center projects: `t ← −t`, `R ← R_z(π)·R`.
pub fn correct_negative_depth(p: &Pose) -> Result<Pose> {
    let z = p.depth();
    if z == 0.0 || !z.is_finite() {
        return Err(Error::DegeneratePose(format!(
            "cannot correct a pose with depth {z}"
        )));
    }
    if z > 0.0 {
        return Ok(p.clone());
    }
    Ok(Pose::new(principal_axis_flip() * p.rotation, -p.translation))
}

/// One line of a proposal or pose file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame_id: usize,
    pub object_id: String,
    pub pose: Pose,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationKind>,
}

pub fn load_pose_records(path: &Path) -> Result<Vec<PoseRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub fn save_pose_records(path: &Path, records: &[PoseRecord]) -> Result<()> {
    let text = serde_json::to_string_pretty(records).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::CameraIntrinsics;
    use crate::geometry::rotation_angle_between;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gt() -> Pose {
        Pose::from_axis_angle(Vector3::new(0.5, -0.2, 0.9), Vector3::new(0.05, -0.03, 0.9)).unwrap()
    }

    fn forced(kind: PerturbationKind, sigma_zero: bool) -> ProposalSamplerConfig {
        let mut cfg = ProposalSamplerConfig {
            p_rotation: 0.0,
            p_lateral: 0.0,
            p_depth: 0.0,
            ..Default::default()
        };
        match kind {
            PerturbationKind::Rotation => cfg.p_rotation = 1.0,
            PerturbationKind::Lateral => cfg.p_lateral = 1.0,
            PerturbationKind::Depth => cfg.p_depth = 1.0,
        }
        if sigma_zero {
            cfg.rotation_sigma_deg = 0.0;
            cfg.lateral_sigma_fraction = 0.0;
            cfg.depth_log_sigma = 0.0;
        }
        cfg
    }

    #[test]
    fn zero_sigmas_return_ground_truth() {
        for kind in [PerturbationKind::Rotation, PerturbationKind::Lateral, PerturbationKind::Depth] {
            let mut s = ProposalSampler::new(forced(kind, true)).unwrap();
            for _ in 0..10 {
                let p = s.sample(&gt(), 0.15).unwrap();
                assert_eq!(p.kind, kind);
                assert_eq!(p.pose, gt());
            }
        }
    }

    #[test]
    fn depth_keeps_direction() {
        let mut s = ProposalSampler::new(forced(PerturbationKind::Depth, false)).unwrap();
        for _ in 0..20 {
            let p = s.sample(&gt(), 0.15).unwrap();
            let m = p.pose.depth() / gt().depth();
            assert_relative_eq!(m, p.magnitude.exp(), max_relative = 1e-12);
            assert_relative_eq!(p.pose.translation, gt().translation * m, max_relative = 1e-12);
            assert_eq!(p.pose.rotation, gt().rotation);
        }
    }

    #[test]
    fn lateral_stays_in_image_plane() {
        let mut s = ProposalSampler::new(forced(PerturbationKind::Lateral, false)).unwrap();
        for _ in 0..20 {
            let p = s.sample(&gt(), 0.15).unwrap();
            assert_eq!(p.pose.depth(), gt().depth());
            let d = p.pose.translation - gt().translation;
            assert_relative_eq!(d.norm(), p.magnitude, max_relative = 1e-9);
        }
    }

    #[test]
    fn rotation_keeps_translation_and_angle() {
        let mut s = ProposalSampler::new(forced(PerturbationKind::Rotation, false)).unwrap();
        for _ in 0..20 {
            let p = s.sample(&gt(), 0.15).unwrap();
            assert_eq!(p.pose.translation, gt().translation);
            assert!(p.magnitude.abs() <= 180.0);
            assert_relative_eq!(
                rotation_angle_between(&p.pose, &gt()),
                p.magnitude.abs(),
                epsilon = 1e-6
            );
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let cfg = ProposalSamplerConfig {
            seed: 42,
            ..Default::default()
        };
        let mut a = ProposalSampler::new(cfg.clone()).unwrap();
        let mut b = ProposalSampler::new(cfg).unwrap();
        for _ in 0..50 {
            assert_eq!(a.sample(&gt(), 0.15).unwrap(), b.sample(&gt(), 0.15).unwrap());
        }
    }

    #[test]
    fn bad_probabilities_are_rejected() {
        let cfg = ProposalSamplerConfig {
            p_depth: 0.5,
            ..Default::default()
        };
        assert!(ProposalSampler::new(cfg).is_err());
    }

    #[test]
    fn negative_depth_example() {
        let r = so3_exp(&Vector3::new(0.1, 0.2, 0.3)).unwrap();
        let p = Pose::new(r, Vector3::new(0.1, 0.2, -1.0));
        let c = correct_negative_depth(&p).unwrap();
        assert_eq!(c.translation, Vector3::new(-0.1, -0.2, 1.0));
        assert_eq!(c.rotation, Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)) * r);
        let q = Pose::new(r, Vector3::new(0.0, 0.0, 0.5));
        assert_eq!(correct_negative_depth(&q).unwrap(), q);
        let z = Pose::new(r, Vector3::new(0.1, 0.0, 0.0));
        assert!(matches!(correct_negative_depth(&z), Err(Error::DegeneratePose(_))));
    }

    proptest! {
        #[test]
        fn correction_preserves_center_and_is_idempotent(
            x in -1.0f64..1.0, y in -1.0f64..1.0, z in -3.0f64..-0.01,
            a in -3.0f64..3.0, b in -3.0f64..3.0, c in -3.0f64..3.0,
        ) {
            let p = Pose::from_axis_angle(Vector3::new(a, b, c), Vector3::new(x, y, z)).unwrap();
            let q = correct_negative_depth(&p).unwrap();
            prop_assert!(q.depth() > 0.0);
            let intr = CameraIntrinsics::linemod();
            let u0 = (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy);
            let u1 = intr.project(&q.translation).unwrap();
            prop_assert_eq!(u0.0, u1.x);
            prop_assert_eq!(u0.1, u1.y);
            prop_assert_eq!(correct_negative_depth(&q).unwrap(), q);
        }
    }

    #[test]
    fn pose_records_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let recs = vec![
            PoseRecord {
                frame_id: 3,
                object_id: "wedge".into(),
                pose: gt(),
                perturbation: Some(PerturbationKind::Depth),
            },
            PoseRecord {
                frame_id: 4,
                object_id: "l_block".into(),
                pose: gt(),
                perturbation: None,
            },
        ];
        save_pose_records(&path, &recs).unwrap();
        assert_eq!(load_pose_records(&path).unwrap(), recs);
    }
}
