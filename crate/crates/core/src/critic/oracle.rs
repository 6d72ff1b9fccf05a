use nalgebra::Vector3;

use super::{check_patches, Critic, CriticRequest};
use crate::camera::ZoomedCamera;
use crate::error::{Error, Result};
use crate::geometry::Pose;

/// Mean patch-pixel distance between the model points placed by `pose_hat`
/// and by `pose_true`, both projected through the patch camera of
/// `pose_hat`.
pub fn oracle_error(
    pose_hat: &Pose,
    pose_true: &Pose,
    points: &[Vector3<f64>],
    zoom_hat: &ZoomedCamera,
) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::invalid("oracle_error needs at least one model point"));
    }
    let mut sum = 0.0;
    for p in points {
        let a = zoom_hat.project_to_patch(pose_hat, p)?;
        let b = zoom_hat.project_to_patch(pose_true, p)?;
        sum += (a - b).norm();
    }
    Ok(sum / points.len() as f64)
}

/// Exact reprojection error from the ground truth carried in the request
/// context; ignores the image content.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleCritic;

impl Critic for OracleCritic {
    fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64> {
        check_patches(req)?;
        let truth = req.context.require_truth()?;
        oracle_error(
            req.context.pose_hat,
            &truth.pose,
            &truth.points,
            req.context.zoom_hat,
        )
    }

    fn name(&self) -> &str {
        "oracle"
    }
}
