//! Critics estimate the mean reprojection error (in patch pixels) between the
//! observed and rendered patches of a pose hypothesis.
//!
//! Three implementations ship here: [`OracleCritic`] computes the error
//! exactly from ground truth, [`NoisyCritic`] perturbs it with a smooth bias
//! and deterministic noise to stand in for a trained network, and
//! [`ExternalCritic`] forwards the two patches to a subprocess speaking a
//! line-delimited JSON protocol.

mod external;
mod noisy;
mod oracle;

use nalgebra::Vector3;

pub use external::{ExternalCritic, DEFAULT_TIMEOUT};
pub use noisy::{NoisyCritic, NoisyCriticConfig};
pub use oracle::{oracle_error, OracleCritic};

use crate::camera::{ImagePatch, ZoomedCamera};
use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseDelta};

/// Ground truth available to oracle-style critics.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub pose: Pose,
    /// Object-frame model points.
    pub points: Vec<Vector3<f64>>,
}

/// Scene-side information attached to a request. Image-only critics ignore it.
#[derive(Clone, Copy, Debug)]
pub struct CriticContext<'a> {
    pub pose_hat: &'a Pose,
    pub zoom_hat: &'a ZoomedCamera,
    pub delta: &'a PoseDelta,
    pub truth: Option<&'a GroundTruth>,
}

impl<'a> CriticContext<'a> {
    pub fn require_truth(&self) -> Result<&'a GroundTruth> {
        self.truth
            .ok_or_else(|| Error::invalid("critic needs ground truth but the scene has none"))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CriticRequest<'a> {
    pub observed: &'a ImagePatch,
    pub rendered: &'a ImagePatch,
    pub context: CriticContext<'a>,
}

/// The error-estimating function `f(observed, rendered)`.
pub trait Critic: Send + Sync {
    fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64>;

    /// Short identifier used in logs and output metadata.
    fn name(&self) -> &str;
}

impl<C: Critic + ?Sized> Critic for Box<C> {
    fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64> {
        (**self).evaluate(req)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

impl<C: Critic + ?Sized> Critic for std::sync::Arc<C> {
    fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64> {
        (**self).evaluate(req)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

pub(crate) fn check_patches(req: &CriticRequest<'_>) -> Result<()> {
    if req.observed.camera.out_resolution != req.rendered.camera.out_resolution {
        return Err(Error::invalid(format!(
            "observed patch is {}², rendered patch is {}²",
            req.observed.camera.out_resolution, req.rendered.camera.out_resolution
        )));
    }
    Ok(())
}
