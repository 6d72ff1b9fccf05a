//! The compound objective `J(δ) = f(Z_θ I_obs, P_rend(θ))` with
//! `θ = apply_delta(frame, δ)`, and its central-difference gradient.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{extract_patch, CameraIntrinsics, ZoomedCamera, DEFAULT_PATCH_RESOLUTION};
use crate::critic::{Critic, CriticContext, CriticRequest, GroundTruth};
use crate::error::{Error, Result};
use crate::geometry::{Pose, PoseDelta, ReferenceFrame};
use crate::image::RgbImage;
use crate::model::TriangleMesh;
use crate::rasterizer::{render, ShadingParams, DEFAULT_RENDER_RESOLUTION};

/// Finite-difference steps for the rotation (rad), lateral (px) and depth
/// (log ratio) blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteDiffSteps {
    pub rotation: f64,
    pub lateral: f64,
    pub depth: f64,
}

impl Default for FiniteDiffSteps {
    fn default() -> Self {
        FiniteDiffSteps {
            rotation: 0.01,
            lateral: 1.0,
            depth: 0.005,
        }
    }
}

impl FiniteDiffSteps {
    pub fn per_parameter(&self) -> [f64; 6] {
        [
            self.rotation,
            self.rotation,
            self.rotation,
            self.lateral,
            self.lateral,
            self.depth,
        ]
    }

    pub fn scaled(&self, k: f64) -> Self {
        FiniteDiffSteps {
            rotation: self.rotation * k,
            lateral: self.lateral * k,
            depth: self.depth * k,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObjectiveConfig {
    pub render_resolution: usize,
    pub patch_resolution: usize,
    pub fd_steps: FiniteDiffSteps,
    /// Evaluate the 12 gradient probes on the rayon pool.
    pub parallel_probes: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            render_resolution: DEFAULT_RENDER_RESOLUTION,
            patch_resolution: DEFAULT_PATCH_RESOLUTION,
            fd_steps: FiniteDiffSteps::default(),
            parallel_probes: true,
        }
    }
}

/// Everything about one refinement problem except the linearization point.
pub struct Scene<'a> {
    pub observed: &'a RgbImage,
    pub mesh: &'a TriangleMesh,
    pub intrinsics: CameraIntrinsics,
    pub shading: ShadingParams,
    pub critic: &'a dyn Critic,
    /// Needed by oracle-style critics only.
    pub truth: Option<GroundTruth>,
}

/// Central-difference gradient plus the mean of its probe values, a cheap
/// O(h²) estimate of `J` at the center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gradient {
    pub grad: [f64; 6],
    pub probe_mean: f64,
}

pub struct Objective<'s, 'a> {
    scene: &'s Scene<'a>,
    frame: ReferenceFrame,
    cfg: ObjectiveConfig,
    eval_count: AtomicU64,
}

impl<'s, 'a> Objective<'s, 'a> {
    /// Fixes the reference frame at `proposal`.
    pub fn new(scene: &'s Scene<'a>, proposal: &Pose, cfg: ObjectiveConfig) -> Result<Self> {
        if !(proposal.depth() > 0.0) {
            return Err(Error::BehindCamera {
                depth: proposal.depth(),
            });
        }
        if scene.observed.width != scene.intrinsics.width
            || scene.observed.height != scene.intrinsics.height
        {
            return Err(Error::invalid("observed image does not match the intrinsics"));
        }
        let frame = ReferenceFrame::new(
            &scene.intrinsics,
            proposal.clone(),
            scene.mesh.diameter,
            cfg.patch_resolution,
        )?;
        Ok(Objective {
            scene,
            frame,
            cfg,
            eval_count: AtomicU64::new(0),
        })
    }

    pub fn frame(&self) -> &ReferenceFrame {
        &self.frame
    }

    pub fn config(&self) -> &ObjectiveConfig {
        &self.cfg
    }

    pub fn eval_count(&self) -> u64 {
        self.eval_count.load(Ordering::SeqCst)
    }

    pub fn pose_at(&self, delta: &PoseDelta) -> Result<Pose> {
        self.frame.apply_delta(delta)
    }

    /// Renders at the pose given by `delta`, zooms the observed image with the
    /// same window and asks the critic.
    pub fn evaluate(&self, delta: &PoseDelta) -> Result<f64> {
        self.eval_count.fetch_add(1, Ordering::SeqCst);
        let pose = self.frame.apply_delta(delta)?;
        let zoom = ZoomedCamera::around(
            &self.scene.intrinsics,
            &pose,
            self.scene.mesh.diameter,
            self.cfg.patch_resolution,
        )?;
        let rendered = render(
            self.scene.mesh,
            &pose,
            &zoom,
            &self.scene.shading,
            self.cfg.render_resolution,
        )?;
        let observed = extract_patch(self.scene.observed, &zoom)?;
        self.scene.critic.evaluate(&CriticRequest {
            observed: &observed,
            rendered: &rendered.color,
            context: CriticContext {
                pose_hat: &pose,
                zoom_hat: &zoom,
                delta,
                truth: self.scene.truth.as_ref(),
            },
        })
    }

    /// Central differences with the configured steps (12 evaluations).
    pub fn numeric_gradient(&self, delta: &PoseDelta) -> Result<Gradient> {
        self.numeric_gradient_with(delta, &self.cfg.fd_steps)
    }

    pub fn numeric_gradient_with(
        &self,
        delta: &PoseDelta,
        steps: &FiniteDiffSteps,
    ) -> Result<Gradient> {
        let h = steps.per_parameter();
        let center = delta.to_array();
        let probes: Vec<PoseDelta> = (0..12)
            .map(|i| {
                let mut p = center;
                let k = i / 2;
                p[k] += if i % 2 == 0 { h[k] } else { -h[k] };
                PoseDelta::from_array(p)
            })
            .collect();
        let values: Vec<f64> = if self.cfg.parallel_probes {
            probes
                .par_iter()
                .map(|p| self.evaluate(p))
                .collect::<Result<_>>()?
        } else {
            probes
                .iter()
                .map(|p| self.evaluate(p))
                .collect::<Result<_>>()?
        };
        let mut grad = [0.0; 6];
        for k in 0..6 {
            grad[k] = (values[2 * k] - values[2 * k + 1]) / (2.0 * h[k]);
        }
        Ok(Gradient {
            grad,
            probe_mean: values.iter().sum::<f64>() / 12.0,
        })
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::critic::CriticRequest;

    /// `J = Σ wᵢ δᵢ² + c·δ₀δ₅ + δ₃³/1000`, read straight from the request.
    pub struct PolynomialCritic {
        pub weights: [f64; 6],
        pub cross: f64,
        pub cubic: f64,
    }

    impl PolynomialCritic {
        pub fn value(&self, d: &[f64; 6]) -> f64 {
            (0..6).map(|i| self.weights[i] * d[i] * d[i]).sum::<f64>()
                + self.cross * d[0] * d[5]
                + self.cubic * d[3].powi(3)
        }

        pub fn gradient(&self, d: &[f64; 6]) -> [f64; 6] {
            let mut g = [0.0; 6];
            for i in 0..6 {
                g[i] = 2.0 * self.weights[i] * d[i];
            }
            g[0] += self.cross * d[5];
            g[5] += self.cross * d[0];
            g[3] += 3.0 * self.cubic * d[3] * d[3];
            g
        }
    }

    impl Critic for PolynomialCritic {
        fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64> {
            Ok(self.value(&req.context.delta.to_array()))
        }

        fn name(&self) -> &str {
            "polynomial"
        }
    }
}
