//! Oracle error plus a smooth pose-dependent bias and deterministic noise,
//! saturated like the training target of a learned critic.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{check_patches, oracle_error, Critic, CriticRequest};
use crate::error::{Error, Result};
use crate::geometry::so3_log;

const BUMPS_PER_AXIS: usize = 3;
/// Pose entries are rounded to this resolution before keying the noise.
const NOISE_QUANTUM: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoisyCriticConfig {
    /// Standard deviation of the additive noise, patch pixels.
    pub noise_sigma: f64,
    /// Height of the cosine bumps per axis, patch pixels.
    pub bias_amplitude: f64,
    /// Length scales for the rotation (rad), lateral (patch px) and depth
    /// (log ratio) error axes.
    pub bias_length_scale: [f64; 3],
    /// Upper clamp, patch pixels.
    pub saturation: f64,
    pub seed: u64,
}

impl Default for NoisyCriticConfig {
    fn default() -> Self {
        NoisyCriticConfig {
            noise_sigma: 1.0,
            bias_amplitude: 5.0,
            bias_length_scale: [0.5, 30.0, 0.2],
            saturation: 50.0,
            seed: 0,
        }
    }
}

impl NoisyCriticConfig {
    /// No bias, no noise: the saturated oracle.
    pub fn exact() -> Self {
        NoisyCriticConfig {
            noise_sigma: 0.0,
            bias_amplitude: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.saturation > 0.0)
            || !(self.noise_sigma >= 0.0)
            || !(self.bias_amplitude >= 0.0)
            || self.bias_length_scale.iter().any(|l| !(*l > 0.0))
        {
            return Err(Error::invalid(format!("invalid noisy critic config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct Bump {
    weight: f64,
    frequency: f64,
    phase: f64,
}

/// Emulates a learned critic around the exact error.
#[derive(Clone, Debug)]
pub struct NoisyCritic {
    cfg: NoisyCriticConfig,
    /// Six error axes × [`BUMPS_PER_AXIS`] bumps.
    bumps: Vec<[Bump; BUMPS_PER_AXIS]>,
}

impl NoisyCritic {
    pub fn new(cfg: NoisyCriticConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb1a5_b1a5);
        let bumps = (0..6)
            .map(|_| {
                let mut raw = [Bump {
                    weight: 0.0,
                    frequency: 0.0,
                    phase: 0.0,
                }; BUMPS_PER_AXIS];
                for b in &mut raw {
                    b.weight = rng.random_range(-1.0..1.0);
                    b.frequency = rng.random_range(0.5..1.5);
                    b.phase = rng.random_range(0.0..2.0 * PI);
                }
                let total: f64 = raw.iter().map(|b| b.weight.abs()).sum();
                for b in &mut raw {
                    b.weight /= total.max(1e-12);
                }
                raw
            })
            .collect();
        Ok(NoisyCritic { cfg, bumps })
    }

    pub fn config(&self) -> &NoisyCriticConfig {
        &self.cfg
    }

    /// Smooth bias over the six error coordinates. Each axis contributes a
    /// sum of cosine bumps bounded by the amplitude; the axis sum is divided
    /// by √6.
    pub fn bias(&self, error_coords: &[f64; 6]) -> f64 {
        if self.cfg.bias_amplitude == 0.0 {
            return 0.0;
        }
        let scales = [
            self.cfg.bias_length_scale[0],
            self.cfg.bias_length_scale[0],
            self.cfg.bias_length_scale[0],
            self.cfg.bias_length_scale[1],
            self.cfg.bias_length_scale[1],
            self.cfg.bias_length_scale[2],
        ];
        let sum: f64 = (0..6)
            .map(|k| {
                self.bumps[k]
                    .iter()
                    .map(|b| b.weight * (b.frequency * error_coords[k] / scales[k] + b.phase).cos())
                    .sum::<f64>()
            })
            .sum();
        self.cfg.bias_amplitude * sum / 6f64.sqrt()
    }

    fn noise(&self, key: &[f64]) -> f64 {
        if self.cfg.noise_sigma == 0.0 {
            return 0.0;
        }
        let mut h = Sha256::new();
        h.update(self.cfg.seed.to_le_bytes());
        for v in key {
            h.update(((v / NOISE_QUANTUM).round() as i64).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let z: f64 = rng.sample(StandardNormal);
        self.cfg.noise_sigma * z
    }
}

impl Critic for NoisyCritic {
    fn evaluate(&self, req: &CriticRequest<'_>) -> Result<f64> {
        check_patches(req)?;
        let ctx = &req.context;
        let truth = ctx.require_truth()?;
        let exact = oracle_error(ctx.pose_hat, &truth.pose, &truth.points, ctx.zoom_hat)?;

        let rot = so3_log(&(ctx.pose_hat.rotation * truth.pose.rotation.transpose()));
        let center_hat = ctx.zoom_hat.project_to_patch(ctx.pose_hat, &Vector3::zeros())?;
        let center_true = ctx.zoom_hat.project_to_patch(&truth.pose, &Vector3::zeros())?;
        let lateral = center_hat - center_true;
        let depth = (ctx.pose_hat.depth() / truth.pose.depth()).ln();
        let coords = [rot.x, rot.y, rot.z, lateral.x, lateral.y, depth];

        let key: Vec<f64> = ctx
            .pose_hat
            .rotation
            .iter()
            .chain(ctx.pose_hat.translation.iter())
            .copied()
            .collect();
        let value = exact + self.bias(&coords) + self.noise(&key);
        Ok(value.max(0.0).min(self.cfg.saturation))
    }

    fn name(&self) -> &str {
        "noisy"
    }
}
