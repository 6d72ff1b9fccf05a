//! Synthetic observed images with known ground truth: randomized Phong
//! shading, optional occluders in front of the target, random backgrounds
//! and blur around the object border.

mod backgrounds;
mod filters;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use backgrounds::{load_backgrounds, procedural_backgrounds, PROCEDURAL_COUNT};
pub use filters::{border_band, gaussian_blur, hsv_jitter, hsv_to_rgb, rgb_to_hsv};

use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::RgbImage;
use crate::model::{ObjectSpec, TriangleMesh};
use crate::rasterizer::{rasterize, ShadingMode, ShadingParams};

pub const MANIFEST_VERSION: u32 = 1;
/// Occluder meshes always available besides the dataset objects.
pub const EXTRA_OCCLUDER: &str = "cube";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsvNoise {
    pub enabled: bool,
    /// Maximum absolute hue shift, in turns.
    pub hue: f32,
    /// Maximum relative saturation change.
    pub saturation: f32,
    /// Maximum relative value change.
    pub value: f32,
}

impl Default for HsvNoise {
    fn default() -> Self {
        HsvNoise {
            enabled: false,
            hue: 0.02,
            saturation: 0.1,
            value: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatagenConfig {
    pub camera: CameraIntrinsics,
    /// Target depth range, meters.
    pub depth_range: [f64; 2],
    /// Target centers project at least this fraction of the image size away
    /// from the border.
    pub center_margin: f64,
    pub light_position_min: [f64; 3],
    pub light_position_max: [f64; 3],
    pub ambient: [f64; 2],
    pub diffuse: [f64; 2],
    pub specular: [f64; 2],
    pub shininess: [f64; 2],
    pub whiteness: [f64; 2],
    pub occluder_probability: f64,
    pub occluder_count: usize,
    /// Occluder depth as a fraction of the target depth.
    pub occluder_depth_fraction: [f64; 2],
    pub min_visible_pixels: usize,
    pub max_visibility_attempts: usize,
    /// Probability that target pixels hidden by occluders show background
    /// instead of the occluder.
    pub occluded_to_background_probability: f64,
    pub border_blur_sigma: [f64; 2],
    /// Width of the blurred band around the object silhouette, pixels.
    pub border_band_px: usize,
    pub object_blur_sigma: [f64; 2],
    pub hsv_noise: HsvNoise,
    /// Background images; the procedural textures when unset.
    pub background_dir: Option<PathBuf>,
    pub seed: u64,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            camera: CameraIntrinsics::linemod(),
            depth_range: [0.6, 1.1],
            center_margin: 0.15,
            light_position_min: [-1.0, -1.0, -0.5],
            light_position_max: [1.0, 1.0, 0.3],
            ambient: [0.2, 0.5],
            diffuse: [0.5, 1.0],
            specular: [0.0, 0.5],
            shininess: [5.0, 80.0],
            whiteness: [0.0, 1.0],
            occluder_probability: 0.5,
            occluder_count: 2,
            occluder_depth_fraction: [0.6, 0.9],
            min_visible_pixels: 200,
            max_visibility_attempts: 100,
            occluded_to_background_probability: 0.5,
            border_blur_sigma: [1.5, 1.5],
            border_band_px: 3,
            object_blur_sigma: [0.0, 1.0],
            hsv_noise: HsvNoise::default(),
            background_dir: None,
            seed: 0,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        self.camera.validate()?;
        let probs = [self.occluder_probability, self.occluded_to_background_probability];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("probabilities must lie in [0, 1]".into()));
        }
        if self.min_visible_pixels < 1 || self.max_visibility_attempts < 1 {
            return Err(Error::Config(
                "min_visible_pixels and max_visibility_attempts must be at least 1".into(),
            ));
        }
        let ranges = [
            ("depth_range", self.depth_range),
            ("ambient", self.ambient),
            ("diffuse", self.diffuse),
            ("specular", self.specular),
            ("shininess", self.shininess),
            ("whiteness", self.whiteness),
            ("occluder_depth_fraction", self.occluder_depth_fraction),
            ("border_blur_sigma", self.border_blur_sigma),
            ("object_blur_sigma", self.object_blur_sigma),
        ];
        for (name, [lo, hi]) in ranges {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi && lo >= 0.0) {
                return Err(Error::Config(format!("invalid range {name} = [{lo}, {hi}]")));
            }
        }
        if !(self.depth_range[0] > 0.0) {
            return Err(Error::Config("depth range must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.center_margin) {
            return Err(Error::Config("center_margin must lie in [0, 0.5)".into()));
        }
        if self.shininess[0] < 1.0 || self.whiteness[1] > 1.0 {
            return Err(Error::Config("shininess must be ≥ 1 and whiteness ≤ 1".into()));
        }
        Ok(())
    }

    pub fn backgrounds(&self) -> Result<Vec<RgbImage>> {
        match &self.background_dir {
            Some(dir) => load_backgrounds(dir, self.camera.width, self.camera.height),
            None => Ok(procedural_backgrounds(self.camera.width, self.camera.height)),
        }
    }
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Uniformly distributed rotation.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> nalgebra::Matrix3<f64> {
    use rand_distr::StandardNormal;
    loop {
        let q = Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if q.norm() > 1e-9 {
            return UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner();
        }
    }
}

/// Random target pose: uniform rotation, depth in range, center projecting
/// inside the image margin.
pub fn sample_target_pose<R: Rng + ?Sized>(cfg: &DatagenConfig, rng: &mut R) -> Pose {
    let c = &cfg.camera;
    let z = uniform(rng, cfg.depth_range);
    let (mw, mh) = (cfg.center_margin * c.width as f64, cfg.center_margin * c.height as f64);
    let u = uniform(rng, [mw, c.width as f64 - mw]);
    let v = uniform(rng, [mh, c.height as f64 - mh]);
    let t = Vector3::new((u - c.cx) * z / c.fx, (v - c.cy) * z / c.fy, z);
    Pose::new(random_rotation(rng), t)
}

pub fn sample_shading<R: Rng + ?Sized>(cfg: &DatagenConfig, rng: &mut R) -> ShadingParams {
    let light = std::array::from_fn(|i| uniform(rng, [cfg.light_position_min[i], cfg.light_position_max[i]]));
    ShadingParams {
        mode: ShadingMode::Phong,
        light_position: light,
        ambient: uniform(rng, cfg.ambient),
        diffuse: uniform(rng, cfg.diffuse),
        specular: uniform(rng, cfg.specular),
        shininess: uniform(rng, cfg.shininess),
        whiteness: uniform(rng, cfg.whiteness),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderRecord {
    pub object_id: String,
    pub pose: Pose,
}

/// Ground truth for one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: usize,
    pub image: String,
    pub object_id: String,
    pub pose: Pose,
    /// Base-image pixels where the target wins the depth test.
    pub visible_pixels: usize,
    pub occluders: Vec<OccluderRecord>,
    pub occluded_region_replaced: bool,
    pub background: usize,
    pub shading: ShadingParams,
    pub border_blur_sigma: f64,
    pub object_blur_sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hsv_shift: Option<[f32; 3]>,
}

/// Target pixels visible in the joint render of target and occluders.
pub fn count_visible_pixels(
    target: (&TriangleMesh, &Pose),
    occluders: &[(&TriangleMesh, &Pose)],
    intr: &CameraIntrinsics,
) -> Result<usize> {
    let mut scene = vec![target];
    scene.extend_from_slice(occluders);
    let raw = rasterize(&scene, intr, &ShadingParams::default())?;
    Ok(raw.count_owned_by(0))
}

/// Output of [`generate_frame`].
#[derive(Clone, Debug)]
pub struct GeneratedFrame {
    pub image: RgbImage,
    pub record: FrameRecord,
}

/// Renders one observed image of `target` at `pose`.
///
/// `occluder_pool` lists `(id, mesh)` candidates; the record refers to
/// occluders by id.
#[allow(clippy::too_many_arguments)]
pub fn generate_frame<R: Rng + ?Sized>(
    frame_id: usize,
    target_id: &str,
    target: &TriangleMesh,
    pose: &Pose,
    occluder_pool: &[(String, TriangleMesh)],
    backgrounds: &[RgbImage],
    cfg: &DatagenConfig,
    rng: &mut R,
) -> Result<GeneratedFrame> {
    if backgrounds.is_empty() {
        return Err(Error::EmptyBackgroundPool);
    }
    let intr = &cfg.camera;
    let shading = sample_shading(cfg, rng);
    let background = rng.random_range(0..backgrounds.len());
    let with_occluders =
        cfg.occluder_count > 0 && !occluder_pool.is_empty() && rng.random_bool(cfg.occluder_probability);

    let mut occluders: Vec<(usize, Pose)> = Vec::new();
    let raw = if with_occluders {
        let mut accepted = None;
        for _ in 0..cfg.max_visibility_attempts {
            let cand: Vec<(usize, Pose)> = (0..cfg.occluder_count)
                .map(|_| {
                    let k = rng.random_range(0..occluder_pool.len());
                    (k, sample_occluder_pose(pose, target.diameter, &occluder_pool[k].1, cfg, rng))
                })
                .collect();
            let mut scene = vec![(target, pose)];
            scene.extend(cand.iter().map(|(k, p)| (&occluder_pool[*k].1, p)));
            let raw = rasterize(&scene, intr, &shading)?;
            if raw.count_owned_by(0) >= cfg.min_visible_pixels {
                accepted = Some((cand, raw));
                break;
            }
        }
        let (cand, raw) = accepted.ok_or(Error::VisibilityExhausted {
            attempts: cfg.max_visibility_attempts,
        })?;
        occluders = cand;
        raw
    } else {
        let raw = rasterize(&[(target, pose)], intr, &shading)?;
        if raw.count_owned_by(0) < cfg.min_visible_pixels {
            return Err(Error::VisibilityExhausted { attempts: 1 });
        }
        raw
    };
    let visible_pixels = raw.count_owned_by(0);

    let replace = !occluders.is_empty() && rng.random_bool(cfg.occluded_to_background_probability);
    let mut foreground = raw.mask();
    if replace {
        let alone = rasterize(&[(target, pose)], intr, &shading)?;
        for (i, fg) in foreground.iter_mut().enumerate() {
            if alone.owner[i] == 0 && raw.owner[i] > 0 {
                *fg = false;
            }
        }
    }

    let bg = &backgrounds[background];
    let (w, h) = (intr.width, intr.height);
    let bg = if bg.width == w && bg.height == h {
        bg.clone()
    } else {
        bg.resized(w, h)
    };
    let mut image = bg;
    for (i, &fg) in foreground.iter().enumerate() {
        if fg {
            image.data[i * 3..i * 3 + 3].copy_from_slice(&raw.color.data[i * 3..i * 3 + 3]);
        }
    }

    let object_blur_sigma = uniform(rng, cfg.object_blur_sigma);
    if object_blur_sigma > 0.0 {
        let blurred = gaussian_blur(&image, object_blur_sigma);
        for (i, &fg) in foreground.iter().enumerate() {
            if fg {
                image.data[i * 3..i * 3 + 3].copy_from_slice(&blurred.data[i * 3..i * 3 + 3]);
            }
        }
    }
    let border_blur_sigma = uniform(rng, cfg.border_blur_sigma);
    if border_blur_sigma > 0.0 && cfg.border_band_px > 0 {
        let band = border_band(&foreground, w, h, cfg.border_band_px);
        let blurred = gaussian_blur(&image, border_blur_sigma);
        for (i, &b) in band.iter().enumerate() {
            if b {
                image.data[i * 3..i * 3 + 3].copy_from_slice(&blurred.data[i * 3..i * 3 + 3]);
            }
        }
    }
    let hsv_shift = if cfg.hsv_noise.enabled {
        let n = &cfg.hsv_noise;
        let mut sym = |a: f32| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 };
        let shift = [sym(n.hue), sym(n.saturation), sym(n.value)];
        hsv_jitter(&mut image, shift[0], shift[1], shift[2]);
        Some(shift)
    } else {
        None
    };
    image.clamp01();

    Ok(GeneratedFrame {
        image,
        record: FrameRecord {
            frame_id,
            image: image_name(frame_id),
            object_id: target_id.to_string(),
            pose: pose.clone(),
            visible_pixels,
            occluders: occluders
                .into_iter()
                .map(|(k, p)| OccluderRecord {
                    object_id: occluder_pool[k].0.clone(),
                    pose: p,
                })
                .collect(),
            occluded_region_replaced: replace,
            background,
            shading,
            border_blur_sigma,
            object_blur_sigma,
            hsv_shift,
        },
    })
}

/// Occluder in front of the target: depth at a random fraction of the
/// target depth, center offset sideways so that it partially overlaps.
fn sample_occluder_pose<R: Rng + ?Sized>(
    target: &Pose,
    target_diameter: f64,
    occluder: &TriangleMesh,
    cfg: &DatagenConfig,
    rng: &mut R,
) -> Pose {
    let f = uniform(rng, cfg.occluder_depth_fraction);
    let center = target.translation * f;
    let reach = 0.5 * (target_diameter + occluder.diameter) * f;
    let r = reach * rng.random_range(0.0f64..1.0).sqrt();
    let phi = rng.random_range(0.0..std::f64::consts::TAU);
    Pose::new(
        random_rotation(rng),
        center + Vector3::new(r * phi.cos(), r * phi.sin(), 0.0),
    )
}

pub fn image_name(frame_id: usize) -> String {
    format!("images/{frame_id:06}.png")
}

/// How generated frames relate to a real/synthetic training mix. Only the
/// synthetic stream is emitted; the ratios are carried as metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingMix {
    pub real: f64,
    pub synthetic: f64,
    pub emitted: String,
}

impl Default for SamplingMix {
    fn default() -> Self {
        SamplingMix {
            real: 0.33,
            synthetic: 0.67,
            emitted: "synthetic".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_frames: usize,
    pub seed: u64,
    pub objects: Vec<ObjectSpec>,
    pub config: DatagenConfig,
    pub sampling_mix: SamplingMix,
    pub config_hash: String,
}

pub fn config_hash<T: Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let text = serde_json::to_string(value).unwrap_or_default();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Generator for frame `index`: independent of every other frame.
pub fn frame_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Loads the dataset objects plus the extra occluder, keyed by id.
pub fn load_object_library(objects: &[ObjectSpec]) -> Result<BTreeMap<String, TriangleMesh>> {
    let mut lib = BTreeMap::new();
    for o in objects {
        lib.insert(o.id.clone(), o.load()?);
    }
    if !lib.contains_key(EXTRA_OCCLUDER) {
        lib.insert(
            EXTRA_OCCLUDER.to_string(),
            crate::model::resolve_mesh(&format!("builtin:{EXTRA_OCCLUDER}"))?,
        );
    }
    Ok(lib)
}

/// Frames of a dataset in memory, in frame order.
pub fn generate_frames(
    objects: &[ObjectSpec],
    n_frames: usize,
    cfg: &DatagenConfig,
) -> Result<Vec<GeneratedFrame>> {
    cfg.validate()?;
    if n_frames == 0 {
        return Err(Error::invalid("n_frames must be at least 1"));
    }
    if objects.is_empty() {
        return Err(Error::invalid("need at least one object"));
    }
    let library = load_object_library(objects)?;
    let backgrounds = cfg.backgrounds()?;
    (0..n_frames)
        .into_par_iter()
        .map(|i| generate_indexed(i, objects, &library, &backgrounds, cfg))
        .collect()
}

/// Frame `index` of the dataset described by `objects` and `cfg`; depends
/// only on the seed and the index.
pub fn generate_indexed(
    index: usize,
    objects: &[ObjectSpec],
    library: &BTreeMap<String, TriangleMesh>,
    backgrounds: &[RgbImage],
    cfg: &DatagenConfig,
) -> Result<GeneratedFrame> {
    let mut rng = frame_rng(cfg.seed, index);
    let spec = &objects[rng.random_range(0..objects.len())];
    let target = &library[&spec.id];
    let pose = sample_target_pose(cfg, &mut rng);
    let pool: Vec<(String, TriangleMesh)> = library
        .iter()
        .filter(|(id, _)| **id != spec.id)
        .map(|(id, m)| (id.clone(), m.clone()))
        .collect();
    generate_frame(index, &spec.id, target, &pose, &pool, backgrounds, cfg, &mut rng)
}

/// Writes `images/NNNNNN.png`, `gt.json`, `camera.json` and `manifest.json`
/// under `root`.
pub fn generate_dataset(
    root: &Path,
    objects: &[ObjectSpec],
    n_frames: usize,
    cfg: &DatagenConfig,
) -> Result<DatasetManifest> {
    let frames = generate_frames(objects, n_frames, cfg)?;
    let images = root.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    frames
        .par_iter()
        .try_for_each(|f| f.image.save_png(&root.join(&f.record.image)))?;
    let records: Vec<&FrameRecord> = frames.iter().map(|f| &f.record).collect();
    write_json(&root.join("gt.json"), &records)?;
    write_json(&root.join("camera.json"), &cfg.camera)?;
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        n_frames,
        seed: cfg.seed,
        objects: objects.to_vec(),
        config: cfg.clone(),
        sampling_mix: SamplingMix::default(),
        config_hash: config_hash(&(objects, n_frames, cfg)),
    };
    write_json(&root.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Rebuilds a dataset from a manifest into `root`.
pub fn regenerate_dataset(manifest_path: &Path, root: &Path) -> Result<DatasetManifest> {
    let m: DatasetManifest = read_json(manifest_path)?;
    if m.version != MANIFEST_VERSION {
        return Err(Error::Config(format!("unsupported manifest version {}", m.version)));
    }
    generate_dataset(root, &m.objects, m.n_frames, &m.config)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

/// A generated dataset read back from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub camera: CameraIntrinsics,
    pub frames: Vec<FrameRecord>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        Ok(Dataset {
            root: root.to_path_buf(),
            camera: read_json(&root.join("camera.json"))?,
            frames: read_json(&root.join("gt.json"))?,
            manifest: read_json(&root.join("manifest.json"))?,
        })
    }

    pub fn load_image(&self, frame: &FrameRecord) -> Result<RgbImage> {
        RgbImage::load(&self.root.join(&frame.image))
    }

    pub fn frame(&self, frame_id: usize) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::primitives;

    fn objects() -> Vec<ObjectSpec> {
        ["l_block", "wedge", "stepped_block"]
            .iter()
            .map(|n| ObjectSpec::parse(n))
            .collect()
    }

    fn small_cfg() -> DatagenConfig {
        DatagenConfig {
            camera: CameraIntrinsics::new(300.0, 300.0, 80.0, 60.0, 160, 120).unwrap(),
            depth_range: [0.5, 0.7],
            min_visible_pixels: 50,
            ..Default::default()
        }
    }

    #[test]
    fn frames_are_deterministic_per_seed() {
        let a = generate_frames(&objects(), 4, &small_cfg()).unwrap();
        let b = generate_frames(&objects(), 4, &small_cfg()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.image.data, y.image.data);
            assert_eq!(x.record, y.record);
        }
        let c = generate_frames(
            &objects(),
            4,
            &DatagenConfig {
                seed: 9,
                ..small_cfg()
            },
        )
        .unwrap();
        assert_ne!(a[0].image.data, c[0].image.data);
    }

    #[test]
    fn forced_occluders_keep_target_visible_and_recount_matches() {
        let cfg = DatagenConfig {
            occluder_probability: 1.0,
            ..small_cfg()
        };
        let frames = generate_frames(&objects(), 6, &cfg).unwrap();
        let lib = load_object_library(&objects()).unwrap();
        for f in &frames {
            let r = &f.record;
            assert_eq!(r.occluders.len(), 2);
            assert!(r.visible_pixels >= 50);
            let occ: Vec<_> = r.occluders.iter().map(|o| (&lib[&o.object_id], &o.pose)).collect();
            let n = count_visible_pixels((&lib[&r.object_id], &r.pose), &occ, &cfg.camera).unwrap();
            assert_eq!(n, r.visible_pixels);
            assert!(r.occluders.iter().all(|o| o.object_id != r.object_id));
            assert!(r.occluders.iter().all(|o| o.pose.depth() < r.pose.depth()));
        }
    }

    #[test]
    fn impossible_visibility_is_reported() {
        let cfg = DatagenConfig {
            occluder_probability: 1.0,
            min_visible_pixels: 1_000_000,
            max_visibility_attempts: 3,
            ..small_cfg()
        };
        let err = generate_frames(&objects(), 1, &cfg).unwrap_err();
        assert!(matches!(err, Error::VisibilityExhausted { .. }));
    }

    #[test]
    fn empty_background_pool_is_an_error() {
        let cfg = small_cfg();
        let m = primitives::l_block(0.15);
        let pose = Pose::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, 0.6));
        let mut rng = frame_rng(0, 0);
        let err = generate_frame(0, "x", &m, &pose, &[], &[], &cfg, &mut rng).unwrap_err();
        assert!(matches!(err, Error::EmptyBackgroundPool));
    }

    #[test]
    fn hsv_noise_stays_in_range() {
        let cfg = DatagenConfig {
            hsv_noise: HsvNoise {
                enabled: true,
                hue: 0.2,
                saturation: 0.8,
                value: 0.8,
            },
            ..small_cfg()
        };
        for f in generate_frames(&objects(), 3, &cfg).unwrap() {
            assert!(f.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(f.record.hsv_shift.is_some());
        }
    }

    #[test]
    fn dataset_layout_and_regeneration() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        generate_dataset(&a, &objects(), 2, &small_cfg()).unwrap();
        for f in ["gt.json", "camera.json", "manifest.json", "images/000000.png", "images/000001.png"] {
            assert!(a.join(f).exists(), "{f}");
        }
        assert_eq!(std::fs::read_dir(a.join("images")).unwrap().count(), 2);
        regenerate_dataset(&a.join("manifest.json"), &b).unwrap();
        for f in ["images/000000.png", "images/000001.png", "gt.json"] {
            assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
        }
        let ds = Dataset::open(&a).unwrap();
        assert_eq!(ds.frames.len(), 2);
        assert!(ds.frames.iter().all(|f| f.pose.depth() > 0.0));
        assert_eq!(ds.manifest.sampling_mix.real, 0.33);
    }
}
