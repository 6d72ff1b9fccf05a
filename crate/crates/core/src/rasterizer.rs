//! Deterministic CPU rasterizer.
//!
//! Triangles are scan-converted against pixel centers with a top-left fill
//! rule and z-buffered using perspective-correct depth. Shading is deferred:
//! the visibility pass records the winning triangle and its
//! perspective-correct barycentrics, and a second pass shades each pixel once.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, ImagePatch, ZoomedCamera};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::RgbImage;
use crate::model::TriangleMesh;

/// Triangles with any vertex closer than this are discarded (no clipping).
pub const NEAR_PLANE: f64 = 1e-6;
pub const DEFAULT_RENDER_RESOLUTION: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShadingMode {
    Lambertian,
    Phong,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShadingParams {
    pub mode: ShadingMode,
    /// Camera frame, meters.
    pub light_position: [f64; 3],
    pub ambient: f64,
    pub diffuse: f64,
    pub specular: f64,
    pub shininess: f64,
    /// Blend of the specular color between the albedo (0) and white (1).
    pub whiteness: f64,
}

impl Default for ShadingParams {
    /// Lambertian shading with the light at the camera center.
    fn default() -> Self {
        ShadingParams {
            mode: ShadingMode::Lambertian,
            light_position: [0.0; 3],
            ambient: 0.3,
            diffuse: 0.7,
            specular: 0.0,
            shininess: 1.0,
            whiteness: 0.0,
        }
    }
}

impl ShadingParams {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.ambient, self.diffuse, self.specular];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0 || *w > 2.0)
            || !self.light_position.iter().all(|v| v.is_finite())
            || !(self.shininess >= 1.0)
            || !(0.0..=1.0).contains(&self.whiteness)
        {
            return Err(Error::invalid(format!("invalid shading parameters {self:?}")));
        }
        Ok(())
    }
}

/// Full-resolution output of the visibility + shading passes.
#[derive(Clone, Debug)]
pub struct SceneRender {
    pub color: RgbImage,
    /// Meters along the principal axis, `+∞` for background.
    pub depth: Vec<f32>,
    /// Index into the scene of the object owning each pixel, `-1` for background.
    pub owner: Vec<i32>,
}

impl SceneRender {
    pub fn count_owned_by(&self, index: usize) -> usize {
        self.owner.iter().filter(|&&o| o == index as i32).count()
    }

    pub fn mask(&self) -> Vec<bool> {
        self.owner.iter().map(|&o| o >= 0).collect()
    }
}

/// A rendered patch.
#[derive(Clone, Debug)]
pub struct RenderOutput {
    pub color: ImagePatch,
    pub mask: Vec<bool>,
    /// Meters, `+∞` where the mask is false.
    pub depth: Vec<f32>,
}

impl RenderOutput {
    pub fn resolution(&self) -> usize {
        self.color.camera.out_resolution
    }

    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean pixel coordinate of the foreground, if any.
    pub fn silhouette_centroid(&self) -> Option<(f64, f64)> {
        let n = self.resolution();
        let (mut sx, mut sy, mut c) = (0.0, 0.0, 0usize);
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                sx += (i % n) as f64;
                sy += (i / n) as f64;
                c += 1;
            }
        }
        (c > 0).then(|| (sx / c as f64, sy / c as f64))
    }
}

struct CameraSpaceMesh {
    positions: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
}

#[derive(Clone, Copy)]
struct Fragment {
    object: u32,
    triangle: u32,
    bary: [f32; 3],
}

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// Top-left rule for positively oriented triangles in y-down screen space.
#[inline]
fn is_top_left(ax: f64, ay: f64, bx: f64, by: f64) -> bool {
    let (dx, dy) = (bx - ax, by - ay);
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

/// Renders every `(mesh, pose)` of `scene` into one z-buffer under `intr`.
pub fn rasterize(
    scene: &[(&TriangleMesh, &Pose)],
    intr: &CameraIntrinsics,
    shading: &ShadingParams,
) -> Result<SceneRender> {
    intr.validate()?;
    shading.validate()?;
    let (w, h) = (intr.width, intr.height);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut frags: Vec<Option<Fragment>> = vec![None; w * h];

    let transformed: Vec<CameraSpaceMesh> = scene
        .iter()
        .map(|(mesh, pose)| CameraSpaceMesh {
            positions: mesh.vertices.iter().map(|v| pose.transform(v)).collect(),
            normals: mesh.normals.iter().map(|n| pose.rotation * n).collect(),
        })
        .collect();

    for (obj, (mesh, _)) in scene.iter().enumerate() {
        let cam = &transformed[obj];
        for (ti, tri) in mesh.triangles.iter().enumerate() {
            let p = tri.map(|i| cam.positions[i as usize]);
            if p.iter().any(|v| v.z <= NEAR_PLANE) {
                continue;
            }
            let s = p.map(|v| (intr.fx * v.x / v.z + intr.cx, intr.fy * v.y / v.z + intr.cy));
            let mut order = [0usize, 1, 2];
            let mut area = edge(s[0].0, s[0].1, s[1].0, s[1].1, s[2].0, s[2].1);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            if area < 0.0 {
                order = [0, 2, 1];
                area = -area;
            }
            let [a, b, c] = order.map(|k| s[k]);
            let inv_z = order.map(|k| 1.0 / p[k].z);

            let xmin = a.0.min(b.0).min(c.0).ceil().max(0.0);
            let xmax = a.0.max(b.0).max(c.0).floor().min((w - 1) as f64);
            let ymin = a.1.min(b.1).min(c.1).ceil().max(0.0);
            let ymax = a.1.max(b.1).max(c.1).floor().min((h - 1) as f64);
            if xmin > xmax || ymin > ymax {
                continue;
            }
            let tl = [
                is_top_left(b.0, b.1, c.0, c.1),
                is_top_left(c.0, c.1, a.0, a.1),
                is_top_left(a.0, a.1, b.0, b.1),
            ];
            for y in ymin as usize..=ymax as usize {
                let py = y as f64;
                for x in xmin as usize..=xmax as usize {
                    let px = x as f64;
                    let e = [
                        edge(b.0, b.1, c.0, c.1, px, py),
                        edge(c.0, c.1, a.0, a.1, px, py),
                        edge(a.0, a.1, b.0, b.1, px, py),
                    ];
                    if !(0..3).all(|k| e[k] > 0.0 || (e[k] == 0.0 && tl[k])) {
                        continue;
                    }
                    let l = [e[0] / area, e[1] / area, e[2] / area];
                    let iz = l[0] * inv_z[0] + l[1] * inv_z[1] + l[2] * inv_z[2];
                    let z = 1.0 / iz;
                    let idx = y * w + x;
                    if z < zbuf[idx] {
                        zbuf[idx] = z;
                        // perspective-correct weights, mapped back to the
                        // triangle's own vertex order
                        let mut bary = [0.0f32; 3];
                        for k in 0..3 {
                            bary[order[k]] = (l[k] * inv_z[k] * z) as f32;
                        }
                        frags[idx] = Some(Fragment {
                            object: obj as u32,
                            triangle: ti as u32,
                            bary,
                        });
                    }
                }
            }
        }
    }

    let light = Vector3::from(shading.light_position);
    let mut color = RgbImage::new(w, h);
    let mut owner = vec![-1i32; w * h];
    let depth: Vec<f32> = zbuf.iter().map(|&z| z as f32).collect();
    for (idx, frag) in frags.iter().enumerate() {
        let Some(f) = frag else { continue };
        let (mesh, _) = scene[f.object as usize];
        let cam = &transformed[f.object as usize];
        let tri = mesh.triangles[f.triangle as usize];
        let mut pos = Vector3::zeros();
        let mut nrm = Vector3::zeros();
        let mut albedo = [0.0f32; 3];
        for k in 0..3 {
            let vi = tri[k] as usize;
            let wk = f.bary[k] as f64;
            pos += cam.positions[vi] * wk;
            nrm += cam.normals[vi] * wk;
            let c = mesh.albedo(vi);
            for ch in 0..3 {
                albedo[ch] += f.bary[k] * c[ch];
            }
        }
        let rgb = shade(&pos, &nrm, albedo, &light, shading);
        owner[idx] = f.object as i32;
        color.data[idx * 3..idx * 3 + 3].copy_from_slice(&rgb);
    }
    Ok(SceneRender {
        color,
        depth,
        owner,
    })
}

fn shade(
    pos: &Vector3<f64>,
    normal: &Vector3<f64>,
    albedo: [f32; 3],
    light: &Vector3<f64>,
    p: &ShadingParams,
) -> [f32; 3] {
    let n = normal.try_normalize(1e-12).unwrap_or(Vector3::z());
    let l = (light - pos).try_normalize(1e-12).unwrap_or(-Vector3::z());
    let ndl = n.dot(&l).max(0.0);
    let lambert = (p.ambient + p.diffuse * ndl) as f32;
    let mut rgb = albedo.map(|a| a * lambert);
    if p.mode == ShadingMode::Phong && p.specular > 0.0 && ndl > 0.0 {
        let v = (-pos).try_normalize(1e-12).unwrap_or(-Vector3::z());
        let r = n * (2.0 * ndl) - l;
        let spec = (p.specular * r.dot(&v).max(0.0).powf(p.shininess)) as f32;
        let white = p.whiteness as f32;
        for ch in 0..3 {
            rgb[ch] += spec * (white + (1.0 - white) * albedo[ch]);
        }
    }
    rgb.map(|c| c.clamp(0.0, 1.0))
}

/// Upsamples a square render to the zoom's output resolution: bilinear color,
/// mask by thresholding the bilinear coverage at 0.5, nearest depth.
fn upsample(raw: &SceneRender, r: usize, zoom: &ZoomedCamera) -> RenderOutput {
    let n = zoom.out_resolution;
    let mut color = RgbImage::new(n, n);
    let mut mask = vec![false; n * n];
    let mut depth = vec![f32::INFINITY; n * n];
    let ratio = r as f64 / n as f64;
    let last = (r - 1) as f64;
    let src = &raw.color.data;
    // (lower tap, upper tap, weight of upper, nearest) per output coordinate
    let axis: Vec<(usize, usize, f32, usize)> = (0..n)
        .map(|p| {
            let v = (p as f64 * ratio).min(last);
            let lo = v as usize;
            let f = v - lo as f64;
            let nearest = if f >= 0.5 { (lo + 1).min(r - 1) } else { lo };
            (lo, (lo + 1).min(r - 1), f as f32, nearest)
        })
        .collect();
    for py in 0..n {
        let (y0, y1, fy, ny) = axis[py];
        for px in 0..n {
            let (x0, x1, fx, nx) = axis[px];
            let taps = [
                (y0 * r + x0, (1.0 - fx) * (1.0 - fy)),
                (y0 * r + x1, fx * (1.0 - fy)),
                (y1 * r + x0, (1.0 - fx) * fy),
                (y1 * r + x1, fx * fy),
            ];
            let coverage: f32 = taps
                .iter()
                .filter(|(i, _)| raw.owner[*i] >= 0)
                .map(|(_, w)| w)
                .sum();
            if coverage < 0.5 {
                continue;
            }
            let o = py * n + px;
            mask[o] = true;
            let mut rgb = [0.0f32; 3];
            for (i, wt) in taps {
                for ch in 0..3 {
                    rgb[ch] += wt * src[i * 3 + ch];
                }
            }
            color.data[o * 3..o * 3 + 3].copy_from_slice(&rgb);
            let nearest = ny * r + nx;
            depth[o] = if raw.depth[nearest].is_finite() {
                raw.depth[nearest]
            } else {
                taps.iter()
                    .filter(|(i, _)| raw.depth[*i].is_finite())
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(i, _)| raw.depth[*i])
                    .unwrap_or(f32::INFINITY)
            };
        }
    }
    RenderOutput {
        color: ImagePatch {
            pixels: color,
            camera: *zoom,
        },
        mask,
        depth,
    }
}

fn check_patch_args(zoom: &ZoomedCamera, render_resolution: usize) -> Result<()> {
    if !(zoom.patch_side > 0.0) || !zoom.patch_side.is_finite() {
        return Err(Error::invalid("degenerate zoom: patch side must be positive"));
    }
    if render_resolution < 1 || render_resolution > zoom.out_resolution {
        return Err(Error::invalid(format!(
            "render resolution {render_resolution} must be in 1..={}",
            zoom.out_resolution
        )));
    }
    Ok(())
}

/// Renders one mesh into the zoom window at `render_resolution`² and
/// upsamples to the zoom's output resolution.
pub fn render(
    mesh: &TriangleMesh,
    pose: &Pose,
    zoom: &ZoomedCamera,
    shading: &ShadingParams,
    render_resolution: usize,
) -> Result<RenderOutput> {
    check_patch_args(zoom, render_resolution)?;
    let raw = rasterize(&[(mesh, pose)], &zoom.intrinsics_at(render_resolution), shading)?;
    Ok(upsample(&raw, render_resolution, zoom))
}

/// Jointly renders a scene into the zoom window; also returns how many
/// render-resolution pixels the target wins.
pub fn render_with_occluders(
    scene: &[(&TriangleMesh, &Pose)],
    target_index: usize,
    zoom: &ZoomedCamera,
    shading: &ShadingParams,
    render_resolution: usize,
) -> Result<(RenderOutput, usize)> {
    if target_index >= scene.len() {
        return Err(Error::invalid("target index outside the scene"));
    }
    check_patch_args(zoom, render_resolution)?;
    let raw = rasterize(scene, &zoom.intrinsics_at(render_resolution), shading)?;
    let visible = raw.count_owned_by(target_index);
    Ok((upsample(&raw, render_resolution, zoom), visible))
}
