//! Pinhole projection and the zoom-in operator that produces square,
//! object-centered patches.
//!
//! Integer pixel coordinates address pixel centers everywhere (projection,
//! rasterization and patch extraction agree on this).

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::image::RgbImage;

/// Relative size of the zoom window with respect to the projected diameter.
pub const ZOOM_MARGIN: f64 = 1.2;
/// Side of the observed/rendered patches fed to the critic.
pub const DEFAULT_PATCH_RESOLUTION: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let intr = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// LINEMOD-like Kinect intrinsics, 640×480.
    pub fn linemod() -> Self {
        CameraIntrinsics {
            fx: 572.4114,
            fy: 573.57043,
            cx: 325.2611,
            cy: 242.04899,
            width: 640,
            height: 480,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 || self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!("invalid intrinsics {self:?}")));
        }
        Ok(())
    }

    /// Projects a camera-frame point; no clamping to the image bounds.
    #[inline]
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(p.z > 0.0) {
            return Err(Error::BehindCamera { depth: p.z });
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }
}

pub fn project(intr: &CameraIntrinsics, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    intr.project(point)
}

/// Camera of a square patch cut out of the base image and resampled to
/// `out_resolution`².
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZoomedCamera {
    pub base: CameraIntrinsics,
    /// Base-image pixels.
    pub patch_center: Vector2<f64>,
    /// Base-image pixels.
    pub patch_side: f64,
    pub out_resolution: usize,
}

impl ZoomedCamera {
    pub fn new(
        base: CameraIntrinsics,
        patch_center: Vector2<f64>,
        patch_side: f64,
        out_resolution: usize,
    ) -> Result<Self> {
        if !(patch_side > 0.0) || !patch_side.is_finite() {
            return Err(Error::invalid(format!("patch side must be positive, got {patch_side}")));
        }
        if out_resolution < 2 {
            return Err(Error::invalid("patch resolution must be at least 2"));
        }
        Ok(ZoomedCamera {
            base,
            patch_center,
            patch_side,
            out_resolution,
        })
    }

    /// The zoom-in window for `pose`: centered on the projected object
    /// center, sized `1.2 · mean(fx, fy) · diameter / depth`.
    pub fn around(
        intr: &CameraIntrinsics,
        pose: &Pose,
        diameter: f64,
        out_resolution: usize,
    ) -> Result<Self> {
        if !(diameter > 0.0) {
            return Err(Error::invalid(format!("diameter must be positive, got {diameter}")));
        }
        let center = intr.project(&pose.translation)?;
        let focal = 0.5 * (intr.fx + intr.fy);
        let side = ZOOM_MARGIN * focal * diameter / pose.depth();
        ZoomedCamera::new(*intr, center, side, out_resolution)
    }

    /// Top-left corner of the window in base-image pixels.
    pub fn corner(&self) -> Vector2<f64> {
        self.patch_center - Vector2::repeat(0.5 * self.patch_side)
    }

    /// Patch pixels per base-image pixel.
    pub fn scale(&self) -> f64 {
        self.out_resolution as f64 / self.patch_side
    }

    /// Intrinsics of the patch sampled at `resolution`² (which need not equal
    /// `out_resolution`).
    pub fn intrinsics_at(&self, resolution: usize) -> CameraIntrinsics {
        let s = resolution as f64 / self.patch_side;
        let c = self.corner();
        CameraIntrinsics {
            fx: self.base.fx * s,
            fy: self.base.fy * s,
            cx: (self.base.cx - c.x) * s,
            cy: (self.base.cy - c.y) * s,
            width: resolution,
            height: resolution,
        }
    }

    pub fn effective_intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics_at(self.out_resolution)
    }

    /// Base-image pixel → patch pixel.
    #[inline]
    pub fn to_patch(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        (uv - self.corner()) * self.scale()
    }

    /// Patch pixel → base-image pixel.
    #[inline]
    pub fn to_base(&self, uv: &Vector2<f64>) -> Vector2<f64> {
        uv / self.scale() + self.corner()
    }

    /// Projects an object-frame point, placed by `pose`, into patch pixels.
    #[inline]
    pub fn project_to_patch(&self, pose: &Pose, point_object: &Vector3<f64>) -> Result<Vector2<f64>> {
        let uv = self.base.project(&pose.transform(point_object))?;
        Ok(self.to_patch(&uv))
    }
}

pub fn make_zoom(
    intr: &CameraIntrinsics,
    pose: &Pose,
    diameter: f64,
    out_resolution: usize,
) -> Result<ZoomedCamera> {
    ZoomedCamera::around(intr, pose, diameter, out_resolution)
}

pub fn project_to_patch(
    zoom: &ZoomedCamera,
    pose: &Pose,
    point_object: &Vector3<f64>,
) -> Result<Vector2<f64>> {
    zoom.project_to_patch(pose, point_object)
}

/// An observed or rendered patch together with the camera it was sampled with.
#[derive(Clone, Debug)]
pub struct ImagePatch {
    pub pixels: RgbImage,
    pub camera: ZoomedCamera,
}

/// Bilinearly resamples the zoom window of `image` into an
/// `out_resolution`² patch. Samples falling outside the image are black.
pub fn extract_patch(image: &RgbImage, zoom: &ZoomedCamera) -> Result<ImagePatch> {
    if image.width != zoom.base.width || image.height != zoom.base.height {
        return Err(Error::invalid(format!(
            "image is {}x{}, camera expects {}x{}",
            image.width, image.height, zoom.base.width, zoom.base.height
        )));
    }
    let n = zoom.out_resolution;
    let step = 1.0 / zoom.scale();
    let corner = zoom.corner();
    let mut pixels = RgbImage::new(n, n);
    let xs: Vec<f64> = (0..n).map(|p| corner.x + p as f64 * step).collect();
    for py in 0..n {
        let by = corner.y + py as f64 * step;
        let row = &mut pixels.data[py * n * 3..(py + 1) * n * 3];
        for (px, &bx) in xs.iter().enumerate() {
            row[px * 3..px * 3 + 3].copy_from_slice(&image.sample_bilinear(bx, by));
        }
    }
    Ok(ImagePatch {
        pixels,
        camera: *zoom,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn at_depth(x: f64, y: f64, z: f64) -> Pose {
        Pose::new(nalgebra::Matrix3::identity(), Vector3::new(x, y, z))
    }

    #[test]
    fn projection_examples() {
        let k = intr();
        assert_eq!(project(&k, &Vector3::new(0.0, 0.0, 1.0)).unwrap(), Vector2::new(320.0, 240.0));
        assert_eq!(project(&k, &Vector3::new(0.1, 0.0, 1.0)).unwrap(), Vector2::new(370.0, 240.0));
        assert!(matches!(
            project(&k, &Vector3::new(0.0, 0.0, -1.0)),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn zoom_examples() {
        let k = intr();
        let z = make_zoom(&k, &at_depth(0.0, 0.0, 1.0), 0.2, 512).unwrap();
        assert_relative_eq!(z.patch_side, 120.0, epsilon = 1e-12);
        assert_eq!(z.patch_center, Vector2::new(320.0, 240.0));
        let z2 = make_zoom(&k, &at_depth(0.0, 0.0, 2.0), 0.2, 512).unwrap();
        assert_relative_eq!(z2.patch_side, 60.0, epsilon = 1e-12);
        assert!(matches!(
            make_zoom(&k, &at_depth(0.0, 0.0, -1.0), 0.2, 512),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn object_center_lands_on_patch_center() {
        let pose = at_depth(0.07, -0.04, 0.9);
        let z = make_zoom(&intr(), &pose, 0.15, 512).unwrap();
        let c = project_to_patch(&z, &pose, &Vector3::zeros()).unwrap();
        assert!((c - Vector2::new(256.0, 256.0)).amax() < 1e-9);
    }

    #[test]
    fn unit_scale_is_pure_offset() {
        let z = ZoomedCamera::new(intr(), Vector2::new(300.0, 200.0), 64.0, 64).unwrap();
        let uv = Vector2::new(310.5, 190.25);
        let p = z.to_patch(&uv);
        assert_eq!(p, uv - z.corner());
    }

    #[test]
    fn one_base_pixel_is_scale_patch_pixels() {
        let z = ZoomedCamera::new(intr(), Vector2::new(320.0, 240.0), 120.0, 512).unwrap();
        let a = z.to_patch(&Vector2::new(320.0, 240.0));
        let b = z.to_patch(&Vector2::new(321.0, 240.0));
        assert_relative_eq!((b - a).x, 512.0 / 120.0, epsilon = 1e-12);
    }

    #[test]
    fn effective_intrinsics_agree_with_mapping() {
        let pose = at_depth(0.05, 0.02, 0.7);
        let z = make_zoom(&intr(), &pose, 0.15, 512).unwrap();
        let p = Vector3::new(0.03, -0.02, 0.75);
        let direct = z.to_patch(&intr().project(&p).unwrap());
        let eff = z.effective_intrinsics().project(&p).unwrap();
        assert!((direct - eff).amax() < 1e-9);
    }

    #[test]
    fn constant_image_gives_constant_patch() {
        let img = RgbImage::filled(640, 480, [0.4, 0.4, 0.4]);
        let z = ZoomedCamera::new(intr(), Vector2::new(320.0, 240.0), 100.0, 32).unwrap();
        let p = extract_patch(&img, &z).unwrap();
        assert!(p.pixels.data.iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn window_outside_image_is_black() {
        let img = RgbImage::filled(640, 480, [0.4, 0.4, 0.4]);
        let z = ZoomedCamera::new(intr(), Vector2::new(-500.0, -500.0), 100.0, 16).unwrap();
        let p = extract_patch(&img, &z).unwrap();
        assert!(p.pixels.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn checkerboard_upsample_center_is_mean() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 2, 2).unwrap();
        let mut img = RgbImage::new(2, 2);
        img.set(0, 0, [1.0; 3]);
        img.set(1, 1, [1.0; 3]);
        // window [0, 2)² resampled to 4²: patch pixel 1 sits at base 0.5
        let z = ZoomedCamera::new(k, Vector2::new(1.0, 1.0), 2.0, 4).unwrap();
        let p = extract_patch(&img, &z).unwrap();
        assert_eq!(p.pixels.get(1, 1), [0.5; 3]);
        assert_eq!(p.pixels.get(0, 0), [1.0; 3]);
    }

    #[test]
    fn unit_zoom_with_integer_corner_is_a_crop() {
        let mut img = RgbImage::new(640, 480);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = ((i * 7919) % 256) as f32 / 255.0;
        }
        let z = ZoomedCamera::new(intr(), Vector2::new(116.0, 216.0), 32.0, 32).unwrap();
        let p = extract_patch(&img, &z).unwrap();
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(p.pixels.get(x, y), img.get(100 + x, 200 + y));
            }
        }
    }

    #[test]
    fn mismatched_image_is_rejected() {
        let img = RgbImage::new(10, 10);
        let z = ZoomedCamera::new(intr(), Vector2::new(5.0, 5.0), 4.0, 4).unwrap();
        assert!(extract_patch(&img, &z).is_err());
    }
}
