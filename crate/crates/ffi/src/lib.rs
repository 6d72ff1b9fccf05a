//! C ABI over `ppc_core`.
//!
//! Every function returns a [`PpcStatus`]; on failure the message is kept
//! per thread and can be read with [`ppc_last_error_message`]. Objects are
//! opaque handles created by `*_new`/`*_load` functions and released by the
//! matching `*_free`. Rotations are 3×3 row-major, lengths in meters.

use std::cell::RefCell;
use std::ffi::{c_char, c_void, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use ppc_core::camera::{CameraIntrinsics, ZoomedCamera};
use ppc_core::critic::{Critic, CriticRequest, GroundTruth, OracleCritic};
use ppc_core::geometry::Pose;
use ppc_core::image::RgbImage;
use ppc_core::metrics::{evaluate_instance, MetricKind, SymmetrySet, Thresholds};
use ppc_core::model::{model_points, TriangleMesh, DEFAULT_MAX_POINTS};
use ppc_core::objective::Scene;
use ppc_core::optimizer::{refine_with_symmetries, RefinementConfig};
use ppc_core::proposals::{PerturbationKind, ProposalSampler, ProposalSamplerConfig};
use ppc_core::rasterizer::ShadingParams;
use ppc_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BehindCamera = 3,
    DegeneratePose = 4,
    Parse = 5,
    Io = 6,
    Critic = 7,
    Config = 8,
    Internal = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PpcPose {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct PpcIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

/// Metric values and acceptance flags (1 accepted, 0 rejected) in the
/// order add, adds, add(-s), reproj, reproj-s, 5cm5deg, 5cm5deg-s.
/// The value of the two 5cm5deg entries is the rotation error in degrees.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct PpcMetrics {
    pub values: [f64; 7],
    pub accepted: [u8; 7],
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PpcPerturbation {
    Rotation = 0,
    Lateral = 1,
    Depth = 2,
}

/// Image critic callback. `observed` and `rendered` are `resolution`²
/// interleaved RGB floats in [0, 1]. Write the score to `out_value` and
/// return 0; any other return value aborts the refinement. The callback is
/// called from several threads at once.
pub type PpcCriticFn = Option<
    unsafe extern "C" fn(
        user_data: *mut c_void,
        observed: *const f32,
        rendered: *const f32,
        resolution: usize,
        out_value: *mut f64,
    ) -> i32,
>;

pub struct PpcMesh {
    mesh: TriangleMesh,
    points: Vec<Vector3<f64>>,
}

pub struct PpcSampler {
    sampler: ProposalSampler,
}

pub struct PpcRefiner {
    mesh: TriangleMesh,
    points: Vec<Vector3<f64>>,
    intrinsics: CameraIntrinsics,
    config: RefinementConfig,
    critic: Box<dyn Critic>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PpcStatus {
    match e {
        Error::InvalidArgument(_) | Error::EmptyMesh | Error::KeyMismatch(_) => PpcStatus::InvalidArgument,
        Error::BehindCamera { .. } => PpcStatus::BehindCamera,
        Error::DegeneratePose(_) => PpcStatus::DegeneratePose,
        Error::Parse { .. } | Error::Json { .. } | Error::Image { .. } => PpcStatus::Parse,
        Error::Io { .. } => PpcStatus::Io,
        Error::CriticProtocol(_) | Error::CriticTimeout(_) => PpcStatus::Critic,
        Error::Config(_) => PpcStatus::Config,
        _ => PpcStatus::Internal,
    }
}

struct Fail(PpcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(PpcStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            PpcStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(PpcStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn to_pose(p: &PpcPose) -> Result<Pose, Fail> {
    let pose = Pose::new(
        Matrix3::from_row_slice(&p.rotation),
        Vector3::from_column_slice(&p.translation),
    );
    pose.validate()?;
    Ok(pose)
}

fn from_pose(p: &Pose) -> PpcPose {
    let mut rotation = [0.0; 9];
    for r in 0..3 {
        for c in 0..3 {
            rotation[r * 3 + c] = p.rotation[(r, c)];
        }
    }
    PpcPose {
        rotation,
        translation: [p.translation.x, p.translation.y, p.translation.z],
    }
}

fn to_intrinsics(i: &PpcIntrinsics) -> Result<CameraIntrinsics, Fail> {
    Ok(CameraIntrinsics::new(i.fx, i.fy, i.cx, i.cy, i.width as usize, i.height as usize)?)
}

/// Copies the calling thread's last error message into `buf` (always
/// NUL-terminated when `len > 0`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ppc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Rotation matrix of an axis-angle vector (radians).
///
/// # Safety
/// `axis_angle` points to 3 doubles, `out_rotation` to 9.
#[no_mangle]
pub unsafe extern "C" fn ppc_so3_exp(axis_angle: *const f64, out_rotation: *mut f64) -> PpcStatus {
    guard(|| {
        if axis_angle.is_null() || out_rotation.is_null() {
            return Err(null("argument"));
        }
        let v = Vector3::from_column_slice(std::slice::from_raw_parts(axis_angle, 3));
        let r = ppc_core::geometry::so3_exp(&v)?;
        let out = std::slice::from_raw_parts_mut(out_rotation, 9);
        for row in 0..3 {
            for col in 0..3 {
                out[row * 3 + col] = r[(row, col)];
            }
        }
        Ok(())
    })
}

/// Axis-angle vector of a rotation matrix.
///
/// # Safety
/// `rotation` points to 9 doubles, `out_axis_angle` to 3.
#[no_mangle]
pub unsafe extern "C" fn ppc_so3_log(rotation: *const f64, out_axis_angle: *mut f64) -> PpcStatus {
    guard(|| {
        if rotation.is_null() || out_axis_angle.is_null() {
            return Err(null("argument"));
        }
        let r = Matrix3::from_row_slice(std::slice::from_raw_parts(rotation, 9));
        let v = ppc_core::geometry::so3_log(&r);
        std::slice::from_raw_parts_mut(out_axis_angle, 3).copy_from_slice(v.as_slice());
        Ok(())
    })
}

/// Loads a mesh from a builtin name (`"builtin:cube"` or `"cube"`) or a
/// mesh file path.
///
/// # Safety
/// `source` is a NUL-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ppc_mesh_load(source: *const c_char, out: *mut *mut PpcMesh) -> PpcStatus {
    guard(|| {
        let source = str_arg(source, "source")?;
        let out = deref_mut(out, "out")?;
        let mesh = if Path::new(source).exists() {
            ppc_core::model::load_mesh(Path::new(source))?
        } else {
            ppc_core::model::ObjectSpec::parse(source).load()?
        };
        let points = model_points(&mesh, DEFAULT_MAX_POINTS);
        *out = Box::into_raw(Box::new(PpcMesh { mesh, points }));
        Ok(())
    })
}

/// # Safety
/// `mesh` is null or a handle from [`ppc_mesh_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ppc_mesh_free(mesh: *mut PpcMesh) {
    if !mesh.is_null() {
        drop(Box::from_raw(mesh));
    }
}

/// # Safety
/// `mesh` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ppc_mesh_diameter(mesh: *const PpcMesh, out: *mut f64) -> PpcStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(mesh, "mesh")?.mesh.diameter;
        Ok(())
    })
}

/// Number of symmetry rotations including the identity.
///
/// # Safety
/// `mesh` is a live handle; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ppc_mesh_symmetry_count(mesh: *const PpcMesh, out: *mut usize) -> PpcStatus {
    guard(|| {
        *deref_mut(out, "out")? = deref(mesh, "mesh")?.mesh.symmetries.len();
        Ok(())
    })
}

/// Mean patch-pixel distance between the mesh points placed by `estimate`
/// and by `truth`, in the zoomed patch of `estimate`.
///
/// # Safety
/// All pointers are valid; `mesh` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppc_oracle_error(
    mesh: *const PpcMesh,
    intrinsics: *const PpcIntrinsics,
    estimate: *const PpcPose,
    truth: *const PpcPose,
    patch_resolution: usize,
    out: *mut f64,
) -> PpcStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        let intr = to_intrinsics(deref(intrinsics, "intrinsics")?)?;
        let est = to_pose(deref(estimate, "estimate")?)?;
        let gt = to_pose(deref(truth, "truth")?)?;
        let zoom = ZoomedCamera::around(&intr, &est, m.mesh.diameter, patch_resolution)?;
        *deref_mut(out, "out")? = ppc_core::critic::oracle_error(&est, &gt, &m.points, &zoom)?;
        Ok(())
    })
}

/// Scores `estimate` against `truth` with the default thresholds.
///
/// # Safety
/// All pointers are valid; `mesh` is a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppc_evaluate_pose(
    mesh: *const PpcMesh,
    intrinsics: *const PpcIntrinsics,
    estimate: *const PpcPose,
    truth: *const PpcPose,
    out: *mut PpcMetrics,
) -> PpcStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        let intr = to_intrinsics(deref(intrinsics, "intrinsics")?)?;
        let est = to_pose(deref(estimate, "estimate")?)?;
        let gt = to_pose(deref(truth, "truth")?)?;
        let out = deref_mut(out, "out")?;
        let syms = SymmetrySet::new(&m.mesh.symmetries);
        let v = evaluate_instance(&est, &gt, &m.points, m.mesh.diameter, &intr, &syms, &Thresholds::default())?;
        for (i, kind) in MetricKind::ALL.iter().enumerate() {
            out.values[i] = v.value(*kind);
            out.accepted[i] = v.accepted(*kind) as u8;
        }
        Ok(())
    })
}

/// Moves a pose with negative depth in front of the camera while keeping
/// its projected center.
///
/// # Safety
/// `pose` and `out` are valid.
#[no_mangle]
pub unsafe extern "C" fn ppc_correct_negative_depth(pose: *const PpcPose, out: *mut PpcPose) -> PpcStatus {
    guard(|| {
        let p = to_pose(deref(pose, "pose")?)?;
        let fixed = ppc_core::proposals::correct_negative_depth(&p)?;
        *deref_mut(out, "out")? = from_pose(&fixed);
        Ok(())
    })
}

/// Proposal sampler with default settings and the given seed.
///
/// # Safety
/// `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn ppc_sampler_new(seed: u64, out: *mut *mut PpcSampler) -> PpcStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let cfg = ProposalSamplerConfig {
            seed,
            ..Default::default()
        };
        *out = Box::into_raw(Box::new(PpcSampler {
            sampler: ProposalSampler::new(cfg)?,
        }));
        Ok(())
    })
}

/// # Safety
/// `sampler` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppc_sampler_free(sampler: *mut PpcSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Draws one perturbed proposal around `truth`. `out_kind` may be null.
///
/// # Safety
/// `sampler` is a live handle; other pointers are valid.
#[no_mangle]
pub unsafe extern "C" fn ppc_sampler_sample(
    sampler: *mut PpcSampler,
    truth: *const PpcPose,
    diameter: f64,
    out: *mut PpcPose,
    out_kind: *mut PpcPerturbation,
) -> PpcStatus {
    guard(|| {
        let s = deref_mut(sampler, "sampler")?;
        let gt = to_pose(deref(truth, "truth")?)?;
        let out = deref_mut(out, "out")?;
        let p = s.sampler.sample(&gt, diameter)?;
        *out = from_pose(&p.pose);
        if let Some(k) = out_kind.as_mut() {
            *k = match p.kind {
                PerturbationKind::Rotation => PpcPerturbation::Rotation,
                PerturbationKind::Lateral => PpcPerturbation::Lateral,
                PerturbationKind::Depth => PpcPerturbation::Depth,
            };
        }
        Ok(())
    })
}

struct CallbackCritic {
    f: unsafe extern "C" fn(*mut c_void, *const f32, *const f32, usize, *mut f64) -> i32,
    user_data: usize,
}

impl Critic for CallbackCritic {
    fn evaluate(&self, req: &CriticRequest<'_>) -> ppc_core::Result<f64> {
        let n = req.observed.camera.out_resolution;
        if req.rendered.camera.out_resolution != n {
            return Err(Error::InvalidArgument("patch resolutions differ".into()));
        }
        let mut value = f64::NAN;
        // SAFETY: the caller of ppc_refiner_new promised a thread-safe callback
        let code = unsafe {
            (self.f)(
                self.user_data as *mut c_void,
                req.observed.pixels.data.as_ptr(),
                req.rendered.pixels.data.as_ptr(),
                n,
                &mut value,
            )
        };
        if code != 0 {
            return Err(Error::CriticProtocol(format!("critic callback returned {code}")));
        }
        if !value.is_finite() {
            return Err(Error::CriticProtocol(format!("critic callback produced {value}")));
        }
        Ok(value)
    }

    fn name(&self) -> &str {
        "callback"
    }
}

/// Creates a refiner for `mesh` seen through `intrinsics`.
///
/// `config_json` is a refinement config in JSON, or null for defaults.
/// With a null `critic` the oracle critic is used, which needs the ground
/// truth passed to [`ppc_refiner_run`].
///
/// # Safety
/// `mesh` is a live handle; `config_json` is null or NUL-terminated;
/// `critic` must be safe to call concurrently with `user_data`.
#[no_mangle]
pub unsafe extern "C" fn ppc_refiner_new(
    mesh: *const PpcMesh,
    intrinsics: *const PpcIntrinsics,
    config_json: *const c_char,
    critic: PpcCriticFn,
    user_data: *mut c_void,
    out: *mut *mut PpcRefiner,
) -> PpcStatus {
    guard(|| {
        let m = deref(mesh, "mesh")?;
        let intr = to_intrinsics(deref(intrinsics, "intrinsics")?)?;
        let out = deref_mut(out, "out")?;
        let config: RefinementConfig = if config_json.is_null() {
            RefinementConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)
                .map_err(|e| Fail(PpcStatus::Config, format!("refinement config: {e}")))?
        };
        config.validate()?;
        let critic: Box<dyn Critic> = match critic {
            Some(f) => Box::new(CallbackCritic {
                f,
                user_data: user_data as usize,
            }),
            None => Box::new(OracleCritic),
        };
        *out = Box::into_raw(Box::new(PpcRefiner {
            mesh: m.mesh.clone(),
            points: m.points.clone(),
            intrinsics: intr,
            config,
            critic,
        }));
        Ok(())
    })
}

/// # Safety
/// `refiner` is null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ppc_refiner_free(refiner: *mut PpcRefiner) {
    if !refiner.is_null() {
        drop(Box::from_raw(refiner));
    }
}

/// Refines `proposal` against an RGB8 image of the camera's size (null for
/// a black image). `truth` may be null unless the oracle critic is used.
/// `out_objective` may be null.
///
/// # Safety
/// `image_rgb8` is null or holds width·height·3 bytes; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ppc_refiner_run(
    refiner: *const PpcRefiner,
    image_rgb8: *const u8,
    proposal: *const PpcPose,
    truth: *const PpcPose,
    out: *mut PpcPose,
    out_objective: *mut f64,
) -> PpcStatus {
    guard(|| {
        let r = deref(refiner, "refiner")?;
        let proposal = to_pose(deref(proposal, "proposal")?)?;
        let out = deref_mut(out, "out")?;
        let (w, h) = (r.intrinsics.width, r.intrinsics.height);
        let image = if image_rgb8.is_null() {
            RgbImage::new(w, h)
        } else {
            RgbImage::from_rgb8(w, h, std::slice::from_raw_parts(image_rgb8, w * h * 3))?
        };
        let truth = match truth.as_ref() {
            Some(t) => Some(GroundTruth {
                pose: to_pose(t)?,
                points: r.points.clone(),
            }),
            None => None,
        };
        let scene = Scene {
            observed: &image,
            mesh: &r.mesh,
            intrinsics: r.intrinsics,
            shading: ShadingParams::default(),
            critic: r.critic.as_ref(),
            truth,
        };
        let result = refine_with_symmetries(&scene, &proposal, &r.mesh.symmetries, &r.config)
            .map_err(|e| Fail::from(e.error))?;
        *out = from_pose(&result.pose);
        if let Some(o) = out_objective.as_mut() {
            *o = result.objective;
        }
        Ok(())
    })
}
