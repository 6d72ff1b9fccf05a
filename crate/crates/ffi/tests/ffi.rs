use std::ffi::{c_void, CString};
use std::ptr;

use ppc_ffi::*;

fn intrinsics() -> PpcIntrinsics {
    PpcIntrinsics {
        fx: 572.4114,
        fy: 573.57043,
        cx: 325.2611,
        cy: 242.04899,
        width: 640,
        height: 480,
    }
}

fn pose(aa: [f64; 3], t: [f64; 3]) -> PpcPose {
    let mut p = PpcPose {
        translation: t,
        ..Default::default()
    };
    assert_eq!(unsafe { ppc_so3_exp(aa.as_ptr(), p.rotation.as_mut_ptr()) }, PpcStatus::Ok);
    p
}

fn last_error() -> String {
    let mut buf = vec![0u8; 256];
    let n = unsafe { ppc_last_error_message(buf.as_mut_ptr() as *mut _, buf.len()) };
    buf.truncate(n.min(255));
    String::from_utf8(buf).unwrap()
}

fn load(name: &str) -> *mut PpcMesh {
    let name = CString::new(name).unwrap();
    let mut mesh = ptr::null_mut();
    assert_eq!(unsafe { ppc_mesh_load(name.as_ptr(), &mut mesh) }, PpcStatus::Ok);
    mesh
}

#[test]
fn so3_round_trip() {
    let aa = [0.3, -0.7, 1.1];
    let mut r = [0.0; 9];
    let mut back = [0.0; 3];
    unsafe {
        assert_eq!(ppc_so3_exp(aa.as_ptr(), r.as_mut_ptr()), PpcStatus::Ok);
        assert_eq!(ppc_so3_log(r.as_ptr(), back.as_mut_ptr()), PpcStatus::Ok);
    }
    for i in 0..3 {
        assert!((aa[i] - back[i]).abs() < 1e-12);
    }
}

#[test]
fn null_pointers_report_errors() {
    let status = unsafe { ppc_so3_exp(ptr::null(), ptr::null_mut()) };
    assert_eq!(status, PpcStatus::NullPointer);
    assert!(last_error().contains("null"));
    let mut d = 0.0;
    assert_eq!(unsafe { ppc_mesh_diameter(ptr::null(), &mut d) }, PpcStatus::NullPointer);
    unsafe { ppc_mesh_free(ptr::null_mut()) };
}

#[test]
fn unknown_mesh_fails() {
    let name = CString::new("/no/such/mesh.obj").unwrap();
    let mut mesh = ptr::null_mut();
    let status = unsafe { ppc_mesh_load(name.as_ptr(), &mut mesh) };
    assert_ne!(status, PpcStatus::Ok);
    assert!(mesh.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn error_message_truncates() {
    unsafe { ppc_so3_exp(ptr::null(), ptr::null_mut()) };
    let mut buf = [0x7fu8; 4];
    let n = unsafe { ppc_last_error_message(buf.as_mut_ptr() as *mut _, buf.len()) };
    assert!(n > 3);
    assert_eq!(buf[3], 0);
}

#[test]
fn mesh_queries() {
    let cube = load("cube");
    let twofold = load("builtin:twofold_block");
    let (mut d, mut n) = (0.0, 0usize);
    unsafe {
        assert_eq!(ppc_mesh_diameter(cube, &mut d), PpcStatus::Ok);
        assert!((d - 0.1 * 3f64.sqrt()).abs() < 1e-9, "{d}");
        assert_eq!(ppc_mesh_symmetry_count(cube, &mut n), PpcStatus::Ok);
        assert_eq!(n, 1);
        assert_eq!(ppc_mesh_symmetry_count(twofold, &mut n), PpcStatus::Ok);
        assert_eq!(n, 2);
        ppc_mesh_free(cube);
        ppc_mesh_free(twofold);
    }
}

#[test]
fn oracle_and_metrics() {
    let mesh = load("l_block");
    let gt = pose([0.2, 0.4, -0.1], [0.01, 0.02, 0.8]);
    let mut off = gt;
    off.translation[0] += 0.002;
    let intr = intrinsics();
    let (mut zero, mut e) = (1.0, 0.0);
    let mut m = PpcMetrics::default();
    unsafe {
        assert_eq!(ppc_oracle_error(mesh, &intr, &gt, &gt, 512, &mut zero), PpcStatus::Ok);
        assert_eq!(ppc_oracle_error(mesh, &intr, &off, &gt, 512, &mut e), PpcStatus::Ok);
        assert_eq!(ppc_evaluate_pose(mesh, &intr, &off, &gt, &mut m), PpcStatus::Ok);
        ppc_mesh_free(mesh);
    }
    assert_eq!(zero, 0.0);
    assert!(e > 0.0);
    // 2 mm shift: every metric accepts, ADD equals the shift
    assert!((m.values[0] - 0.002).abs() < 1e-12);
    assert!(m.accepted.iter().all(|&a| a == 1));
}

#[test]
fn negative_depth_flip() {
    let p = pose([0.1, 0.2, 0.3], [0.05, -0.02, -0.7]);
    let mut out = PpcPose::default();
    assert_eq!(unsafe { ppc_correct_negative_depth(&p, &mut out) }, PpcStatus::Ok);
    assert!((out.translation[2] - 0.7).abs() < 1e-15);
    let zero = pose([0.0; 3], [0.1, 0.0, 0.0]);
    assert_eq!(unsafe { ppc_correct_negative_depth(&zero, &mut out) }, PpcStatus::DegeneratePose);
}

#[test]
fn sampler_is_seeded() {
    let gt = pose([0.3, 0.0, 0.2], [0.0, 0.0, 0.9]);
    let draw = |seed| {
        let mut s = ptr::null_mut();
        let mut out = Vec::new();
        unsafe {
            assert_eq!(ppc_sampler_new(seed, &mut s), PpcStatus::Ok);
            for _ in 0..5 {
                let mut p = PpcPose::default();
                let mut kind = PpcPerturbation::Depth;
                assert_eq!(ppc_sampler_sample(s, &gt, 0.2, &mut p, &mut kind), PpcStatus::Ok);
                out.push((p.rotation, p.translation, kind));
            }
            ppc_sampler_free(s);
        }
        out
    };
    assert_eq!(draw(7), draw(7));
    assert_ne!(draw(7), draw(8));
}

const SMALL: &str = r#"{"iterations": 15, "objective": {"render_resolution": 32, "patch_resolution": 64}}"#;

#[test]
fn oracle_refiner_improves() {
    let mesh = load("cube");
    let intr = intrinsics();
    let gt = pose([0.3, -0.2, 0.1], [0.0, 0.01, 0.7]);
    let mut start = gt;
    start.translation[0] += 0.008;
    let cfg = CString::new(SMALL).unwrap();
    let mut refiner = ptr::null_mut();
    let mut out = PpcPose::default();
    let mut j = f64::NAN;
    let (mut before, mut after) = (0.0, 0.0);
    unsafe {
        assert_eq!(
            ppc_refiner_new(mesh, &intr, cfg.as_ptr(), None, ptr::null_mut(), &mut refiner),
            PpcStatus::Ok
        );
        assert_eq!(ppc_refiner_run(refiner, ptr::null(), &start, &gt, &mut out, &mut j), PpcStatus::Ok);
        ppc_oracle_error(mesh, &intr, &start, &gt, 64, &mut before);
        ppc_oracle_error(mesh, &intr, &out, &gt, 64, &mut after);
        // the oracle needs ground truth
        assert_ne!(
            ppc_refiner_run(refiner, ptr::null(), &start, ptr::null(), &mut out, ptr::null_mut()),
            PpcStatus::Ok
        );
        ppc_refiner_free(refiner);
        ppc_mesh_free(mesh);
    }
    assert!(j.is_finite());
    assert!(after < 0.5 * before, "{before} -> {after}");
}

unsafe extern "C" fn mean_abs_diff(
    user: *mut c_void,
    observed: *const f32,
    rendered: *const f32,
    n: usize,
    out: *mut f64,
) -> i32 {
    let calls = &*(user as *const std::sync::atomic::AtomicUsize);
    calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
    let a = std::slice::from_raw_parts(observed, n * n * 3);
    let b = std::slice::from_raw_parts(rendered, n * n * 3);
    *out = a.iter().zip(b).map(|(x, y)| (x - y).abs() as f64).sum::<f64>() / a.len() as f64;
    0
}

unsafe extern "C" fn failing(_: *mut c_void, _: *const f32, _: *const f32, _: usize, _: *mut f64) -> i32 {
    3
}

#[test]
fn callback_critic_is_called() {
    let mesh = load("cube");
    let intr = intrinsics();
    let p = pose([0.3, -0.2, 0.1], [0.0, 0.01, 0.7]);
    let cfg = CString::new(SMALL).unwrap();
    let calls = std::sync::atomic::AtomicUsize::new(0);
    let mut refiner = ptr::null_mut();
    let mut out = PpcPose::default();
    let image = vec![128u8; 640 * 480 * 3];
    unsafe {
        assert_eq!(
            ppc_refiner_new(
                mesh,
                &intr,
                cfg.as_ptr(),
                Some(mean_abs_diff),
                &calls as *const _ as *mut c_void,
                &mut refiner
            ),
            PpcStatus::Ok
        );
        assert_eq!(ppc_refiner_run(refiner, image.as_ptr(), &p, ptr::null(), &mut out, ptr::null_mut()), PpcStatus::Ok);
        ppc_refiner_free(refiner);

        assert_eq!(
            ppc_refiner_new(mesh, &intr, cfg.as_ptr(), Some(failing), ptr::null_mut(), &mut refiner),
            PpcStatus::Ok
        );
        assert_eq!(ppc_refiner_run(refiner, ptr::null(), &p, ptr::null(), &mut out, ptr::null_mut()), PpcStatus::Critic);
        assert!(last_error().contains("3"));
        ppc_refiner_free(refiner);
        ppc_mesh_free(mesh);
    }
    // 15 iterations of 12 probes plus the final evaluation
    assert_eq!(calls.load(std::sync::atomic::Ordering::Relaxed), 15 * 12 + 1);
}

#[test]
fn bad_config_is_rejected() {
    let mesh = load("cube");
    let intr = intrinsics();
    let cfg = CString::new(r#"{"iterations": "many"}"#).unwrap();
    let mut refiner = ptr::null_mut();
    let status = unsafe { ppc_refiner_new(mesh, &intr, cfg.as_ptr(), None, ptr::null_mut(), &mut refiner) };
    assert_eq!(status, PpcStatus::Config);
    assert!(refiner.is_null());
    unsafe { ppc_mesh_free(mesh) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/ppc.h")).unwrap();
    for name in [
        "ppc_last_error_message",
        "ppc_so3_exp",
        "ppc_mesh_load",
        "ppc_oracle_error",
        "ppc_evaluate_pose",
        "ppc_correct_negative_depth",
        "ppc_sampler_sample",
        "ppc_refiner_new",
        "ppc_refiner_run",
        "typedef struct PpcMesh PpcMesh",
        "PPC_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "{name}");
    }
}
