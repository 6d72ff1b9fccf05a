//! CAD models: triangle meshes, the point sets used by the reprojection
//! error and the metrics, and the object diameter.

mod obj;
mod ply;
pub mod primitives;

use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::so3_exp;

/// Default cap on the number of model points (M).
pub const DEFAULT_MAX_POINTS: usize = 2000;
/// Above this vertex count the diameter is computed on a subsample.
pub const EXACT_DIAMETER_LIMIT: usize = 5000;
const SUBSAMPLE_SEED: u64 = 0x5eed_0f_9015;

#[derive(Clone, Debug)]
pub struct TriangleMesh {
    /// Object frame, meters.
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    /// Unit vertex normals.
    pub normals: Vec<Vector3<f64>>,
    /// Per-vertex albedo, `[0, 1]`.
    pub colors: Option<Vec<[f32; 3]>>,
    /// Meters.
    pub diameter: f64,
    /// Object-frame symmetry rotations, identity first.
    pub symmetries: Vec<Matrix3<f64>>,
}

/// Model metadata stored next to a mesh file.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ModelSidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diameter_m: Option<f64>,
    /// Axis-angle vectors (radians) of the non-trivial symmetries.
    #[serde(default)]
    pub symmetries: Vec<[f64; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, computing area-weighted normals when none are given and
    /// the exact (or subsampled) diameter.
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        triangles: Vec<[u32; 3]>,
        normals: Option<Vec<Vector3<f64>>>,
        colors: Option<Vec<[f32; 3]>>,
    ) -> Result<Self> {
        if triangles.is_empty() || vertices.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = vertices.len() as u32;
        if let Some(bad) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::invalid(format!("triangle {bad:?} indexes past {n} vertices")));
        }
        if let Some(c) = &colors {
            if c.len() != vertices.len() {
                return Err(Error::invalid("color count differs from vertex count"));
            }
        }
        let normals = match normals {
            Some(ns) if ns.len() == vertices.len() => ns
                .into_iter()
                .map(|v| {
                    let len = v.norm();
                    if len > 0.0 { v / len } else { v }
                })
                .collect(),
            Some(_) => return Err(Error::invalid("normal count differs from vertex count")),
            None => area_weighted_normals(&vertices, &triangles),
        };
        let diameter = diameter_of(&vertices);
        Ok(TriangleMesh {
            vertices,
            triangles,
            normals,
            colors,
            diameter,
            symmetries: vec![Matrix3::identity()],
        })
    }

    pub fn albedo(&self, vertex: usize) -> [f32; 3] {
        match &self.colors {
            Some(c) => c[vertex],
            None => [0.8, 0.8, 0.8],
        }
    }

    pub fn with_symmetries(mut self, extra: &[Matrix3<f64>]) -> Self {
        self.symmetries = vec![Matrix3::identity()];
        self.symmetries.extend_from_slice(extra);
        self
    }

    pub fn apply_sidecar(&mut self, sidecar: &ModelSidecar) -> Result<()> {
        if let Some(d) = sidecar.diameter_m {
            if !(d > 0.0) {
                return Err(Error::invalid("sidecar diameter must be positive"));
            }
            self.diameter = d;
        }
        let mut syms = vec![Matrix3::identity()];
        for v in &sidecar.symmetries {
            syms.push(so3_exp(&Vector3::from(*v))?);
        }
        self.symmetries = syms;
        Ok(())
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetries.len() > 1
    }

    /// Writes the mesh as an ASCII OBJ with normals (and vertex colors, as
    /// the common `v x y z r g b` extension).
    pub fn write_obj(&self, path: &Path) -> Result<()> {
        use std::fmt::Write as _;
        let mut s = String::new();
        for (i, v) in self.vertices.iter().enumerate() {
            match &self.colors {
                Some(c) => {
                    let c = c[i];
                    let _ = writeln!(s, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2]);
                }
                None => {
                    let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
                }
            }
        }
        for n in &self.normals {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
        for t in &self.triangles {
            let [a, b, c] = t.map(|i| i + 1);
            let _ = writeln!(s, "f {a}//{a} {b}//{b} {c}//{c}");
        }
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }
}

fn area_weighted_normals(vertices: &[Vector3<f64>], triangles: &[[u32; 3]]) -> Vec<Vector3<f64>> {
    let mut acc = vec![Vector3::zeros(); vertices.len()];
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        // cross product length is twice the area
        let n = (b - a).cross(&(c - a));
        for &i in t {
            acc[i as usize] += n;
        }
    }
    acc.into_iter()
        .map(|n| {
            let len = n.norm();
            if len > 0.0 { n / len } else { Vector3::z() }
        })
        .collect()
}

fn max_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            best = best.max((a - b).norm_squared());
        }
    }
    best.sqrt()
}

/// Max pairwise vertex distance; exact up to [`EXACT_DIAMETER_LIMIT`]
/// vertices, otherwise over a deterministic subsample (may underestimate).
pub fn diameter_of(vertices: &[Vector3<f64>]) -> f64 {
    if vertices.len() <= EXACT_DIAMETER_LIMIT {
        return max_pairwise_distance(vertices);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
    let mut idx = index::sample(&mut rng, vertices.len(), EXACT_DIAMETER_LIMIT).into_vec();
    idx.sort_unstable();
    let sub: Vec<_> = idx.into_iter().map(|i| vertices[i]).collect();
    max_pairwise_distance(&sub)
}

/// The `M` model points: every vertex when there are at most `max_points`,
/// otherwise a seeded uniform subsample kept in vertex order.
pub fn model_points(mesh: &TriangleMesh, max_points: usize) -> Vec<Vector3<f64>> {
    let max_points = max_points.max(4);
    if mesh.vertices.len() <= max_points {
        return mesh.vertices.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(SUBSAMPLE_SEED);
    let mut idx = index::sample(&mut rng, mesh.vertices.len(), max_points).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| mesh.vertices[i]).collect()
}

/// Sidecar path for a mesh: `<mesh path minus extension>.json`.
pub fn sidecar_path(mesh_path: &Path) -> PathBuf {
    mesh_path.with_extension("json")
}

/// Loads an ASCII OBJ or PLY mesh; a sidecar JSON next to it, if present,
/// overrides the diameter and declares symmetries.
pub fn load_mesh(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase());
    let mut mesh = match ext.as_deref() {
        Some("obj") => obj::parse(&text, path)?,
        Some("ply") => ply::parse(&text, path)?,
        _ => {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: "unsupported mesh extension (expected .obj or .ply)".into(),
            })
        }
    };
    let side = sidecar_path(path);
    if side.exists() {
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let sidecar: ModelSidecar =
            serde_json::from_str(&text).map_err(|e| Error::json(&side, e))?;
        mesh.apply_sidecar(&sidecar)?;
    }
    Ok(mesh)
}

/// Resolves a mesh source: `builtin:<name>` or a path to an OBJ/PLY file.
pub fn resolve_mesh(source: &str) -> Result<TriangleMesh> {
    match source.strip_prefix("builtin:") {
        Some(name) => primitives::builtin(name).ok_or_else(|| {
            Error::invalid(format!(
                "unknown builtin object {name:?}; known: {}",
                primitives::BUILTIN_NAMES.join(", ")
            ))
        }),
        None => load_mesh(Path::new(source)),
    }
}

/// A named object and where its mesh comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub source: String,
}

impl ObjectSpec {
    /// `name` alone means the builtin of that name; `id=source` is explicit.
    pub fn parse(text: &str) -> Self {
        match text.split_once('=') {
            Some((id, source)) => ObjectSpec {
                id: id.to_string(),
                source: source.to_string(),
            },
            None if primitives::builtin(text).is_some() => ObjectSpec {
                id: text.to_string(),
                source: format!("builtin:{text}"),
            },
            None => ObjectSpec {
                id: Path::new(text)
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .unwrap_or(text)
                    .to_string(),
                source: text.to_string(),
            },
        }
    }

    pub fn load(&self) -> Result<TriangleMesh> {
        resolve_mesh(&self.source)
    }
}

pub(crate) fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}
