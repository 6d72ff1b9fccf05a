//! Procedural desk-scale test objects. Flat-shaded (vertices duplicated per
//! face) with a distinct albedo per face; faces are tessellated into a fine
//! grid.

use nalgebra::{Matrix3, Vector3};

use super::TriangleMesh;

const PALETTE: [[f32; 3]; 8] = [
    [0.85, 0.25, 0.2],
    [0.2, 0.7, 0.3],
    [0.25, 0.35, 0.85],
    [0.9, 0.8, 0.2],
    [0.7, 0.3, 0.75],
    [0.2, 0.75, 0.8],
    [0.95, 0.55, 0.2],
    [0.6, 0.6, 0.6],
];

/// Longest edge of the tessellation, meters. Keeps the vertex set (the
/// model points of the metrics and the oracle) dense, like a scanned model.
pub const GRID_SPACING: f64 = 0.01;

fn divisions(length: f64) -> usize {
    ((length / GRID_SPACING).ceil() as usize).max(1)
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Vector3<f64>>,
    normals: Vec<Vector3<f64>>,
    colors: Vec<[f32; 3]>,
    triangles: Vec<[u32; 3]>,
    faces: usize,
}

impl Builder {
    /// Adds a planar convex polygon (counter-clockwise seen from outside),
    /// tessellated so no edge is longer than [`GRID_SPACING`].
    fn polygon(&mut self, corners: &[Vector3<f64>]) {
        let n = (corners[1] - corners[0])
            .cross(&(corners[2] - corners[0]))
            .normalize();
        let color = PALETTE[self.faces % PALETTE.len()];
        self.faces += 1;
        let parallelogram =
            corners.len() == 4 && (corners[0] + corners[2] - corners[1] - corners[3]).norm() < 1e-12;
        if parallelogram {
            let (o, u, v) = (corners[0], corners[1] - corners[0], corners[3] - corners[0]);
            let (nu, nv) = (divisions(u.norm()), divisions(v.norm()));
            let base = self.vertices.len() as u32;
            for j in 0..=nv {
                for i in 0..=nu {
                    self.push(o + u * (i as f64 / nu as f64) + v * (j as f64 / nv as f64), n, color);
                }
            }
            let idx = |i: usize, j: usize| base + (j * (nu + 1) + i) as u32;
            for j in 0..nv {
                for i in 0..nu {
                    self.triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
                    self.triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                }
            }
            return;
        }
        for k in 1..corners.len() - 1 {
            self.triangle(corners[0], corners[k], corners[k + 1], n, color);
        }
    }

    /// Barycentric grid over one triangle.
    fn triangle(&mut self, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>, n: Vector3<f64>, color: [f32; 3]) {
        let m = divisions((b - a).norm().max((c - a).norm()).max((c - b).norm()));
        let base = self.vertices.len() as u32;
        // row j holds m + 1 - j vertices
        let mut row_start = Vec::with_capacity(m + 1);
        for j in 0..=m {
            row_start.push(self.vertices.len() as u32 - base);
            for i in 0..=m - j {
                let (s, t) = (i as f64 / m as f64, j as f64 / m as f64);
                self.push(a + (b - a) * s + (c - a) * t, n, color);
            }
        }
        let idx = |i: usize, j: usize| base + row_start[j] + i as u32;
        for j in 0..m {
            for i in 0..m - j {
                self.triangles.push([idx(i, j), idx(i + 1, j), idx(i, j + 1)]);
                if i + 1 < m - j {
                    self.triangles.push([idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)]);
                }
            }
        }
    }

    fn push(&mut self, p: Vector3<f64>, n: Vector3<f64>, color: [f32; 3]) {
        self.vertices.push(p);
        self.normals.push(n);
        self.colors.push(color);
    }

    fn cuboid(&mut self, min: Vector3<f64>, max: Vector3<f64>) {
        let p = |x: bool, y: bool, z: bool| {
            Vector3::new(
                if x { max.x } else { min.x },
                if y { max.y } else { min.y },
                if z { max.z } else { min.z },
            )
        };
        let (f, t) = (false, true);
        self.polygon(&[p(f, f, f), p(f, t, f), p(t, t, f), p(t, f, f)]); // -z
        self.polygon(&[p(f, f, t), p(t, f, t), p(t, t, t), p(f, t, t)]); // +z
        self.polygon(&[p(f, f, f), p(t, f, f), p(t, f, t), p(f, f, t)]); // -y
        self.polygon(&[p(f, t, f), p(f, t, t), p(t, t, t), p(t, t, f)]); // +y
        self.polygon(&[p(f, f, f), p(f, f, t), p(f, t, t), p(f, t, f)]); // -x
        self.polygon(&[p(t, f, f), p(t, t, f), p(t, t, t), p(t, f, t)]); // +x
    }

    /// Prism over a counter-clockwise xy polygon, spanning `z0..z1`.
    fn prism(&mut self, outline: &[(f64, f64)], z0: f64, z1: f64) {
        let bottom: Vec<_> = outline
            .iter()
            .rev()
            .map(|&(x, y)| Vector3::new(x, y, z0))
            .collect();
        let top: Vec<_> = outline.iter().map(|&(x, y)| Vector3::new(x, y, z1)).collect();
        self.polygon(&bottom);
        self.polygon(&top);
        for i in 0..outline.len() {
            let (a, b) = (outline[i], outline[(i + 1) % outline.len()]);
            self.polygon(&[
                Vector3::new(a.0, a.1, z0),
                Vector3::new(b.0, b.1, z0),
                Vector3::new(b.0, b.1, z1),
                Vector3::new(a.0, a.1, z1),
            ]);
        }
    }

    /// Shifts so the bounding-box center sits at the origin.
    fn finish(mut self) -> TriangleMesh {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let c = (lo + hi) * 0.5;
        for v in &mut self.vertices {
            *v -= c;
        }
        TriangleMesh::new(
            self.vertices,
            self.triangles,
            Some(self.normals),
            Some(self.colors),
        )
        .expect("procedural mesh is well formed")
    }
}

/// Axis-aligned box centered at the origin.
pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriangleMesh {
    let mut b = Builder::default();
    let h = Vector3::new(sx, sy, sz) * 0.5;
    b.cuboid(-h, h);
    b.finish()
}

/// Asymmetric L-shaped block made of two arms of different length and
/// height; `size` is the length of the long arm.
pub fn l_block(size: f64) -> TriangleMesh {
    let u = size / 3.0;
    let mut b = Builder::default();
    b.cuboid(Vector3::zeros(), Vector3::new(3.0 * u, u, u));
    b.cuboid(Vector3::new(0.0, u, 0.0), Vector3::new(u, 2.0 * u, 1.5 * u));
    b.finish()
}

/// Convex triangular prism with a scalene cross-section.
pub fn wedge(size: f64) -> TriangleMesh {
    let mut b = Builder::default();
    let outline = [(0.0, 0.0), (size * 0.8, 0.0), (size * 0.25, size * 0.55)];
    b.prism(&outline, 0.0, size * 0.4);
    b.finish()
}

/// Stack of three offset boxes of decreasing size.
pub fn stepped_block(size: f64) -> TriangleMesh {
    let u = size / 4.0;
    let mut b = Builder::default();
    b.cuboid(Vector3::zeros(), Vector3::new(3.0 * u, 2.0 * u, u));
    b.cuboid(Vector3::new(0.0, 0.0, u), Vector3::new(2.0 * u, 1.5 * u, 2.0 * u));
    b.cuboid(Vector3::new(0.0, 0.0, 2.0 * u), Vector3::new(u, u, 3.2 * u));
    b.finish()
}

/// Box with two bumps placed so the object is invariant under a 180°
/// rotation about its y ("up") axis and nothing else. The symmetry is
/// registered on the returned mesh.
pub fn twofold_block(size: f64) -> TriangleMesh {
    let u = size / 4.0;
    let mut b = Builder::default();
    b.cuboid(
        Vector3::new(-1.5 * u, -u, -0.75 * u),
        Vector3::new(1.5 * u, u, 0.75 * u),
    );
    b.cuboid(
        Vector3::new(1.5 * u, 0.2 * u, -0.3 * u),
        Vector3::new(2.0 * u, 0.8 * u, 0.3 * u),
    );
    b.cuboid(
        Vector3::new(-2.0 * u, 0.2 * u, -0.3 * u),
        Vector3::new(-1.5 * u, 0.8 * u, 0.3 * u),
    );
    // bounding box is already centered, so the y axis stays the symmetry axis
    b.finish().with_symmetries(&[half_turn_y()])
}

/// Exact 180° rotation about y.
pub fn half_turn_y() -> Matrix3<f64> {
    Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0))
}

/// The named builtin objects used by dataset generation and tests.
pub fn builtin(name: &str) -> Option<TriangleMesh> {
    match name {
        "l_block" => Some(l_block(0.15)),
        "wedge" => Some(wedge(0.16)),
        "stepped_block" => Some(stepped_block(0.14)),
        "twofold_block" => Some(twofold_block(0.15)),
        "cube" => Some(cuboid(0.1, 0.1, 0.1)),
        _ => None,
    }
}

pub const BUILTIN_NAMES: [&str; 5] = ["l_block", "wedge", "stepped_block", "twofold_block", "cube"];
