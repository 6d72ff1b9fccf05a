//! ASCII Wavefront OBJ (`v`, `vn`, `f`). Faces with more than three corners
//! are fan-triangulated. Vertex colors in the `v x y z r g b` extension are
//! picked up when every vertex carries them.

use std::path::Path;

use nalgebra::Vector3;

use super::{parse_error, TriangleMesh};
use crate::error::Result;

fn floats<'a>(
    fields: impl Iterator<Item = &'a str>,
    path: &Path,
    line: usize,
) -> Result<Vec<f64>> {
    fields
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| parse_error(path, line, format!("bad number {f:?}")))
        })
        .collect()
}

fn resolve_index(raw: &str, count: usize, path: &Path, line: usize) -> Result<usize> {
    let i: i64 = raw
        .parse()
        .map_err(|_| parse_error(path, line, format!("bad index {raw:?}")))?;
    let idx = if i < 0 { count as i64 + i } else { i - 1 };
    if idx < 0 || idx as usize >= count {
        return Err(parse_error(path, line, format!("index {i} out of range")));
    }
    Ok(idx as usize)
}

pub(super) fn parse(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut file_normals: Vec<Vector3<f64>> = Vec::new();
    let mut triangles = Vec::new();
    // normal assigned to each vertex by face corners, if any
    let mut vertex_normal: Vec<Option<usize>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut fields = content.split_whitespace();
        match fields.next() {
            Some("v") => {
                let vals = floats(fields, path, line)?;
                if vals.len() < 3 {
                    return Err(parse_error(path, line, "vertex needs 3 coordinates"));
                }
                vertices.push(Vector3::new(vals[0], vals[1], vals[2]));
                vertex_normal.push(None);
                if vals.len() >= 6 {
                    colors.push([vals[3] as f32, vals[4] as f32, vals[5] as f32]);
                }
            }
            Some("vn") => {
                let vals = floats(fields, path, line)?;
                if vals.len() != 3 {
                    return Err(parse_error(path, line, "normal needs 3 components"));
                }
                file_normals.push(Vector3::new(vals[0], vals[1], vals[2]));
            }
            Some("f") => {
                let mut corners = Vec::new();
                for corner in fields {
                    let mut parts = corner.split('/');
                    let v = resolve_index(parts.next().unwrap_or(""), vertices.len(), path, line)?;
                    let _tex = parts.next();
                    if let Some(n) = parts.next().filter(|s| !s.is_empty()) {
                        let n = resolve_index(n, file_normals.len(), path, line)?;
                        vertex_normal[v] = Some(n);
                    }
                    corners.push(v as u32);
                }
                if corners.len() < 3 {
                    return Err(parse_error(path, line, "face needs at least 3 corners"));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }

    let normals = if !vertex_normal.is_empty() && vertex_normal.iter().all(|n| n.is_some()) {
        Some(
            vertex_normal
                .iter()
                .map(|n| file_normals[n.unwrap_or_default()])
                .collect(),
        )
    } else {
        None
    };
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    TriangleMesh::new(vertices, triangles, normals, colors)
}
