//! ASCII PLY with a `vertex` element (x, y, z and optional nx/ny/nz and
//! red/green/blue) and a `face` element holding an index list.

use std::path::Path;

use nalgebra::Vector3;

use super::{parse_error, TriangleMesh};
use crate::error::Result;

struct Element {
    name: String,
    count: usize,
    properties: Vec<String>,
}

pub(super) fn parse(text: &str, path: &Path) -> Result<TriangleMesh> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    match lines.next() {
        Some((_, "ply")) => {}
        _ => return Err(parse_error(path, 1, "missing 'ply' magic")),
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (line, l) = lines
            .next()
            .ok_or_else(|| parse_error(path, 0, "unterminated header"))?;
        let mut f = l.split_whitespace();
        match f.next() {
            Some("format") => {
                if f.next() != Some("ascii") {
                    return Err(parse_error(path, line, "only ASCII PLY is supported"));
                }
            }
            Some("element") => {
                let name = f.next().unwrap_or_default().to_string();
                let count = f
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| parse_error(path, line, "bad element count"))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_error(path, line, "property before element"))?;
                let name = f.last().unwrap_or_default().to_string();
                el.properties.push(name);
            }
            Some("end_header") => break,
            _ => {}
        }
    }

    let mut vertices = Vec::new();
    let mut normals = Vec::new();
    let mut colors = Vec::new();
    let mut triangles = Vec::new();

    for el in &elements {
        let col = |n: &str| el.properties.iter().position(|p| p == n);
        for _ in 0..el.count {
            let (line, l) = lines
                .next()
                .ok_or_else(|| parse_error(path, 0, format!("truncated {} element", el.name)))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|_| parse_error(path, line, format!("bad number {v:?}")))
                })
                .collect::<Result<_>>()?;
            match el.name.as_str() {
                "vertex" => {
                    let get = |n: &str| col(n).and_then(|i| vals.get(i).copied());
                    let (Some(x), Some(y), Some(z)) = (get("x"), get("y"), get("z")) else {
                        return Err(parse_error(path, line, "vertex missing x/y/z"));
                    };
                    vertices.push(Vector3::new(x, y, z));
                    if let (Some(a), Some(b), Some(c)) = (get("nx"), get("ny"), get("nz")) {
                        normals.push(Vector3::new(a, b, c));
                    }
                    if let (Some(r), Some(g), Some(b)) = (get("red"), get("green"), get("blue")) {
                        colors.push([r as f32 / 255.0, g as f32 / 255.0, b as f32 / 255.0]);
                    }
                }
                "face" => {
                    let n = *vals
                        .first()
                        .ok_or_else(|| parse_error(path, line, "empty face"))?
                        as usize;
                    if n < 3 || vals.len() < n + 1 {
                        return Err(parse_error(path, line, "face needs at least 3 indices"));
                    }
                    let idx: Vec<u32> = vals[1..=n].iter().map(|&v| v as u32).collect();
                    for k in 1..n - 1 {
                        triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
    }

    let normals = (!normals.is_empty() && normals.len() == vertices.len()).then_some(normals);
    let colors = (!colors.is_empty() && colors.len() == vertices.len()).then_some(colors);
    TriangleMesh::new(vertices, triangles, normals, colors)
}
