//! Mesh input and output: OFF and OBJ readers (triangles only), the η
//! sidecar CSV, JSON state snapshots, and the built-in generators.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CurvspecError, Result};

use super::MeshState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

/// Reads a triangle mesh from a file, picking the format by extension.
pub fn load_mesh(path: impl AsRef<Path>) -> Result<MeshState> {
    let path = path.as_ref();
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("off") | Some("OFF") => MeshFormat::Off,
        Some("obj") | Some("OBJ") => MeshFormat::Obj,
        other => {
            return Err(CurvspecError::file(
                path.display().to_string(),
                format!("unsupported mesh extension {other:?}; expected .off or .obj"),
            ))
        }
    };
    let text = std::fs::read_to_string(path)?;
    load_mesh_text(&text, format)
        .map_err(|e| match e {
            CurvspecError::FileFormat { message, .. } => {
                CurvspecError::file(path.display().to_string(), message)
            }
            other => other,
        })
}

pub fn load_mesh_text(text: &str, format: MeshFormat) -> Result<MeshState> {
    match format {
        MeshFormat::Off => parse_off(text),
        MeshFormat::Obj => parse_obj(text),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
}

fn parse_off(text: &str) -> Result<MeshState> {
    let bad = |msg: String| CurvspecError::file("<off>", msg);
    let mut lines = content_lines(text);
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let mut counts_inline = None;
    if let Some(rest) = header.strip_prefix("OFF") {
        let rest = rest.trim();
        if !rest.is_empty() {
            counts_inline = Some(rest.to_string());
        }
    } else {
        return Err(bad(format!("expected OFF header, found {header:?}")));
    }
    let counts_line = match counts_inline {
        Some(s) => s,
        None => lines
            .next()
            .ok_or_else(|| bad("missing vertex/face counts".into()))?
            .to_string(),
    };
    let counts: Vec<usize> = counts_line
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| bad(format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if counts.len() < 2 {
        return Err(bad("count line needs at least vertex and face counts".into()));
    }
    let (nv, nf) = (counts[0], counts[1]);

    let mut positions = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| bad("unexpected end in vertex list".into()))?;
        let coords: Vec<f64> = line
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| bad(format!("bad coordinate {t:?}"))))
            .collect::<Result<_>>()?;
        if coords.len() != 3 {
            return Err(bad(format!("vertex line {line:?} needs 3 coordinates")));
        }
        positions.push([coords[0], coords[1], coords[2]]);
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let line = lines.next().ok_or_else(|| bad("unexpected end in face list".into()))?;
        let tokens: Vec<&str> = line.split_whitespace().collect();
        let arity: usize = tokens[0].parse().map_err(|_| bad(format!("bad face size {:?}", tokens[0])))?;
        if arity != 3 {
            return Err(bad(format!("face with {arity} vertices; only triangles are supported")));
        }
        if tokens.len() < 4 {
            return Err(bad(format!("face line {line:?} is short")));
        }
        let idx: Vec<usize> = tokens[1..4]
            .iter()
            .map(|t| t.parse().map_err(|_| bad(format!("bad vertex index {t:?}"))))
            .collect::<Result<_>>()?;
        faces.push([idx[0], idx[1], idx[2]]);
    }
    MeshState::new(faces, positions)
}

fn parse_obj(text: &str) -> Result<MeshState> {
    let bad = |msg: String| CurvspecError::file("<obj>", msg);
    let mut positions = Vec::new();
    let mut faces = Vec::new();
    for line in content_lines(text) {
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .by_ref()
                    .take(3)
                    .map(|t| t.parse().map_err(|_| bad(format!("bad coordinate {t:?}"))))
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(bad(format!("vertex line {line:?} needs 3 coordinates")));
                }
                positions.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<usize> = tokens
                    .map(|t| {
                        let first = t.split('/').next().unwrap_or(t);
                        first
                            .parse::<usize>()
                            .map_err(|_| bad(format!("bad face token {t:?}")))
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(bad(format!(
                        "face with {} vertices; only triangles are supported",
                        idx.len()
                    )));
                }
                if idx.iter().any(|&i| i == 0) {
                    return Err(bad("OBJ face indices are 1-based".into()));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            // normals, texture coordinates, groups, materials: ignored
            _ => {}
        }
    }
    MeshState::new(faces, positions)
}

/// Reads the per-vertex η sidecar: CSV lines `vertex_index,value`, an
/// optional header, every vertex exactly once.
pub fn load_eta_csv(path: impl AsRef<Path>, n_vertices: usize) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_eta_csv(&text, n_vertices)
        .map_err(|e| match e {
            CurvspecError::FileFormat { message, .. } => {
                CurvspecError::file(path.display().to_string(), message)
            }
            other => other,
        })
}

pub(crate) fn parse_eta_csv(text: &str, n_vertices: usize) -> Result<Vec<f64>> {
    let bad = |msg: String| CurvspecError::file("<csv>", msg);
    let mut eta = vec![f64::NAN; n_vertices];
    let mut filled = 0usize;
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, ',');
        let first = parts.next().unwrap_or("").trim();
        let second = parts.next().map(str::trim);
        if ln == 0 && first.parse::<usize>().is_err() {
            continue; // header row
        }
        let idx: usize = first
            .parse()
            .map_err(|_| bad(format!("line {}: bad vertex index {first:?}", ln + 1)))?;
        let value: f64 = second
            .ok_or_else(|| bad(format!("line {}: missing value", ln + 1)))?
            .parse()
            .map_err(|_| bad(format!("line {}: bad value", ln + 1)))?;
        if idx >= n_vertices {
            return Err(bad(format!(
                "line {}: vertex {idx} out of range (mesh has {n_vertices})",
                ln + 1
            )));
        }
        if !eta[idx].is_nan() {
            return Err(bad(format!("vertex {idx} listed twice")));
        }
        eta[idx] = value;
        filled += 1;
    }
    if filled != n_vertices {
        return Err(bad(format!(
            "{filled} of {n_vertices} vertices have η values; every vertex needs one"
        )));
    }
    Ok(eta)
}

#[derive(Serialize, Deserialize)]
struct MeshSnapshot {
    positions: Vec<[f64; 3]>,
    faces: Vec<[usize; 3]>,
    edges: Vec<[usize; 2]>,
    base_lengths: Vec<f64>,
    w: Vec<f64>,
    eta: Vec<f64>,
}

impl MeshState {
    pub fn to_json(&self) -> Result<String> {
        let snap = MeshSnapshot {
            positions: self.positions().to_vec(),
            faces: self.topology().faces().to_vec(),
            edges: self.topology().edges().to_vec(),
            base_lengths: self.base_lengths().to_vec(),
            w: self.w().to_vec(),
            eta: self.eta().to_vec(),
        };
        Ok(serde_json::to_string_pretty(&snap)?)
    }

    pub fn from_json(text: &str) -> Result<MeshState> {
        let snap: MeshSnapshot = serde_json::from_str(text)?;
        let lengths = snap.base_lengths;
        let edges = snap.edges;
        if edges.len() != lengths.len() {
            return Err(CurvspecError::mesh("edge and length arrays differ in size"));
        }
        let state = MeshState::from_edge_lengths(snap.faces, snap.positions, |a, b, _| {
            let key = [a.min(b), a.max(b)];
            match edges.binary_search(&key) {
                Ok(i) => lengths[i],
                Err(_) => f64::NAN, // caught by the positivity check
            }
        })?;
        let state = state.with_w(snap.w)?;
        state.with_eta(snap.eta)
    }
}

/// Icosahedron subdivided `subdivisions` times with every vertex projected
/// to the sphere of the given radius. 20·4^k faces.
pub fn icosphere(subdivisions: u32, radius: f64) -> Result<MeshState> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<[f64; 3]> = vec![
        [-1.0, t, 0.0],
        [1.0, t, 0.0],
        [-1.0, -t, 0.0],
        [1.0, -t, 0.0],
        [0.0, -1.0, t],
        [0.0, 1.0, t],
        [0.0, -1.0, -t],
        [0.0, 1.0, -t],
        [t, 0.0, -1.0],
        [t, 0.0, 1.0],
        [-t, 0.0, -1.0],
        [-t, 0.0, 1.0],
    ];
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let project = |p: [f64; 3]| {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        [
            radius * p[0] / norm,
            radius * p[1] / norm,
            radius * p[2] / norm,
        ]
    };
    for p in positions.iter_mut() {
        *p = project(*p);
    }
    for _ in 0..subdivisions {
        let mut midpoint = std::collections::HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mid: [usize; 3] = std::array::from_fn(|k| {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let p: [f64; 3] =
                        std::array::from_fn(|i| 0.5 * (positions[a][i] + positions[b][i]));
                    positions.push(project(p));
                    positions.len() - 1
                })
            });
            next_faces.push([f[0], mid[0], mid[2]]);
            next_faces.push([f[1], mid[1], mid[0]]);
            next_faces.push([f[2], mid[2], mid[1]]);
            next_faces.push([mid[0], mid[1], mid[2]]);
        }
        faces = next_faces;
    }
    MeshState::new(faces, positions)
}

/// Regular triangulation of a flat torus with intrinsic edge lengths; the
/// positions lie in a plane and are for export only. Needs nx, ny ≥ 3 so
/// that wraparound does not collapse edges.
pub fn flat_torus_mesh(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<MeshState> {
    if nx < 3 || ny < 3 {
        return Err(CurvspecError::mesh("flat torus mesh needs nx, ny >= 3"));
    }
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let at = |i: usize, j: usize| (j % ny) * nx + (i % nx);
    let mut positions = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            positions.push([i as f64 * hx, j as f64 * hy, 0.0]);
        }
    }
    let mut faces = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            faces.push([at(i, j), at(i + 1, j), at(i + 1, j + 1)]);
            faces.push([at(i, j), at(i + 1, j + 1), at(i, j + 1)]);
        }
    }
    MeshState::from_edge_lengths(faces, positions, move |a, b, _| {
        let (ia, ja) = (a % nx, a / nx);
        let (ib, jb) = (b % nx, b / nx);
        let di = (ia as i64 - ib as i64).unsigned_abs() as usize;
        let dj = (ja as i64 - jb as i64).unsigned_abs() as usize;
        let di = di.min(nx - di);
        let dj = dj.min(ny - dj);
        ((di as f64 * hx).powi(2) + (dj as f64 * hy).powi(2)).sqrt()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::AverageMeasure;

    #[test]
    fn off_roundtrip_through_parser() {
        let text = "OFF\n4 4 6\n1 1 1\n1 -1 -1\n-1 1 -1\n-1 -1 1\n\
                    3 0 1 2\n3 0 2 3\n3 0 3 1\n3 1 3 2\n";
        let state = load_mesh_text(text, MeshFormat::Off).unwrap();
        assert_eq!(state.topology().n_vertices(), 4);
        assert_eq!(state.topology().euler_characteristic(), 2);
    }

    #[test]
    fn obj_parses_slashed_face_tokens() {
        let text = "v 1 1 1\nv 1 -1 -1\nv -1 1 -1\nv -1 -1 1\n\
                    f 1/1 2/2 3/3\nf 1 3 4\nf 1 4 2\nf 2/1/1 4/2/2 3/3/3\n";
        let state = load_mesh_text(text, MeshFormat::Obj).unwrap();
        assert_eq!(state.topology().faces().len(), 4);
    }

    #[test]
    fn quad_face_is_rejected() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        assert!(load_mesh_text(text, MeshFormat::Off).is_err());
    }

    #[test]
    fn eta_csv_requires_full_coverage() {
        assert_eq!(
            parse_eta_csv("vertex_index,value\n0,0.5\n1,-0.25\n", 2).unwrap(),
            vec![0.5, -0.25]
        );
        assert!(parse_eta_csv("0,0.5\n", 2).is_err());
        assert!(parse_eta_csv("0,0.5\n0,0.7\n", 2).is_err());
        assert!(parse_eta_csv("0,0.5\n5,0.7\n", 2).is_err());
    }

    #[test]
    fn snapshot_roundtrip_preserves_state() {
        let state = icosphere(1, 2.0).unwrap();
        let n = state.topology().n_vertices();
        let state = state
            .with_w((0..n).map(|i| 0.01 * i as f64).collect())
            .unwrap()
            .with_eta((0..n).map(|i| -0.02 * i as f64).collect())
            .unwrap();
        let json = state.to_json().unwrap();
        let back = MeshState::from_json(&json).unwrap();
        assert_eq!(state, back);
        assert!(
            (state.weighted_volume().unwrap() - back.weighted_volume().unwrap()).abs() < 1e-15
        );
    }

    #[test]
    fn icosphere_counts_and_radius() {
        let state = icosphere(2, 1.5).unwrap();
        assert_eq!(state.topology().faces().len(), 320);
        assert_eq!(state.topology().euler_characteristic(), 2);
        for p in state.positions() {
            let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!((r - 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_torus_mesh_is_scalar_flat() {
        let state = flat_torus_mesh(8, 6, 2.0, 1.5).unwrap();
        assert_eq!(state.topology().euler_characteristic(), 0);
        let bundle = state.curvature(AverageMeasure::Weighted).unwrap();
        let scalar = bundle.scalar.per_site().unwrap();
        assert!(scalar.iter().all(|r| r.abs() < 1e-9));
        assert!(state.gauss_bonnet_residual().unwrap() < 1e-9);
    }
}
