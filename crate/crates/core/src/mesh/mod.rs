//! Triangulated closed surfaces with a discrete conformal metric. The metric
//! lives on edge lengths l_ij = e^{(w_i+w_j)/2}·l⁰_ij; vertex positions are
//! kept for visualization only and never updated. Curvature is angle defect
//! over barycentric area, the Laplacian is the cotan one, and everything is
//! validated against Gauss–Bonnet at every step.

mod io;
mod quadrature;
mod solver;

pub use io::{flat_torus_mesh, icosphere, load_eta_csv, load_mesh, load_mesh_text, MeshFormat};
pub use quadrature::MeshFlowVariation;
pub use solver::Csr;

use std::sync::{Arc, OnceLock};

use crate::error::{CurvspecError, Result};
use crate::params::FlowParams;
use crate::state::{AverageMeasure, CurvatureBundle, Quantity};

/// Connectivity of a closed, oriented, connected triangle mesh.
#[derive(Debug)]
pub struct MeshTopology {
    n_vertices: usize,
    faces: Vec<[usize; 3]>,
    /// Canonical (low, high) endpoints per edge, sorted lexicographically.
    edges: Vec<[usize; 2]>,
    /// Edge id opposite each local corner of each face.
    face_edges: Vec<[usize; 3]>,
    /// One-ring neighbors per vertex in consistent winding order.
    rings: Vec<Vec<usize>>,
    /// Face holding (v, ring[k], ring[k+1]), parallel to `rings`.
    ring_faces: Vec<Vec<usize>>,
    euler_characteristic: i64,
}

impl MeshTopology {
    pub fn build(n_vertices: usize, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(CurvspecError::mesh("mesh has no faces"));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(CurvspecError::mesh(format!(
                    "face {fi} repeats a vertex: {f:?}"
                )));
            }
            if f.iter().any(|&v| v >= n_vertices) {
                return Err(CurvspecError::mesh(format!(
                    "face {fi} references a vertex beyond {n_vertices}"
                )));
            }
        }

        // Closedness and orientation: every directed edge must appear exactly
        // once, and its reversal exactly once.
        let mut directed = std::collections::HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let from = f[(k + 1) % 3];
                let to = f[(k + 2) % 3];
                if directed.insert((from, to), fi).is_some() {
                    return Err(CurvspecError::mesh(format!(
                        "directed edge {from}->{to} appears twice; mesh is not \
                         consistently oriented or not manifold"
                    )));
                }
            }
        }
        let mut edges: Vec<[usize; 2]> = Vec::new();
        let mut edge_of = std::collections::HashMap::new();
        for &(from, to) in directed.keys() {
            if !directed.contains_key(&(to, from)) {
                return Err(CurvspecError::mesh(format!(
                    "edge {from}-{to} has only one incident face; mesh is not closed"
                )));
            }
            let key = [from.min(to), from.max(to)];
            edge_of.entry(key).or_insert(0usize);
        }
        edges.extend(edge_of.keys().copied());
        edges.sort_unstable();
        for (idx, e) in edges.iter().enumerate() {
            *edge_of.get_mut(e).expect("inserted above") = idx;
        }

        let face_edges: Vec<[usize; 3]> = faces
            .iter()
            .map(|f| {
                std::array::from_fn(|k| {
                    let a = f[(k + 1) % 3];
                    let b = f[(k + 2) % 3];
                    edge_of[&[a.min(b), a.max(b)]]
                })
            })
            .collect();

        // Connectivity over the vertex graph.
        let mut adjacency = vec![Vec::new(); n_vertices];
        for e in &edges {
            adjacency[e[0]].push(e[1]);
            adjacency[e[1]].push(e[0]);
        }
        if adjacency.iter().any(|list| list.is_empty()) {
            return Err(CurvspecError::mesh("mesh has isolated vertices"));
        }
        let mut seen = vec![false; n_vertices];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut reached = 1;
        while let Some(v) = stack.pop() {
            for &u in &adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    reached += 1;
                    stack.push(u);
                }
            }
        }
        if reached != n_vertices {
            return Err(CurvspecError::mesh(format!(
                "mesh is disconnected: reached {reached} of {n_vertices} vertices"
            )));
        }

        // Ordered one-rings: at vertex i, face (i, a, b) makes b the successor
        // of a; walking successors enumerates the ring in winding order.
        let mut rings = Vec::with_capacity(n_vertices);
        let mut ring_faces = Vec::with_capacity(n_vertices);
        for v in 0..n_vertices {
            let mut successor = std::collections::HashMap::new();
            for (fi, f) in faces.iter().enumerate() {
                if let Some(k) = f.iter().position(|&x| x == v) {
                    successor.insert(f[(k + 1) % 3], (f[(k + 2) % 3], fi));
                }
            }
            let start = *successor.keys().min().expect("no isolated vertices");
            let mut ring = vec![start];
            let mut around = Vec::with_capacity(successor.len());
            let mut current = start;
            loop {
                let (next, fi) = *successor.get(&current).ok_or_else(|| {
                    CurvspecError::mesh(format!("one-ring of vertex {v} does not close"))
                })?;
                around.push(fi);
                if next == start {
                    break;
                }
                ring.push(next);
                current = next;
                if ring.len() > successor.len() {
                    return Err(CurvspecError::mesh(format!(
                        "one-ring of vertex {v} does not close"
                    )));
                }
            }
            if ring.len() != successor.len() {
                return Err(CurvspecError::mesh(format!(
                    "vertex {v} is non-manifold: its faces form more than one fan"
                )));
            }
            rings.push(ring);
            ring_faces.push(around);
        }

        let euler_characteristic =
            n_vertices as i64 - edges.len() as i64 + faces.len() as i64;
        Ok(MeshTopology {
            n_vertices,
            faces,
            edges,
            face_edges,
            rings,
            ring_faces,
            euler_characteristic,
        })
    }

    /// Edge id for the unordered pair (a, b).
    pub fn edge_index(&self, a: usize, b: usize) -> Option<usize> {
        let key = [a.min(b), a.max(b)];
        self.edges.binary_search(&key).ok()
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn face_edges(&self) -> &[[usize; 3]] {
        &self.face_edges
    }

    pub fn rings(&self) -> &[Vec<usize>] {
        &self.rings
    }

    pub fn ring_faces(&self) -> &[Vec<usize>] {
        &self.ring_faces
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.euler_characteristic
    }
}

/// Everything derived from the current edge lengths, built once per state.
#[derive(Debug)]
pub struct MeshGeometry {
    /// Current length of the edge opposite each local corner, per face.
    pub lengths: Vec<[f64; 3]>,
    /// Interior angle at each local corner, per face.
    pub angles: Vec<[f64; 3]>,
    pub areas: Vec<f64>,
    /// Intrinsic layout per face: P0 = origin, P1 = (l₂, 0), P2 = (x, y).
    pub layouts: Vec<[f64; 3]>,
    /// Barycentric vertex areas A_i.
    pub vertex_area: Vec<f64>,
    pub defect: Vec<f64>,
    /// R_i = 2·defect_i / A_i.
    pub scalar_curv: Vec<f64>,
    /// m_i = e^{−η_i}·A_i.
    pub mass: Vec<f64>,
    /// Stiffness face weight e^{−η_T}, η_T the vertex average.
    pub face_weight: Vec<f64>,
    /// ∫⟨∇u,∇v⟩dm in weak form (cotan weights times face_weight).
    pub stiffness_eta: Csr,
    /// Unweighted cotan stiffness, for ΔR and Δη.
    pub stiffness_plain: Csr,
}

/// A closed surface state: fixed topology and base lengths, evolving w.
#[derive(Debug, Clone)]
pub struct MeshState {
    topology: Arc<MeshTopology>,
    positions: Vec<[f64; 3]>,
    base_lengths: Vec<f64>,
    w: Vec<f64>,
    eta: Vec<f64>,
    cache: OnceLock<Arc<MeshGeometry>>,
}

impl PartialEq for MeshState {
    fn eq(&self, other: &Self) -> bool {
        self.topology.faces == other.topology.faces
            && self.base_lengths == other.base_lengths
            && self.w == other.w
            && self.eta == other.eta
    }
}

impl MeshState {
    /// Builds a state from an embedded mesh; base lengths are the embedding
    /// distances, w and η start at zero.
    pub fn new(faces: Vec<[usize; 3]>, positions: Vec<[f64; 3]>) -> Result<Self> {
        let n = positions.len();
        MeshState::from_edge_lengths(faces, positions, |a, b, p: &[[f64; 3]]| {
            let d: [f64; 3] = std::array::from_fn(|i| p[a][i] - p[b][i]);
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .and_then(|s| {
            if s.topology.n_vertices() != n {
                return Err(CurvspecError::mesh("vertex count mismatch"));
            }
            Ok(s)
        })
    }

    /// Builds a state with intrinsic base lengths supplied per edge; the
    /// positions are kept for export only.
    pub fn from_edge_lengths(
        faces: Vec<[usize; 3]>,
        positions: Vec<[f64; 3]>,
        length: impl Fn(usize, usize, &[[f64; 3]]) -> f64,
    ) -> Result<Self> {
        let topology = Arc::new(MeshTopology::build(positions.len(), faces)?);
        let mut base_lengths = Vec::with_capacity(topology.edges.len());
        for e in &topology.edges {
            let l = length(e[0], e[1], &positions);
            if !(l > 0.0 && l.is_finite()) {
                return Err(CurvspecError::mesh(format!(
                    "edge {}-{} has non-positive length {l}",
                    e[0], e[1]
                )));
            }
            base_lengths.push(l);
        }
        let n = topology.n_vertices();
        let state = MeshState {
            topology,
            positions,
            base_lengths,
            w: vec![0.0; n],
            eta: vec![0.0; n],
            cache: OnceLock::new(),
        };
        // fail fast on degenerate input geometry
        state.geometry()?;
        Ok(state)
    }

    pub fn with_w(&self, w: Vec<f64>) -> Result<Self> {
        if w.len() != self.topology.n_vertices() {
            return Err(CurvspecError::mesh("w length does not match vertex count"));
        }
        Ok(MeshState {
            topology: self.topology.clone(),
            positions: self.positions.clone(),
            base_lengths: self.base_lengths.clone(),
            w,
            eta: self.eta.clone(),
            cache: OnceLock::new(),
        })
    }

    pub fn with_eta(&self, eta: Vec<f64>) -> Result<Self> {
        if eta.len() != self.topology.n_vertices() {
            return Err(CurvspecError::mesh("eta length does not match vertex count"));
        }
        Ok(MeshState {
            topology: self.topology.clone(),
            positions: self.positions.clone(),
            base_lengths: self.base_lengths.clone(),
            w: self.w.clone(),
            eta,
            cache: OnceLock::new(),
        })
    }

    pub fn topology(&self) -> &MeshTopology {
        &self.topology
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn base_lengths(&self) -> &[f64] {
        &self.base_lengths
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    /// Current length of edge `e`.
    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.topology.edges[e];
        (0.5 * (self.w[a] + self.w[b])).exp() * self.base_lengths[e]
    }

    pub fn geometry(&self) -> Result<Arc<MeshGeometry>> {
        if let Some(cached) = self.cache.get() {
            return Ok(cached.clone());
        }
        let geom = Arc::new(self.build_geometry()?);
        let _ = self.cache.set(geom.clone());
        Ok(geom)
    }

    fn build_geometry(&self) -> Result<MeshGeometry> {
        let topo = &*self.topology;
        let nf = topo.faces.len();
        let nv = topo.n_vertices;

        let edge_now: Vec<f64> = (0..topo.edges.len()).map(|e| self.edge_length(e)).collect();

        let mut lengths = Vec::with_capacity(nf);
        let mut angles = Vec::with_capacity(nf);
        let mut areas = Vec::with_capacity(nf);
        let mut layouts = Vec::with_capacity(nf);
        for (fi, fe) in topo.face_edges.iter().enumerate() {
            let l: [f64; 3] = std::array::from_fn(|k| edge_now[fe[k]]);
            let scale = l[0].max(l[1]).max(l[2]);
            for k in 0..3 {
                let slack = l[(k + 1) % 3] + l[(k + 2) % 3] - l[k];
                if slack <= 1e-12 * scale {
                    return Err(CurvspecError::mesh(format!(
                        "face {fi} violates the triangle inequality: \
                         lengths {:.6e}, {:.6e}, {:.6e}",
                        l[0], l[1], l[2]
                    )));
                }
            }
            let ang: [f64; 3] = std::array::from_fn(|k| {
                let (a, b, c) = (l[k], l[(k + 1) % 3], l[(k + 2) % 3]);
                let cos = ((b * b + c * c - a * a) / (2.0 * b * c)).clamp(-1.0, 1.0);
                cos.acos()
            });
            areas.push(heron_area(l[0], l[1], l[2]));
            // P0 at origin, P1 along +x at distance l₂ (= edge P0-P1), P2 above.
            let x = (l[2] * l[2] + l[1] * l[1] - l[0] * l[0]) / (2.0 * l[2]);
            let y2 = (l[1] * l[1] - x * x).max(0.0);
            layouts.push([l[2], x, y2.sqrt()]);
            lengths.push(l);
            angles.push(ang);
        }

        let mut vertex_area = vec![0.0; nv];
        let mut angle_sum = vec![0.0; nv];
        for (fi, f) in topo.faces.iter().enumerate() {
            for k in 0..3 {
                vertex_area[f[k]] += areas[fi] / 3.0;
                angle_sum[f[k]] += angles[fi][k];
            }
        }
        let mut defect = Vec::with_capacity(nv);
        let mut scalar_curv = Vec::with_capacity(nv);
        let mut mass = Vec::with_capacity(nv);
        for v in 0..nv {
            if vertex_area[v] <= 0.0 {
                return Err(CurvspecError::mesh(format!("vertex {v} has zero area")));
            }
            let d = std::f64::consts::TAU - angle_sum[v];
            defect.push(d);
            scalar_curv.push(2.0 * d / vertex_area[v]);
            mass.push((-self.eta[v]).exp() * vertex_area[v]);
        }

        let face_weight: Vec<f64> = topo
            .faces
            .iter()
            .map(|f| (-(self.eta[f[0]] + self.eta[f[1]] + self.eta[f[2]]) / 3.0).exp())
            .collect();

        let stiffness_eta = solver::assemble_cotan(topo, &angles, Some(&face_weight));
        let stiffness_plain = solver::assemble_cotan(topo, &angles, None);

        Ok(MeshGeometry {
            lengths,
            angles,
            areas,
            layouts,
            vertex_area,
            defect,
            scalar_curv,
            mass,
            face_weight,
            stiffness_eta,
            stiffness_plain,
        })
    }

    pub fn curvature(&self, measure: AverageMeasure) -> Result<CurvatureBundle> {
        let geom = self.geometry()?;
        let weights: Vec<f64> = match measure {
            AverageMeasure::Weighted => geom.mass.clone(),
            AverageMeasure::Riemannian => geom.vertex_area.clone(),
        };
        let total: f64 = weights.iter().sum();
        let average = geom
            .scalar_curv
            .iter()
            .zip(&weights)
            .map(|(&r, &m)| r * m)
            .sum::<f64>()
            / total;
        Ok(CurvatureBundle {
            scalar: Quantity::PerSite(geom.scalar_curv.clone()),
            ric_coeff: Quantity::PerSite(geom.scalar_curv.iter().map(|&r| 0.5 * r).collect()),
            ric_norm_sq: Quantity::PerSite(
                geom.scalar_curv.iter().map(|&r| 0.5 * r * r).collect(),
            ),
            average,
            measure,
        })
    }

    pub fn weighted_volume(&self) -> Result<f64> {
        Ok(self.geometry()?.mass.iter().sum())
    }

    /// |Σ defects − 2πχ|, the discrete Gauss–Bonnet residual.
    pub fn gauss_bonnet_residual(&self) -> Result<f64> {
        let geom = self.geometry()?;
        let total: f64 = geom.defect.iter().sum();
        Ok((total - std::f64::consts::TAU * self.topology.euler_characteristic as f64).abs())
    }

    /// dw_i/dt = φ(R_i − r)/2, with r dropped when the average term is off.
    pub fn flow_velocity(&self, params: &FlowParams) -> Result<Vec<f64>> {
        let bundle = self.curvature(AverageMeasure::Weighted)?;
        let r_bar = if params.use_average_term { bundle.average } else { 0.0 };
        let scalar = bundle.scalar.per_site().expect("mesh curvature is per-vertex");
        let half_phi = 0.5 * params.phi();
        Ok(scalar.iter().map(|&r| half_phi * (r - r_bar)).collect())
    }

    pub fn cfl_limit(&self, params: &FlowParams, safety: f64) -> Result<f64> {
        let v = self.flow_velocity(params)?;
        let sup = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok(safety / (2.0 * sup + 1e-12))
    }
}

/// Numerically careful Heron formula (Kahan's sorted form).
fn heron_area(a: f64, b: f64, c: f64) -> f64 {
    let mut s = [a, b, c];
    s.sort_by(|x, y| y.partial_cmp(x).expect("finite lengths"));
    let [a, b, c] = s;
    let term = (a + (b + c)) * (c - (a - b)) * (c + (a - b)) * (a + (b - c));
    0.25 * term.max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> MeshState {
        let positions = vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        MeshState::new(faces, positions).unwrap()
    }

    #[test]
    fn tetrahedron_satisfies_gauss_bonnet() {
        let state = tetrahedron();
        assert_eq!(state.topology().euler_characteristic(), 2);
        assert!(state.gauss_bonnet_residual().unwrap() < 1e-12);
    }

    #[test]
    fn open_mesh_is_rejected() {
        let positions = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let err = MeshState::new(vec![[0, 1, 2]], positions);
        assert!(matches!(err, Err(CurvspecError::Mesh(_))));
    }

    #[test]
    fn inconsistent_orientation_is_rejected() {
        let positions = vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        // second face flipped relative to the tetrahedron above
        let faces = vec![[0, 1, 2], [0, 3, 2], [0, 3, 1], [1, 3, 2]];
        let err = MeshState::new(faces, positions);
        assert!(matches!(err, Err(CurvspecError::Mesh(_))));
    }

    #[test]
    fn degenerate_face_is_rejected() {
        let positions = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [2.0, 0.0, 0.0], // collinear: zero-area face
            [0.0, 1.0, 0.0],
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        let err = MeshState::new(faces, positions);
        assert!(err.is_err());
    }

    #[test]
    fn conformal_scaling_shrinks_lengths() {
        let state = tetrahedron();
        let n = state.topology().n_vertices();
        let scaled = state.with_w(vec![-0.5; n]).unwrap();
        for e in 0..state.topology().edges().len() {
            let ratio = scaled.edge_length(e) / state.edge_length(e);
            assert!((ratio - (-0.5f64).exp()).abs() < 1e-12);
        }
        // defects are scale-invariant, areas scale by e^{2w}
        let g0 = state.geometry().unwrap();
        let g1 = scaled.geometry().unwrap();
        for v in 0..n {
            assert!((g0.defect[v] - g1.defect[v]).abs() < 1e-10);
            let ratio = g1.vertex_area[v] / g0.vertex_area[v];
            assert!((ratio - (-1.0f64).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn triangle_inequality_violation_reports_face() {
        let state = tetrahedron();
        // the 0-1 edge scales by e^3 while the 0-x and 1-x edges scale by
        // only e^{1.5}, so faces containing edge 0-1 degenerate
        let bad = state.with_w(vec![3.0, 3.0, 0.0, 0.0]).unwrap();
        let err = bad.geometry();
        match err {
            Err(CurvspecError::Mesh(msg)) => {
                assert!(msg.contains("triangle inequality"), "got: {msg}")
            }
            other => panic!("expected mesh error, got {other:?}"),
        }
    }

    #[test]
    fn average_measures_differ_with_eta() {
        let state = tetrahedron();
        let eta: Vec<f64> = (0..4).map(|i| 0.3 * i as f64).collect();
        let state = state.with_eta(eta).unwrap();
        let w: Vec<f64> = (0..4).map(|i| 0.05 * i as f64).collect();
        let state = state.with_w(w).unwrap();
        let weighted = state.curvature(AverageMeasure::Weighted).unwrap();
        let riemann = state.curvature(AverageMeasure::Riemannian).unwrap();
        assert!((weighted.average - riemann.average).abs() > 1e-6);
    }
}
