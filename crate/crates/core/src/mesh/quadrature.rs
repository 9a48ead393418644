//! Quadrature on mesh states: the integrals feeding the eigenvalue-rate
//! formulas, the flow variation data, and the measure evolution check.
//!
//! Gradients are the exact piecewise-linear face gradients; products of
//! vertex quantities use vertex quadrature, products involving gradients use
//! face quadrature with vertex averages. The η Hessian comes from a one-ring
//! quadratic fit and is the one genuinely low-order ingredient here.

use nalgebra::{DMatrix, DVector};

use crate::error::{CurvspecError, Result};
use crate::params::FlowParams;
use crate::state::{AverageMeasure, IntegralTerms};

use super::{MeshGeometry, MeshState};

/// First variation data for the conformal flow direction on a mesh:
/// H = coeff·g and h = trace H = 2·coeff, both per vertex, plus the
/// curvature rate R′ along the flow.
#[derive(Debug, Clone)]
pub struct MeshFlowVariation {
    pub coeff: Vec<f64>,
    pub h: Vec<f64>,
    pub r_dot: Vec<f64>,
}

/// Gradient of a vertex field on face `fi`, in the face's intrinsic frame.
/// ∇λ_k = perp(edge opposite k)/(2A) with a counterclockwise layout.
fn face_gradient(geom: &MeshGeometry, fi: usize, f: [f64; 3]) -> [f64; 2] {
    let [p1x, p2x, p2y] = geom.layouts[fi];
    // edges opposite corners 0,1,2: P2−P1, P0−P2, P1−P0
    let e = [[p2x - p1x, p2y], [-p2x, -p2y], [p1x, 0.0]];
    let inv2a = 1.0 / (2.0 * geom.areas[fi]);
    let mut g = [0.0, 0.0];
    for k in 0..3 {
        g[0] += f[k] * -e[k][1] * inv2a;
        g[1] += f[k] * e[k][0] * inv2a;
    }
    g
}

fn at_corners(values: &[f64], f: &[usize; 3]) -> [f64; 3] {
    [values[f[0]], values[f[1]], values[f[2]]]
}

fn mean3(x: [f64; 3]) -> f64 {
    (x[0] + x[1] + x[2]) / 3.0
}

impl MeshState {
    /// ∫f dm by vertex quadrature.
    pub fn integrate_dm(&self, f: &[f64]) -> Result<f64> {
        let geom = self.geometry()?;
        Ok(f.iter().zip(&geom.mass).map(|(&x, &m)| x * m).sum())
    }

    /// Per-vertex gradient pieces of the quadratic one-ring fits: returns
    /// (∇u at vertex, ∇²η at vertex applied to that gradient) as the scalar
    /// ∇²η(∇u,∇u) per vertex. Vertices of valence < 5 fall back to zero
    /// Hessian; the fit is the low-accuracy part of mesh quadrature.
    fn hessian_eta_grad_grad(&self, u: &[f64]) -> Result<Vec<f64>> {
        let geom = self.geometry()?;
        let topo = self.topology();
        let nv = topo.n_vertices();
        let mut out = vec![0.0; nv];
        for v in 0..nv {
            let ring = &topo.rings()[v];
            let around = &topo.ring_faces()[v];
            let m = ring.len();
            if m < 5 {
                continue;
            }
            // Polar layout: radii are current edge lengths, sector angles are
            // the corner angles at v rescaled so the ring closes at 2π.
            let mut corner = Vec::with_capacity(m);
            for &fi in around {
                let k = topo.faces()[fi]
                    .iter()
                    .position(|&x| x == v)
                    .expect("ring face contains its center");
                corner.push(geom.angles[fi][k]);
            }
            let total: f64 = corner.iter().sum();
            let scale = std::f64::consts::TAU / total;
            let mut design = DMatrix::zeros(m, 5);
            let mut rhs_eta = DVector::zeros(m);
            let mut rhs_u = DVector::zeros(m);
            let mut theta = 0.0f64;
            for j in 0..m {
                let e = topo
                    .edge_index(v, ring[j])
                    .expect("ring vertices are edge-connected");
                let r = self.edge_length(e);
                let (qx, qy) = (r * theta.cos(), r * theta.sin());
                design[(j, 0)] = qx;
                design[(j, 1)] = qy;
                design[(j, 2)] = 0.5 * qx * qx;
                design[(j, 3)] = qx * qy;
                design[(j, 4)] = 0.5 * qy * qy;
                rhs_eta[j] = self.eta()[ring[j]] - self.eta()[v];
                rhs_u[j] = u[ring[j]] - u[v];
                theta += corner[j] * scale;
            }
            let svd = design.svd(true, true);
            let fit_eta = svd
                .solve(&rhs_eta, 1e-12)
                .map_err(|e| CurvspecError::mesh(format!("one-ring fit failed: {e}")))?;
            let fit_u = svd
                .solve(&rhs_u, 1e-12)
                .map_err(|e| CurvspecError::mesh(format!("one-ring fit failed: {e}")))?;
            let (gx, gy) = (fit_u[0], fit_u[1]);
            let (hxx, hxy, hyy) = (fit_eta[2], fit_eta[3], fit_eta[4]);
            out[v] = hxx * gx * gx + 2.0 * hxy * gx * gy + hyy * gy * gy;
        }
        Ok(out)
    }

    /// The integrals entering the eigenvalue-rate formulas, all against dm.
    /// `hess_norm_sq` is not available on meshes.
    pub fn integral_terms(&self, u: &[f64], measure: AverageMeasure) -> Result<IntegralTerms> {
        let geom = self.geometry()?;
        let topo = self.topology();
        if u.len() != topo.n_vertices() {
            return Err(CurvspecError::mesh("field length does not match vertex count"));
        }
        let _ = measure; // curvature entries are pointwise; only averages differ
        let scalar = &geom.scalar_curv;
        let lap_r = self.laplace_beltrami(scalar)?;
        let lap_eta = self.laplace_beltrami(self.eta())?;
        let hess_eta = self.hessian_eta_grad_grad(u)?;

        let mut terms = IntegralTerms::default();
        for (i, &m) in geom.mass.iter().enumerate() {
            let uu = u[i] * u[i];
            let r = scalar[i];
            terms.norm_sq += uu * m;
            terms.u2_r += uu * r * m;
            terms.ricsq_u2 += 0.5 * r * r * uu * m;
            terms.r2_u2 += r * r * uu * m;
            terms.u2_lap_r += uu * lap_r[i] * m;
            terms.r_u2_lap_eta += r * uu * lap_eta[i] * m;
            terms.hess_eta_grad_grad += hess_eta[i] * m;
        }
        for (fi, f) in topo.faces().iter().enumerate() {
            let dm = geom.face_weight[fi] * geom.areas[fi];
            let gu = face_gradient(&geom, fi, at_corners(u, f));
            let geta = face_gradient(&geom, fi, at_corners(self.eta(), f));
            let grad_sq = gu[0] * gu[0] + gu[1] * gu[1];
            let r_face = mean3(at_corners(scalar, f));
            let u_face = mean3(at_corners(u, f));
            let drift_pair = geta[0] * gu[0] + geta[1] * gu[1];
            let dx = gu[0] - u_face * geta[0];
            let dy = gu[1] - u_face * geta[1];
            terms.grad_sq += grad_sq * dm;
            terms.r_grad_sq += r_face * grad_sq * dm;
            // Ric = (R/2)·g on a surface
            terms.ric_grad_grad += 0.5 * r_face * grad_sq * dm;
            terms.r_drift_diff_sq += r_face * (dx * dx + dy * dy) * dm;
            terms.drift_grad_sq += drift_pair * drift_pair * dm;
            terms.drift_grad_u2 += 2.0 * u_face * drift_pair * dm;
        }
        terms.hess_norm_sq = None;
        Ok(terms)
    }

    /// Pointwise evolution rate of scalar curvature along the flow:
    /// R′ = 2a|Ric|² + (2R/n)(φr − ρnR) + ψΔR, with the r term following
    /// the flow's average switch.
    pub fn scalar_curvature_rate(&self, params: &FlowParams) -> Result<Vec<f64>> {
        let n = params.dim();
        let bundle = self.curvature(AverageMeasure::Weighted)?;
        let scalar = bundle.scalar.per_site().expect("mesh curvature is per-vertex");
        let ric_sq = bundle.ric_norm_sq.per_site().expect("mesh curvature is per-vertex");
        let r_bar = if params.use_average_term { bundle.average } else { 0.0 };
        let lap_r = self.laplace_beltrami(scalar)?;
        Ok((0..scalar.len())
            .map(|i| {
                2.0 * params.a * ric_sq[i]
                    + (2.0 * scalar[i] / n) * (params.phi() * r_bar - params.rho * n * scalar[i])
                    + params.psi() * lap_r[i]
            })
            .collect())
    }

    /// Variation data of the conformal flow: H = φ(R−r)·g, h = trace H.
    pub fn flow_variation(&self, params: &FlowParams) -> Result<MeshFlowVariation> {
        let v = self.flow_velocity(params)?;
        let coeff: Vec<f64> = v.iter().map(|&x| 2.0 * x).collect();
        let h: Vec<f64> = coeff.iter().map(|&x| 2.0 * x).collect();
        debug_assert!(h.iter().zip(&coeff).all(|(&hi, &ci)| hi == 2.0 * ci));
        let r_dot = self.scalar_curvature_rate(params)?;
        Ok(MeshFlowVariation { coeff, h, r_dot })
    }

    /// Eigenvalue rate from the general variation formula
    /// λ′ = ∫[(h/4)·L(u²) − H(∇u,∇u) − c R′ u²] dm. The first term is
    /// evaluated in weak form, −¼·hᵀK(u²), which is exact for the discrete
    /// operator.
    pub fn general_variation_rate(
        &self,
        u: &[f64],
        coupling: f64,
        variation: &MeshFlowVariation,
    ) -> Result<f64> {
        let geom = self.geometry()?;
        let topo = self.topology();
        let u2: Vec<f64> = u.iter().map(|&x| x * x).collect();
        let mut k_u2 = vec![0.0; u2.len()];
        geom.stiffness_eta.apply_vec(&u2, &mut k_u2);
        let mut rate = 0.0;
        for i in 0..u2.len() {
            rate -= 0.25 * variation.h[i] * k_u2[i];
            rate -= coupling * variation.r_dot[i] * u2[i] * geom.mass[i];
        }
        for (fi, f) in topo.faces().iter().enumerate() {
            let gu = face_gradient(&geom, fi, at_corners(u, f));
            let coeff_face = mean3(at_corners(&variation.coeff, f));
            let dm = geom.face_weight[fi] * geom.areas[fi];
            rate -= coeff_face * (gu[0] * gu[0] + gu[1] * gu[1]) * dm;
        }
        Ok(rate)
    }

    /// ½∫h dm evaluated with area-derivative weights, so that it equals
    /// d/dt ∫dm exactly in continuous time: the area rate of a triangle is
    /// Σᵢ ẇᵢ·cᵢ with cᵢ = ¼·Σ_{edges at i} l²·cot(opposite angle).
    pub fn measure_rate_quadrature(&self, h: &[f64]) -> Result<f64> {
        let geom = self.geometry()?;
        let topo = self.topology();
        let mut rate = 0.0;
        for (fi, f) in topo.faces().iter().enumerate() {
            let eta_bar = (0..3).map(|k| (-self.eta()[f[k]]).exp()).sum::<f64>() / 3.0;
            let mut face_rate = 0.0;
            for k in 0..3 {
                let c_i = 0.25
                    * (geom.lengths[fi][(k + 1) % 3].powi(2) / geom.angles[fi][(k + 1) % 3].tan()
                        + geom.lengths[fi][(k + 2) % 3].powi(2)
                            / geom.angles[fi][(k + 2) % 3].tan());
                face_rate += 0.25 * h[f[k]] * c_i;
            }
            rate += eta_bar * face_rate;
        }
        Ok(rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;

    #[test]
    fn face_gradient_is_exact_for_linear_fields() {
        // equilateral layout: P0=(0,0), P1=(1,0), P2=(1/2, √3/2)
        let state = icosphere(0, 1.0).unwrap();
        let geom = state.geometry().unwrap();
        // u = sum of barycentric checks: gradient of λ-combination must be
        // reproduced on each face from its own corner values
        for fi in 0..state.topology().faces().len() {
            let g = face_gradient(&geom, fi, [0.0, geom.layouts[fi][0], geom.layouts[fi][1]]);
            // field equal to the local x coordinate has gradient (1, 0)
            assert!((g[0] - 1.0).abs() < 1e-12, "gx = {}", g[0]);
            assert!(g[1].abs() < 1e-12, "gy = {}", g[1]);
        }
    }

    #[test]
    fn constant_field_integrates_to_weighted_volume() {
        let state = icosphere(2, 1.0).unwrap();
        let n = state.topology().n_vertices();
        let total = state.integrate_dm(&vec![1.0; n]).unwrap();
        assert!((total - state.weighted_volume().unwrap()).abs() < 1e-12);
    }

    #[test]
    fn measure_rate_matches_uniform_scaling() {
        // h constant = 4s means every length grows at rate s, areas at 2s,
        // so d/dt ∫dm = 2s·∫dm exactly.
        let state = icosphere(1, 1.0).unwrap();
        let n = state.topology().n_vertices();
        let s = 0.3;
        let rate = state.measure_rate_quadrature(&vec![4.0 * s; n]).unwrap();
        let vol = state.weighted_volume().unwrap();
        assert!((rate - 2.0 * s * vol).abs() < 1e-10 * vol);
    }

    #[test]
    fn gradient_quadrature_matches_weak_form() {
        // ∫|∇u|² dm from face quadrature must equal uᵀKu with the η-weighted
        // stiffness: both are assembled from the same PL gradients.
        let state = icosphere(2, 1.0).unwrap();
        let n = state.topology().n_vertices();
        let eta: Vec<f64> = (0..n).map(|i| 0.1 * (i as f64 * 0.7).sin()).collect();
        let state = state.with_eta(eta).unwrap();
        let u: Vec<f64> = state.positions().iter().map(|p| p[2]).collect();
        let terms = state.integral_terms(&u, AverageMeasure::Weighted).unwrap();
        let geom = state.geometry().unwrap();
        let weak = geom.stiffness_eta.quadratic_form(&u, &u);
        assert!(
            (terms.grad_sq - weak).abs() < 1e-10 * weak.abs(),
            "face quadrature {} vs weak {}",
            terms.grad_sq,
            weak
        );
    }
}
