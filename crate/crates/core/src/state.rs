//! Shared value types and the geometry-state dispatch enum.

use serde::{Deserialize, Serialize};

use crate::analytic::{FlatTorusState, SphereState};
use crate::eigen::EigenOptions;
use crate::error::{CurvspecError, Result};
use crate::grid::{ConformalTorusState, ScalarField};
use crate::mesh::MeshState;
use crate::params::FlowParams;

/// Which measure the curvature average r is taken against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AverageMeasure {
    /// The weighted measure dm = e^{−η} dM (the default).
    Weighted,
    /// The plain Riemannian measure dM.
    Riemannian,
}

/// A scalar quantity that is either spatially constant or sampled per site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Quantity {
    Constant(f64),
    PerSite(Vec<f64>),
}

impl Quantity {
    pub fn constant(&self) -> Option<f64> {
        match self {
            Quantity::Constant(v) => Some(*v),
            Quantity::PerSite(_) => None,
        }
    }

    pub fn per_site(&self) -> Option<&[f64]> {
        match self {
            Quantity::Constant(_) => None,
            Quantity::PerSite(v) => Some(v),
        }
    }

    pub fn min(&self) -> f64 {
        match self {
            Quantity::Constant(v) => *v,
            Quantity::PerSite(v) => v.iter().fold(f64::INFINITY, |m, &x| m.min(x)),
        }
    }

    pub fn max(&self) -> f64 {
        match self {
            Quantity::Constant(v) => *v,
            Quantity::PerSite(v) => v.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)),
        }
    }

    /// Spatial spread max − min; zero for constants.
    pub fn spread(&self) -> f64 {
        self.max() - self.min()
    }

    /// The constant value, tolerating a small spatial spread relative to the
    /// magnitude; errors when the quantity genuinely varies.
    pub fn as_constant(&self, rel_tol: f64) -> Result<f64> {
        match self {
            Quantity::Constant(v) => Ok(*v),
            Quantity::PerSite(v) => {
                let max = self.max();
                let min = self.min();
                let scale = max.abs().max(min.abs()).max(1.0);
                if max - min > rel_tol * scale {
                    return Err(CurvspecError::NotApplicable(format!(
                        "quantity varies over space (spread {:.3e}, scale {:.3e})",
                        max - min,
                        scale
                    )));
                }
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
        }
    }
}

/// Scalar curvature data of a state at one instant.
///
/// `ric_coeff` and `ric_norm_sq` carry Ric = ric_coeff·g and |Ric|²; both are
/// exact on the backends shipped here (all have Ric proportional to g except
/// the mesh, which stores the surface value R/2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureBundle {
    pub scalar: Quantity,
    pub ric_coeff: Quantity,
    pub ric_norm_sq: Quantity,
    /// The average r = ∫R dμ / ∫dμ with μ picked by `measure`.
    pub average: f64,
    pub measure: AverageMeasure,
}

/// How an eigenfunction is represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EigenMode {
    /// Spherical harmonic level k.
    SphereLevel(u32),
    /// Representative lattice vector of a flat-torus Fourier mode.
    TorusLevel(Vec<i64>),
    /// Grid eigenvector, normalized in the weighted measure.
    Field(ScalarField),
    /// Mesh eigenvector by vertex, normalized in the weighted measure.
    Vertex(Vec<f64>),
}

/// One eigenvalue of −𝕃 with its eigenfunction description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda: f64,
    /// Exact multiplicity for analytic backends; 1 for numeric ones, where
    /// near-degeneracy is reported through clusters instead.
    pub multiplicity: usize,
    pub mode: EigenMode,
}

/// The measure-weighted integrals the eigenvalue-rate formulas consume.
/// All are against dm and assume ∫u² dm = 1 up to solver tolerance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegralTerms {
    /// ∫u² dm, recomputed as a normalization check.
    pub norm_sq: f64,
    /// ∫|∇u|² dm.
    pub grad_sq: f64,
    /// ∫u²R dm.
    pub u2_r: f64,
    /// ∫R|∇u|² dm.
    pub r_grad_sq: f64,
    /// ∫Ric(∇u,∇u) dm.
    pub ric_grad_grad: f64,
    /// ∫|Ric|²u² dm.
    pub ricsq_u2: f64,
    /// ∫R²u² dm.
    pub r2_u2: f64,
    /// ∫u²ΔR dm (plain Laplacian).
    pub u2_lap_r: f64,
    /// ∫Ru²Δη dm (plain Laplacian).
    pub r_u2_lap_eta: f64,
    /// ∫R|∇u − u∇η|² dm.
    pub r_drift_diff_sq: f64,
    /// ∫⟨∇η,∇u⟩² dm.
    pub drift_grad_sq: f64,
    /// ∫∇²η(∇u,∇u) dm.
    pub hess_eta_grad_grad: f64,
    /// ∫⟨∇η,∇(u²)⟩ dm.
    pub drift_grad_u2: f64,
    /// ∫|∇²u|² dm; None when the backend cannot form a trustworthy Hessian.
    pub hess_norm_sq: Option<f64>,
}

/// An identity-check result: absolute residual plus the magnitude it should
/// be compared against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub absolute: f64,
    pub scale: f64,
}

impl Residual {
    pub fn new(absolute: f64, scale: f64) -> Self {
        Residual { absolute, scale: scale.max(1e-30) }
    }

    pub fn relative(&self) -> f64 {
        self.absolute / self.scale
    }
}

/// A geometry with everything the flow and the eigenproblem need.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryState {
    Sphere(SphereState),
    FlatTorus(FlatTorusState),
    ConformalTorus(ConformalTorusState),
    Mesh(MeshState),
}

impl GeometryState {
    pub fn dim(&self) -> u32 {
        match self {
            GeometryState::Sphere(s) => s.dim(),
            GeometryState::FlatTorus(s) => s.dim(),
            GeometryState::ConformalTorus(_) | GeometryState::Mesh(_) => 2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            GeometryState::Sphere(_) => "sphere",
            GeometryState::FlatTorus(_) => "flat-torus",
            GeometryState::ConformalTorus(_) => "conformal-torus",
            GeometryState::Mesh(_) => "mesh",
        }
    }

    pub fn curvature(&self, measure: AverageMeasure) -> Result<CurvatureBundle> {
        match self {
            GeometryState::Sphere(s) => Ok(s.curvature(measure)),
            GeometryState::FlatTorus(s) => Ok(s.curvature(measure)),
            GeometryState::ConformalTorus(s) => s.curvature(measure),
            GeometryState::Mesh(s) => s.curvature(measure),
        }
    }

    pub fn weighted_volume(&self) -> Result<f64> {
        match self {
            GeometryState::Sphere(s) => Ok(s.weighted_volume()),
            GeometryState::FlatTorus(s) => s.weighted_volume(),
            GeometryState::ConformalTorus(s) => s.weighted_volume(),
            GeometryState::Mesh(s) => s.weighted_volume(),
        }
    }

    /// First `count` eigenvalues of −𝕃 in ascending order. Analytic backends
    /// repeat eigenvalues per multiplicity; numeric ones return simple pairs.
    pub fn eigensolve(&self, c: f64, count: usize, opts: &EigenOptions) -> Result<Vec<EigenPair>> {
        match self {
            GeometryState::Sphere(s) => s.eigensolve(c, count),
            GeometryState::FlatTorus(s) => s.eigensolve(c, count),
            GeometryState::ConformalTorus(s) => crate::grid::operator::eigensolve(s, c, count, opts),
            GeometryState::Mesh(s) => s.eigensolve(c, count, opts),
        }
    }

    /// Integral terms for one eigenpair produced by this state's eigensolve.
    pub fn integral_terms(&self, pair: &EigenPair, measure: AverageMeasure) -> Result<IntegralTerms> {
        match (self, &pair.mode) {
            (GeometryState::Sphere(s), EigenMode::SphereLevel(k)) => {
                Ok(s.integral_terms(*k))
            }
            (GeometryState::FlatTorus(s), EigenMode::TorusLevel(kvec)) => {
                s.integral_terms(kvec)
            }
            (GeometryState::ConformalTorus(s), EigenMode::Field(u)) => {
                s.integral_terms(u, measure)
            }
            (GeometryState::Mesh(s), EigenMode::Vertex(u)) => s.integral_terms(u, measure),
            _ => Err(CurvspecError::InvalidParams(
                "eigenpair does not belong to this geometry".into(),
            )),
        }
    }

    /// Degrees of freedom the flow moves. Geometry constants (η, topology,
    /// lattice periods) are carried by the state itself.
    pub(crate) fn dof(&self) -> Vec<f64> {
        match self {
            GeometryState::Sphere(s) => vec![s.radius_sq()],
            GeometryState::FlatTorus(_) => Vec::new(),
            GeometryState::ConformalTorus(s) => s.w().values().to_vec(),
            GeometryState::Mesh(s) => s.w().to_vec(),
        }
    }

    pub(crate) fn with_dof(&self, dof: Vec<f64>) -> Result<GeometryState> {
        match self {
            GeometryState::Sphere(s) => {
                Ok(GeometryState::Sphere(s.with_radius_sq(dof[0])?))
            }
            GeometryState::FlatTorus(s) => Ok(GeometryState::FlatTorus(s.clone())),
            GeometryState::ConformalTorus(s) => {
                let w = ScalarField::new(*s.grid(), dof)?;
                Ok(GeometryState::ConformalTorus(s.with_w(w)?))
            }
            GeometryState::Mesh(s) => Ok(GeometryState::Mesh(s.with_w(dof)?)),
        }
    }

    /// Time derivative of the degrees of freedom under the flow.
    pub(crate) fn dof_rate(&self, params: &FlowParams) -> Result<Vec<f64>> {
        match self {
            GeometryState::Sphere(s) => Ok(vec![s.radius_sq_rate(params)]),
            GeometryState::FlatTorus(_) => Ok(Vec::new()),
            GeometryState::ConformalTorus(s) => {
                Ok(s.flow_velocity(params)?.into_values())
            }
            GeometryState::Mesh(s) => s.flow_velocity(params),
        }
    }

    /// Largest stable explicit step at this instant.
    pub fn cfl_limit(&self, params: &FlowParams, safety: f64) -> Result<f64> {
        match self {
            GeometryState::Sphere(s) => Ok(s.cfl_limit(params, safety)),
            GeometryState::FlatTorus(_) => Ok(f64::INFINITY),
            GeometryState::ConformalTorus(s) => s.cfl_limit(params, safety),
            GeometryState::Mesh(s) => s.cfl_limit(params, safety),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantity_constant_extraction() {
        let q = Quantity::PerSite(vec![2.0, 2.0 + 1e-12, 2.0 - 1e-12]);
        assert!((q.as_constant(1e-9).unwrap() - 2.0).abs() < 1e-11);
        let varying = Quantity::PerSite(vec![1.0, 2.0]);
        assert!(varying.as_constant(1e-9).is_err());
        assert_eq!(varying.spread(), 1.0);
    }

    #[test]
    fn residual_relative_guards_zero_scale() {
        let r = Residual::new(0.0, 0.0);
        assert_eq!(r.relative(), 0.0);
        let r = Residual::new(1e-8, 2.0);
        assert_eq!(r.relative(), 5e-9);
    }
}
