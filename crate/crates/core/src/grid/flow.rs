//! Flow velocity, metric variations, and the spectral-side integral terms on
//! the conformal torus.
//!
//! A conformal direction v deforms the metric along g(s) = e^{2(w+sv)}·δ, so
//! the variation tensor is H = 2v·g with trace h = 2nv = 4v. The flow itself
//! moves in the direction v = φ(R − r)/2 (r dropped when the average term is
//! off), which is the conformal reduction of −2a·Ric + 2(ρR − (φ/n)r)g.

use super::{ConformalTorusState, ScalarField, SymTensorField};
use crate::error::Result;
use crate::params::FlowParams;
use crate::state::{AverageMeasure, IntegralTerms};

/// A conformal metric direction with its derived variation data.
#[derive(Debug, Clone)]
pub struct ConformalVariation {
    /// Pointwise rate of the log conformal factor.
    pub v: ScalarField,
    /// Trace h = tr_g H = 4v.
    pub h: ScalarField,
    /// H = 2v·g as a chart tensor.
    pub tensor: SymTensorField,
    /// First variation of scalar curvature, R′ = −⟨Ric,H⟩ − Δh + div(div H).
    pub r_dot: ScalarField,
}

impl ConformalTorusState {
    /// Velocity of the log conformal factor under the flow: φ(R − r)/2, with
    /// the average dropped when the flow's average term is off.
    pub fn flow_velocity(&self, params: &FlowParams) -> Result<ScalarField> {
        let bundle = self.curvature(AverageMeasure::Weighted)?;
        let r_bar = if params.use_average_term { bundle.average } else { 0.0 };
        let scalar = bundle.scalar.per_site().expect("grid curvature is per-site");
        let half_phi = 0.5 * params.phi();
        let values = scalar.iter().map(|&r| half_phi * (r - r_bar)).collect();
        ScalarField::new(*self.grid(), values)
    }

    /// Largest stable step for the explicit integrator: safety over the
    /// fastest pointwise metric rate.
    pub fn cfl_limit(&self, params: &FlowParams, safety: f64) -> Result<f64> {
        let v = self.flow_velocity(params)?;
        Ok(safety / (2.0 * v.sup_norm() + 1e-12))
    }

    /// Variation data for an arbitrary conformal direction v.
    pub fn conformal_variation(&self, v: &ScalarField) -> Result<ConformalVariation> {
        let geom = self.geometry()?;
        let grid = *self.grid();
        let h = v.scaled(4.0);
        let two_v: Vec<f64> = v.values().iter().map(|&x| 2.0 * x).collect();
        let tensor = SymTensorField::conformal_multiple(&two_v, &geom.e2w, grid);

        // R′ = −⟨Ric, H⟩ − Δh + div(div H); Δ is the plain Laplace–Beltrami.
        let ric_coeff: Vec<f64> = geom.scalar_curv.iter().map(|&r| 0.5 * r).collect();
        let ric = SymTensorField::conformal_multiple(&ric_coeff, &geom.e2w, grid);
        let ric_h = self.tensor_inner(&ric, &tensor)?;
        let lap_h = self.laplace_beltrami(&h)?;
        let div_h = self.divergence(&tensor)?;
        let div_div_h = self.covector_divergence((&div_h.0, &div_h.1))?;
        let mut r_dot = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            r_dot.push(-ric_h[i] - lap_h.values()[i] + div_div_h.values()[i]);
        }
        Ok(ConformalVariation {
            v: v.clone(),
            h,
            tensor,
            r_dot: ScalarField::new(grid, r_dot)?,
        })
    }

    /// Variation data for the flow direction itself.
    pub fn flow_variation(&self, params: &FlowParams) -> Result<ConformalVariation> {
        let v = self.flow_velocity(params)?;
        self.conformal_variation(&v)
    }

    /// 𝕃′f = ⟨½dh − div_η H, df⟩ − ⟨H, ∇²f⟩ + c R′ f for a fixed function f.
    pub fn operator_variation_apply(
        &self,
        f: &ScalarField,
        c: f64,
        variation: &ConformalVariation,
    ) -> Result<ScalarField> {
        let grid = *self.grid();
        let (ediv_x, ediv_y) = self.eta_divergence(&variation.tensor)?;
        let hs = variation.h.spectrum();
        let half_dh_x = hs.derivative(1, 0).scaled(0.5);
        let half_dh_y = hs.derivative(0, 1).scaled(0.5);
        let omega_x = half_dh_x.zip(&ediv_x, |a, b| a - b);
        let omega_y = half_dh_y.zip(&ediv_y, |a, b| a - b);
        let first = self.covector_pair_grad((&omega_x, &omega_y), f)?;
        let hess = self.hessian(f)?;
        let h_hess = self.tensor_inner(&variation.tensor, &hess)?;
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            values.push(
                first.values()[i] - h_hess[i]
                    + c * variation.r_dot.values()[i] * f.values()[i],
            );
        }
        ScalarField::new(grid, values)
    }

    /// Eigenvalue rate from the general variation formula:
    /// λ′ = ∫[(h/4)·L(u²) − H(∇u,∇u) − c R′ u²] dm.
    pub fn general_variation_rate(
        &self,
        u: &ScalarField,
        c: f64,
        variation: &ConformalVariation,
    ) -> Result<f64> {
        let u2 = u.zip(u, |a, b| a * b);
        let l_u2 = self.witten_apply(&u2)?;
        let h_grad = self.tensor_apply_grad(&variation.tensor, u)?;
        let grid = *self.grid();
        let mut integrand = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            integrand.push(
                0.25 * variation.h.values()[i] * l_u2.values()[i]
                    - h_grad[i]
                    - c * variation.r_dot.values()[i] * u2.values()[i],
            );
        }
        self.integrate_dm(&integrand)
    }

    /// Eigenvalue rate through the operator variation: λ′ = −∫ u 𝕃′u dm.
    pub fn eigenvalue_rate_via_operator_variation(
        &self,
        u: &ScalarField,
        c: f64,
        variation: &ConformalVariation,
    ) -> Result<f64> {
        let lu = self.operator_variation_apply(u, c, variation)?;
        let integrand: Vec<f64> =
            u.values().iter().zip(lu.values()).map(|(&a, &b)| -a * b).collect();
        self.integrate_dm(&integrand)
    }

    /// Pointwise evolution rate of scalar curvature along the flow:
    /// R′ = 2a|Ric|² + (2R/n)(φr − ρnR) + ψΔR, with the r term following the
    /// flow's average switch.
    pub fn scalar_curvature_rate(&self, params: &FlowParams) -> Result<ScalarField> {
        let n = params.dim() as f64;
        let bundle = self.curvature(AverageMeasure::Weighted)?;
        let scalar = bundle.scalar.per_site().expect("grid curvature is per-site");
        let ric_sq = bundle.ric_norm_sq.per_site().expect("grid curvature is per-site");
        let r_bar = if params.use_average_term { bundle.average } else { 0.0 };
        let grid = *self.grid();
        let r_field = ScalarField::new(grid, scalar.to_vec())?;
        let lap_r = self.laplace_beltrami(&r_field)?;
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            values.push(
                2.0 * params.a * ric_sq[i]
                    + (2.0 * scalar[i] / n) * (params.phi() * r_bar - params.rho * n * scalar[i])
                    + params.psi() * lap_r.values()[i],
            );
        }
        ScalarField::new(grid, values)
    }

    /// The integrals entering the eigenvalue-rate formulas, all against dm.
    pub fn integral_terms(&self, u: &ScalarField, measure: AverageMeasure) -> Result<IntegralTerms> {
        let geom = self.geometry()?;
        let grid = *self.grid();
        let n = grid.len();
        let bundle = self.curvature(measure)?;
        let scalar = bundle.scalar.per_site().expect("grid curvature is per-site");
        let ric_coeff = bundle.ric_coeff.per_site().expect("grid curvature is per-site");
        let ric_sq = bundle.ric_norm_sq.per_site().expect("grid curvature is per-site");

        let su = u.spectrum();
        let ux = su.derivative(1, 0).into_values();
        let uy = su.derivative(0, 1).into_values();
        let r_field = ScalarField::new(grid, scalar.to_vec())?;
        let lap_r = self.laplace_beltrami(&r_field)?.into_values();
        let lap_eta = self.laplace_beltrami(self.eta())?.into_values();
        let eta_hess = self.hessian(self.eta())?;
        let eta_hess_grad = self.tensor_apply_grad(&eta_hess, u)?;
        let u_hess = self.hessian(u)?;
        let u_hess_sq = self.tensor_norm_sq(&u_hess)?;

        let mut terms = IntegralTerms::default();
        let mut hess_total = 0.0;
        for i in 0..n {
            let m = geom.mass[i];
            let uu = u.values()[i] * u.values()[i];
            let grad_sq = geom.em2w[i] * (ux[i] * ux[i] + uy[i] * uy[i]);
            // Gradient pairings against the drift: ⟨∇η,∇u⟩ and |∇u − u∇η|².
            let drift_pair = geom.em2w[i] * (geom.eta_x[i] * ux[i] + geom.eta_y[i] * uy[i]);
            let dx = ux[i] - u.values()[i] * geom.eta_x[i];
            let dy = uy[i] - u.values()[i] * geom.eta_y[i];
            let drift_diff_sq = geom.em2w[i] * (dx * dx + dy * dy);
            // Ric(∇u,∇u) for Ric = ric_coeff·g is just ric_coeff·|∇u|².
            terms.norm_sq += uu * m;
            terms.grad_sq += grad_sq * m;
            terms.u2_r += uu * scalar[i] * m;
            terms.r_grad_sq += scalar[i] * grad_sq * m;
            terms.ric_grad_grad += ric_coeff[i] * grad_sq * m;
            terms.ricsq_u2 += ric_sq[i] * uu * m;
            terms.r2_u2 += scalar[i] * scalar[i] * uu * m;
            terms.u2_lap_r += uu * lap_r[i] * m;
            terms.r_u2_lap_eta += scalar[i] * uu * lap_eta[i] * m;
            terms.r_drift_diff_sq += scalar[i] * drift_diff_sq * m;
            terms.drift_grad_sq += drift_pair * drift_pair * m;
            terms.hess_eta_grad_grad += eta_hess_grad[i] * m;
            terms.drift_grad_u2 += 2.0 * u.values()[i] * drift_pair * m;
            hess_total += u_hess_sq[i] * m;
        }
        terms.hess_norm_sq = Some(hess_total);
        Ok(terms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use approx::assert_relative_eq;

    #[test]
    fn velocity_vanishes_on_flat_torus() {
        let g = PeriodicGrid::square(16).unwrap();
        let state = ConformalTorusState::flat(g);
        let params = FlowParams::new(1.0, 0.05, 0.0, 2, true).unwrap();
        let v = state.flow_velocity(&params).unwrap();
        assert!(v.sup_norm() < 1e-14);
        assert!(state.cfl_limit(&params, 0.1).unwrap() > 1e9);
    }

    #[test]
    fn velocity_matches_conformal_reduction() {
        // dw/dt = φ(R−r)/2 must equal the trace part of the full flow tensor.
        let g = PeriodicGrid::square(32).unwrap();
        let w = ScalarField::from_fn(g, |x, y| 0.1 * x.cos() * y.sin());
        let state = ConformalTorusState::new(w, ScalarField::zeros(g)).unwrap();
        let params = FlowParams::new(1.0, 0.05, 0.0, 2, true).unwrap();
        let bundle = state.curvature(AverageMeasure::Weighted).unwrap();
        let scalar = bundle.scalar.per_site().unwrap();
        let v = state.flow_velocity(&params).unwrap();
        for i in 0..g.len() {
            // −2a·(R/2) + 2(ρR − (φ/2)·r) is the coefficient of g; w rate is half.
            let coeff = -params.a * scalar[i]
                + 2.0 * params.rho * scalar[i]
                - params.phi() * bundle.average;
            assert_relative_eq!(v.values()[i], 0.5 * coeff, epsilon = 1e-12);
        }
    }

    #[test]
    fn curvature_variation_matches_difference_quotient() {
        let g = PeriodicGrid::square(64).unwrap();
        let w = ScalarField::from_fn(g, |x, y| 0.15 * (x.cos() + (y - 0.3).sin()));
        let state = ConformalTorusState::new(w, ScalarField::zeros(g)).unwrap();
        let v = ScalarField::from_fn(g, |x, y| 0.2 * (x + y).cos());
        let variation = state.conformal_variation(&v).unwrap();

        let delta = 1e-4;
        let bump = |s: f64| {
            let wker = state.w().zip(&v, |a, b| a + s * b);
            let bumped = state.with_w(wker).unwrap();
            let bundle = bumped.curvature(AverageMeasure::Weighted).unwrap();
            bundle.scalar.per_site().unwrap().to_vec()
        };
        let plus = bump(delta);
        let minus = bump(-delta);
        for i in 0..g.len() {
            let fd = (plus[i] - minus[i]) / (2.0 * delta);
            assert_relative_eq!(variation.r_dot.values()[i], fd, epsilon = 1e-6);
        }
    }
}
