//! Identity checkers on the conformal torus. Each recomputes both sides of a
//! pointwise or integral identity from scratch and reports the residual with a
//! magnitude scale, so a relative tolerance stays meaningful near zero.

use super::{ConformalTorusState, ScalarField, SymTensorField};
use crate::error::{CurvspecError, Result};
use crate::state::{AverageMeasure, Residual};

/// Range of admissible finite-difference offsets for the variation checks.
const DELTA_RANGE: (f64, f64) = (1e-6, 1e-2);

fn validate_delta(delta: f64) -> Result<()> {
    if !(delta >= DELTA_RANGE.0 && delta <= DELTA_RANGE.1) {
        return Err(CurvspecError::InvalidParams(format!(
            "variation offset {delta:e} outside [{:e}, {:e}]",
            DELTA_RANGE.0, DELTA_RANGE.1
        )));
    }
    Ok(())
}

impl ConformalTorusState {
    /// L(f₁f₂) = f₁·Lf₂ + f₂·Lf₁ + 2g(∇f₁,∇f₂), in sup norm.
    pub fn check_product_rule(&self, f1: &ScalarField, f2: &ScalarField) -> Result<Residual> {
        let product = f1.zip(f2, |a, b| a * b);
        let lhs = self.witten_apply(&product)?;
        let lf1 = self.witten_apply(f1)?;
        let lf2 = self.witten_apply(f2)?;
        let cross = self.gradient_inner(f1, f2)?;
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..lhs.values().len() {
            let rhs = f1.values()[i] * lf2.values()[i]
                + f2.values()[i] * lf1.values()[i]
                + 2.0 * cross.values()[i];
            worst = worst.max((lhs.values()[i] - rhs).abs());
            scale = scale.max(lhs.values()[i].abs());
        }
        Ok(Residual::new(worst, scale))
    }

    /// ∫ℓ·Lf dm = −∫g(∇ℓ,∇f) dm.
    pub fn check_integration_by_parts(
        &self,
        ell: &ScalarField,
        f: &ScalarField,
    ) -> Result<Residual> {
        let lf = self.witten_apply(f)?;
        let left = self.integrate_dm(&ell.zip(&lf, |a, b| a * b).into_values())?;
        let cross = self.integrate_dm(self.gradient_inner(ell, f)?.values())?;
        Ok(Residual::new((left + cross).abs(), cross.abs().max(1.0)))
    }

    /// ∫L(f²) dm = 0.
    pub fn check_square_integral(&self, f: &ScalarField) -> Result<Residual> {
        let sq = f.zip(f, |a, b| a * b);
        let l_sq = self.witten_apply(&sq)?;
        let total = self.integrate_dm(l_sq.values())?;
        let magnitude = self.integrate_dm(&l_sq.values().iter().map(|v| v.abs()).collect::<Vec<_>>())?;
        Ok(Residual::new(total.abs(), magnitude.max(1.0)))
    }

    /// For a normalized eigenpair (λ, u) of −𝕃:
    /// −λu² + |∇u|² − cRu² = ½L(u²), in sup norm.
    pub fn check_eigenfunction_square(
        &self,
        lambda: f64,
        u: &ScalarField,
        c: f64,
    ) -> Result<Residual> {
        let geom = self.geometry()?;
        let grad_sq = self.grad_norm_sq(u)?;
        let sq = u.zip(u, |a, b| a * b);
        let l_sq = self.witten_apply(&sq)?;
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..u.values().len() {
            let uu = sq.values()[i];
            let lhs = -lambda * uu + grad_sq.values()[i] - c * geom.scalar_curv[i] * uu;
            let rhs = 0.5 * l_sq.values()[i];
            worst = worst.max((lhs - rhs).abs());
            scale = scale
                .max((lambda * uu).abs())
                .max(grad_sq.values()[i])
                .max((c * geom.scalar_curv[i] * uu).abs());
        }
        Ok(Residual::new(worst, scale))
    }

    /// ½𝕃|∇f|² = 𝒯(∇f,∇f) + g(∇f,∇(𝕃f)) + |∇²f|² − (c/2)g(∇R,∇(f²)),
    /// where 𝒯 = Ric + ∇²η − (cR/2)g, in sup norm.
    pub fn check_bochner(&self, f: &ScalarField, c: f64) -> Result<Residual> {
        let geom = self.geometry()?;
        let grid = *self.grid();
        let grad_sq = self.grad_norm_sq(f)?;
        let lhs = self.operator_apply(&grad_sq, c)?.scaled(0.5);

        let t_grad = self.tensor_apply_grad(&self.curvature_drift_tensor(c)?, f)?;
        let lf = self.operator_apply(f, c)?;
        let cross = self.gradient_inner(f, &lf)?;
        let hess_sq = self.tensor_norm_sq(&self.hessian(f)?)?;
        let r_field = ScalarField::new(grid, geom.scalar_curv.clone())?;
        let sq = f.zip(f, |a, b| a * b);
        let r_vs_sq = self.gradient_inner(&r_field, &sq)?;

        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..grid.len() {
            let rhs =
                t_grad[i] + cross.values()[i] + hess_sq[i] - 0.5 * c * r_vs_sq.values()[i];
            worst = worst.max((lhs.values()[i] - rhs).abs());
            scale = scale
                .max(lhs.values()[i].abs())
                .max(t_grad[i].abs())
                .max(cross.values()[i].abs())
                .max(hess_sq[i]);
        }
        Ok(Residual::new(worst, scale))
    }

    /// ∫(𝕃f)² dm = ∫[𝒯(∇f,∇f) + |∇²f|²] dm + c∫R(𝕃(f²) − (3/2)|∇f|²) dm.
    pub fn check_reilly(&self, f: &ScalarField, c: f64) -> Result<Residual> {
        let geom = self.geometry()?;
        let lf = self.operator_apply(f, c)?;
        let left = self.integrate_dm(&lf.zip(&lf, |a, b| a * b).into_values())?;

        let t_grad = self.tensor_apply_grad(&self.curvature_drift_tensor(c)?, f)?;
        let hess_sq = self.tensor_norm_sq(&self.hessian(f)?)?;
        let bulk: Vec<f64> = t_grad.iter().zip(&hess_sq).map(|(&a, &b)| a + b).collect();
        let bulk_int = self.integrate_dm(&bulk)?;

        let sq = f.zip(f, |a, b| a * b);
        let l_sq = self.operator_apply(&sq, c)?;
        let grad_sq = self.grad_norm_sq(f)?;
        let tail: Vec<f64> = (0..f.values().len())
            .map(|i| geom.scalar_curv[i] * (l_sq.values()[i] - 1.5 * grad_sq.values()[i]))
            .collect();
        let tail_int = c * self.integrate_dm(&tail)?;

        let residual = (left - bulk_int - tail_int).abs();
        let scale = left.abs().max(bulk_int.abs()).max(tail_int.abs()).max(1.0);
        Ok(Residual::new(residual, scale))
    }

    /// 𝒯 = Ric + ∇²η − (cR/2)g as a chart tensor.
    pub fn curvature_drift_tensor(&self, c: f64) -> Result<SymTensorField> {
        let geom = self.geometry()?;
        let grid = *self.grid();
        // Ric − (cR/2)g = (R/2)(1 − c)·g on a surface.
        let coeff: Vec<f64> =
            geom.scalar_curv.iter().map(|&r| 0.5 * r * (1.0 - c)).collect();
        let mut t = SymTensorField::conformal_multiple(&coeff, &geom.e2w, grid);
        let eta_hess = self.hessian(self.eta())?;
        for i in 0..grid.len() {
            t.xx[i] += eta_hess.xx[i];
            t.xy[i] += eta_hess.xy[i];
            t.yy[i] += eta_hess.yy[i];
        }
        Ok(t)
    }

    /// Compares the analytic operator variation 𝕃′f against the central
    /// difference of 𝕃f across metrics perturbed along v, in sup norm.
    pub fn check_operator_variation(
        &self,
        f: &ScalarField,
        v: &ScalarField,
        c: f64,
        delta: f64,
    ) -> Result<Residual> {
        validate_delta(delta)?;
        let variation = self.conformal_variation(v)?;
        let analytic = self.operator_variation_apply(f, c, &variation)?;
        let plus = self.with_w(self.w().zip(v, |a, b| a + delta * b))?;
        let minus = self.with_w(self.w().zip(v, |a, b| a - delta * b))?;
        let lf_plus = plus.operator_apply(f, c)?;
        let lf_minus = minus.operator_apply(f, c)?;
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..f.values().len() {
            let fd = (lf_plus.values()[i] - lf_minus.values()[i]) / (2.0 * delta);
            worst = worst.max((fd - analytic.values()[i]).abs());
            scale = scale.max(analytic.values()[i].abs());
        }
        Ok(Residual::new(worst, scale))
    }

    /// Compares R′ = −⟨Ric,H⟩ − Δh + div(div H) against the central difference
    /// of scalar curvature across metrics perturbed along v, in sup norm.
    pub fn check_curvature_variation(&self, v: &ScalarField, delta: f64) -> Result<Residual> {
        validate_delta(delta)?;
        let variation = self.conformal_variation(v)?;
        let curv = |state: &ConformalTorusState| -> Result<Vec<f64>> {
            let bundle = state.curvature(AverageMeasure::Weighted)?;
            Ok(bundle.scalar.per_site().expect("grid curvature is per-site").to_vec())
        };
        let plus = curv(&self.with_w(self.w().zip(v, |a, b| a + delta * b))?)?;
        let minus = curv(&self.with_w(self.w().zip(v, |a, b| a - delta * b))?)?;
        let mut worst = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..plus.len() {
            let fd = (plus[i] - minus[i]) / (2.0 * delta);
            worst = worst.max((fd - variation.r_dot.values()[i]).abs());
            scale = scale.max(variation.r_dot.values()[i].abs());
        }
        Ok(Residual::new(worst, scale))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::PeriodicGrid;
    use approx::assert_relative_eq;

    fn curved_state() -> ConformalTorusState {
        let g = PeriodicGrid::square(64).unwrap();
        let w = ScalarField::from_fn(g, |x, y| 0.15 * x.cos() + 0.1 * (y + 0.4).sin());
        let eta = ScalarField::from_fn(g, |x, y| 0.3 * (x + y).cos());
        ConformalTorusState::new(w, eta).unwrap()
    }

    #[test]
    fn product_rule_holds_spectrally() {
        let state = curved_state();
        let g = *state.grid();
        let f1 = ScalarField::from_fn(g, |x, y| x.sin() + 0.5 * y.cos());
        let f2 = ScalarField::from_fn(g, |x, y| (x - y).cos());
        let res = state.check_product_rule(&f1, &f2).unwrap();
        assert!(res.relative() < 1e-9, "relative residual {}", res.relative());
    }

    #[test]
    fn integration_by_parts_holds() {
        let state = curved_state();
        let g = *state.grid();
        let ell = ScalarField::from_fn(g, |x, _| (2.0 * x).sin());
        let f = ScalarField::from_fn(g, |x, y| x.cos() * y.sin());
        let res = state.check_integration_by_parts(&ell, &f).unwrap();
        assert!(res.relative() < 1e-10, "relative residual {}", res.relative());
    }

    #[test]
    fn square_integral_vanishes() {
        let state = curved_state();
        let g = *state.grid();
        let f = ScalarField::from_fn(g, |x, y| 1.0 + 0.3 * x.sin() - 0.2 * (2.0 * y).cos());
        let res = state.check_square_integral(&f).unwrap();
        assert!(res.relative() < 1e-11, "relative residual {}", res.relative());
    }

    #[test]
    fn eigenfunction_square_identity_on_flat_torus() {
        let g = PeriodicGrid::square(32).unwrap();
        let state = ConformalTorusState::flat(g);
        let norm = 1.0 / (std::f64::consts::PI * 2.0f64.sqrt());
        let u = ScalarField::from_fn(g, |x, _| norm * x.cos());
        let res = state.check_eigenfunction_square(1.0, &u, 0.2).unwrap();
        assert!(res.relative() < 1e-12, "relative residual {}", res.relative());
    }

    #[test]
    fn bochner_identity_holds_on_curved_drifted_state() {
        let state = curved_state();
        let g = *state.grid();
        let f = ScalarField::from_fn(g, |x, y| x.sin() * y.cos() + 0.2 * y.sin());
        let res = state.check_bochner(&f, 0.1).unwrap();
        assert!(res.relative() < 1e-9, "relative residual {}", res.relative());
    }

    #[test]
    fn reilly_identity_holds_on_curved_drifted_state() {
        let state = curved_state();
        let g = *state.grid();
        let f = ScalarField::from_fn(g, |x, y| (x + 0.3).sin() + 0.4 * (x - y).cos());
        let res = state.check_reilly(&f, 0.15).unwrap();
        assert!(res.relative() < 1e-10, "relative residual {}", res.relative());
    }

    #[test]
    fn operator_variation_matches_difference_quotient() {
        let state = curved_state();
        let g = *state.grid();
        let f = ScalarField::from_fn(g, |x, y| x.sin() + y.cos());
        let v = ScalarField::from_fn(g, |x, y| 0.3 * (x + 2.0 * y).cos());
        let res = state.check_operator_variation(&f, &v, 0.1, 1e-4).unwrap();
        assert!(res.relative() < 1e-6, "relative residual {}", res.relative());
    }

    #[test]
    fn operator_variation_residual_decays_quadratically() {
        let state = curved_state();
        let g = *state.grid();
        let f = ScalarField::from_fn(g, |x, y| x.sin() + y.cos());
        let v = ScalarField::from_fn(g, |x, _| 0.4 * x.cos());
        let coarse = state.check_operator_variation(&f, &v, 0.1, 4e-3).unwrap();
        let fine = state.check_operator_variation(&f, &v, 0.1, 1e-3).unwrap();
        let order = (coarse.absolute / fine.absolute).log2() / 2.0;
        assert!(order > 1.8, "observed order {order}");
    }

    #[test]
    fn variation_offset_is_validated() {
        let state = curved_state();
        let g = *state.grid();
        let f = ScalarField::from_fn(g, |x, _| x.sin());
        let err = state.check_operator_variation(&f, &f, 0.0, 1e-8);
        assert!(matches!(err, Err(CurvspecError::InvalidParams(_))));
    }

    #[test]
    fn rate_routes_agree_for_true_eigenpair() {
        // u = cos x/(π√2) is a normalized eigenfunction on the flat torus, so
        // the general variation formula and −∫u𝕃′u dm must coincide for any
        // conformal direction.
        let g = PeriodicGrid::square(64).unwrap();
        let state = ConformalTorusState::flat(g);
        let norm = 1.0 / (std::f64::consts::PI * 2.0f64.sqrt());
        let u = ScalarField::from_fn(g, |x, _| norm * x.cos());
        let v = ScalarField::from_fn(g, |x, y| 0.2 * x.cos() + 0.1 * (x + y).sin());
        let variation = state.conformal_variation(&v).unwrap();
        let c = 0.2;
        let direct = state.general_variation_rate(&u, c, &variation).unwrap();
        let via_operator =
            state.eigenvalue_rate_via_operator_variation(&u, c, &variation).unwrap();
        assert_relative_eq!(direct, via_operator, epsilon = 1e-10);
    }
}
