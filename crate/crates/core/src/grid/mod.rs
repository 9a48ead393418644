//! Conformally flat 2-torus backend: g = e^{2w}·δ on a periodic grid, with a
//! fixed drifting function η. Spectral derivatives feed the pointwise identity
//! checkers; the eigenproblem uses the separate flux-form assembly (see
//! [`operator`]) whose symmetry is exact by construction.

pub mod operator;
pub mod spectral;

mod checks;
mod flow;

pub use flow::ConformalVariation;

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{CurvspecError, Result};
use crate::expr::{Env, Expression};
use crate::state::{AverageMeasure, CurvatureBundle, Quantity};
use spectral::Spectrum2;

/// Fraction of non-constant spectral power allowed above 2/3 Nyquist before a
/// state is declared under-resolved.
const RESOLUTION_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodicGrid {
    pub nx: usize,
    pub ny: usize,
    pub period_x: f64,
    pub period_y: f64,
}

impl PeriodicGrid {
    pub fn new(nx: usize, ny: usize, period_x: f64, period_y: f64) -> Result<Self> {
        if nx < 4 || ny < 4 || nx % 2 != 0 || ny % 2 != 0 {
            return Err(CurvspecError::GridMismatch(format!(
                "resolution must be even and at least 4 per axis, got {nx}x{ny}"
            )));
        }
        if !(period_x > 0.0 && period_y > 0.0) {
            return Err(CurvspecError::GridMismatch("periods must be positive".into()));
        }
        Ok(PeriodicGrid { nx, ny, period_x, period_y })
    }

    /// Square grid with 2π periods.
    pub fn square(n: usize) -> Result<Self> {
        PeriodicGrid::new(n, n, std::f64::consts::TAU, std::f64::consts::TAU)
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn hx(&self) -> f64 {
        self.period_x / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.period_y / self.ny as f64
    }

    /// Flat-chart cell area hx·hy.
    pub fn cell(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn x(&self, ix: usize) -> f64 {
        ix as f64 * self.hx()
    }

    pub fn y(&self, iy: usize) -> f64 {
        iy as f64 * self.hy()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
}

/// Per-site samples of a scalar function, row-major with x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField {
    grid: PeriodicGrid,
    values: Vec<f64>,
}

/// Self-describing JSON container for field import/export.
#[derive(Debug, Serialize, Deserialize)]
struct FieldJson {
    resolution: [usize; 2],
    periods: [f64; 2],
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CurvspecError::GridMismatch(format!(
                "expected {} values for a {}x{} grid, got {}",
                grid.len(),
                grid.nx,
                grid.ny,
                values.len()
            )));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: PeriodicGrid, value: f64) -> Self {
        ScalarField { grid, values: vec![value; grid.len()] }
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        ScalarField::constant(grid, 0.0)
    }

    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                values.push(f(grid.x(ix), grid.y(iy)));
            }
        }
        ScalarField { grid, values }
    }

    /// Samples a parsed expression with x, y bound per site; other identifiers
    /// must already be bound in `env`.
    pub fn from_expression(grid: PeriodicGrid, expr: &Expression, env: &Env) -> Result<Self> {
        let mut env = env.clone();
        let mut values = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            for ix in 0..grid.nx {
                env.set("x", grid.x(ix));
                env.set("y", grid.y(iy));
                values.push(expr.eval(&env)?);
            }
        }
        Ok(ScalarField { grid, values })
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn scaled(&self, s: f64) -> ScalarField {
        self.map(|v| v * s)
    }

    pub fn spectrum(&self) -> Spectrum2 {
        Spectrum2::analyze(self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&FieldJson {
            resolution: [self.grid.nx, self.grid.ny],
            periods: [self.grid.period_x, self.grid.period_y],
            values: self.values.clone(),
        })
        .expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parsed: FieldJson = serde_json::from_str(text)?;
        let grid = PeriodicGrid::new(
            parsed.resolution[0],
            parsed.resolution[1],
            parsed.periods[0],
            parsed.periods[1],
        )?;
        ScalarField::new(grid, parsed.values)
    }
}

/// Symmetric (0,2) tensor field, components in the flat chart.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField {
    pub grid: PeriodicGrid,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
}

impl SymTensorField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        let n = grid.len();
        SymTensorField { grid, xx: vec![0.0; n], xy: vec![0.0; n], yy: vec![0.0; n] }
    }

    /// coeff·g for the conformal metric: components coeff·e^{2w}·δ_ij.
    pub fn conformal_multiple(coeff: &[f64], e2w: &[f64], grid: PeriodicGrid) -> Self {
        let xx: Vec<f64> = coeff.iter().zip(e2w).map(|(&c, &m)| c * m).collect();
        SymTensorField { grid, xx: xx.clone(), xy: vec![0.0; grid.len()], yy: xx }
    }
}

/// Cached per-state geometry: exponential factors, chart derivatives of w and
/// η, curvature, and quadrature weights.
#[derive(Debug)]
pub struct GridGeometry {
    pub e2w: Vec<f64>,
    pub em2w: Vec<f64>,
    pub em_eta: Vec<f64>,
    pub wx: Vec<f64>,
    pub wy: Vec<f64>,
    pub eta_x: Vec<f64>,
    pub eta_y: Vec<f64>,
    /// Scalar curvature R = −2 e^{−2w} Δ₀w.
    pub scalar_curv: Vec<f64>,
    /// Weighted cell mass e^{−η+2w}·hx·hy (the dm quadrature weight).
    pub mass: Vec<f64>,
    /// Riemannian cell area e^{2w}·hx·hy.
    pub riem_cell: Vec<f64>,
}

/// Conformally flat torus with drift: the metric is e^{2w}·δ and the measure
/// dm = e^{−η} dM. η is fixed; only w evolves under the flow.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConformalTorusState {
    grid: PeriodicGrid,
    w: ScalarField,
    eta: ScalarField,
    #[serde(skip)]
    cache: OnceLock<Arc<GridGeometry>>,
}

impl PartialEq for ConformalTorusState {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.w == other.w && self.eta == other.eta
    }
}

impl ConformalTorusState {
    pub fn new(w: ScalarField, eta: ScalarField) -> Result<Self> {
        if w.grid != eta.grid {
            return Err(CurvspecError::GridMismatch(
                "w and eta sampled on different grids".into(),
            ));
        }
        Ok(ConformalTorusState { grid: w.grid, w, eta, cache: OnceLock::new() })
    }

    pub fn flat(grid: PeriodicGrid) -> Self {
        ConformalTorusState {
            grid,
            w: ScalarField::zeros(grid),
            eta: ScalarField::zeros(grid),
            cache: OnceLock::new(),
        }
    }

    /// Same η, new log conformal factor (the flow's state update).
    pub fn with_w(&self, w: ScalarField) -> Result<Self> {
        ConformalTorusState::new(w, self.eta.clone())
    }

    pub fn grid(&self) -> &PeriodicGrid {
        &self.grid
    }

    pub fn w(&self) -> &ScalarField {
        &self.w
    }

    pub fn eta(&self) -> &ScalarField {
        &self.eta
    }

    /// Builds (or returns cached) derived geometry. Fails when w or η carry
    /// non-negligible power above 2/3 Nyquist.
    pub fn geometry(&self) -> Result<Arc<GridGeometry>> {
        if let Some(cached) = self.cache.get() {
            return Ok(cached.clone());
        }
        let ws = self.w.spectrum();
        let hf_w = ws.high_mode_fraction();
        if hf_w > RESOLUTION_LIMIT {
            return Err(CurvspecError::Unresolved(format!(
                "w has high-mode power fraction {hf_w:.2e} (limit {RESOLUTION_LIMIT:.0e})"
            )));
        }
        let es = self.eta.spectrum();
        let hf_eta = es.high_mode_fraction();
        if hf_eta > RESOLUTION_LIMIT {
            return Err(CurvspecError::Unresolved(format!(
                "eta has high-mode power fraction {hf_eta:.2e} (limit {RESOLUTION_LIMIT:.0e})"
            )));
        }

        let wx = ws.derivative(1, 0).into_values();
        let wy = ws.derivative(0, 1).into_values();
        let lap0w = ws.laplacian0().into_values();
        let eta_x = es.derivative(1, 0).into_values();
        let eta_y = es.derivative(0, 1).into_values();

        let n = self.grid.len();
        let cell = self.grid.cell();
        let mut e2w = Vec::with_capacity(n);
        let mut em2w = Vec::with_capacity(n);
        let mut em_eta = Vec::with_capacity(n);
        let mut scalar_curv = Vec::with_capacity(n);
        let mut mass = Vec::with_capacity(n);
        let mut riem_cell = Vec::with_capacity(n);
        for i in 0..n {
            let ep = (2.0 * self.w.values[i]).exp();
            let em = 1.0 / ep;
            let ee = (-self.eta.values[i]).exp();
            e2w.push(ep);
            em2w.push(em);
            em_eta.push(ee);
            scalar_curv.push(-2.0 * em * lap0w[i]);
            mass.push(ee * ep * cell);
            riem_cell.push(ep * cell);
        }
        let geom = Arc::new(GridGeometry {
            e2w,
            em2w,
            em_eta,
            wx,
            wy,
            eta_x,
            eta_y,
            scalar_curv,
            mass,
            riem_cell,
        });
        let _ = self.cache.set(geom.clone());
        Ok(geom)
    }

    /// ∫ f dm with the fixed-order lattice quadrature.
    pub fn integrate_dm(&self, values: &[f64]) -> Result<f64> {
        let geom = self.geometry()?;
        Ok(dot(values, &geom.mass))
    }

    /// ∫ f dM (unweighted Riemannian measure).
    pub fn integrate_riemannian(&self, values: &[f64]) -> Result<f64> {
        let geom = self.geometry()?;
        Ok(dot(values, &geom.riem_cell))
    }

    pub fn weighted_volume(&self) -> Result<f64> {
        let geom = self.geometry()?;
        Ok(geom.mass.iter().sum())
    }

    /// Curvature data; the average r uses the requested measure.
    pub fn curvature(&self, measure: AverageMeasure) -> Result<CurvatureBundle> {
        let geom = self.geometry()?;
        let weights = match measure {
            AverageMeasure::Weighted => &geom.mass,
            AverageMeasure::Riemannian => &geom.riem_cell,
        };
        let average = dot(&geom.scalar_curv, weights) / weights.iter().sum::<f64>();
        let ric_coeff: Vec<f64> = geom.scalar_curv.iter().map(|&r| 0.5 * r).collect();
        let ric_norm_sq: Vec<f64> = geom.scalar_curv.iter().map(|&r| 0.5 * r * r).collect();
        Ok(CurvatureBundle {
            scalar: Quantity::PerSite(geom.scalar_curv.clone()),
            ric_coeff: Quantity::PerSite(ric_coeff),
            ric_norm_sq: Quantity::PerSite(ric_norm_sq),
            average,
            measure,
        })
    }

    /// Witten (drift) Laplacian Lf = e^{−2w}(Δ₀f − ∇₀η·∇₀f).
    pub fn witten_apply(&self, f: &ScalarField) -> Result<ScalarField> {
        self.expect_same_grid(f)?;
        let geom = self.geometry()?;
        let s = f.spectrum();
        let lap0 = s.laplacian0();
        let fx = s.derivative(1, 0);
        let fy = s.derivative(0, 1);
        let mut values = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            values.push(
                geom.em2w[i]
                    * (lap0.values[i] - geom.eta_x[i] * fx.values[i] - geom.eta_y[i] * fy.values[i]),
            );
        }
        ScalarField::new(self.grid, values)
    }

    /// 𝕃f = Lf + cRf.
    pub fn operator_apply(&self, f: &ScalarField, c: f64) -> Result<ScalarField> {
        let geom = self.geometry()?;
        let lf = self.witten_apply(f)?;
        let mut values = lf.into_values();
        for i in 0..values.len() {
            values[i] += c * geom.scalar_curv[i] * f.values[i];
        }
        ScalarField::new(self.grid, values)
    }

    /// g(∇f, ∇ℓ) = e^{−2w}·∇₀f·∇₀ℓ per site.
    pub fn gradient_inner(&self, f: &ScalarField, ell: &ScalarField) -> Result<ScalarField> {
        self.expect_same_grid(f)?;
        self.expect_same_grid(ell)?;
        let geom = self.geometry()?;
        let sf = f.spectrum();
        let sl = ell.spectrum();
        let (fx, fy) = (sf.derivative(1, 0), sf.derivative(0, 1));
        let (lx, ly) = (sl.derivative(1, 0), sl.derivative(0, 1));
        let mut values = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            values.push(geom.em2w[i] * (fx.values[i] * lx.values[i] + fy.values[i] * ly.values[i]));
        }
        ScalarField::new(self.grid, values)
    }

    /// |∇f|² = g(∇f,∇f).
    pub fn grad_norm_sq(&self, f: &ScalarField) -> Result<ScalarField> {
        self.gradient_inner(f, f)
    }

    /// Covariant Hessian (∇²f)_ij = ∂_i∂_j f − Γ^k_ij ∂_k f with the conformal
    /// Christoffel symbols Γ^k_ij = δ_ik w_j + δ_jk w_i − δ_ij w_k.
    pub fn hessian(&self, f: &ScalarField) -> Result<SymTensorField> {
        self.expect_same_grid(f)?;
        let geom = self.geometry()?;
        let s = f.spectrum();
        let fx = s.derivative(1, 0).into_values();
        let fy = s.derivative(0, 1).into_values();
        let fxx = s.derivative(2, 0).into_values();
        let fxy = s.derivative(1, 1).into_values();
        let fyy = s.derivative(0, 2).into_values();
        let n = self.grid.len();
        let mut out = SymTensorField::zeros(self.grid);
        for i in 0..n {
            let (gx, gy) = (geom.wx[i], geom.wy[i]);
            out.xx[i] = fxx[i] - gx * fx[i] + gy * fy[i];
            out.xy[i] = fxy[i] - gy * fx[i] - gx * fy[i];
            out.yy[i] = fyy[i] + gx * fx[i] - gy * fy[i];
        }
        Ok(out)
    }

    /// ⟨S, T⟩ = g^{ik}g^{jl} S_ij T_kl = e^{−4w}(S_xx T_xx + 2 S_xy T_xy + S_yy T_yy).
    pub fn tensor_inner(&self, s: &SymTensorField, t: &SymTensorField) -> Result<Vec<f64>> {
        let geom = self.geometry()?;
        let mut out = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let em4w = geom.em2w[i] * geom.em2w[i];
            out.push(em4w * (s.xx[i] * t.xx[i] + 2.0 * s.xy[i] * t.xy[i] + s.yy[i] * t.yy[i]));
        }
        Ok(out)
    }

    /// |S|² = ⟨S, S⟩.
    pub fn tensor_norm_sq(&self, s: &SymTensorField) -> Result<Vec<f64>> {
        self.tensor_inner(s, s)
    }

    /// Plain Laplace–Beltrami Δf = e^{−2w} Δ₀f (no drift).
    pub fn laplace_beltrami(&self, f: &ScalarField) -> Result<ScalarField> {
        self.expect_same_grid(f)?;
        let geom = self.geometry()?;
        let mut values = f.spectrum().laplacian0().into_values();
        for i in 0..values.len() {
            values[i] *= geom.em2w[i];
        }
        ScalarField::new(self.grid, values)
    }

    /// Divergence of a covector: div ω = g^{ij}∇_i ω_j; the conformal Γ-trace
    /// vanishes, leaving e^{−2w}(∂_x ω_x + ∂_y ω_y).
    pub fn covector_divergence(
        &self,
        omega: (&ScalarField, &ScalarField),
    ) -> Result<ScalarField> {
        let geom = self.geometry()?;
        let dx = omega.0.spectrum().derivative(1, 0).into_values();
        let dy = omega.1.spectrum().derivative(0, 1).into_values();
        let mut values = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            values.push(geom.em2w[i] * (dx[i] + dy[i]));
        }
        ScalarField::new(self.grid, values)
    }

    /// S(∇f,∇f) = e^{−4w}(S_xx f_x² + 2 S_xy f_x f_y + S_yy f_y²).
    pub fn tensor_apply_grad(&self, s: &SymTensorField, f: &ScalarField) -> Result<Vec<f64>> {
        let geom = self.geometry()?;
        let sf = f.spectrum();
        let fx = sf.derivative(1, 0).into_values();
        let fy = sf.derivative(0, 1).into_values();
        let mut out = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let em4w = geom.em2w[i] * geom.em2w[i];
            out.push(
                em4w * (s.xx[i] * fx[i] * fx[i]
                    + 2.0 * s.xy[i] * fx[i] * fy[i]
                    + s.yy[i] * fy[i] * fy[i]),
            );
        }
        Ok(out)
    }

    /// Covariant divergence of a symmetric tensor, returned as the covector
    /// (div S)_k; in the conformal chart the Γ-trace cancels and
    /// (div S)_x = e^{−2w}(∂_x S_xx + ∂_y S_xy − w_x (S_xx + S_yy)).
    pub fn divergence(&self, s: &SymTensorField) -> Result<(ScalarField, ScalarField)> {
        let geom = self.geometry()?;
        let xx = ScalarField::new(self.grid, s.xx.clone())?.spectrum();
        let xy = ScalarField::new(self.grid, s.xy.clone())?.spectrum();
        let yy = ScalarField::new(self.grid, s.yy.clone())?.spectrum();
        let dxx_dx = xx.derivative(1, 0).into_values();
        let dxy_dy = xy.derivative(0, 1).into_values();
        let dxy_dx = xy.derivative(1, 0).into_values();
        let dyy_dy = yy.derivative(0, 1).into_values();
        let n = self.grid.len();
        let mut out_x = Vec::with_capacity(n);
        let mut out_y = Vec::with_capacity(n);
        for i in 0..n {
            let trace_flat = s.xx[i] + s.yy[i];
            out_x.push(geom.em2w[i] * (dxx_dx[i] + dxy_dy[i] - geom.wx[i] * trace_flat));
            out_y.push(geom.em2w[i] * (dxy_dx[i] + dyy_dy[i] - geom.wy[i] * trace_flat));
        }
        Ok((ScalarField::new(self.grid, out_x)?, ScalarField::new(self.grid, out_y)?))
    }

    /// η-divergence div S − dη∘S, with (dη∘S)_k = g^{ij} η_i S_jk.
    pub fn eta_divergence(&self, s: &SymTensorField) -> Result<(ScalarField, ScalarField)> {
        let geom = self.geometry()?;
        let (div_x, div_y) = self.divergence(s)?;
        let n = self.grid.len();
        let mut out_x = div_x.into_values();
        let mut out_y = div_y.into_values();
        for i in 0..n {
            out_x[i] -= geom.em2w[i] * (geom.eta_x[i] * s.xx[i] + geom.eta_y[i] * s.xy[i]);
            out_y[i] -= geom.em2w[i] * (geom.eta_x[i] * s.xy[i] + geom.eta_y[i] * s.yy[i]);
        }
        Ok((ScalarField::new(self.grid, out_x)?, ScalarField::new(self.grid, out_y)?))
    }

    /// ⟨ω, df⟩ = g^{ij} ω_i f_j for a covector ω = (ωx, ωy).
    pub fn covector_pair_grad(
        &self,
        omega: (&ScalarField, &ScalarField),
        f: &ScalarField,
    ) -> Result<ScalarField> {
        let geom = self.geometry()?;
        let sf = f.spectrum();
        let fx = sf.derivative(1, 0).into_values();
        let fy = sf.derivative(0, 1).into_values();
        let mut out = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            out.push(geom.em2w[i] * (omega.0.values[i] * fx[i] + omega.1.values[i] * fy[i]));
        }
        ScalarField::new(self.grid, out)
    }

    fn expect_same_grid(&self, f: &ScalarField) -> Result<()> {
        if f.grid != self.grid {
            return Err(CurvspecError::GridMismatch(
                "field does not live on the state's grid".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::square(64).unwrap()
    }

    #[test]
    fn curvature_closed_form_for_cosine_bump() {
        // w = ε cos x gives R = 2ε cos(x) e^{−2ε cos x}
        let eps = 0.2;
        let g = grid();
        let w = ScalarField::from_fn(g, |x, _| eps * x.cos());
        let state = ConformalTorusState::new(w, ScalarField::zeros(g)).unwrap();
        let bundle = state.curvature(AverageMeasure::Weighted).unwrap();
        let r = bundle.scalar.per_site().unwrap();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let x = g.x(ix);
                let expected = 2.0 * eps * x.cos() * (-2.0 * eps * x.cos()).exp();
                assert_relative_eq!(r[g.index(ix, iy)], expected, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn flat_and_constant_w_are_scalar_flat() {
        let g = grid();
        let state = ConformalTorusState::flat(g);
        let bundle = state.curvature(AverageMeasure::Weighted).unwrap();
        assert!(bundle.scalar.per_site().unwrap().iter().all(|r| r.abs() < 1e-12));

        let scaled = state.with_w(ScalarField::constant(g, 0.7)).unwrap();
        let bundle = scaled.curvature(AverageMeasure::Weighted).unwrap();
        assert!(bundle.scalar.per_site().unwrap().iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn witten_reduces_to_laplacian_and_picks_up_drift()  {
        let g = grid();
        let eps = 0.25;
        let eta = ScalarField::from_fn(g, |x, _| eps * x.cos());
        let state =
            ConformalTorusState::new(ScalarField::zeros(g), eta).unwrap();
        let f = ScalarField::from_fn(g, |x, _| x.sin());
        let lf = state.witten_apply(&f).unwrap();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let x = g.x(ix);
                // Δ₀f − η_x f_x = −sin x − (−ε sin x)(cos x)
                let expected = -x.sin() + eps * x.sin() * x.cos();
                assert_relative_eq!(lf.values()[g.index(ix, iy)], expected, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn operator_adds_curvature_coupling() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, _| 0.1 * x.cos());
        let state = ConformalTorusState::new(w, ScalarField::zeros(g)).unwrap();
        let one = ScalarField::constant(g, 1.0);
        let lf = state.operator_apply(&one, 1.0).unwrap();
        let bundle = state.curvature(AverageMeasure::Weighted).unwrap();
        let r = bundle.scalar.per_site().unwrap();
        for i in 0..g.len() {
            assert_relative_eq!(lf.values()[i], r[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn hessian_of_sine_on_flat_torus() {
        let g = grid();
        let state = ConformalTorusState::flat(g);
        let f = ScalarField::from_fn(g, |x, _| x.sin());
        let h = state.hessian(&f).unwrap();
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let i = g.index(ix, iy);
                assert_relative_eq!(h.xx[i], -g.x(ix).sin(), epsilon = 1e-11);
                assert!(h.xy[i].abs() < 1e-11);
                assert!(h.yy[i].abs() < 1e-11);
            }
        }
    }

    #[test]
    fn hessian_trace_equals_laplace_beltrami() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, y| 0.15 * x.cos() * y.sin());
        let state = ConformalTorusState::new(w, ScalarField::zeros(g)).unwrap();
        let f = ScalarField::from_fn(g, |x, y| (x + y).sin() + 0.3 * (2.0 * y).cos());
        let geom = state.geometry().unwrap();
        let h = state.hessian(&f).unwrap();
        let lf = state.witten_apply(&f).unwrap(); // η = 0, so this is Δf
        for i in 0..g.len() {
            let trace = geom.em2w[i] * (h.xx[i] + h.yy[i]);
            assert_relative_eq!(trace, lf.values()[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn metric_tensor_is_divergence_free_and_eta_divergence_is_minus_deta() {
        let g = grid();
        let w = ScalarField::from_fn(g, |x, y| 0.2 * (x.cos() + y.sin()));
        let eta = ScalarField::from_fn(g, |x, y| 0.3 * (x + 2.0 * y).cos());
        let state = ConformalTorusState::new(w, eta.clone()).unwrap();
        let geom = state.geometry().unwrap();
        let ones = vec![1.0; g.len()];
        let metric = SymTensorField::conformal_multiple(&ones, &geom.e2w, g);

        let (dx, dy) = state.divergence(&metric).unwrap();
        assert!(dx.sup_norm() < 1e-9, "div g x-component {}", dx.sup_norm());
        assert!(dy.sup_norm() < 1e-9, "div g y-component {}", dy.sup_norm());

        let (ex, ey) = state.eta_divergence(&metric).unwrap();
        let eta_s = eta.spectrum();
        let eta_dx = eta_s.derivative(1, 0);
        let eta_dy = eta_s.derivative(0, 1);
        for i in 0..g.len() {
            assert_relative_eq!(ex.values()[i], -eta_dx.values()[i], epsilon = 1e-9);
            assert_relative_eq!(ey.values()[i], -eta_dy.values()[i], epsilon = 1e-9);
        }
    }

    #[test]
    fn under_resolved_state_is_rejected() {
        let g = PeriodicGrid::square(8).unwrap();
        // mode 3 of 8 exceeds the 2/3-Nyquist guard band (cut = 2)
        let w = ScalarField::from_fn(g, |x, _| 0.2 * (3.0 * x).cos());
        let state = ConformalTorusState::new(w, ScalarField::zeros(g)).unwrap();
        assert!(matches!(state.geometry(), Err(CurvspecError::Unresolved(_))));
    }

    #[test]
    fn field_json_roundtrip() {
        let g = PeriodicGrid::new(8, 4, 1.0, 2.0).unwrap();
        let f = ScalarField::from_fn(g, |x, y| x + 10.0 * y);
        let back = ScalarField::from_json(&f.to_json()).unwrap();
        assert_eq!(f, back);
    }
}
