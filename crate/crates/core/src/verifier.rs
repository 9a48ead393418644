//! Closed-form eigenvalue rates, their cross-checks against finite
//! differences along a trajectory, and the monotonicity hypotheses as signed
//! margins rather than bare booleans.
//!
//! Every evaluator here is stateless: it reads a [`GeometryState`] plus an
//! eigenpair and returns numbers. Reductions run in fixed site order, so
//! repeated calls on identical inputs are bit-identical.

use serde::Serialize;

use crate::engine::{mass_weights, rate_series, RateEstimate, Slice, Trajectory};
use crate::error::{CurvspecError, Result};
use crate::grid::ScalarField;
use crate::params::{in_flow_f, in_flow_g, FlowParams};
use crate::state::{
    AverageMeasure, EigenMode, EigenPair, GeometryState, IntegralTerms, Quantity, Residual,
};

/// Absolute slack below which a hypothesis margin still counts as satisfied.
pub const HYPOTHESIS_TOL: f64 = 1e-10;
/// Relative spatial spread under which scalar curvature counts as constant.
pub const CONSTANT_R_TOL: f64 = 1e-9;
/// Per-step slack for nondecreasing verdicts, scaled by max(1, |λ|).
pub const MONOTONICITY_TOL: f64 = 1e-8;
/// Slack for the preserved scalar-curvature lower bound.
pub const MIN_PRINCIPLE_TOL: f64 = 1e-6;

fn gated_average(params: &FlowParams, average_r: f64) -> f64 {
    if params.use_average_term {
        average_r
    } else {
        0.0
    }
}

/// Eigenvalue rate from the integral evolution formula,
///
/// λ′ = (2λr̄/n)φ − λφ∫Ru² + (φ−2ρ)∫R|∇u|² + 2a∫Ric(∇u,∇u)
///      − c∫[(φ−2ρ)R² + 2a|Ric|² + ψΔR]u²,
///
/// with every integral against dm and r̄ following the flow's average switch.
pub fn unified_rate(lambda: f64, average_r: f64, terms: &IntegralTerms, params: &FlowParams) -> f64 {
    let n = params.dim();
    let phi = params.phi();
    let psi = params.psi();
    let r_bar = gated_average(params, average_r);
    2.0 * lambda * r_bar * phi / n - lambda * phi * terms.u2_r
        + (phi - 2.0 * params.rho) * terms.r_grad_sq
        + 2.0 * params.a * terms.ric_grad_grad
        - params.c
            * ((phi - 2.0 * params.rho) * terms.r2_u2
                + 2.0 * params.a * terms.ricsq_u2
                + psi * terms.u2_lap_r)
}

/// The same rate with ψΔR eliminated through the drift: algebraically equal
/// to [`unified_rate`], but organized so that each group carries a sign under
/// the coupled-monotonicity hypotheses (see [`step_margins`]).
pub fn drift_expanded_rate(
    lambda: f64,
    average_r: f64,
    terms: &IntegralTerms,
    params: &FlowParams,
) -> f64 {
    let n = params.dim();
    let phi = params.phi();
    let psi = params.psi();
    let c = params.c;
    let fm2r = phi - 2.0 * params.rho;
    let r_bar = gated_average(params, average_r);
    lambda * (2.0 * c * psi - phi) * terms.u2_r
        + c * (2.0 * c * psi - fm2r) * terms.r2_u2
        - 2.0 * params.a * c * terms.ricsq_u2
        - (c * psi - fm2r) * terms.r_grad_sq
        + 2.0 * params.a * terms.ric_grad_grad
        + c * psi * terms.r_u2_lap_eta
        - c * psi * terms.r_drift_diff_sq
        + 2.0 * lambda * r_bar * phi / n
}

/// Rate on surfaces, where Ric = (R/2)g collapses the curvature terms:
/// λ′ = λr̄φ − λφ∫Ru² + cφ∫u²ΔR.
pub fn surface_rate(
    lambda: f64,
    average_r: f64,
    terms: &IntegralTerms,
    params: &FlowParams,
) -> Result<f64> {
    if params.n != 2 {
        return Err(CurvspecError::NotApplicable(
            "the surface form needs n = 2".into(),
        ));
    }
    let phi = params.phi();
    let r_bar = gated_average(params, average_r);
    Ok(lambda * r_bar * phi - lambda * phi * terms.u2_r + params.c * phi * terms.u2_lap_r)
}

/// Rate when scalar curvature is spatially constant. ∫|∇u|² = λ + cR then
/// collapses the gradient terms, and what survives depends on whether the
/// average feeds back (r̄ = R) or is absent (r̄ = 0):
///
/// λ′ = −(2a/n)λR + 2a∫Ric(∇u,∇u) − 2ac∫|Ric|²u²   (average on)
/// λ′ = −2ρλR   + 2a∫Ric(∇u,∇u) − 2ac∫|Ric|²u²   (average off)
pub fn constant_curvature_rate(
    state: &GeometryState,
    pair: &EigenPair,
    params: &FlowParams,
    measure: AverageMeasure,
) -> Result<f64> {
    let bundle = state.curvature(measure)?;
    let r = bundle.scalar.as_constant(CONSTANT_R_TOL)?;
    let terms = state.integral_terms(pair, measure)?;
    let coeff = if params.use_average_term {
        2.0 * params.a / params.dim()
    } else {
        2.0 * params.rho
    };
    Ok(-coeff * pair.lambda * r + 2.0 * params.a * terms.ric_grad_grad
        - 2.0 * params.a * params.c * terms.ricsq_u2)
}

fn quantity_values(q: &Quantity, len: usize) -> Result<Vec<f64>> {
    match q {
        Quantity::Constant(x) => Ok(vec![*x; len]),
        Quantity::PerSite(v) if v.len() == len => Ok(v.clone()),
        Quantity::PerSite(v) => Err(CurvspecError::GridMismatch(format!(
            "quantity has {} sites, geometry has {len}",
            v.len()
        ))),
    }
}

fn zip_quantity(a: &Quantity, b: &Quantity, f: impl Fn(f64, f64) -> f64) -> Quantity {
    match (a, b) {
        (Quantity::Constant(x), Quantity::Constant(y)) => Quantity::Constant(f(*x, *y)),
        (Quantity::PerSite(xs), Quantity::Constant(y)) => {
            Quantity::PerSite(xs.iter().map(|&x| f(x, *y)).collect())
        }
        (Quantity::Constant(x), Quantity::PerSite(ys)) => {
            Quantity::PerSite(ys.iter().map(|&y| f(*x, y)).collect())
        }
        (Quantity::PerSite(xs), Quantity::PerSite(ys)) => {
            Quantity::PerSite(xs.iter().zip(ys).map(|(&x, &y)| f(x, y)).collect())
        }
    }
}

/// Rate from the measure-variation formula λ′ = ∫[(h/4)L(u²) − H(∇u,∇u)
/// − cR′u²]dm, with the curvature rate supplied by the caller; feed it a
/// finite-difference R′ to keep this route independent of the closed form.
pub fn variation_rate(
    state: &GeometryState,
    pair: &EigenPair,
    params: &FlowParams,
    r_dot: &Quantity,
) -> Result<f64> {
    match (state, &pair.mode) {
        (GeometryState::Sphere(s), EigenMode::SphereLevel(k)) => {
            let r = s.scalar_curvature();
            let r_bar = gated_average(params, r);
            // H = coeff·g with constant coeff, so ∫(h/4)L(u²)dm drops and
            // H(∇u,∇u) = coeff·|∇u|².
            let coeff = 2.0 * params.phi() * (r - r_bar) / params.dim();
            let terms = s.integral_terms(*k);
            let rate_r = r_dot.as_constant(CONSTANT_R_TOL)?;
            Ok(-coeff * terms.grad_sq - params.c * rate_r * terms.norm_sq)
        }
        (GeometryState::FlatTorus(_), EigenMode::TorusLevel(_)) => {
            // The flat metric is a fixed point (H = 0); only the coupling
            // term can move the eigenvalue.
            Ok(-params.c * r_dot.as_constant(CONSTANT_R_TOL)?)
        }
        (GeometryState::ConformalTorus(s), EigenMode::Field(u)) => {
            let mut variation = s.flow_variation(params)?;
            let values = quantity_values(r_dot, s.grid().len())?;
            variation.r_dot = ScalarField::new(*s.grid(), values)?;
            s.general_variation_rate(u, params.c, &variation)
        }
        (GeometryState::Mesh(s), EigenMode::Vertex(u)) => {
            let mut variation = s.flow_variation(params)?;
            variation.r_dot = quantity_values(r_dot, u.len())?;
            s.general_variation_rate(u, params.c, &variation)
        }
        _ => Err(CurvspecError::InvalidParams(
            "eigenpair does not belong to this geometry".into(),
        )),
    }
}

/// Rate through the operator variation, λ′ = −∫u𝕃′u dm, along a prescribed
/// conformal direction. Only the spectral grid assembles 𝕃′.
pub fn operator_variation_rate(
    state: &GeometryState,
    pair: &EigenPair,
    c: f64,
    direction: &ScalarField,
) -> Result<f64> {
    match (state, &pair.mode) {
        (GeometryState::ConformalTorus(s), EigenMode::Field(u)) => {
            let variation = s.conformal_variation(direction)?;
            s.eigenvalue_rate_via_operator_variation(u, c, &variation)
        }
        (GeometryState::ConformalTorus(_), _) => Err(CurvspecError::InvalidParams(
            "eigenpair does not belong to this geometry".into(),
        )),
        _ => Err(CurvspecError::Unsupported(
            "operator-variation rates are only assembled on the spectral grid".into(),
        )),
    }
}

/// Pointwise scalar-curvature rate along the flow,
/// R′ = 2a|Ric|² + (2R/n)(φr̄ − ρnR) + ψΔR.
pub fn scalar_curvature_rate(state: &GeometryState, params: &FlowParams) -> Result<Quantity> {
    match state {
        GeometryState::Sphere(s) => {
            let n = params.dim();
            let r = s.scalar_curvature();
            let r_bar = gated_average(params, r);
            // |Ric|² = R²/n on the round sphere and ΔR = 0.
            Ok(Quantity::Constant(
                2.0 * params.a * r * r / n
                    + (2.0 * r / n) * (params.phi() * r_bar - params.rho * n * r),
            ))
        }
        GeometryState::FlatTorus(_) => Ok(Quantity::Constant(0.0)),
        GeometryState::ConformalTorus(s) => Ok(Quantity::PerSite(
            s.scalar_curvature_rate(params)?.into_values(),
        )),
        GeometryState::Mesh(s) => Ok(Quantity::PerSite(s.scalar_curvature_rate(params)?)),
    }
}

/// Δη per site; zero on backends whose drift is absent or constant.
pub fn laplacian_eta(state: &GeometryState) -> Result<Quantity> {
    match state {
        GeometryState::Sphere(_) => Ok(Quantity::Constant(0.0)),
        GeometryState::FlatTorus(s) => s.laplacian_eta(),
        GeometryState::ConformalTorus(s) => Ok(Quantity::PerSite(
            s.laplace_beltrami(s.eta())?.into_values(),
        )),
        GeometryState::Mesh(s) => Ok(Quantity::PerSite(s.laplace_beltrami(s.eta())?)),
    }
}

/// Trace of the comparison tensor in the scalar evolution:
/// R′ = 2a|Ric|² + ΔR + trace, with
/// trace = (2R/n)(φr̄ − nρR) + (ψ−1)ΔR.
///
/// Nonnegative trace together with a ≥ 0 puts R′ above ΔR, which preserves
/// the spatial minimum of R. The trace vanishes identically for the plain
/// Ricci flow without the average term.
pub fn curvature_comparison_trace(state: &GeometryState, params: &FlowParams) -> Result<Quantity> {
    let bundle = state.curvature(AverageMeasure::Weighted)?;
    let r_bar = gated_average(params, bundle.average);
    let lap_r = match state {
        GeometryState::Sphere(_) | GeometryState::FlatTorus(_) => Quantity::Constant(0.0),
        GeometryState::ConformalTorus(s) => {
            let scalar = bundle.scalar.per_site().expect("grid curvature is per-site");
            let field = ScalarField::new(*s.grid(), scalar.to_vec())?;
            Quantity::PerSite(s.laplace_beltrami(&field)?.into_values())
        }
        GeometryState::Mesh(s) => {
            let scalar = bundle.scalar.per_site().expect("mesh curvature is per-site");
            Quantity::PerSite(s.laplace_beltrami(scalar)?)
        }
    };
    let n = params.dim();
    let phi = params.phi();
    let psi = params.psi();
    let rho = params.rho;
    Ok(zip_quantity(&bundle.scalar, &lap_r, |r, lr| {
        (2.0 * r / n) * (phi * r_bar - n * rho * r) + (psi - 1.0) * lr
    }))
}

/// One named hypothesis with its signed margin; `margin ≥ −HYPOTHESIS_TOL`
/// counts as satisfied.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub margin: f64,
    pub passed: bool,
    pub detail: String,
}

fn margin_check(name: &'static str, margin: f64, detail: String) -> HypothesisCheck {
    HypothesisCheck {
        name,
        margin,
        passed: margin >= -HYPOTHESIS_TOL,
        detail,
    }
}

/// The observed conclusion of a theorem, evaluated regardless of whether the
/// hypotheses held, so that vacuous and genuine failures stay distinguishable.
#[derive(Debug, Clone, Serialize)]
pub struct ConclusionCheck {
    pub margin: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub theorem: String,
    pub bound_constant: f64,
    pub checks: Vec<HypothesisCheck>,
    pub hypotheses_pass: bool,
    pub conclusion: Option<ConclusionCheck>,
    pub notes: Vec<String>,
}

impl HypothesisReport {
    fn finish(mut self) -> Self {
        self.hypotheses_pass = self.checks.iter().all(|c| c.passed);
        self
    }

    pub fn check(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn min_over_slices<F>(traj: &Trajectory, mut f: F) -> Result<(f64, f64)>
where
    F: FnMut(&Slice) -> Result<f64>,
{
    if traj.slices.is_empty() {
        return Err(CurvspecError::InvalidParams("empty trajectory".into()));
    }
    let mut best = f64::INFINITY;
    let mut at = traj.slices[0].t;
    for slice in &traj.slices {
        let m = f(slice)?;
        if m < best {
            best = m;
            at = slice.t;
        }
    }
    Ok((best, at))
}

/// Smallest cluster-smoothed eigenvalue increment across pairs and steps.
fn nondecreasing_conclusion(traj: &Trajectory) -> Option<ConclusionCheck> {
    if traj.slices.len() < 2 {
        return None;
    }
    let n_pairs = traj.slices.iter().map(|s| s.pairs.len()).min()?;
    if n_pairs == 0 {
        return None;
    }
    let mut worst = f64::INFINITY;
    let mut worst_pair = 0usize;
    let mut worst_t = traj.slices[0].t;
    let mut scale = 1.0f64;
    for k in 0..n_pairs {
        for j in 0..traj.slices.len() - 1 {
            let lo = traj.slices[j].smooth_lambda(k);
            let hi = traj.slices[j + 1].smooth_lambda(k);
            scale = scale.max(lo.abs()).max(hi.abs());
            let inc = hi - lo;
            if inc < worst {
                worst = inc;
                worst_pair = k;
                worst_t = traj.slices[j + 1].t;
            }
        }
    }
    Some(ConclusionCheck {
        margin: worst,
        passed: worst >= -MONOTONICITY_TOL * scale,
        detail: format!(
            "smallest eigenvalue increment {worst:.3e} (pair {worst_pair}, t = {worst_t:.6}); \
             increments tracked through cluster means"
        ),
    })
}

fn abort_note(traj: &Trajectory, notes: &mut Vec<String>) {
    if let Some(reason) = &traj.aborted {
        notes.push(format!(
            "trajectory aborted early ({reason}); margins cover the computed prefix"
        ));
    }
}

/// Monotonicity of the drift Laplacian's spectrum (no curvature coupling):
/// needs n > 2, a flow with a ≥ 0 and ρ ≤ a/(2(n−1)), a constant A ≥ 0 with
/// a·Ric + ((φ−2ρ)/2)R·g ≥ −A·g throughout, R(0) ≥ 2(−A/φ + r̄(0)/n), and a
/// nonnegative comparison trace. Under these the eigenvalues of −L are
/// nondecreasing; the conclusion is measured independently of the margins.
pub fn check_witten_monotonicity(traj: &Trajectory, bound_constant: f64) -> Result<HypothesisReport> {
    let params = &traj.params;
    if traj.slices.is_empty() {
        return Err(CurvspecError::InvalidParams("empty trajectory".into()));
    }
    if params.c != 0.0 {
        return Err(CurvspecError::NotApplicable(
            "this statement concerns the drift Laplacian alone; run with c = 0".into(),
        ));
    }
    if params.n <= 2 {
        return Err(CurvspecError::NotApplicable(
            "the monotonicity statement needs n > 2".into(),
        ));
    }
    if params.phi() == 0.0 {
        return Err(CurvspecError::InvalidParams(
            "a = ρ = 0 leaves the metric static and the initial-curvature hypothesis divides by φ"
                .into(),
        ));
    }
    if bound_constant < 0.0 {
        return Err(CurvspecError::InvalidParams(
            "the curvature bound constant must be nonnegative".into(),
        ));
    }

    let a = params.a;
    let phi = params.phi();
    let half = 0.5 * (phi - 2.0 * params.rho);
    let n = params.dim();
    let mut checks = Vec::new();

    let membership = a.min(params.rho_threshold() - params.rho);
    checks.push(HypothesisCheck {
        name: "flow_membership",
        margin: membership,
        passed: in_flow_f(params),
        detail: format!(
            "needs a ≥ 0 and ρ ≤ a/(2(n−1)) = {:.6}; got a = {}, ρ = {}",
            params.rho_threshold(),
            a,
            params.rho
        ),
    });

    let (tensor_margin, tensor_t) = min_over_slices(traj, |slice| {
        Ok(zip_quantity(&slice.bundle.ric_coeff, &slice.bundle.scalar, |rc, r| {
            a * rc + half * r + bound_constant
        })
        .min())
    })?;
    checks.push(margin_check(
        "curvature_tensor_bound",
        tensor_margin,
        format!(
            "smallest eigenvalue of a·Ric + ((φ−2ρ)/2)R·g plus the bound constant; \
             worst at t = {tensor_t:.6}"
        ),
    ));

    let slice0 = &traj.slices[0];
    let r_bar0 = gated_average(params, slice0.bundle.average);
    let floor = 2.0 * (-bound_constant / phi + r_bar0 / n);
    checks.push(margin_check(
        "initial_scalar_bound",
        slice0.bundle.scalar.min() - floor,
        format!("min R(0) against 2(−A/φ + r̄/n) = {floor:.6}"),
    ));

    let (trace_margin, trace_t) = min_over_slices(traj, |slice| {
        Ok(curvature_comparison_trace(&slice.state, params)?.min())
    })?;
    checks.push(margin_check(
        "comparison_trace",
        trace_margin,
        format!("trace of the comparison tensor; worst at t = {trace_t:.6}"),
    ));

    let conclusion = nondecreasing_conclusion(traj);
    let mut notes = Vec::new();
    abort_note(traj, &mut notes);

    Ok(HypothesisReport {
        theorem: "witten_monotonicity".into(),
        bound_constant,
        checks,
        hypotheses_pass: false,
        conclusion,
        notes,
    }
    .finish())
}

/// Monotonicity of the coupled operator's spectrum: needs n > 2, the average
/// term off, −1/4 < c < 0, a ≥ 0, ρ < a/(2(n−1)), Δη ≤ ((φ−2ρ)/ψ)R
/// everywhere, a constant A ≥ 0 with [(φ−2ρ)−cψ]R·g + 2a·Ric ≥ −A·g, and
/// R ≥ A/(2cψ−φ). Under these the eigenvalues of −𝕃 are nondecreasing.
pub fn check_coupled_monotonicity(
    traj: &Trajectory,
    bound_constant: f64,
) -> Result<HypothesisReport> {
    let params = &traj.params;
    if traj.slices.is_empty() {
        return Err(CurvspecError::InvalidParams("empty trajectory".into()));
    }
    if params.n <= 2 {
        return Err(CurvspecError::NotApplicable(
            "the monotonicity statement needs n > 2".into(),
        ));
    }
    if !in_flow_g(params) {
        return Err(CurvspecError::NotApplicable(format!(
            "parameters sit outside the coupled regime (needs the average term off, \
             −1/4 < c < 0, a ≥ 0, ρ < a/(2(n−1))): a = {}, ρ = {}, c = {}, average {}",
            params.a,
            params.rho,
            params.c,
            if params.use_average_term { "on" } else { "off" }
        )));
    }
    if bound_constant < 0.0 {
        return Err(CurvspecError::InvalidParams(
            "the curvature bound constant must be nonnegative".into(),
        ));
    }

    let a = params.a;
    let c = params.c;
    let psi = params.psi();
    let fm2r = params.phi() - 2.0 * params.rho;
    // 2cψ − φ, strictly positive throughout this regime.
    let coupling = params.coupling_coefficient();
    let mut checks = Vec::new();

    let membership = a
        .min(-c)
        .min(c + 0.25)
        .min(params.rho_threshold() - params.rho);
    checks.push(HypothesisCheck {
        name: "flow_membership",
        margin: membership,
        passed: true,
        detail: "distance to the regime boundary in (a, c, ρ)".into(),
    });

    let (drift_margin, drift_t) = min_over_slices(traj, |slice| {
        let lap_eta = laplacian_eta(&slice.state)?;
        Ok(zip_quantity(&slice.bundle.scalar, &lap_eta, |r, le| (fm2r / psi) * r - le).min())
    })?;
    checks.push(margin_check(
        "drift_laplacian_bound",
        drift_margin,
        format!("Δη against ((φ−2ρ)/ψ)R at every site; worst at t = {drift_t:.6}"),
    ));

    let (tensor_margin, tensor_t) = min_over_slices(traj, |slice| {
        Ok(zip_quantity(&slice.bundle.ric_coeff, &slice.bundle.scalar, |rc, r| {
            (fm2r - c * psi) * r + 2.0 * a * rc + bound_constant
        })
        .min())
    })?;
    checks.push(margin_check(
        "curvature_tensor_bound",
        tensor_margin,
        format!(
            "smallest eigenvalue of [(φ−2ρ)−cψ]R·g + 2a·Ric plus the bound constant; \
             worst at t = {tensor_t:.6}"
        ),
    ));

    let (floor_margin, floor_t) = min_over_slices(traj, |slice| {
        Ok(slice.bundle.scalar.min() - bound_constant / coupling)
    })?;
    checks.push(margin_check(
        "scalar_lower_bound",
        floor_margin,
        format!(
            "min R against A/(2cψ−φ) = {:.6}; worst at t = {floor_t:.6}",
            bound_constant / coupling
        ),
    ));

    let conclusion = nondecreasing_conclusion(traj);
    let mut notes = vec![
        "on a closed manifold ∫Δη dM = 0 while the drift bound forces Δη ≤ 0 wherever R ≥ 0, \
         so the hypotheses only leave room for constant η; the predicates are evaluated \
         literally as stated"
            .into(),
    ];
    abort_note(traj, &mut notes);

    Ok(HypothesisReport {
        theorem: "coupled_monotonicity".into(),
        bound_constant,
        checks,
        hypotheses_pass: false,
        conclusion,
        notes,
    }
    .finish())
}

/// Preservation of a scalar-curvature lower bound: with a ≥ 0 and a
/// nonnegative comparison trace, R′ ≥ ΔR and the spatial minimum of R cannot
/// sink below its initial value. The conclusion measures min R(t) − bound
/// over the whole trajectory.
pub fn check_max_principle(traj: &Trajectory, lower_bound: f64) -> Result<HypothesisReport> {
    let params = &traj.params;
    if traj.slices.is_empty() {
        return Err(CurvspecError::InvalidParams("empty trajectory".into()));
    }
    let mut checks = Vec::new();
    checks.push(margin_check(
        "nonnegative_reaction",
        params.a,
        "the |Ric|² reaction term needs a ≥ 0".into(),
    ));

    let (trace_margin, trace_t) = min_over_slices(traj, |slice| {
        Ok(curvature_comparison_trace(&slice.state, params)?.min())
    })?;
    checks.push(margin_check(
        "comparison_trace",
        trace_margin,
        format!("trace of the comparison tensor; worst at t = {trace_t:.6}"),
    ));

    checks.push(margin_check(
        "initial_scalar_bound",
        traj.slices[0].bundle.scalar.min() - lower_bound,
        format!("min R(0) against the requested bound {lower_bound}"),
    ));

    let (keep_margin, keep_t) = min_over_slices(traj, |slice| {
        Ok(slice.bundle.scalar.min() - lower_bound)
    })?;
    let conclusion = Some(ConclusionCheck {
        margin: keep_margin,
        passed: keep_margin >= -MIN_PRINCIPLE_TOL,
        detail: format!("min R(t) − bound over the trajectory; worst at t = {keep_t:.6}"),
    });

    let mut notes = Vec::new();
    abort_note(traj, &mut notes);

    Ok(HypothesisReport {
        theorem: "scalar_minimum_principle".into(),
        bound_constant: lower_bound,
        checks,
        hypotheses_pass: false,
        conclusion,
        notes,
    }
    .finish())
}

/// Smallest A ≥ 0 for which a·Ric + ((φ−2ρ)/2)R·g ≥ −A·g holds on every
/// slice of the trajectory.
pub fn minimal_witten_bound(traj: &Trajectory) -> Result<f64> {
    let params = &traj.params;
    let a = params.a;
    let half = 0.5 * (params.phi() - 2.0 * params.rho);
    let (worst, _) = min_over_slices(traj, |slice| {
        Ok(zip_quantity(&slice.bundle.ric_coeff, &slice.bundle.scalar, |rc, r| {
            a * rc + half * r
        })
        .min())
    })?;
    Ok((-worst).max(0.0))
}

/// Smallest A ≥ 0 satisfying the coupled operator inequality
/// [(φ−2ρ)−cψ]R·g + 2a·Ric ≥ −A·g on every slice. The companion scalar floor
/// R ≥ A/(2cψ−φ) tightens separately and is not folded in here.
pub fn minimal_coupled_bound(traj: &Trajectory) -> Result<f64> {
    let params = &traj.params;
    let a = params.a;
    let fm2r = params.phi() - 2.0 * params.rho;
    let c_psi = params.c * params.psi();
    let (worst, _) = min_over_slices(traj, |slice| {
        Ok(zip_quantity(&slice.bundle.ric_coeff, &slice.bundle.scalar, |rc, r| {
            (fm2r - c_psi) * r + 2.0 * a * rc
        })
        .min())
    })?;
    Ok((-worst).max(0.0))
}

/// Signed values of the term groups whose nonnegativity drives the coupled
/// monotonicity argument. Under its hypotheses each field is ≥ 0, and
/// λ·curvature_mass_bound + gradient_curvature_bound + drift_gradient_term
/// + ricci_square_term + drift_laplacian_coupling telescopes back to
/// [`drift_expanded_rate`] (the bound terms cancel).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepMargins {
    /// 2cψ − φ, positive throughout the coupled regime.
    pub coupling_coefficient: f64,
    /// ∫[(2cψ−φ)R − A]u² dm.
    pub curvature_mass_bound: f64,
    /// −cψ∫R|∇u − u∇η|² dm.
    pub drift_gradient_term: f64,
    /// −2ac∫|Ric|²u² dm.
    pub ricci_square_term: f64,
    /// −[cψ−(φ−2ρ)]∫R|∇u|² dm + 2a∫Ric(∇u,∇u) dm + λA.
    pub gradient_curvature_bound: f64,
    /// cψ∫Ru²Δη dm + c[2cψ−(φ−2ρ)]∫R²u² dm.
    pub drift_laplacian_coupling: f64,
}

impl StepMargins {
    pub fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("coupling_coefficient", self.coupling_coefficient),
            ("curvature_mass_bound", self.curvature_mass_bound),
            ("drift_gradient_term", self.drift_gradient_term),
            ("ricci_square_term", self.ricci_square_term),
            ("gradient_curvature_bound", self.gradient_curvature_bound),
            ("drift_laplacian_coupling", self.drift_laplacian_coupling),
        ]
    }

    pub fn min(&self) -> f64 {
        self.named()
            .iter()
            .fold(f64::INFINITY, |m, &(_, v)| m.min(v))
    }
}

pub fn step_margins(
    lambda: f64,
    terms: &IntegralTerms,
    params: &FlowParams,
    bound_constant: f64,
) -> StepMargins {
    let a = params.a;
    let c = params.c;
    let psi = params.psi();
    let fm2r = params.phi() - 2.0 * params.rho;
    let coupling = params.coupling_coefficient();
    StepMargins {
        coupling_coefficient: coupling,
        curvature_mass_bound: coupling * terms.u2_r - bound_constant * terms.norm_sq,
        drift_gradient_term: -c * psi * terms.r_drift_diff_sq,
        ricci_square_term: -2.0 * a * c * terms.ricsq_u2,
        gradient_curvature_bound: -(c * psi - fm2r) * terms.r_grad_sq
            + 2.0 * a * terms.ric_grad_grad
            + lambda * bound_constant * terms.norm_sq,
        drift_laplacian_coupling: c * psi * terms.r_u2_lap_eta
            + c * (2.0 * c * psi - fm2r) * terms.r2_u2,
    }
}

/// Identity between the Hessian's square integral and the rate at constant
/// scalar curvature:
///
/// ∫|∇²u|² dm = −λ′/(2a) + λ² + (λR/n)(2nc−1) + c²R² − c∫|Ric|²u² dm
///              − ∫∇²η(∇u,∇u) dm,
///
/// where λ′ is the constant-curvature closed form with the average feeding
/// back (r̄ = R), the regime the identity is derived in.
pub fn check_hessian_integral(
    state: &GeometryState,
    pair: &EigenPair,
    params: &FlowParams,
    measure: AverageMeasure,
) -> Result<Residual> {
    if params.a == 0.0 {
        return Err(CurvspecError::InvalidParams(
            "the Hessian identity divides by a".into(),
        ));
    }
    let bundle = state.curvature(measure)?;
    let r = bundle.scalar.as_constant(CONSTANT_R_TOL)?;
    let terms = state.integral_terms(pair, measure)?;
    let Some(hess) = terms.hess_norm_sq else {
        return Err(CurvspecError::Unsupported(
            "no Hessian quadrature on this backend".into(),
        ));
    };
    let a = params.a;
    let c = params.c;
    let n = params.dim();
    let lambda = pair.lambda;
    let lambda_dot =
        -2.0 * a * lambda * r / n + 2.0 * a * terms.ric_grad_grad - 2.0 * a * c * terms.ricsq_u2;
    let rhs = -lambda_dot / (2.0 * a)
        + lambda * lambda
        + (lambda * r / n) * (2.0 * n * c - 1.0)
        + c * c * r * r
        - c * terms.ricsq_u2
        - terms.hess_eta_grad_grad;
    Ok(Residual::new(
        (hess - rhs).abs(),
        hess.abs().max(rhs.abs()).max(1.0),
    ))
}

/// Upper bound for λ′ at constant scalar curvature with a > 0:
///
/// λ′ ≤ 2a((n−1)/n)λ² + (2aR/n)(2nc−2c−1)λ + 2a((n−1)/n)c²R²
///      − 2ac∫|Ric|²u² − (2a/n)∫⟨∇η,∇u⟩² − 2a∫∇²η(∇u,∇u)
///      + (2a(λ+cR)/n)∫⟨∇η,∇u²⟩.
pub fn rate_upper_bound(
    state: &GeometryState,
    pair: &EigenPair,
    params: &FlowParams,
    measure: AverageMeasure,
) -> Result<f64> {
    if params.a <= 0.0 {
        return Err(CurvspecError::InvalidParams(
            "the rate bound needs a > 0".into(),
        ));
    }
    let bundle = state.curvature(measure)?;
    let r = bundle.scalar.as_constant(CONSTANT_R_TOL)?;
    let terms = state.integral_terms(pair, measure)?;
    let a = params.a;
    let c = params.c;
    let n = params.dim();
    let lambda = pair.lambda;
    Ok(2.0 * a * (n - 1.0) / n * lambda * lambda
        + (2.0 * a * r / n) * (2.0 * n * c - 2.0 * c - 1.0) * lambda
        + 2.0 * a * (n - 1.0) / n * c * c * r * r
        - 2.0 * a * c * terms.ricsq_u2
        - (2.0 * a / n) * terms.drift_grad_sq
        - 2.0 * a * terms.hess_eta_grad_grad
        + (2.0 * a * (lambda + c * r) / n) * terms.drift_grad_u2)
}

/// Margin of the rate upper bound against an observed λ′; nonnegative means
/// the bound holds.
pub fn check_rate_upper_bound(
    state: &GeometryState,
    pair: &EigenPair,
    params: &FlowParams,
    measure: AverageMeasure,
    lambda_dot: f64,
) -> Result<f64> {
    Ok(rate_upper_bound(state, pair, params, measure)? - lambda_dot)
}

/// Every rate route evaluated at one (t, pair) of a trajectory, with the
/// finite-difference value they are all compared against. Residual scales
/// are max(1, |λ′_fd|).
#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub t: f64,
    pub pair: usize,
    pub lambda: f64,
    pub lambda_dot_fd: f64,
    /// Step-halving error estimate of the FD rate where available.
    pub fd_error: Option<f64>,
    pub rate_variation: f64,
    pub rate_unified: f64,
    pub rate_drift_expanded: f64,
    pub rate_constant_curvature: Option<f64>,
    pub rate_surface: Option<f64>,
    pub residual_variation: Residual,
    pub residual_unified: Residual,
    /// unified vs drift-expanded, an algebraic identity with no FD slack.
    pub residual_rewrite: Residual,
}

impl RateRow {
    /// Largest relative residual an FD comparison may carry at `tier_tol`:
    /// the FD error bar widens the tolerance where it exceeds the tier.
    pub fn allowed_relative(&self, tier_tol: f64) -> f64 {
        let scale = self.lambda_dot_fd.abs().max(1.0);
        match self.fd_error {
            Some(e) => (e / scale).max(tier_tol),
            None => tier_tol,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EvolutionReport {
    pub rows: Vec<RateRow>,
    /// Mass-weighted L² gap between the FD curvature rate and the closed
    /// form, relative to max(1, ‖closed form‖); one entry per interior slice.
    pub curvature_rate: Vec<Residual>,
    pub notes: Vec<String>,
}

impl EvolutionReport {
    pub fn worst_variation_residual(&self) -> f64 {
        self.rows
            .iter()
            .fold(0.0, |m, r| m.max(r.residual_variation.relative()))
    }

    pub fn worst_unified_residual(&self) -> f64 {
        self.rows
            .iter()
            .fold(0.0, |m, r| m.max(r.residual_unified.relative()))
    }

    pub fn worst_rewrite_residual(&self) -> f64 {
        self.rows
            .iter()
            .fold(0.0, |m, r| m.max(r.residual_rewrite.relative()))
    }

    pub fn worst_curvature_residual(&self) -> f64 {
        self.curvature_rate
            .iter()
            .fold(0.0, |m, r| m.max(r.relative()))
    }

    /// True when every FD comparison sits inside its widened tolerance and
    /// the rewrite identity inside the bare tier tolerance.
    pub fn rates_pass(&self, tier_tol: f64) -> bool {
        self.rows.iter().all(|row| {
            let allowed = row.allowed_relative(tier_tol);
            row.residual_variation.relative() <= allowed
                && row.residual_unified.relative() <= allowed
                && row.residual_rewrite.relative() <= tier_tol
        })
    }
}

/// d/dt of scalar curvature per site over the trajectory, by the same FD
/// stencils used for eigenvalues.
fn scalar_rate_series(traj: &Trajectory) -> Result<Vec<Quantity>> {
    let n_slices = traj.slices.len();
    match &traj.slices[0].bundle.scalar {
        Quantity::Constant(_) => {
            let series = traj
                .slices
                .iter()
                .map(|s| {
                    s.bundle.scalar.constant().ok_or_else(|| {
                        CurvspecError::InvalidParams(
                            "curvature layout changed along the trajectory".into(),
                        )
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok(rate_series(&series, traj.dt)
                .into_iter()
                .map(|e| Quantity::Constant(e.rate))
                .collect())
        }
        Quantity::PerSite(v0) => {
            let n_sites = v0.len();
            let mut sites = Vec::with_capacity(n_slices);
            for slice in &traj.slices {
                let vs = slice.bundle.scalar.per_site().ok_or_else(|| {
                    CurvspecError::InvalidParams(
                        "curvature layout changed along the trajectory".into(),
                    )
                })?;
                if vs.len() != n_sites {
                    return Err(CurvspecError::GridMismatch(format!(
                        "curvature sites changed from {n_sites} to {}",
                        vs.len()
                    )));
                }
                sites.push(vs);
            }
            let mut rates = vec![vec![0.0f64; n_sites]; n_slices];
            let mut series = vec![0.0f64; n_slices];
            for i in 0..n_sites {
                for j in 0..n_slices {
                    series[j] = sites[j][i];
                }
                for (j, est) in rate_series(&series, traj.dt).into_iter().enumerate() {
                    rates[j][i] = est.rate;
                }
            }
            Ok(rates.into_iter().map(Quantity::PerSite).collect())
        }
    }
}

fn weighted_l2_residual(
    state: &GeometryState,
    fd: &Quantity,
    formula: &Quantity,
) -> Result<Residual> {
    match (fd, formula) {
        (Quantity::Constant(x), Quantity::Constant(y)) => {
            Ok(Residual::new((x - y).abs(), y.abs().max(1.0)))
        }
        _ => {
            let masses = mass_weights(state)?.ok_or_else(|| {
                CurvspecError::InvalidParams(
                    "per-site curvature rates on an analytic backend".into(),
                )
            })?;
            let n = masses.len();
            let fd_v = quantity_values(fd, n)?;
            let f_v = quantity_values(formula, n)?;
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..n {
                num += (fd_v[i] - f_v[i]).powi(2) * masses[i];
                den += f_v[i].powi(2) * masses[i];
            }
            Ok(Residual::new(num.sqrt(), den.sqrt().max(1.0)))
        }
    }
}

/// Compares every rate route against finite differences of the eigenvalue
/// series, and the closed-form curvature rate against finite differences of
/// R, across a whole trajectory. The curvature rate that feeds the variation
/// route comes from the FD series, never from the closed form, so the two
/// sides stay independent.
pub fn verify_trajectory(traj: &Trajectory) -> Result<EvolutionReport> {
    if traj.slices.len() < 3 {
        return Err(CurvspecError::InvalidParams(
            "rate verification needs at least three slices".into(),
        ));
    }
    let params = &traj.params;
    let measure = traj.slices[0].bundle.measure;
    let n_slices = traj.slices.len();
    let n_pairs = traj.slices.iter().map(|s| s.pairs.len()).min().unwrap_or(0);

    let lambda_rates: Vec<Vec<RateEstimate>> = (0..n_pairs)
        .map(|k| rate_series(&traj.lambda_series(k), traj.dt))
        .collect();
    let scalar_fd = scalar_rate_series(traj)?;

    let mut rows = Vec::with_capacity(n_slices * n_pairs);
    for (j, slice) in traj.slices.iter().enumerate() {
        for k in 0..n_pairs {
            let pair = &slice.pairs[k];
            let terms = slice.state.integral_terms(pair, measure)?;
            let unified = unified_rate(pair.lambda, slice.bundle.average, &terms, params);
            let rewrite = drift_expanded_rate(pair.lambda, slice.bundle.average, &terms, params);
            let variation = variation_rate(&slice.state, pair, params, &scalar_fd[j])?;
            let surface = if params.n == 2 {
                Some(surface_rate(pair.lambda, slice.bundle.average, &terms, params)?)
            } else {
                None
            };
            let constant = match constant_curvature_rate(&slice.state, pair, params, measure) {
                Ok(v) => Some(v),
                Err(CurvspecError::NotApplicable(_)) => None,
                Err(e) => return Err(e),
            };
            let est = &lambda_rates[k][j];
            let scale = est.rate.abs().max(1.0);
            rows.push(RateRow {
                t: slice.t,
                pair: k,
                lambda: pair.lambda,
                lambda_dot_fd: est.rate,
                fd_error: est.error,
                rate_variation: variation,
                rate_unified: unified,
                rate_drift_expanded: rewrite,
                rate_constant_curvature: constant,
                rate_surface: surface,
                residual_variation: Residual::new((est.rate - variation).abs(), scale),
                residual_unified: Residual::new((est.rate - unified).abs(), scale),
                residual_rewrite: Residual::new(
                    (unified - rewrite).abs(),
                    unified.abs().max(1.0),
                ),
            });
        }
    }

    // Interior slices only: the end stencils are one-sided and carry no
    // step-halving error estimate.
    let mut curvature_rate = Vec::with_capacity(n_slices.saturating_sub(2));
    for j in 1..n_slices - 1 {
        let slice = &traj.slices[j];
        let formula = scalar_curvature_rate(&slice.state, params)?;
        curvature_rate.push(weighted_l2_residual(&slice.state, &scalar_fd[j], &formula)?);
    }

    let mut notes = Vec::new();
    abort_note(traj, &mut notes);
    if n_pairs == 0 {
        notes.push("no eigenpairs were tracked; only curvature rates are reported".into());
    }

    Ok(EvolutionReport {
        rows,
        curvature_rate,
        notes,
    })
}

pub fn write_rate_csv(report: &EvolutionReport, out: &mut impl std::io::Write) -> Result<()> {
    writeln!(
        out,
        "t,pair,lambda,lambda_dot_fd,fd_error,rate_variation,rate_unified,rate_drift_expanded,\
         rate_constant_curvature,rate_surface,residual_variation_rel,residual_unified_rel,\
         residual_rewrite_rel"
    )?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
    for row in &report.rows {
        writeln!(
            out,
            "{:.17e},{},{:.17e},{:.17e},{},{:.17e},{:.17e},{:.17e},{},{},{:.17e},{:.17e},{:.17e}",
            row.t,
            row.pair,
            row.lambda,
            row.lambda_dot_fd,
            opt(row.fd_error),
            row.rate_variation,
            row.rate_unified,
            row.rate_drift_expanded,
            opt(row.rate_constant_curvature),
            opt(row.rate_surface),
            row.residual_variation.relative(),
            row.residual_unified.relative(),
            row.residual_rewrite.relative(),
        )?;
    }
    Ok(())
}
