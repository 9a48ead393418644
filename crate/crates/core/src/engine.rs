//! Flow integration and eigenvalue tracking along trajectories.
//!
//! The flow moves a state's degrees of freedom with classical RK4 at a fixed
//! step chosen up front, so every slice lands on a uniform time grid and
//! eigenvalue rates can be estimated by central differences with a Richardson
//! error bar. Eigenpairs are continued from slice to slice by mass-weighted
//! overlap, with signs fixed and near-degenerate values grouped into
//! clusters whose means are the smooth observables.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::eigen::EigenOptions;
use crate::error::{CurvspecError, Result};
use crate::params::FlowParams;
use crate::state::{AverageMeasure, CurvatureBundle, EigenMode, EigenPair, GeometryState};

/// How the time step is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepControl {
    /// A caller-supplied step, still validated against the stability limit.
    Fixed(f64),
    /// Step from the initial stability limit scaled by this safety factor.
    Auto { safety: f64 },
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub horizon: f64,
    pub step: StepControl,
    /// How many eigenpairs to track along the flow; 0 skips eigensolves.
    pub eigenpairs: usize,
    pub measure: AverageMeasure,
    pub eigen: EigenOptions,
    /// Pairs closer than this relative gap form one cluster.
    pub cluster_rel_gap: f64,
    /// Continuation overlaps below this trigger a warning.
    pub overlap_threshold: f64,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            horizon: 0.1,
            step: StepControl::Auto { safety: 0.1 },
            eigenpairs: 1,
            measure: AverageMeasure::Weighted,
            eigen: EigenOptions::default(),
            cluster_rel_gap: 1e-6,
            overlap_threshold: 0.9,
        }
    }
}

/// Consecutive eigenvalues within the cluster gap, reported as one group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    /// Pair indices `first..first + len`.
    pub first: usize,
    pub len: usize,
    pub mean: f64,
}

/// One observed instant of the flow.
#[derive(Debug, Clone)]
pub struct Slice {
    pub t: f64,
    pub state: GeometryState,
    pub bundle: CurvatureBundle,
    pub weighted_volume: f64,
    pub pairs: Vec<EigenPair>,
    pub clusters: Vec<Cluster>,
    /// |⟨u_k(t), u_k(t−dt)⟩_dm| per pair; 1 for the first slice and for
    /// analytic backends whose modes carry exact labels.
    pub overlaps: Vec<f64>,
}

impl Slice {
    /// Mean eigenvalue of the cluster containing pair k: the observable that
    /// stays smooth when a degenerate level would otherwise permute.
    pub fn smooth_lambda(&self, k: usize) -> f64 {
        for c in &self.clusters {
            if k >= c.first && k < c.first + c.len {
                return c.mean;
            }
        }
        self.pairs[k].lambda
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub params: FlowParams,
    pub dt: f64,
    pub slices: Vec<Slice>,
    /// Populated when the run stopped early; slices hold the valid prefix.
    pub aborted: Option<String>,
    pub warnings: Vec<String>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.t).collect()
    }

    /// λ_k over time, smoothed through clusters.
    pub fn lambda_series(&self, k: usize) -> Vec<f64> {
        self.slices.iter().map(|s| s.smooth_lambda(k)).collect()
    }

    pub fn volume_series(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.weighted_volume).collect()
    }
}

/// A finite-difference rate with a step-halving error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateEstimate {
    pub rate: f64,
    /// |D(dt) − D(2dt)|/3 where available (interior points with 2 neighbors
    /// each side); None when the series is too short there.
    pub error: Option<f64>,
}

/// d/dt of a uniformly sampled series: central differences inside, one-sided
/// second-order stencils at the ends.
pub fn rate_series(values: &[f64], dt: f64) -> Vec<RateEstimate> {
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    if n < 3 {
        for _ in 0..n {
            out.push(RateEstimate { rate: f64::NAN, error: None });
        }
        return out;
    }
    for j in 0..n {
        let (rate, coarse) = if j == 0 {
            let fine = (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * dt);
            let coarse = (n > 4)
                .then(|| (-3.0 * values[0] + 4.0 * values[2] - values[4]) / (4.0 * dt));
            (fine, coarse)
        } else if j == n - 1 {
            let fine = (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * dt);
            let coarse = (n > 4)
                .then(|| (3.0 * values[n - 1] - 4.0 * values[n - 3] + values[n - 5]) / (4.0 * dt));
            (fine, coarse)
        } else {
            let fine = (values[j + 1] - values[j - 1]) / (2.0 * dt);
            let coarse = (j >= 2 && j + 2 < n)
                .then(|| (values[j + 2] - values[j - 2]) / (4.0 * dt));
            (fine, coarse)
        };
        out.push(RateEstimate {
            rate,
            error: coarse.map(|c| (rate - c).abs() / 3.0),
        });
    }
    out
}

/// Groups consecutive eigenvalues closer than `rel_gap` (relative to
/// max(1, |λ|)) into clusters, the smooth observables at degeneracies.
pub fn cluster_pairs(pairs: &[EigenPair], rel_gap: f64) -> Vec<Cluster> {
    let mut clusters = Vec::new();
    let mut first = 0;
    while first < pairs.len() {
        let mut last = first;
        while last + 1 < pairs.len() {
            let a = pairs[last].lambda;
            let b = pairs[last + 1].lambda;
            if (b - a).abs() <= rel_gap * a.abs().max(1.0) {
                last += 1;
            } else {
                break;
            }
        }
        let len = last - first + 1;
        let mean = pairs[first..=last].iter().map(|p| p.lambda).sum::<f64>() / len as f64;
        clusters.push(Cluster { first, len, mean });
        first = last + 1;
    }
    clusters
}

/// Quadrature weights of the state's weighted measure, for overlap inner
/// products. None for analytic backends that carry exact mode labels.
pub(crate) fn mass_weights(state: &GeometryState) -> Result<Option<Vec<f64>>> {
    match state {
        GeometryState::Sphere(_) | GeometryState::FlatTorus(_) => Ok(None),
        GeometryState::ConformalTorus(s) => Ok(Some(s.geometry()?.mass.clone())),
        GeometryState::Mesh(s) => Ok(Some(s.geometry()?.mass.clone())),
    }
}

fn mode_values(mode: &EigenMode) -> Option<&[f64]> {
    match mode {
        EigenMode::Field(f) => Some(f.values()),
        EigenMode::Vertex(v) => Some(v),
        EigenMode::SphereLevel(_) | EigenMode::TorusLevel(_) => None,
    }
}

fn negate_mode(mode: &mut EigenMode) {
    match mode {
        EigenMode::Field(f) => {
            for v in f.values_mut() {
                *v = -*v;
            }
        }
        EigenMode::Vertex(v) => {
            for x in v.iter_mut() {
                *x = -*x;
            }
        }
        EigenMode::SphereLevel(_) | EigenMode::TorusLevel(_) => {}
    }
}

/// Matches new pairs to the previous slice by the dm inner product at the new
/// state, flips signs so matched overlaps are positive, and reports |overlap|
/// per pair. Greedy over descending overlap magnitude.
fn continue_pairs(
    pairs: &mut [EigenPair],
    basis: Option<&mut DMatrix<f64>>,
    prev: &[EigenPair],
    mass: &[f64],
) -> Vec<f64> {
    let n_new = pairs.len();
    let n_old = prev.len();
    let mut overlap = vec![vec![0.0; n_old]; n_new];
    for (k, pair) in pairs.iter().enumerate() {
        let Some(u) = mode_values(&pair.mode) else { continue };
        for (l, old) in prev.iter().enumerate() {
            let Some(v) = mode_values(&old.mode) else { continue };
            overlap[k][l] = u
                .iter()
                .zip(v)
                .zip(mass)
                .map(|((&a, &b), &m)| a * b * m)
                .sum();
        }
    }
    let mut order: Vec<(usize, usize)> = (0..n_new)
        .flat_map(|k| (0..n_old).map(move |l| (k, l)))
        .collect();
    order.sort_by(|&(ka, la), &(kb, lb)| {
        overlap[kb][lb]
            .abs()
            .partial_cmp(&overlap[ka][la].abs())
            .expect("finite overlaps")
            .then((ka, la).cmp(&(kb, lb)))
    });
    let mut matched_new = vec![false; n_new];
    let mut matched_old = vec![false; n_old];
    let mut result = vec![0.0; n_new];
    let mut basis = basis;
    for (k, l) in order {
        if matched_new[k] || matched_old[l] {
            continue;
        }
        matched_new[k] = true;
        matched_old[l] = true;
        result[k] = overlap[k][l].abs();
        if overlap[k][l] < 0.0 {
            negate_mode(&mut pairs[k].mode);
            if let Some(b) = basis.as_deref_mut() {
                if k < b.ncols() {
                    b.column_mut(k).neg_mut();
                }
            }
        }
    }
    result
}

fn observe(
    t: f64,
    state: GeometryState,
    params: &FlowParams,
    settings: &RunSettings,
    warm: &mut Option<DMatrix<f64>>,
    prev: Option<&Slice>,
    warnings: &mut Vec<String>,
) -> Result<Slice> {
    let bundle = state.curvature(settings.measure)?;
    let weighted_volume = state.weighted_volume()?;
    let mut pairs = Vec::new();
    let mut overlaps = Vec::new();
    if settings.eigenpairs > 0 {
        let mut opts = settings.eigen.clone();
        opts.warm_start = warm.take();
        let mut basis = None;
        pairs = match &state {
            GeometryState::ConformalTorus(s) => {
                let (p, b) =
                    crate::grid::operator::eigensolve_with_basis(s, params.c, settings.eigenpairs, &opts)?;
                basis = Some(b);
                p
            }
            GeometryState::Mesh(s) => {
                let (p, b) = s.eigensolve_with_basis(params.c, settings.eigenpairs, &opts)?;
                basis = Some(b);
                p
            }
            other => other.eigensolve(params.c, settings.eigenpairs, &opts)?,
        };
        overlaps = vec![1.0; pairs.len()];
        if let Some(prev) = prev {
            if let Some(mass) = mass_weights(&state)? {
                overlaps = continue_pairs(&mut pairs, basis.as_mut(), &prev.pairs, &mass);
                for (k, &o) in overlaps.iter().enumerate() {
                    if o < settings.overlap_threshold {
                        warnings.push(format!(
                            "t={t:.6}: pair {k} continuation overlap {o:.3} below \
                             {:.3}",
                            settings.overlap_threshold
                        ));
                    }
                }
            }
        }
        *warm = basis;
    }
    let clusters = cluster_pairs(&pairs, settings.cluster_rel_gap);
    Ok(Slice {
        t,
        state,
        bundle,
        weighted_volume,
        pairs,
        clusters,
        overlaps,
    })
}

/// One classical RK4 step of the flow's degrees of freedom.
fn rk4_step(state: &GeometryState, params: &FlowParams, dt: f64) -> Result<GeometryState> {
    let dof = state.dof();
    if dof.is_empty() {
        return Ok(state.clone());
    }
    let k1 = state.dof_rate(params)?;
    let stage = |ks: &[f64], scale: f64| -> Vec<f64> {
        dof.iter().zip(ks).map(|(&x, &k)| x + scale * dt * k).collect()
    };
    let k2 = state.with_dof(stage(&k1, 0.5))?.dof_rate(params)?;
    let k3 = state.with_dof(stage(&k2, 0.5))?.dof_rate(params)?;
    let k4 = state.with_dof(stage(&k3, 1.0))?.dof_rate(params)?;
    let next: Vec<f64> = (0..dof.len())
        .map(|i| dof[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    state.with_dof(next)
}

/// Runs the flow from `initial` to the horizon, observing every step.
///
/// Numerical failures mid-run (stability violations, degenerate triangles)
/// abort the trajectory but return the valid prefix with the reason in
/// `aborted`; failures at the initial state are hard errors.
pub fn evolve(
    initial: GeometryState,
    params: &FlowParams,
    settings: &RunSettings,
) -> Result<Trajectory> {
    if initial.dim() != params.n {
        return Err(CurvspecError::InvalidParams(format!(
            "state dimension {} does not match parameter dimension {}",
            initial.dim(),
            params.n
        )));
    }
    if !(settings.horizon > 0.0 && settings.horizon.is_finite()) {
        return Err(CurvspecError::InvalidParams("horizon must be positive".into()));
    }
    let static_state = initial.dof().is_empty();
    let dt = match settings.step {
        StepControl::Fixed(dt) => {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CurvspecError::InvalidParams("step must be positive".into()));
            }
            dt
        }
        StepControl::Auto { safety } => {
            if static_state {
                settings.horizon
            } else {
                let limit = initial.cfl_limit(params, safety)?;
                settings.horizon / (settings.horizon / limit).ceil().max(1.0)
            }
        }
    };
    let steps = (settings.horizon / dt).round().max(1.0) as usize;
    let dt = settings.horizon / steps as f64;

    let mut warnings = Vec::new();
    let mut warm = None;
    let first = observe(0.0, initial, params, settings, &mut warm, None, &mut warnings)?;
    let mut slices = vec![first];
    let mut aborted = None;

    for step in 0..steps {
        let current = &slices[step].state;
        if !static_state {
            // the raw stability bound, without the auto-step safety margin
            let limit = current.cfl_limit(params, 1.0)?;
            if dt > limit {
                aborted = Some(
                    CurvspecError::StepTooLarge { dt, limit }.to_string(),
                );
                break;
            }
        }
        let t_next = dt * (step + 1) as f64;
        let next = match rk4_step(current, params, dt) {
            Ok(s) => s,
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let prev = slices.last().map(|s| s as &Slice);
        match observe(t_next, next, params, settings, &mut warm, prev, &mut warnings) {
            Ok(slice) => slices.push(slice),
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        }
    }

    Ok(Trajectory {
        params: *params,
        dt,
        slices,
        aborted,
        warnings,
    })
}

/// Writes one CSV row per slice: time, volume, curvature average, and the
/// tracked eigenvalues (cluster-smoothed).
pub fn write_lambda_csv(trajectory: &Trajectory, out: &mut impl std::io::Write) -> Result<()> {
    let k = trajectory.slices.first().map_or(0, |s| s.pairs.len());
    write!(out, "t,weighted_volume,r_average")?;
    for i in 0..k {
        write!(out, ",lambda_{i}")?;
    }
    writeln!(out)?;
    for s in &trajectory.slices {
        write!(out, "{:.17e},{:.17e},{:.17e}", s.t, s.weighted_volume, s.bundle.average)?;
        for i in 0..k.min(s.pairs.len()) {
            write!(out, ",{:.17e}", s.smooth_lambda(i))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::SphereState;
    use approx::assert_relative_eq;

    fn sphere_run(use_average: bool, horizon: f64, steps: usize) -> Trajectory {
        let params = FlowParams::new(1.0, 0.0, 0.1, 3, use_average).unwrap();
        let state = GeometryState::Sphere(SphereState::new(3, 1.0).unwrap());
        let settings = RunSettings {
            horizon,
            step: StepControl::Fixed(horizon / steps as f64),
            eigenpairs: 2,
            ..RunSettings::default()
        };
        evolve(state, &params, &settings).unwrap()
    }

    #[test]
    fn shrinking_sphere_radius_is_exact_under_rk4() {
        // with the average term off, dq/dt is constant, so RK4 is exact
        let traj = sphere_run(false, 0.05, 10);
        assert!(traj.aborted.is_none());
        assert_eq!(traj.slices.len(), 11);
        for s in &traj.slices {
            let GeometryState::Sphere(sp) = &s.state else { panic!("sphere run") };
            assert_relative_eq!(sp.radius_sq(), 1.0 - 4.0 * s.t, epsilon = 1e-14);
        }
    }

    #[test]
    fn normalized_flow_fixes_the_sphere() {
        let traj = sphere_run(true, 0.1, 8);
        assert!(traj.aborted.is_none());
        for s in &traj.slices {
            let GeometryState::Sphere(sp) = &s.state else { panic!("sphere run") };
            assert_relative_eq!(sp.radius_sq(), 1.0, epsilon = 1e-14);
        }
        // eigenvalues constant along the fixed point
        let series = traj.lambda_series(0);
        for v in &series {
            assert_relative_eq!(*v, series[0], epsilon = 1e-13);
        }
    }

    #[test]
    fn rate_series_is_exact_for_quadratics() {
        let dt = 0.01;
        let values: Vec<f64> = (0..9).map(|j| {
            let t = dt * j as f64;
            3.0 + 2.0 * t - 5.0 * t * t
        }).collect();
        let rates = rate_series(&values, dt);
        for (j, r) in rates.iter().enumerate() {
            let t = dt * j as f64;
            assert_relative_eq!(r.rate, 2.0 - 10.0 * t, epsilon = 1e-10);
            if let Some(e) = r.error {
                assert!(e < 1e-10);
            }
        }
    }

    #[test]
    fn rate_errors_flag_cubic_curvature() {
        let dt = 0.1;
        let values: Vec<f64> = (0..9).map(|j| (dt * j as f64).powi(3)).collect();
        let rates = rate_series(&values, dt);
        // central difference of t³ has error dt²: the estimate must see it
        let mid = &rates[4];
        assert!(mid.error.unwrap() > 1e-4);
        assert_relative_eq!(mid.rate, 3.0 * (0.4f64).powi(2), epsilon = 2.0 * dt * dt);
    }

    #[test]
    fn cluster_grouping_respects_gap() {
        let mk = |lambda: f64| EigenPair {
            lambda,
            multiplicity: 1,
            mode: EigenMode::SphereLevel(0),
        };
        let pairs = vec![mk(0.0), mk(1.0), mk(1.0 + 1e-9), mk(1.5)];
        let clusters = cluster_pairs(&pairs, 1e-6);
        assert_eq!(clusters.len(), 3);
        assert_eq!(clusters[1].first, 1);
        assert_eq!(clusters[1].len, 2);
        assert_relative_eq!(clusters[1].mean, 1.0 + 5e-10, epsilon = 1e-12);
    }

    #[test]
    fn collapsing_tetrahedron_aborts_with_partial_trajectory() {
        // positive-curvature surface under the unnormalized flow collapses
        // in finite time: the fixed step must eventually exceed the
        // stability bound or degenerate a triangle
        let positions = vec![
            [1.0, 1.0, 1.0],
            [1.0, -1.0, -1.0],
            [-1.0, 1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let faces = vec![[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]];
        let mesh = crate::mesh::MeshState::new(faces, positions).unwrap();
        let mesh = mesh.with_w(vec![0.4, 0.4, -0.4, -0.4]).unwrap();
        let params = FlowParams::new(1.0, 0.0, 0.0, 2, false).unwrap();
        let settings = RunSettings {
            horizon: 40.0,
            step: StepControl::Fixed(0.5),
            eigenpairs: 0,
            ..RunSettings::default()
        };
        let traj = evolve(GeometryState::Mesh(mesh), &params, &settings).unwrap();
        let msg = traj.aborted.expect("run must abort");
        assert!(
            msg.contains("triangle") || msg.contains("stability"),
            "unexpected abort reason: {msg}"
        );
        assert!(!traj.slices.is_empty());
    }
}
