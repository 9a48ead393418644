//! Scenario configuration: the TOML schema, its validation, and the
//! construction of library objects from it. Unknown keys are rejected so a
//! typo cannot silently fall back to a default, and every run re-serializes
//! the normalized config next to its outputs.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use curvspec::analytic::{FlatTorusState, SphereState, TorusDrift, TorusLattice};
use curvspec::eigen::EigenOptions;
use curvspec::engine::{RunSettings, StepControl};
use curvspec::expr::{Env, Expression};
use curvspec::grid::{ConformalTorusState, PeriodicGrid, ScalarField};
use curvspec::mesh::{flat_torus_mesh, icosphere, load_eta_csv, load_mesh, MeshState};
use curvspec::{AverageMeasure, FlowParams, GeometryState};

use crate::outcome::Failure;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Defaults to the config file stem; names the output subdirectory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Output root; overridden by --out and CURVSPEC_OUT, and stripped from
    /// the resolved copy so identical scenarios re-serialize identically.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub state: StateConfig,
    pub flow: FlowConfig,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub tolerances: ToleranceSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<ExpectSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<HypothesesSection>,
}

/// One table per backend: `[state.sphere]`, `[state.torus]`, `[state.grid]`,
/// `[state.mesh]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateConfig {
    Sphere(SphereConfig),
    Torus(TorusConfig),
    Grid(GridConfig),
    Mesh(MeshConfig),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SphereConfig {
    pub dimension: u32,
    #[serde(default = "one")]
    pub radius_sq: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusConfig {
    pub periods: Vec<f64>,
    /// Sample counts per axis; required for expression or CSV drifts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sites: Option<Vec<usize>>,
    #[serde(default)]
    pub eta: EtaSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub size: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<[f64; 2]>,
    /// Conformal factor exponent as an expression of x, y; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<String>,
    #[serde(default)]
    pub eta: EtaSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    /// "icosphere", "flat_torus", or a path to an OFF/OBJ/JSON mesh.
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subdivisions: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub periods: Option<[f64; 2]>,
    /// Per-vertex log conformal factor as an expression of x, y, z.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<String>,
    #[serde(default)]
    pub eta: EtaSpec,
}

/// Drifting function specifier. `"zero"`, `{ constant = v }`,
/// `{ expression = "0.3*cos(x)" }`, or `{ csv = "eta.csv" }`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSpec {
    #[default]
    Zero,
    Constant(f64),
    Expression(String),
    Csv(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub a: f64,
    pub rho: f64,
    pub coupling: f64,
    /// Whether the average-curvature term acts in the flow (the r-mode).
    #[serde(default)]
    pub averaged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Fixed time step; mutually exclusive with auto_step_safety.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auto_step_safety: Option<f64>,
    #[serde(default = "default_eigenpairs")]
    pub eigenpairs: usize,
    #[serde(default = "default_measure")]
    pub measure: AverageMeasure,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_rel_gap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen_max_iterations: Option<usize>,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            horizon: default_horizon(),
            step: None,
            auto_step_safety: None,
            eigenpairs: default_eigenpairs(),
            measure: default_measure(),
            cluster_rel_gap: None,
            overlap_threshold: None,
            eigen_tol: None,
            eigen_max_iterations: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    /// Spectral and closed-form backends.
    Strict,
    /// Cotangent meshes: first-order curvature, percent-level rates.
    Mesh,
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::Strict => "strict",
            Tier::Mesh => "mesh",
        })
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
    /// Relative gate on rate-formula vs finite-difference residuals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    /// Relative gate on the scalar-curvature evolution residual.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curvature: Option<f64>,
    /// Relative gate on exact integral identities.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub identity: Option<f64>,
    /// Relative gate on finite-difference variation probes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation: Option<f64>,
    /// Relative gate on spectrum and eigenvalue-path expectations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<f64>,
}

/// Fully resolved gates: tier defaults with per-scenario overrides applied.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub tier: Tier,
    pub rate: f64,
    pub curvature: f64,
    pub identity: f64,
    pub variation: f64,
    pub spectrum: f64,
}

impl Tolerances {
    fn defaults(tier: Tier) -> Self {
        match tier {
            Tier::Strict => Tolerances {
                tier,
                rate: 1e-6,
                curvature: 1e-4,
                identity: 1e-8,
                variation: 1e-5,
                spectrum: 1e-6,
            },
            Tier::Mesh => Tolerances {
                tier,
                rate: 1e-2,
                curvature: 5e-2,
                identity: 1e-6,
                variation: 1e-3,
                spectrum: 1e-2,
            },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_band")]
    pub band: i64,
    #[serde(default = "default_scale")]
    pub scale: f64,
    /// Step for finite-difference variation probes.
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checks: Option<Vec<String>>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            seed: default_seed(),
            draws: default_draws(),
            band: default_band(),
            scale: default_scale(),
            delta: default_delta(),
            checks: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectSection {
    /// Reference eigenvalues for the lowest pairs, in ascending order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<Vec<f64>>,
    /// Closed-form eigenvalue path as an expression of t.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_path: Option<String>,
    /// Pair index the path refers to.
    #[serde(default)]
    pub lambda_pair: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesesSection {
    pub check: HypothesisKind,
    /// The theorem constant: a number, "minimal" (smallest feasible bound on
    /// the trajectory), or "initial_min" (min of R at t=0, minimum principle).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<BoundSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HypothesisKind {
    WittenMonotonicity,
    CoupledMonotonicity,
    ScalarMinimum,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundSpec {
    Value(f64),
    Named(String),
}

fn one() -> f64 {
    1.0
}
fn default_horizon() -> f64 {
    0.1
}
fn default_eigenpairs() -> usize {
    1
}
fn default_measure() -> AverageMeasure {
    AverageMeasure::Weighted
}
fn default_seed() -> u64 {
    7
}
fn default_draws() -> usize {
    5
}
fn default_band() -> i64 {
    4
}
fn default_scale() -> f64 {
    0.5
}
fn default_delta() -> f64 {
    1e-3
}

/// Command-line and environment overrides applied during resolution.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub env_out: Option<PathBuf>,
    pub tier: Option<Tier>,
    pub seed: Option<u64>,
}

/// A scenario ready to execute: normalized config, constructed state, and
/// every derived knob the commands need.
#[derive(Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub name: String,
    pub out_dir: PathBuf,
    pub state: GeometryState,
    pub params: FlowParams,
    pub settings: RunSettings,
    pub tolerances: Tolerances,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<Resolved, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| Failure::usage(format!("config error in {}: {e}", path.display())))?;
    let fallback = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into());
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    resolve(config, &fallback, base, overrides)
}

pub fn load_embedded(
    text: &str,
    name: &str,
    overrides: &Overrides,
) -> Result<Resolved, Failure> {
    let config: RunConfig = toml::from_str(text)
        .map_err(|e| Failure::usage(format!("config error in scenario {name}: {e}")))?;
    resolve(config, name, Path::new("."), overrides)
}

/// Normalizes the config (tier, seed, scenario name made concrete; out path
/// stripped) and builds the state, parameters, and run settings.
pub fn resolve(
    mut config: RunConfig,
    fallback_name: &str,
    base: &Path,
    overrides: &Overrides,
) -> Result<Resolved, Failure> {
    let name = config
        .scenario
        .clone()
        .unwrap_or_else(|| fallback_name.to_string());
    config.scenario = Some(name.clone());

    let out_root = overrides
        .out
        .clone()
        .or_else(|| overrides.env_out.clone())
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("runs"));
    config.out = None;
    let out_dir = out_root.join(&name);

    if let Some(tier) = overrides.tier {
        config.tolerances.tier = Some(tier);
    }
    if let Some(seed) = overrides.seed {
        config.verify.get_or_insert_with(VerifySection::default).seed = seed;
    }

    let state = build_state(&config.state, base)?;
    let tier = config.tolerances.tier.unwrap_or(match state {
        GeometryState::Mesh(_) => Tier::Mesh,
        _ => Tier::Strict,
    });
    config.tolerances.tier = Some(tier);
    let mut tolerances = Tolerances::defaults(tier);
    let t = &config.tolerances;
    for (slot, over) in [
        (&mut tolerances.rate, t.rate),
        (&mut tolerances.curvature, t.curvature),
        (&mut tolerances.identity, t.identity),
        (&mut tolerances.variation, t.variation),
        (&mut tolerances.spectrum, t.spectrum),
    ] {
        if let Some(v) = over {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Failure::usage("tolerances must be positive"));
            }
            *slot = v;
        }
    }

    let flow = &config.flow;
    let params = FlowParams::new(flow.a, flow.rho, flow.coupling, state.dim(), flow.averaged)
        .map_err(Failure::usage_from)?;
    let settings = build_settings(&config.run)?;

    Ok(Resolved {
        config,
        name,
        out_dir,
        state,
        params,
        settings,
        tolerances,
    })
}

fn build_settings(run: &RunSection) -> Result<RunSettings, Failure> {
    let step = match (run.step, run.auto_step_safety) {
        (Some(_), Some(_)) => {
            return Err(Failure::usage(
                "run.step and run.auto_step_safety are mutually exclusive",
            ))
        }
        (Some(dt), None) => StepControl::Fixed(dt),
        (None, Some(safety)) => StepControl::Auto { safety },
        (None, None) => StepControl::Auto { safety: 0.1 },
    };
    let defaults = RunSettings::default();
    let mut eigen = EigenOptions::default();
    if let Some(tol) = run.eigen_tol {
        eigen.tol = tol;
    }
    if let Some(iters) = run.eigen_max_iterations {
        eigen.max_iterations = iters;
    }
    Ok(RunSettings {
        horizon: run.horizon,
        step,
        eigenpairs: run.eigenpairs,
        measure: run.measure,
        eigen,
        cluster_rel_gap: run.cluster_rel_gap.unwrap_or(defaults.cluster_rel_gap),
        overlap_threshold: run.overlap_threshold.unwrap_or(defaults.overlap_threshold),
    })
}

fn build_state(state: &StateConfig, base: &Path) -> Result<GeometryState, Failure> {
    match state {
        StateConfig::Sphere(s) => {
            let sphere = SphereState::new(s.dimension, s.radius_sq).map_err(Failure::usage_from)?;
            Ok(GeometryState::Sphere(sphere))
        }
        StateConfig::Torus(t) => build_torus(t, base),
        StateConfig::Grid(g) => build_grid(g),
        StateConfig::Mesh(m) => build_mesh(m, base),
    }
}

fn build_torus(t: &TorusConfig, base: &Path) -> Result<GeometryState, Failure> {
    let drift = match &t.eta {
        EtaSpec::Zero => TorusDrift::Zero,
        EtaSpec::Constant(v) => TorusDrift::Constant(*v),
        EtaSpec::Expression(src) => {
            let sites = t.sites.clone().ok_or_else(|| {
                Failure::usage("torus eta expression needs state.torus.sites")
            })?;
            if sites.len() != t.periods.len() {
                return Err(Failure::usage("state.torus.sites must match the axis count"));
            }
            let expr = parse_expr(src)?;
            let values = sample_lattice(&expr, &sites, &t.periods)?;
            TorusDrift::Sampled(TorusLattice::new(sites, values).map_err(Failure::usage_from)?)
        }
        EtaSpec::Csv(path) => {
            let sites = t.sites.clone().ok_or_else(|| {
                Failure::usage("torus eta samples need state.torus.sites")
            })?;
            let expected: usize = sites.iter().product();
            let values = read_value_csv(&join(base, path), expected)?;
            TorusDrift::Sampled(TorusLattice::new(sites, values).map_err(Failure::usage_from)?)
        }
    };
    let torus = FlatTorusState::new(t.periods.clone(), drift).map_err(Failure::usage_from)?;
    Ok(GeometryState::FlatTorus(torus))
}

/// Lattice sites in the library's layout: the first axis varies fastest,
/// coordinates x, y, z run over [0, period) per axis.
fn sample_lattice(
    expr: &Expression,
    sites: &[usize],
    periods: &[f64],
) -> Result<Vec<f64>, Failure> {
    const AXES: [&str; 3] = ["x", "y", "z"];
    let total: usize = sites.iter().product();
    let mut env = Env::new();
    let mut values = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rest = flat;
        for (axis, (&m, &period)) in sites.iter().zip(periods).enumerate() {
            let idx = rest % m;
            rest /= m;
            env.set(AXES[axis], period * idx as f64 / m as f64);
        }
        values.push(expr.eval(&env).map_err(Failure::usage_from)?);
    }
    Ok(values)
}

fn build_grid(g: &GridConfig) -> Result<GeometryState, Failure> {
    let [nx, ny] = g.size;
    let [px, py] = g.periods.unwrap_or([TAU, TAU]);
    let grid = PeriodicGrid::new(nx, ny, px, py).map_err(Failure::usage_from)?;
    let w = match &g.w {
        None => ScalarField::zeros(grid),
        Some(src) => {
            ScalarField::from_expression(grid, &parse_expr(src)?, &Env::new())
                .map_err(Failure::usage_from)?
        }
    };
    let eta = match &g.eta {
        EtaSpec::Zero => ScalarField::zeros(grid),
        EtaSpec::Constant(v) => ScalarField::constant(grid, *v),
        EtaSpec::Expression(src) => {
            ScalarField::from_expression(grid, &parse_expr(src)?, &Env::new())
                .map_err(Failure::usage_from)?
        }
        EtaSpec::Csv(_) => {
            return Err(Failure::usage(
                "grid eta comes from an expression; per-site CSV is a mesh feature",
            ))
        }
    };
    let state = ConformalTorusState::new(w, eta).map_err(Failure::usage_from)?;
    Ok(GeometryState::ConformalTorus(state))
}

fn build_mesh(m: &MeshConfig, base: &Path) -> Result<GeometryState, Failure> {
    let mut mesh = match m.source.as_str() {
        "icosphere" => {
            let sub = m.subdivisions.unwrap_or(3);
            let radius = m.radius.unwrap_or(1.0);
            reject_mesh_keys(m, &["size", "periods"], "icosphere")?;
            icosphere(sub, radius).map_err(Failure::usage_from)?
        }
        "flat_torus" => {
            let [nx, ny] = m
                .size
                .ok_or_else(|| Failure::usage("flat_torus mesh needs state.mesh.size"))?;
            let [lx, ly] = m.periods.unwrap_or([TAU, TAU]);
            reject_mesh_keys(m, &["subdivisions", "radius"], "flat_torus")?;
            flat_torus_mesh(nx, ny, lx, ly).map_err(Failure::usage_from)?
        }
        path => {
            reject_mesh_keys(m, &["subdivisions", "radius", "size", "periods"], "a mesh file")?;
            load_mesh(join(base, Path::new(path))).map_err(Failure::usage_from)?
        }
    };
    if let Some(src) = &m.w {
        let values = sample_vertices(&mesh, &parse_expr(src)?)?;
        mesh = mesh.with_w(values).map_err(Failure::usage_from)?;
    }
    match &m.eta {
        EtaSpec::Zero => {}
        EtaSpec::Constant(v) => {
            let n = mesh.topology().n_vertices();
            mesh = mesh.with_eta(vec![*v; n]).map_err(Failure::usage_from)?;
        }
        EtaSpec::Expression(src) => {
            let values = sample_vertices(&mesh, &parse_expr(src)?)?;
            mesh = mesh.with_eta(values).map_err(Failure::usage_from)?;
        }
        EtaSpec::Csv(path) => {
            let values = load_eta_csv(join(base, path), mesh.topology().n_vertices())
                .map_err(Failure::usage_from)?;
            mesh = mesh.with_eta(values).map_err(Failure::usage_from)?;
        }
    }
    Ok(GeometryState::Mesh(mesh))
}

fn reject_mesh_keys(m: &MeshConfig, keys: &[&str], source: &str) -> Result<(), Failure> {
    let set: BTreeMap<&str, bool> = [
        ("subdivisions", m.subdivisions.is_some()),
        ("radius", m.radius.is_some()),
        ("size", m.size.is_some()),
        ("periods", m.periods.is_some()),
    ]
    .into_iter()
    .collect();
    for key in keys {
        if set.get(key).copied().unwrap_or(false) {
            return Err(Failure::usage(format!(
                "state.mesh.{key} does not apply to {source}"
            )));
        }
    }
    Ok(())
}

fn sample_vertices(mesh: &MeshState, expr: &Expression) -> Result<Vec<f64>, Failure> {
    let mut env = Env::new();
    mesh.positions()
        .iter()
        .map(|p| {
            env.set("x", p[0]);
            env.set("y", p[1]);
            env.set("z", p[2]);
            expr.eval(&env).map_err(Failure::usage_from)
        })
        .collect()
}

fn parse_expr(src: &str) -> Result<Expression, Failure> {
    Expression::parse(src).map_err(|e| Failure::usage(format!("in expression {src:?}: {e}")))
}

fn read_value_csv(path: &Path, expected: usize) -> Result<Vec<f64>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))?;
    let mut values = Vec::with_capacity(expected);
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Failure::usage(format!(
                    "{}:{}: not a number: {field:?}",
                    path.display(),
                    line_no + 1
                ))
            })?;
            values.push(v);
        }
    }
    if values.len() != expected {
        return Err(Failure::usage(format!(
            "{}: expected {expected} values, found {}",
            path.display(),
            values.len()
        )));
    }
    Ok(values)
}

fn join(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere_toml() -> &'static str {
        r#"
            [state.sphere]
            dimension = 3

            [flow]
            a = 1.0
            rho = 0.0
            coupling = 0.0
        "#
    }

    #[test]
    fn minimal_sphere_config_resolves() {
        let config: RunConfig = toml::from_str(sphere_toml()).unwrap();
        let resolved = resolve(config, "demo", Path::new("."), &Overrides::default()).unwrap();
        assert_eq!(resolved.name, "demo");
        assert_eq!(resolved.out_dir, PathBuf::from("runs/demo"));
        assert_eq!(resolved.tolerances.tier, Tier::Strict);
        assert_eq!(resolved.params.n, 3);
        assert!(matches!(resolved.state, GeometryState::Sphere(_)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{}\nhorizont = 0.1\n", sphere_toml());
        let err = toml::from_str::<RunConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("horizont"), "{err}");

        let bad = sphere_toml().replace("dimension = 3", "dimension = 3\nwobble = 1");
        let err = toml::from_str::<RunConfig>(&bad).unwrap_err().to_string();
        assert!(err.contains("wobble"), "{err}");
    }

    #[test]
    fn tier_defaults_follow_the_backend() {
        let mesh = r#"
            [state.mesh]
            source = "icosphere"
            subdivisions = 2

            [flow]
            a = 1.0
            rho = 0.0
            coupling = 0.0
        "#;
        let config: RunConfig = toml::from_str(mesh).unwrap();
        let resolved = resolve(config, "m", Path::new("."), &Overrides::default()).unwrap();
        assert_eq!(resolved.tolerances.tier, Tier::Mesh);
        assert_eq!(resolved.tolerances.rate, 1e-2);

        let config: RunConfig = toml::from_str(sphere_toml()).unwrap();
        let over = Overrides { tier: Some(Tier::Mesh), ..Overrides::default() };
        let resolved = resolve(config, "s", Path::new("."), &over).unwrap();
        assert_eq!(resolved.tolerances.tier, Tier::Mesh, "flag overrides the default");
    }

    #[test]
    fn step_and_auto_step_are_exclusive() {
        let bad = format!(
            "{}\n[run]\nstep = 1e-3\nauto_step_safety = 0.5\n",
            sphere_toml()
        );
        let config: RunConfig = toml::from_str(&bad).unwrap();
        let err = resolve(config, "x", Path::new("."), &Overrides::default()).unwrap_err();
        assert!(err.message().contains("mutually exclusive"));
    }

    #[test]
    fn sampled_torus_drift_from_expression() {
        let toml_src = r#"
            [state.torus]
            periods = [6.283185307179586, 6.283185307179586]
            sites = [8, 8]
            eta = { expression = "0.3*cos(x)" }

            [flow]
            a = 1.0
            rho = 0.0
            coupling = -0.1
        "#;
        let config: RunConfig = toml::from_str(toml_src).unwrap();
        let resolved = resolve(config, "t", Path::new("."), &Overrides::default()).unwrap();
        let GeometryState::FlatTorus(torus) = &resolved.state else {
            panic!("expected a flat torus");
        };
        let TorusDrift::Sampled(lattice) = torus.drift() else {
            panic!("expected sampled drift");
        };
        // first axis varies fastest: site 1 sits at x = 2π/8
        let want = 0.3 * (TAU / 8.0).cos();
        assert!((lattice.values()[1] - want).abs() < 1e-15);
        assert!((lattice.values()[8] - 0.3).abs() < 1e-15, "x wraps, second row restarts");
    }

    #[test]
    fn resolved_config_reserializes_without_out() {
        let config: RunConfig = toml::from_str(sphere_toml()).unwrap();
        let over = Overrides { out: Some(PathBuf::from("/tmp/elsewhere")), ..Default::default() };
        let resolved = resolve(config, "demo", Path::new("."), &over).unwrap();
        let text = toml::to_string_pretty(&resolved.config).unwrap();
        assert!(!text.contains("out"), "out path must not leak into the resolved config");
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.scenario.as_deref(), Some("demo"));
    }
}
