//! Runs the flow and writes the trajectory with its residual report. The
//! outputs land on disk even when a gate fails, so a red run can be
//! inspected; the exit code still reports the failure.

use curvspec::engine::{evolve, write_lambda_csv, Trajectory};
use curvspec::expr::{Env, Expression};
use curvspec::verifier::{verify_trajectory, write_rate_csv};
use serde_json::json;

use crate::config::Resolved;
use crate::outcome::Failure;
use crate::report::{self, write_json, write_text};

pub fn run(resolved: &Resolved) -> Result<String, Failure> {
    report::prepare_dir(resolved)?;
    let traj = evolve(resolved.state.clone(), &resolved.params, &resolved.settings)
        .map_err(Failure::compute_from)?;
    write_outputs(resolved, &traj)?;

    let mut summary = format!(
        "{}: {} slices to t = {:.4} ({} tier)",
        resolved.name,
        traj.slices.len(),
        traj.slices.last().map_or(0.0, |s| s.t),
        resolved.tolerances.tier
    );
    if !traj.warnings.is_empty() {
        summary.push_str(&format!(", {} warnings", traj.warnings.len()));
    }
    if let Some(reason) = &traj.aborted {
        return Err(Failure::numerical(format!("flow aborted: {reason}")));
    }

    if resolved.settings.eigenpairs > 0 && traj.slices.len() >= 3 {
        let rep = verify_trajectory(&traj).map_err(Failure::compute_from)?;
        let mut csv = Vec::new();
        write_rate_csv(&rep, &mut csv).map_err(Failure::compute_from)?;
        write_text(
            &resolved.out_dir.join("rates.csv"),
            std::str::from_utf8(&csv).expect("rate table is ascii"),
        )?;
        write_json(&resolved.out_dir.join("report.json"), &rep)?;

        let tol = &resolved.tolerances;
        if !rep.rates_pass(tol.rate) {
            return Err(Failure::residual(format!(
                "rate residuals exceed the gate: variation {:.3e}, unified {:.3e}, \
                 rewrite {:.3e} (tier {:.1e})",
                rep.worst_variation_residual(),
                rep.worst_unified_residual(),
                rep.worst_rewrite_residual(),
                tol.rate
            )));
        }
        let curv = rep.worst_curvature_residual();
        if curv > tol.curvature {
            return Err(Failure::residual(format!(
                "curvature evolution residual {curv:.3e} exceeds {:.1e}",
                tol.curvature
            )));
        }
        summary.push_str(&format!(
            ", worst rate residual {:.3e}, curvature {:.3e}",
            rep.worst_unified_residual()
                .max(rep.worst_variation_residual()),
            curv
        ));
    }

    if let Some(expect) = &resolved.config.expect {
        if let Some(path) = &expect.lambda_path {
            let worst = check_lambda_path(&traj, path, expect.lambda_pair)?;
            let tol = resolved.tolerances.spectrum;
            if worst > tol {
                return Err(Failure::residual(format!(
                    "lambda_{} deviates from {path:?} by {worst:.3e} (gate {tol:.1e})",
                    expect.lambda_pair
                )));
            }
            summary.push_str(&format!(", path residual {worst:.3e}"));
        }
    }
    Ok(summary)
}

fn write_outputs(resolved: &Resolved, traj: &Trajectory) -> Result<(), Failure> {
    let mut csv = Vec::new();
    write_lambda_csv(traj, &mut csv).map_err(Failure::compute_from)?;
    write_text(
        &resolved.out_dir.join("trajectory.csv"),
        std::str::from_utf8(&csv).expect("trajectory table is ascii"),
    )?;

    let slices: Vec<_> = traj
        .slices
        .iter()
        .map(|s| {
            json!({
                "t": s.t,
                "weighted_volume": s.weighted_volume,
                "r_average": s.bundle.average,
                "lambda": s.pairs.iter().map(|p| p.lambda).collect::<Vec<_>>(),
                "clusters": s.clusters,
                "overlaps": s.overlaps,
            })
        })
        .collect();
    let doc = json!({
        "params": traj.params,
        "dt": traj.dt,
        "aborted": traj.aborted,
        "warnings": traj.warnings,
        "slices": slices,
    });
    write_json(&resolved.out_dir.join("trajectory.json"), &doc)
}

fn check_lambda_path(traj: &Trajectory, path: &str, pair: usize) -> Result<f64, Failure> {
    let expr = Expression::parse(path)
        .map_err(|e| Failure::usage(format!("in expect.lambda_path: {e}")))?;
    let mut env = Env::new();
    let mut worst = 0.0f64;
    for slice in &traj.slices {
        if pair >= slice.pairs.len() {
            return Err(Failure::usage(format!(
                "expect.lambda_pair = {pair} but the run tracks {} pairs",
                slice.pairs.len()
            )));
        }
        env.set("t", slice.t);
        let want = expr.eval(&env).map_err(Failure::usage_from)?;
        worst = worst.max((slice.smooth_lambda(pair) - want).abs() / want.abs().max(1.0));
    }
    Ok(worst)
}
