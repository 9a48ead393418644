//! Monotonicity and minimum-principle hypotheses over a trajectory. Exit 2
//! when a hypothesis fails; exit 3 in the far more interesting case that the
//! hypotheses hold but the observed conclusion does not.

use curvspec::engine::{evolve, write_lambda_csv, Trajectory};
use curvspec::verifier::{
    check_coupled_monotonicity, check_max_principle, check_witten_monotonicity,
    minimal_coupled_bound, minimal_witten_bound, HypothesisReport,
};

use crate::config::{BoundSpec, HypothesesSection, HypothesisKind, Resolved};
use crate::outcome::Failure;
use crate::report::{self, num, write_json, write_text, Csv};

pub fn run(resolved: &Resolved) -> Result<String, Failure> {
    let section = resolved
        .config
        .hypotheses
        .clone()
        .ok_or_else(|| Failure::usage("check-hypotheses needs a [hypotheses] table"))?;
    report::prepare_dir(resolved)?;

    let traj = evolve(resolved.state.clone(), &resolved.params, &resolved.settings)
        .map_err(Failure::compute_from)?;
    let mut csv = Vec::new();
    write_lambda_csv(&traj, &mut csv).map_err(Failure::compute_from)?;
    write_text(
        &resolved.out_dir.join("trajectory.csv"),
        std::str::from_utf8(&csv).expect("trajectory table is ascii"),
    )?;
    if let Some(reason) = &traj.aborted {
        return Err(Failure::numerical(format!("flow aborted: {reason}")));
    }

    let bound = resolve_bound(&section, &traj)?;
    let report = match section.check {
        HypothesisKind::WittenMonotonicity => check_witten_monotonicity(&traj, bound),
        HypothesisKind::CoupledMonotonicity => check_coupled_monotonicity(&traj, bound),
        HypothesisKind::ScalarMinimum => check_max_principle(&traj, bound),
    }
    .map_err(Failure::compute_from)?;
    write_report(resolved, &report)?;

    if !report.hypotheses_pass {
        let failing = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} (margin {:.3e})", c.name, c.margin))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Failure::hypothesis(format!(
            "{}: {failing}",
            report.theorem
        )));
    }
    if let Some(conclusion) = &report.conclusion {
        if !conclusion.passed {
            return Err(Failure::residual(format!(
                "{}: hypotheses hold but the conclusion fails, margin {:.3e} ({})",
                report.theorem, conclusion.margin, conclusion.detail
            )));
        }
    }
    let conclusion = report
        .conclusion
        .as_ref()
        .map(|c| format!(", conclusion margin {:.3e}", c.margin))
        .unwrap_or_default();
    Ok(format!(
        "{}: {} hypotheses hold at bound {:.6e}{conclusion}",
        resolved.name,
        report.checks.len(),
        bound,
    ))
}

fn resolve_bound(section: &HypothesesSection, traj: &Trajectory) -> Result<f64, Failure> {
    let named_default = match section.check {
        HypothesisKind::ScalarMinimum => "initial_min",
        _ => "minimal",
    };
    let name = match &section.bound {
        Some(BoundSpec::Value(v)) => return Ok(*v),
        Some(BoundSpec::Named(name)) => name.as_str(),
        None => named_default,
    };
    match (section.check, name) {
        (HypothesisKind::WittenMonotonicity, "minimal") => {
            minimal_witten_bound(traj).map_err(Failure::compute_from)
        }
        (HypothesisKind::CoupledMonotonicity, "minimal") => {
            minimal_coupled_bound(traj).map_err(Failure::compute_from)
        }
        (HypothesisKind::ScalarMinimum, "initial_min") => Ok(traj
            .slices
            .first()
            .ok_or_else(|| Failure::numerical("empty trajectory"))?
            .bundle
            .scalar
            .min()),
        (_, other) => Err(Failure::usage(format!(
            "bound {other:?} does not apply here; use a number or {named_default:?}"
        ))),
    }
}

fn write_report(resolved: &Resolved, report: &HypothesisReport) -> Result<(), Failure> {
    write_json(&resolved.out_dir.join("hypotheses.json"), report)?;
    let mut csv = Csv::new(
        resolved.out_dir.join("margins.csv"),
        &["check", "margin", "passed"],
    );
    for check in &report.checks {
        csv.row(&[check.name.to_string(), num(check.margin), check.passed.to_string()]);
    }
    if let Some(conclusion) = &report.conclusion {
        csv.row(&[
            "conclusion".to_string(),
            num(conclusion.margin),
            conclusion.passed.to_string(),
        ]);
    }
    csv.finish()
}
