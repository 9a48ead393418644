//! Identity checks over the configured state: exact integral identities on
//! seeded random fields, finite-difference variation probes, inequality
//! margins, and pinned spectrum expectations. Any failing row exits 3.

use curvspec::verifier::step_margins;
use curvspec::GeometryState;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Resolved, VerifySection};
use crate::fields::band_limited;
use crate::outcome::Failure;
use crate::report::{self, num, Csv};

/// Margins are signed values gated near zero rather than residuals gated by
/// a tier; roundoff alone must not flip them.
const MARGIN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Check {
    ProductRule,
    IntegrationByParts,
    SquareIntegral,
    Bochner,
    Reilly,
    EigenfunctionSquare,
    OperatorVariation,
    CurvatureVariation,
    StepMargins,
    Spectrum,
}

const ALL: [Check; 10] = [
    Check::ProductRule,
    Check::IntegrationByParts,
    Check::SquareIntegral,
    Check::Bochner,
    Check::Reilly,
    Check::EigenfunctionSquare,
    Check::OperatorVariation,
    Check::CurvatureVariation,
    Check::StepMargins,
    Check::Spectrum,
];

impl Check {
    fn name(self) -> &'static str {
        match self {
            Check::ProductRule => "product-rule",
            Check::IntegrationByParts => "integration-by-parts",
            Check::SquareIntegral => "square-integral",
            Check::Bochner => "bochner",
            Check::Reilly => "reilly",
            Check::EigenfunctionSquare => "eigenfunction-square",
            Check::OperatorVariation => "operator-variation",
            Check::CurvatureVariation => "curvature-variation",
            Check::StepMargins => "step-margins",
            Check::Spectrum => "spectrum",
        }
    }

    fn parse(token: &str) -> Option<Check> {
        ALL.into_iter().find(|c| c.name() == token)
    }

    fn grid_only(self) -> bool {
        !matches!(self, Check::StepMargins | Check::Spectrum)
    }
}

struct Row {
    check: &'static str,
    context: String,
    value: f64,
    threshold: f64,
    /// true: pass iff value <= threshold (residual); false: value >= threshold.
    upper: bool,
}

impl Row {
    fn passed(&self) -> bool {
        if self.upper {
            self.value <= self.threshold
        } else {
            self.value >= self.threshold
        }
    }
}

pub fn run(resolved: &Resolved, only: Option<&[String]>) -> Result<String, Failure> {
    let section = resolved.config.verify.clone().unwrap_or_default();
    let checks = select_checks(resolved, only, &section)?;
    report::prepare_dir(resolved)?;

    let mut rows = Vec::new();
    for &check in &checks {
        match check {
            Check::Spectrum => spectrum_rows(resolved, &mut rows)?,
            Check::StepMargins => margin_rows(resolved, &mut rows)?,
            grid_check => grid_rows(resolved, &section, grid_check, &mut rows)?,
        }
    }

    let mut csv = Csv::new(
        resolved.out_dir.join("identity_report.csv"),
        &["check", "context", "value", "threshold", "comparison", "passed"],
    );
    for row in &rows {
        csv.row(&[
            row.check.to_string(),
            row.context.clone(),
            num(row.value),
            num(row.threshold),
            if row.upper { "<=" } else { ">=" }.to_string(),
            row.passed().to_string(),
        ]);
    }
    csv.finish()?;

    let failed: Vec<&Row> = rows.iter().filter(|r| !r.passed()).collect();
    if !failed.is_empty() {
        let worst = failed
            .iter()
            .map(|r| format!("{} ({}): {:.3e}", r.check, r.context, r.value))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Failure::residual(format!(
            "{} of {} checks failed: {worst}",
            failed.len(),
            rows.len()
        )));
    }
    let worst_residual = rows
        .iter()
        .filter(|r| r.upper)
        .map(|r| r.value)
        .fold(0.0f64, f64::max);
    Ok(format!(
        "{}: {} checks passed ({}) under {} gates, worst residual {:.3e}",
        resolved.name,
        rows.len(),
        checks.iter().map(|c| c.name()).collect::<Vec<_>>().join(", "),
        resolved.tolerances.tier,
        worst_residual
    ))
}

fn select_checks(
    resolved: &Resolved,
    only: Option<&[String]>,
    section: &VerifySection,
) -> Result<Vec<Check>, Failure> {
    let requested: Option<Vec<Check>> = match (only, section.checks.as_deref()) {
        (Some(tokens), _) | (None, Some(tokens)) => {
            let mut out = Vec::new();
            for token in tokens {
                let token = token.trim();
                if token.is_empty() {
                    continue;
                }
                let check = Check::parse(token).ok_or_else(|| {
                    Failure::usage(format!(
                        "unknown check {token:?}; valid: {}",
                        ALL.map(|c| c.name()).join(", ")
                    ))
                })?;
                out.push(check);
            }
            Some(out)
        }
        (None, None) => None,
    };

    let grid = matches!(resolved.state, GeometryState::ConformalTorus(_));
    let has_reference = resolved
        .config
        .expect
        .as_ref()
        .is_some_and(|e| e.spectrum.is_some());
    let checks = match requested {
        Some(list) if list.is_empty() => {
            return Err(Failure::usage("empty check selection"));
        }
        Some(list) => list,
        None => {
            let mut defaults: Vec<Check> = if grid {
                ALL.into_iter()
                    .filter(|c| c.grid_only())
                    .collect()
            } else {
                vec![Check::StepMargins]
            };
            if has_reference {
                defaults.push(Check::Spectrum);
            }
            defaults
        }
    };

    for check in &checks {
        if check.grid_only() && !grid {
            return Err(Failure::usage(format!(
                "check {:?} needs the grid backend, state is {}",
                check.name(),
                resolved.state.label()
            )));
        }
        if *check == Check::Spectrum && !has_reference {
            return Err(Failure::usage(
                "check \"spectrum\" needs expect.spectrum reference values",
            ));
        }
    }
    Ok(checks)
}

fn spectrum_rows(resolved: &Resolved, rows: &mut Vec<Row>) -> Result<(), Failure> {
    let reference = resolved
        .config
        .expect
        .as_ref()
        .and_then(|e| e.spectrum.as_ref())
        .expect("selection guaranteed a reference");
    let pairs = resolved
        .state
        .eigensolve(resolved.params.c, reference.len(), &resolved.settings.eigen)
        .map_err(Failure::compute_from)?;
    for (k, (pair, &want)) in pairs.iter().zip(reference).enumerate() {
        rows.push(Row {
            check: Check::Spectrum.name(),
            context: format!("pair {k}"),
            value: (pair.lambda - want).abs() / want.abs().max(1.0),
            threshold: resolved.tolerances.spectrum,
            upper: true,
        });
    }
    Ok(())
}

/// Inequality margins of the rewritten rate bound, at bound constant 0: on
/// states with R >= 0 and the coupled parameter regime every margin is
/// nonnegative.
fn margin_rows(resolved: &Resolved, rows: &mut Vec<Row>) -> Result<(), Failure> {
    let count = resolved.settings.eigenpairs.max(1);
    let pairs = resolved
        .state
        .eigensolve(resolved.params.c, count, &resolved.settings.eigen)
        .map_err(Failure::compute_from)?;
    for (k, pair) in pairs.iter().enumerate() {
        let terms = resolved
            .state
            .integral_terms(pair, resolved.settings.measure)
            .map_err(Failure::compute_from)?;
        let margins = step_margins(pair.lambda, &terms, &resolved.params, 0.0);
        for (name, value) in margins.named() {
            rows.push(Row {
                check: Check::StepMargins.name(),
                context: format!("pair {k} {name}"),
                value,
                threshold: -MARGIN_TOL,
                upper: false,
            });
        }
    }
    Ok(())
}

fn grid_rows(
    resolved: &Resolved,
    section: &VerifySection,
    check: Check,
    rows: &mut Vec<Row>,
) -> Result<(), Failure> {
    let GeometryState::ConformalTorus(state) = &resolved.state else {
        unreachable!("selection rejected non-grid states");
    };
    let c = resolved.params.c;
    let tol = &resolved.tolerances;

    if check == Check::EigenfunctionSquare {
        let pairs = resolved
            .state
            .eigensolve(c, 2, &resolved.settings.eigen)
            .map_err(Failure::compute_from)?;
        for (k, pair) in pairs.iter().enumerate() {
            let curvspec::state::EigenMode::Field(u) = &pair.mode else {
                unreachable!("grid modes are per-site fields");
            };
            let res = state
                .check_eigenfunction_square(pair.lambda, u, c)
                .map_err(Failure::compute_from)?;
            rows.push(Row {
                check: check.name(),
                context: format!("pair {k}"),
                value: res.relative(),
                threshold: tol.identity,
                upper: true,
            });
        }
        return Ok(());
    }

    // Draw order is fixed (f1, f2, v per draw) so the fields a check sees
    // depend only on the seed and the draw index, not on the selection.
    let mut rng = ChaCha8Rng::seed_from_u64(section.seed);
    for draw in 0..section.draws {
        let f1 = band_limited(*state.grid(), &mut rng, section.band, section.scale);
        let f2 = band_limited(*state.grid(), &mut rng, section.band, section.scale);
        let v = band_limited(*state.grid(), &mut rng, section.band, section.scale);
        let (residual, gate) = match check {
            Check::ProductRule => (state.check_product_rule(&f1, &f2), tol.identity),
            Check::IntegrationByParts => {
                (state.check_integration_by_parts(&f1, &f2), tol.identity)
            }
            Check::SquareIntegral => (state.check_square_integral(&f1), tol.identity),
            Check::Bochner => (state.check_bochner(&f1, c), tol.identity),
            Check::Reilly => (state.check_reilly(&f1, c), tol.identity),
            Check::OperatorVariation => (
                state.check_operator_variation(&f1, &v, c, section.delta),
                tol.variation,
            ),
            Check::CurvatureVariation => {
                (state.check_curvature_variation(&v, section.delta), tol.variation)
            }
            _ => unreachable!("handled above"),
        };
        let residual = residual.map_err(Failure::compute_from)?;
        rows.push(Row {
            check: check.name(),
            context: format!("draw {draw}"),
            value: residual.relative(),
            threshold: gate,
            upper: true,
        });
    }
    Ok(())
}
