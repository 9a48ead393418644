//! Lowest eigenpairs of the initial state, written as spectrum.csv and
//! optionally gated against pinned reference values.

use curvspec::engine::cluster_pairs;

use crate::config::Resolved;
use crate::outcome::Failure;
use crate::report::{self, num, Csv};

pub fn run(resolved: &Resolved) -> Result<String, Failure> {
    let count = resolved.settings.eigenpairs;
    if count == 0 {
        return Err(Failure::usage("spectrum needs run.eigenpairs >= 1"));
    }
    report::prepare_dir(resolved)?;

    let pairs = resolved
        .state
        .eigensolve(resolved.params.c, count, &resolved.settings.eigen)
        .map_err(Failure::compute_from)?;
    let clusters = cluster_pairs(&pairs, resolved.settings.cluster_rel_gap);

    let mut csv = Csv::new(
        resolved.out_dir.join("spectrum.csv"),
        &["k", "lambda", "multiplicity", "cluster", "cluster_mean"],
    );
    for (idx, cluster) in clusters.iter().enumerate() {
        for k in cluster.first..cluster.first + cluster.len {
            csv.row(&[
                k.to_string(),
                num(pairs[k].lambda),
                pairs[k].multiplicity.to_string(),
                idx.to_string(),
                num(cluster.mean),
            ]);
        }
    }
    csv.finish()?;

    let mut summary = format!(
        "{}: solved {} pairs in {} clusters, lambda_0 = {:.6e}",
        resolved.name,
        pairs.len(),
        clusters.len(),
        pairs[0].lambda
    );
    if let Some(reference) = resolved
        .config
        .expect
        .as_ref()
        .and_then(|e| e.spectrum.as_ref())
    {
        let worst = compare_spectrum(&pairs, reference)?;
        let tol = resolved.tolerances.spectrum;
        if worst > tol {
            return Err(Failure::residual(format!(
                "spectrum deviates from the reference by {worst:.3e} (gate {tol:.1e})"
            )));
        }
        summary.push_str(&format!(", reference residual {worst:.3e} <= {tol:.1e}"));
    }
    Ok(summary)
}

pub fn compare_spectrum(
    pairs: &[curvspec::EigenPair],
    reference: &[f64],
) -> Result<f64, Failure> {
    if reference.len() > pairs.len() {
        return Err(Failure::usage(format!(
            "expect.spectrum lists {} values but only {} pairs were solved",
            reference.len(),
            pairs.len()
        )));
    }
    let mut worst = 0.0f64;
    for (pair, &want) in pairs.iter().zip(reference) {
        worst = worst.max((pair.lambda - want).abs() / want.abs().max(1.0));
    }
    Ok(worst)
}
