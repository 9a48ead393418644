//! Seeded random test fields for the verify command.

use curvspec::grid::{PeriodicGrid, ScalarField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Band-limited field with uniform coefficients damped by 1/(1+|k|²):
/// smooth enough that spectral identities hold to roundoff, rough enough
/// to exercise every term.
pub fn band_limited(grid: PeriodicGrid, rng: &mut ChaCha8Rng, band: i64, scale: f64) -> ScalarField {
    let mut modes = Vec::new();
    for p in 0..=band {
        for q in -band..=band {
            if p == 0 && q <= 0 {
                continue;
            }
            let damp = scale / (1.0 + (p * p + q * q) as f64);
            let a = damp * (2.0 * rng.gen::<f64>() - 1.0);
            let b = damp * (2.0 * rng.gen::<f64>() - 1.0);
            modes.push((p as f64, q as f64, a, b));
        }
    }
    ScalarField::from_fn(grid, |x, y| {
        modes
            .iter()
            .map(|&(p, q, a, b)| {
                let phase = p * x + q * y;
                a * phase.cos() + b * phase.sin()
            })
            .sum()
    })
}
