//! Shared helpers for the integration suite: seeded band-limited fields and
//! an independent Fourier–Galerkin oracle for the drifted flat-torus
//! spectrum. The oracle deliberately avoids the library's FFT machinery:
//! weight coefficients come from direct 1-D summation and the generalized
//! eigenproblem is solved densely.

use curvspec::grid::{PeriodicGrid, ScalarField};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random trigonometric polynomial with modes |p|, |q| ≤ band and amplitudes
/// damped by 1/(1 + p² + q²); `scale` sets the overall size. Draws are fully
/// determined by the RNG state.
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

/// Lowest `count` eigenvalues of −L on the flat torus [0,2π)² with drift
/// η(x) = amp·cos x, where L = Δ − g(∇η,∇·) is self-adjoint in e^{−η}dM.
///
/// In the basis e^{i(px+qy)} the weak form block-diagonalizes over q:
/// ⟨∇e_p, ∇e_p'⟩ = (pp′ + q²)·ŵ(p−p′) and ⟨e_p, e_p'⟩ = ŵ(p−p′), with ŵ the
/// cosine coefficients of e^{−η}. Those coefficients decay factorially, so a
/// modest band resolves the low spectrum far beyond the comparison tolerance.
pub fn witten_cosine_drift_spectrum(amp: f64, band: i64, count: usize) -> Vec<f64> {
    let quad = 4096usize;
    let dim = (2 * band + 1) as usize;
    // ŵ(m) = (1/2π)∫ e^{−amp·cos x}·cos(mx) dx by the periodic trapezoid
    // rule, exact to machine precision for this analytic integrand.
    let mut weight = vec![0.0f64; 2 * band as usize + 1];
    for (m, w) in weight.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in 0..quad {
            let x = std::f64::consts::TAU * j as f64 / quad as f64;
            acc += (-amp * x.cos()).exp() * (m as f64 * x).cos();
        }
        *w = acc / quad as f64;
    }

    let mut eigenvalues = Vec::with_capacity(dim * dim);
    for q in -band..=band {
        let mut stiffness = DMatrix::zeros(dim, dim);
        let mut gram = DMatrix::zeros(dim, dim);
        for (i, p) in (-band..=band).enumerate() {
            for (j, pp) in (-band..=band).enumerate() {
                let w = weight[(p - pp).unsigned_abs() as usize];
                gram[(i, j)] = w;
                stiffness[(i, j)] = ((p * pp + q * q) as f64) * w;
            }
        }
        // A v = λ M v via M = LLᵀ and the symmetric reduction L⁻¹AL⁻ᵀ.
        let chol = gram.cholesky().expect("Gram matrix is positive definite");
        let l = chol.l();
        let half = l
            .solve_lower_triangular(&stiffness)
            .expect("nonsingular factor");
        let reduced = l
            .solve_lower_triangular(&half.transpose())
            .expect("nonsingular factor");
        // Symmetrize away the roundoff skew before the dense solve.
        let symmetric = (&reduced + reduced.transpose()) * 0.5;
        let eigen = SymmetricEigen::new(symmetric);
        eigenvalues.extend(eigen.eigenvalues.iter().copied());
    }
    eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eigenvalues.truncate(count);
    eigenvalues
}
