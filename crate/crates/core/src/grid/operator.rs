//! Flux-form discretization of the weighted Dirichlet problem on the grid.
//!
//! The stiffness uses staggered spectral derivatives: fluxes live at cell
//! faces, so each line block is D_fᵀ·diag(κ at faces)·D_f, symmetric positive
//! semidefinite by construction and full-rank up to the constant mode. In two
//! dimensions the conformal factor drops out of the Dirichlet form, leaving
//! the face weight κ = e^{−η}; only the mass and the curvature potential see w.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;

use super::spectral;
use super::{ConformalTorusState, PeriodicGrid, ScalarField};
use crate::eigen::{self, EigenOptions};
use crate::error::{CurvspecError, Result};
use crate::state::{EigenMode, EigenPair};

/// Spectral derivative mapping n node values to derivatives at the n cell
/// faces (nodes shifted by half a step). Unlike the collocated first
/// derivative this keeps the Nyquist mode, so the flux form has no spurious
/// null directions.
fn staggered_derivative(n: usize, period: f64) -> DMatrix<f64> {
    let h = period / n as f64;
    let mut spec: Vec<Complex<f64>> = Vec::with_capacity(n);
    for s in 0..n {
        let signed = if s <= n / 2 { s as i64 } else { s as i64 - n as i64 };
        let omega = std::f64::consts::TAU * signed as f64 / period;
        spec.push(Complex::new(0.0, omega) * Complex::from_polar(1.0, omega * h * 0.5));
    }
    spectral::fft_line(&mut spec, false);
    let norm = 1.0 / n as f64;
    let col0: Vec<f64> = spec.iter().map(|c| c.re * norm).collect();
    // circulant: column j is column 0 shifted down by j
    DMatrix::from_fn(n, n, |k, j| col0[(k + n - j) % n])
}

/// Face-shift multipliers for resampling a smooth line to midpoints; the
/// Nyquist coefficient has no symmetric midpoint representative and is
/// dropped.
fn face_shift(n: usize, period: f64) -> Vec<Complex<f64>> {
    let h = period / n as f64;
    (0..n)
        .map(|s| {
            if s == n / 2 {
                Complex::new(0.0, 0.0)
            } else {
                let signed = if s < n / 2 { s as i64 } else { s as i64 - n as i64 };
                let omega = std::f64::consts::TAU * signed as f64 / period;
                Complex::from_polar(1.0, omega * h * 0.5)
            }
        })
        .collect()
}

fn resample_line(values: &[f64], mult: &[Complex<f64>]) -> Vec<f64> {
    let n = values.len();
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    spectral::fft_line(&mut buf, true);
    for (c, m) in buf.iter_mut().zip(mult) {
        *c *= m;
    }
    spectral::fft_line(&mut buf, false);
    let norm = 1.0 / n as f64;
    buf.iter().map(|c| c.re * norm).collect()
}

/// D_fᵀ·diag(weights)·D_f with the upper triangle mirrored onto the lower so
/// the result is symmetric to the bit.
fn line_block(d: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let mut scaled = d.clone();
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        row *= weights[k];
    }
    let mut block = d.transpose() * scaled;
    let n = block.nrows();
    for a in 0..n {
        for b in (a + 1)..n {
            block[(b, a)] = block[(a, b)];
        }
    }
    block
}

/// Discrete −𝕃 in weak form: x ↦ Kx − diag(c·R·mass)x against mass = dm cell
/// weights, assembled once per state.
pub struct AssembledOperator {
    grid: PeriodicGrid,
    blocks_x: Vec<DMatrix<f64>>,
    blocks_y: Vec<DMatrix<f64>>,
    potential: Vec<f64>,
    pub mass: Vec<f64>,
}

impl AssembledOperator {
    pub fn assemble(state: &ConformalTorusState, c: f64) -> Result<Self> {
        let geom = state.geometry()?;
        let grid = *state.grid();
        let (nx, ny) = (grid.nx, grid.ny);
        let cell = grid.cell();
        let dx = staggered_derivative(nx, grid.period_x);
        let dy = staggered_derivative(ny, grid.period_y);
        let shift_x = face_shift(nx, grid.period_x);
        let shift_y = face_shift(ny, grid.period_y);

        let mut blocks_x = Vec::with_capacity(ny);
        for iy in 0..ny {
            let row = &geom.em_eta[iy * nx..(iy + 1) * nx];
            let mut faces = resample_line(row, &shift_x);
            for f in &mut faces {
                if *f <= 0.0 {
                    return Err(CurvspecError::Unresolved(
                        "face weight e^{-eta} lost positivity under resampling".into(),
                    ));
                }
                *f *= cell;
            }
            blocks_x.push(line_block(&dx, &faces));
        }

        let mut blocks_y = Vec::with_capacity(nx);
        let mut column = vec![0.0; ny];
        for ix in 0..nx {
            for iy in 0..ny {
                column[iy] = geom.em_eta[iy * nx + ix];
            }
            let mut faces = resample_line(&column, &shift_y);
            for f in &mut faces {
                if *f <= 0.0 {
                    return Err(CurvspecError::Unresolved(
                        "face weight e^{-eta} lost positivity under resampling".into(),
                    ));
                }
                *f *= cell;
            }
            blocks_y.push(line_block(&dy, &faces));
        }

        let potential: Vec<f64> = (0..grid.len())
            .map(|i| -c * geom.scalar_curv[i] * geom.mass[i])
            .collect();
        Ok(AssembledOperator {
            grid,
            blocks_x,
            blocks_y,
            potential,
            mass: geom.mass.clone(),
        })
    }

    /// Applies the operator to a block of vectors (sites × columns).
    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for j in 0..x.ncols() {
            let col = x.column(j).into_owned();
            let f = DMatrix::from_column_slice(nx, ny, col.as_slice());
            let mut y = DMatrix::zeros(nx, ny);
            for iy in 0..ny {
                y.column_mut(iy).gemv(1.0, &self.blocks_x[iy], &f.column(iy), 1.0);
            }
            let ft = f.transpose();
            let mut yt = DMatrix::zeros(ny, nx);
            for ix in 0..nx {
                yt.column_mut(ix).gemv(1.0, &self.blocks_y[ix], &ft.column(ix), 1.0);
            }
            y += yt.transpose();
            let flat = y.as_slice();
            for i in 0..x.nrows() {
                out[(i, j)] = flat[i] + self.potential[i] * x[(i, j)];
            }
        }
        out
    }

    /// Dense reconstruction, for small verification problems only.
    pub fn dense(&self) -> DMatrix<f64> {
        let (nx, ny) = (self.grid.nx, self.grid.ny);
        let n = self.grid.len();
        let mut a = DMatrix::zeros(n, n);
        for iy in 0..ny {
            let block = &self.blocks_x[iy];
            for p in 0..nx {
                for q in 0..nx {
                    a[(iy * nx + p, iy * nx + q)] += block[(p, q)];
                }
            }
        }
        for ix in 0..nx {
            let block = &self.blocks_y[ix];
            for p in 0..ny {
                for q in 0..ny {
                    a[(p * nx + ix, q * nx + ix)] += block[(p, q)];
                }
            }
        }
        for i in 0..n {
            a[(i, i)] += self.potential[i];
        }
        a
    }
}

/// Fourier preconditioner: inverse of the flat-coefficient stiffness plus a
/// mean-mass shift, applied mode by mode.
struct FlatInverse {
    grid: PeriodicGrid,
    multipliers: Vec<f64>,
}

impl FlatInverse {
    fn build(op: &AssembledOperator, state: &ConformalTorusState) -> Result<Self> {
        let geom = state.geometry()?;
        let grid = op.grid;
        let n = grid.len() as f64;
        let kappa_mean = geom.em_eta.iter().sum::<f64>() / n;
        let mass_mean = op.mass.iter().sum::<f64>() / n;
        let cell = grid.cell();
        let mut multipliers = Vec::with_capacity(grid.len());
        for iy in 0..grid.ny {
            let sy = if iy <= grid.ny / 2 { iy as f64 } else { iy as f64 - grid.ny as f64 };
            let wy = std::f64::consts::TAU * sy / grid.period_y;
            for ix in 0..grid.nx {
                let sx = if ix <= grid.nx / 2 { ix as f64 } else { ix as f64 - grid.nx as f64 };
                let wx = std::f64::consts::TAU * sx / grid.period_x;
                multipliers.push(1.0 / (kappa_mean * cell * (wx * wx + wy * wy) + mass_mean));
            }
        }
        Ok(FlatInverse { grid, multipliers })
    }

    fn apply(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(r.nrows(), r.ncols());
        for j in 0..r.ncols() {
            let col = r.column(j).into_owned();
            let field = ScalarField::new(self.grid, col.as_slice().to_vec())
                .expect("column length matches grid");
            let mut spec = field.spectrum();
            spec.scale_modes(&self.multipliers);
            let smoothed = spec.into_field();
            for (i, &v) in smoothed.values().iter().enumerate() {
                out[(i, j)] = v;
            }
        }
        out
    }
}

/// Lowest eigenpairs of −𝕃 on the grid plus the converged basis for warm
/// starts. Eigenvectors are normalized in dm and sign-fixed at their first
/// significant site.
pub fn eigensolve_with_basis(
    state: &ConformalTorusState,
    c: f64,
    count: usize,
    opts: &EigenOptions,
) -> Result<(Vec<EigenPair>, DMatrix<f64>)> {
    if count == 0 {
        return Ok((Vec::new(), DMatrix::zeros(state.grid().len(), 0)));
    }
    if count > opts.max_pairs {
        return Err(CurvspecError::InvalidParams(format!(
            "requested {count} eigenpairs, cap is {}",
            opts.max_pairs
        )));
    }
    let op = AssembledOperator::assemble(state, c)?;
    let pre = FlatInverse::build(&op, state)?;
    let n = state.grid().len();
    let block = (count + (count / 2).max(2)).min(n / 3);
    if block < count {
        return Err(CurvspecError::InvalidParams(format!(
            "grid with {n} sites is too small for {count} eigenpairs"
        )));
    }

    let mut initial = eigen::seeded_block(n, block, opts.seed);
    if let Some(ws) = &opts.warm_start {
        let cols = ws.ncols().min(block);
        if ws.nrows() == n {
            initial.columns_mut(0, cols).copy_from(&ws.columns(0, cols));
        }
    }

    let solve = eigen::block_eigensolve(
        &|x| op.apply(x),
        &op.mass,
        &|r| pre.apply(r),
        initial,
        count,
        opts.tol,
        opts.max_iterations,
    )?;

    let mut basis = solve.vectors;
    let mut pairs = Vec::with_capacity(count);
    for j in 0..count {
        let column = basis.column(j);
        let sup = column.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let leader = column.iter().find(|v| v.abs() > 1e-8 * sup).copied();
        if matches!(leader, Some(v) if v < 0.0) {
            basis.column_mut(j).neg_mut();
        }
        let u = ScalarField::new(*state.grid(), basis.column(j).as_slice().to_vec())?;
        pairs.push(EigenPair {
            lambda: solve.values[j],
            multiplicity: 1,
            mode: EigenMode::Field(u),
        });
    }
    Ok((pairs, basis))
}

pub fn eigensolve(
    state: &ConformalTorusState,
    c: f64,
    count: usize,
    opts: &EigenOptions,
) -> Result<Vec<EigenPair>> {
    Ok(eigensolve_with_basis(state, c, count, opts)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::AverageMeasure;
    use approx::assert_relative_eq;

    fn curved_state(n: usize) -> ConformalTorusState {
        let g = PeriodicGrid::square(n).unwrap();
        let w = ScalarField::from_fn(g, |x, y| 0.12 * x.cos() + 0.08 * (y + 0.2).sin());
        let eta = ScalarField::from_fn(g, |x, y| 0.3 * (x + y).cos());
        ConformalTorusState::new(w, eta).unwrap()
    }

    #[test]
    fn staggered_derivative_is_exact_on_low_modes() {
        let n = 16;
        let period = std::f64::consts::TAU;
        let d = staggered_derivative(n, period);
        let h = period / n as f64;
        let vals = nalgebra::DVector::from_fn(n, |j, _| (2.0 * (j as f64) * h).sin());
        let deriv = &d * &vals;
        for k in 0..n {
            let x = (k as f64 + 0.5) * h;
            assert_relative_eq!(deriv[k], 2.0 * (2.0 * x).cos(), epsilon = 1e-12);
        }
    }

    #[test]
    fn assembled_matrix_is_bitwise_symmetric() {
        let op = AssembledOperator::assemble(&curved_state(16), 0.3).unwrap();
        let dense = op.dense();
        for p in 0..dense.nrows() {
            for q in (p + 1)..dense.ncols() {
                assert_eq!(
                    dense[(p, q)].to_bits(),
                    dense[(q, p)].to_bits(),
                    "asymmetry at ({p},{q})"
                );
            }
        }
    }

    #[test]
    fn quadratic_form_matches_spectral_integrals() {
        let state = curved_state(32);
        let c = 0.2;
        let op = AssembledOperator::assemble(&state, c).unwrap();
        let g = *state.grid();
        let u = ScalarField::from_fn(g, |x, y| (x - 0.4).sin() + 0.5 * (x + 2.0 * y).cos());
        let x = DMatrix::from_column_slice(g.len(), 1, u.values());
        let quad = (x.transpose() * op.apply(&x))[(0, 0)];

        let grad = state.integrate_dm(state.grad_norm_sq(&u).unwrap().values()).unwrap();
        let bundle = state.curvature(AverageMeasure::Weighted).unwrap();
        let r = bundle.scalar.per_site().unwrap();
        let ru2: Vec<f64> = u.values().iter().zip(r).map(|(&v, &rr)| rr * v * v).collect();
        let pot = state.integrate_dm(&ru2).unwrap();
        assert_relative_eq!(quad, grad - c * pot, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn flat_torus_spectrum_prefix() {
        let g = PeriodicGrid::square(16).unwrap();
        let state = ConformalTorusState::flat(g);
        let pairs = eigensolve(&state, 0.0, 6, &EigenOptions::default()).unwrap();
        let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        for (pair, want) in pairs.iter().zip(expected) {
            assert!(
                (pair.lambda - want).abs() < 1e-8,
                "got {} want {want}",
                pair.lambda
            );
        }
    }

    #[test]
    fn eigensolve_is_deterministic() {
        let state = curved_state(16);
        let a = eigensolve(&state, 0.1, 4, &EigenOptions::default()).unwrap();
        let b = eigensolve(&state, 0.1, 4, &EigenOptions::default()).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            assert_eq!(pa.lambda.to_bits(), pb.lambda.to_bits());
            match (&pa.mode, &pb.mode) {
                (EigenMode::Field(ua), EigenMode::Field(ub)) => {
                    for (x, y) in ua.values().iter().zip(ub.values()) {
                        assert_eq!(x.to_bits(), y.to_bits());
                    }
                }
                _ => panic!("grid modes are fields"),
            }
        }
    }

    #[test]
    fn warm_start_restarts_converged() {
        let state = curved_state(16);
        let (pairs, basis) = eigensolve_with_basis(&state, 0.1, 4, &EigenOptions::default())
            .unwrap();
        let opts = EigenOptions { warm_start: Some(basis), ..EigenOptions::default() };
        let again = eigensolve(&state, 0.1, 4, &opts).unwrap();
        for (pa, pb) in pairs.iter().zip(&again) {
            assert_relative_eq!(pa.lambda, pb.lambda, epsilon = 1e-10);
        }
    }

    #[test]
    fn eigenvectors_are_normalized_in_dm() {
        let state = curved_state(16);
        let pairs = eigensolve(&state, 0.0, 3, &EigenOptions::default()).unwrap();
        for pair in &pairs {
            let EigenMode::Field(u) = &pair.mode else { panic!("grid modes are fields") };
            let sq: Vec<f64> = u.values().iter().map(|&v| v * v).collect();
            assert_relative_eq!(state.integrate_dm(&sq).unwrap(), 1.0, epsilon = 1e-9);
        }
    }
}
