//! Cotan stiffness assembly and the generalized eigensolve on meshes.

use nalgebra::DMatrix;

use crate::eigen::{self, EigenOptions};
use crate::error::{CurvspecError, Result};
use crate::state::{AverageMeasure, EigenMode, EigenPair};

use super::{MeshState, MeshTopology};

/// Compressed sparse rows with a fixed, deterministic entry order.
#[derive(Debug, Clone)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Builds from triplets; duplicates are summed in sorted (row, col)
    /// order, so the result is independent of the input order.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Csr {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut rows = Vec::with_capacity(triplets.len());
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<f64> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            if rows.last() == Some(&r) && cols.last() == Some(&c) {
                *vals.last_mut().expect("nonempty") += v;
            } else {
                rows.push(r);
                cols.push(c);
                vals.push(v);
            }
        }
        let mut row_ptr = vec![0usize; n + 1];
        for &r in &rows {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.cols[k] == r {
                    d[r] = self.vals[k];
                }
            }
        }
        d
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n)
            .map(|r| self.vals[self.row_ptr[r]..self.row_ptr[r + 1]].iter().sum())
            .collect()
    }

    pub fn apply_vec(&self, x: &[f64], y: &mut [f64]) {
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            y[r] = acc;
        }
    }

    /// xᵀ·self·y with a fixed summation order.
    pub fn quadratic_form(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.n {
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.vals[k] * y[self.cols[k]];
            }
            acc += x[r] * row;
        }
        acc
    }
}

/// Cotan stiffness: K[i,j] = −½cot(angle opposite edge ij) summed over the
/// two incident faces, diagonal making row sums zero; optional per-face
/// weight multiplies each face contribution.
pub(super) fn assemble_cotan(
    topo: &MeshTopology,
    angles: &[[f64; 3]],
    face_weight: Option<&[f64]>,
) -> Csr {
    let mut triplets = Vec::with_capacity(topo.faces().len() * 12);
    for (fi, f) in topo.faces().iter().enumerate() {
        let scale = face_weight.map_or(1.0, |w| w[fi]);
        for k in 0..3 {
            let (i, j) = (f[(k + 1) % 3], f[(k + 2) % 3]);
            let w = 0.5 * scale / angles[fi][k].tan();
            triplets.push((i, i, w));
            triplets.push((j, j, w));
            triplets.push((i, j, -w));
            triplets.push((j, i, -w));
        }
    }
    Csr::from_triplets(topo.n_vertices(), triplets)
}

impl MeshState {
    /// Drift Laplacian applied pointwise: (Lf)_i ≈ −(M⁻¹Kf)_i with the
    /// η-weighted stiffness, so that ∫gLf dm = −∫⟨∇g,∇f⟩dm holds exactly
    /// in the discrete weak sense.
    pub fn apply_witten(&self, f: &[f64]) -> Result<Vec<f64>> {
        let geom = self.geometry()?;
        let mut out = vec![0.0; f.len()];
        geom.stiffness_eta.apply_vec(f, &mut out);
        for (o, m) in out.iter_mut().zip(&geom.mass) {
            *o = -*o / m;
        }
        Ok(out)
    }

    /// (L + cR)f pointwise.
    pub fn apply_operator(&self, f: &[f64], coupling: f64) -> Result<Vec<f64>> {
        let geom = self.geometry()?;
        let mut out = self.apply_witten(f)?;
        for ((o, &r), &x) in out.iter_mut().zip(&geom.scalar_curv).zip(f) {
            *o += coupling * r * x;
        }
        Ok(out)
    }

    /// Plain Laplace–Beltrami of a vertex field via the unweighted cotan
    /// operator: Δf ≈ −A⁻¹K₀f. Used for ΔR and Δη so that differential
    /// identities stay self-consistent with the rest of the discretization.
    pub fn laplace_beltrami(&self, f: &[f64]) -> Result<Vec<f64>> {
        let geom = self.geometry()?;
        let mut out = vec![0.0; f.len()];
        geom.stiffness_plain.apply_vec(f, &mut out);
        for (o, a) in out.iter_mut().zip(&geom.vertex_area) {
            *o = -*o / a;
        }
        Ok(out)
    }

    /// Lowest `count` eigenpairs of −𝕃 = −(L + cR) under ∫uv dm, ascending,
    /// normalized to ∫u²dm = 1. Returns the pairs and the raw vector block
    /// for warm starts.
    pub fn eigensolve_with_basis(
        &self,
        coupling: f64,
        count: usize,
        opts: &EigenOptions,
    ) -> Result<(Vec<EigenPair>, DMatrix<f64>)> {
        let geom = self.geometry()?;
        let n = self.topology().n_vertices();
        if count == 0 || count > opts.max_pairs {
            return Err(CurvspecError::Eigensolver(format!(
                "requested {count} pairs (limit {})",
                opts.max_pairs
            )));
        }
        let block = (count + (count / 2).max(2)).min(n / 3);
        if block < count {
            return Err(CurvspecError::Eigensolver(format!(
                "mesh with {n} vertices is too small for {count} pairs"
            )));
        }

        // A = K − c·diag(R_i m_i); the weak form of −𝕃 under dm.
        let potential: Vec<f64> = geom
            .scalar_curv
            .iter()
            .zip(&geom.mass)
            .map(|(&r, &m)| -coupling * r * m)
            .collect();
        let apply = |x: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(n, x.ncols());
            let mut buf = vec![0.0; n];
            for c in 0..x.ncols() {
                let col: Vec<f64> = x.column(c).iter().copied().collect();
                geom.stiffness_eta.apply_vec(&col, &mut buf);
                for r in 0..n {
                    out[(r, c)] = buf[r] + potential[r] * col[r];
                }
            }
            out
        };

        // Jacobi preconditioner on diag(K) + mass, kept positive.
        let diag: Vec<f64> = geom
            .stiffness_eta
            .diagonal()
            .iter()
            .zip(&geom.mass)
            .map(|(&k, &m)| (k + m).max(1e-300))
            .collect();
        let precond = |r: &DMatrix<f64>| {
            let mut out = r.clone();
            for c in 0..out.ncols() {
                for i in 0..n {
                    out[(i, c)] /= diag[i];
                }
            }
            out
        };

        let mut initial = DMatrix::zeros(n, block);
        let seeded = eigen::seeded_block(n, block, opts.seed);
        if let Some(warm) = &opts.warm_start {
            let reuse = warm.ncols().min(block);
            if warm.nrows() == n {
                initial.columns_mut(0, reuse).copy_from(&warm.columns(0, reuse));
            }
        }
        for c in 0..block {
            if initial.column(c).amax() == 0.0 {
                initial.set_column(c, &seeded.column(c));
            }
        }

        let solve = eigen::block_eigensolve(
            &apply,
            &geom.mass,
            &precond,
            initial,
            count,
            opts.tol,
            opts.max_iterations,
        )?;

        let mut pairs = Vec::with_capacity(count);
        for k in 0..count {
            let mut u: Vec<f64> = solve.vectors.column(k).iter().copied().collect();
            // deterministic sign: first coordinate above noise is positive
            let anchor = u
                .iter()
                .find(|x| x.abs() > 1e-8)
                .copied()
                .unwrap_or(1.0);
            if anchor < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            pairs.push(EigenPair {
                lambda: solve.values[k],
                multiplicity: 1,
                mode: EigenMode::Vertex(u),
            });
        }
        Ok((pairs, solve.vectors))
    }

    pub fn eigensolve(
        &self,
        coupling: f64,
        count: usize,
        opts: &EigenOptions,
    ) -> Result<Vec<EigenPair>> {
        Ok(self.eigensolve_with_basis(coupling, count, opts)?.0)
    }

    /// Residual of the pointwise eigen-equation −𝕃u = λu in the dm-weighted
    /// L² norm, a cheap self-check on a solved pair.
    pub fn eigen_residual(&self, pair: &EigenPair, coupling: f64) -> Result<f64> {
        let EigenMode::Vertex(u) = &pair.mode else {
            return Err(CurvspecError::mesh("eigenmode does not live on this mesh"));
        };
        let geom = self.geometry()?;
        let lu = self.apply_operator(u, coupling)?;
        let mut acc = 0.0;
        for ((&lui, &ui), &m) in lu.iter().zip(u).zip(&geom.mass) {
            let r = -lui - pair.lambda * ui;
            acc += r * r * m;
        }
        Ok(acc.sqrt())
    }

    /// ∫u² dm for a vertex field.
    pub fn norm_sq(&self, u: &[f64], measure: AverageMeasure) -> Result<f64> {
        let geom = self.geometry()?;
        let weights = match measure {
            AverageMeasure::Weighted => &geom.mass,
            AverageMeasure::Riemannian => &geom.vertex_area,
        };
        Ok(u.iter().zip(weights).map(|(&x, &m)| x * x * m).sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csr_merges_duplicates_and_keeps_row_sums() {
        let csr = Csr::from_triplets(
            3,
            vec![(0, 0, 1.0), (0, 1, 2.0), (0, 1, 3.0), (2, 2, 4.0), (1, 0, -1.0)],
        );
        let mut y = vec![0.0; 3];
        csr.apply_vec(&[1.0, 1.0, 1.0], &mut y);
        assert_eq!(y, vec![6.0, -1.0, 4.0]);
        assert_eq!(csr.row_sums(), vec![6.0, -1.0, 4.0]);
        assert_eq!(csr.diagonal(), vec![1.0, 0.0, 4.0]);
    }
}
