//! Closed-form backends: round spheres and flat tori. Spectra, curvature, and
//! the integral terms are exact here, which is what the numeric backends are
//! checked against.

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{CurvspecError, Result};
use crate::grid::spectral::fft_line;
use crate::params::FlowParams;
use crate::state::{
    AverageMeasure, CurvatureBundle, EigenMode, EigenPair, IntegralTerms, Quantity,
};

/// Γ(m/2) for positive integer m, exact at integers and half-integers.
fn gamma_half(m: u64) -> f64 {
    if m % 2 == 0 {
        let mut acc = 1.0;
        for i in 1..(m / 2) {
            acc *= i as f64;
        }
        acc
    } else {
        // Γ(1/2 + k) = (2k)!·√π / (4^k·k!)
        let k = (m - 1) / 2;
        let mut acc = std::f64::consts::PI.sqrt();
        for i in 1..=k {
            acc *= (2 * i - 1) as f64 / 2.0;
        }
        acc
    }
}

/// Surface area of the unit n-sphere: 2π^{(n+1)/2}/Γ((n+1)/2).
fn unit_sphere_area(n: u32) -> f64 {
    let half_exp = (n as f64 + 1.0) / 2.0;
    2.0 * std::f64::consts::PI.powf(half_exp) / gamma_half(n as u64 + 1)
}

fn binomial(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Multiplicity of spherical-harmonic level k on Sⁿ:
/// (2k+n−1)/(k+n−1)·C(k+n−1,k), multiplied out so the division is exact.
fn harmonic_multiplicity(n: u32, k: u32) -> usize {
    if k == 0 {
        return 1;
    }
    let (n, k) = (n as u64, k as u64);
    ((2 * k + n - 1) as u128 * binomial(k + n - 1, k) / (k + n - 1) as u128) as usize
}

/// Round sphere Sⁿ of squared radius q with zero drift: R = n(n−1)/q and
/// Ric = (R/n)g, so every integral term has a closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereState {
    n: u32,
    radius_sq: f64,
}

impl SphereState {
    pub fn new(n: u32, radius_sq: f64) -> Result<Self> {
        if n < 2 {
            return Err(CurvspecError::InvalidParams(format!(
                "sphere dimension must be at least 2, got {n}"
            )));
        }
        if !(radius_sq > 0.0 && radius_sq.is_finite()) {
            return Err(CurvspecError::InvalidParams(format!(
                "sphere squared radius must be positive, got {radius_sq}"
            )));
        }
        Ok(SphereState { n, radius_sq })
    }

    pub fn dim(&self) -> u32 {
        self.n
    }

    pub fn radius_sq(&self) -> f64 {
        self.radius_sq
    }

    pub fn with_radius_sq(&self, radius_sq: f64) -> Result<Self> {
        SphereState::new(self.n, radius_sq)
    }

    pub fn scalar_curvature(&self) -> f64 {
        (self.n * (self.n - 1)) as f64 / self.radius_sq
    }

    pub fn curvature(&self, measure: AverageMeasure) -> CurvatureBundle {
        let r = self.scalar_curvature();
        let n = self.n as f64;
        CurvatureBundle {
            scalar: Quantity::Constant(r),
            ric_coeff: Quantity::Constant(r / n),
            ric_norm_sq: Quantity::Constant(r * r / n),
            average: r,
            measure,
        }
    }

    pub fn weighted_volume(&self) -> f64 {
        unit_sphere_area(self.n) * self.radius_sq.powf(self.n as f64 / 2.0)
    }

    /// dq/dt under the flow: 0 with the average term on (the sphere is a
    /// fixed point), 2(n−1)φ without it.
    pub fn radius_sq_rate(&self, params: &FlowParams) -> f64 {
        if params.use_average_term {
            0.0
        } else {
            2.0 * (self.n - 1) as f64 * params.phi()
        }
    }

    pub fn cfl_limit(&self, params: &FlowParams, safety: f64) -> f64 {
        safety * self.radius_sq / (2.0 * (self.n - 1) as f64 * params.phi().abs() + 1e-12)
    }

    /// Laplace eigenvalue of level k: k(k+n−1)/q.
    pub fn laplace_eigenvalue(&self, k: u32) -> f64 {
        (k as f64) * (k as f64 + self.n as f64 - 1.0) / self.radius_sq
    }

    /// λ of −𝕃 at level k: k(k+n−1)/q − cR.
    pub fn eigenvalue(&self, k: u32, c: f64) -> f64 {
        self.laplace_eigenvalue(k) - c * self.scalar_curvature()
    }

    pub fn eigensolve(&self, c: f64, count: usize) -> Result<Vec<EigenPair>> {
        let mut pairs = Vec::with_capacity(count);
        let mut k = 0u32;
        while pairs.len() < count {
            let mult = harmonic_multiplicity(self.n, k);
            let lambda = self.eigenvalue(k, c);
            for _ in 0..mult {
                if pairs.len() == count {
                    break;
                }
                pairs.push(EigenPair {
                    lambda,
                    multiplicity: mult,
                    mode: EigenMode::SphereLevel(k),
                });
            }
            k += 1;
        }
        Ok(pairs)
    }

    /// Exact Einstein reductions of the rate integrals at level k.
    pub fn integral_terms(&self, k: u32) -> IntegralTerms {
        let r = self.scalar_curvature();
        let n = self.n as f64;
        let lap = self.laplace_eigenvalue(k);
        IntegralTerms {
            norm_sq: 1.0,
            grad_sq: lap,
            u2_r: r,
            r_grad_sq: r * lap,
            ric_grad_grad: (r / n) * lap,
            ricsq_u2: r * r / n,
            r2_u2: r * r,
            u2_lap_r: 0.0,
            r_u2_lap_eta: 0.0,
            r_drift_diff_sq: r * lap,
            drift_grad_sq: 0.0,
            hess_eta_grad_grad: 0.0,
            drift_grad_u2: 0.0,
            hess_norm_sq: Some(lap * lap - (r / n) * lap),
        }
    }

    /// Closed-form eigenvalue rate at level k. With the average term the
    /// constant-curvature terms cancel identically; without it the general
    /// rate formula is evaluated with r = 0 through the Einstein reductions.
    pub fn rhs_closed_form(&self, k: u32, params: &FlowParams) -> f64 {
        let r = self.scalar_curvature();
        let n = self.n as f64;
        let c = params.c;
        let lambda = self.eigenvalue(k, c);
        let lap = lambda + c * r;
        let a = params.a;
        if params.use_average_term {
            -2.0 * a * lambda * r / n + 2.0 * a * (r / n) * lap - 2.0 * a * c * r * r / n
        } else {
            let phi = params.phi();
            let psi = params.psi();
            -lambda * phi * r + (phi - 2.0 * params.rho) * r * lap
                + 2.0 * a * (r / n) * lap
                - c * ((phi - 2.0 * params.rho) * r * r + 2.0 * a * r * r / n + psi * 0.0)
        }
    }
}

/// Sampled drift values on a rectangular lattice, x fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TorusLattice {
    shape: Vec<usize>,
    values: Vec<f64>,
}

impl TorusLattice {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(CurvspecError::InvalidParams(
                "sampled drift supports 1 to 3 axes".into(),
            ));
        }
        if shape.iter().any(|&m| m < 4 || m % 2 != 0) {
            return Err(CurvspecError::InvalidParams(
                "lattice axes must be even and at least 4".into(),
            ));
        }
        let total: usize = shape.iter().product();
        if values.len() != total {
            return Err(CurvspecError::InvalidParams(format!(
                "lattice needs {total} samples, got {}",
                values.len()
            )));
        }
        Ok(TorusLattice { shape, values })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// How the drifting function lives on a flat torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TorusDrift {
    Zero,
    Constant(f64),
    /// Per-site samples; supports the curvature and hypothesis side only.
    Sampled(TorusLattice),
}

/// Flat torus Πᵢ(ℝ/LᵢZ) with an optional drift. Curvature vanishes
/// identically, so the spectrum is the Fourier one whenever ∇η = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatTorusState {
    periods: Vec<f64>,
    drift: TorusDrift,
}

impl FlatTorusState {
    pub fn new(periods: Vec<f64>, drift: TorusDrift) -> Result<Self> {
        if periods.is_empty() || periods.len() > 3 {
            return Err(CurvspecError::InvalidParams(
                "flat torus supports 1 to 3 axes".into(),
            ));
        }
        if periods.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(CurvspecError::InvalidParams("periods must be positive".into()));
        }
        if let TorusDrift::Sampled(lattice) = &drift {
            if lattice.shape.len() != periods.len() {
                return Err(CurvspecError::InvalidParams(
                    "sampled drift axes must match the torus axes".into(),
                ));
            }
        }
        Ok(FlatTorusState { periods, drift })
    }

    pub fn square(period: f64) -> Result<Self> {
        FlatTorusState::new(vec![period, period], TorusDrift::Zero)
    }

    pub fn dim(&self) -> u32 {
        self.periods.len() as u32
    }

    pub fn periods(&self) -> &[f64] {
        &self.periods
    }

    pub fn drift(&self) -> &TorusDrift {
        &self.drift
    }

    pub fn curvature(&self, measure: AverageMeasure) -> CurvatureBundle {
        CurvatureBundle {
            scalar: Quantity::Constant(0.0),
            ric_coeff: Quantity::Constant(0.0),
            ric_norm_sq: Quantity::Constant(0.0),
            average: 0.0,
            measure,
        }
    }

    pub fn weighted_volume(&self) -> Result<f64> {
        let chart: f64 = self.periods.iter().product();
        Ok(match &self.drift {
            TorusDrift::Zero => chart,
            TorusDrift::Constant(eta) => chart * (-eta).exp(),
            TorusDrift::Sampled(lattice) => {
                let mean = lattice.values.iter().map(|&v| (-v).exp()).sum::<f64>()
                    / lattice.values.len() as f64;
                chart * mean
            }
        })
    }

    /// λ of the lattice mode k: Σ(2πkᵢ/Lᵢ)²; curvature vanishes so c drops out.
    pub fn mode_eigenvalue(&self, kvec: &[i64]) -> Result<f64> {
        if kvec.len() != self.periods.len() {
            return Err(CurvspecError::InvalidParams(
                "mode index length must match the torus axes".into(),
            ));
        }
        Ok(kvec
            .iter()
            .zip(&self.periods)
            .map(|(&k, &p)| {
                let w = std::f64::consts::TAU * k as f64 / p;
                w * w
            })
            .sum())
    }

    /// First `count` eigenvalues by exhaustive lattice enumeration below a
    /// growing cutoff, so no mode is skipped.
    pub fn eigensolve(&self, _c: f64, count: usize) -> Result<Vec<EigenPair>> {
        match &self.drift {
            TorusDrift::Zero | TorusDrift::Constant(_) => {}
            TorusDrift::Sampled(_) => {
                return Err(CurvspecError::Unsupported(
                    "sampled drift on the flat torus has no analytic spectrum; \
                     use it for hypothesis checks only"
                        .into(),
                ))
            }
        }
        let mut bound = 1.0
            + self
                .periods
                .iter()
                .map(|&p| (std::f64::consts::TAU / p).powi(2))
                .fold(f64::INFINITY, f64::min);
        loop {
            let mut modes: Vec<(f64, Vec<i64>)> = Vec::new();
            let ranges: Vec<i64> = self
                .periods
                .iter()
                .map(|&p| (bound.sqrt() * p / std::f64::consts::TAU).floor() as i64)
                .collect();
            let mut kvec = vec![0i64; self.periods.len()];
            enumerate_modes(&ranges, 0, &mut kvec, &mut |k| {
                let lambda = self.mode_eigenvalue(k).expect("lengths match");
                if lambda <= bound {
                    modes.push((lambda, k.to_vec()));
                }
            });
            if modes.len() >= count {
                modes.sort_by(|a, b| {
                    a.0.partial_cmp(&b.0).expect("finite").then_with(|| a.1.cmp(&b.1))
                });
                // group near-equal values to report multiplicities
                let mut pairs = Vec::with_capacity(count);
                let mut start = 0;
                while start < modes.len() && pairs.len() < count {
                    let mut end = start + 1;
                    let scale = modes[start].0.abs().max(1.0);
                    while end < modes.len() && (modes[end].0 - modes[start].0).abs() <= 1e-9 * scale
                    {
                        end += 1;
                    }
                    for entry in &modes[start..end] {
                        if pairs.len() == count {
                            break;
                        }
                        pairs.push(EigenPair {
                            lambda: entry.0,
                            multiplicity: end - start,
                            mode: EigenMode::TorusLevel(entry.1.clone()),
                        });
                    }
                    start = end;
                }
                return Ok(pairs);
            }
            bound *= 2.0;
        }
    }

    pub fn integral_terms(&self, kvec: &[i64]) -> Result<IntegralTerms> {
        match &self.drift {
            TorusDrift::Zero | TorusDrift::Constant(_) => {}
            TorusDrift::Sampled(_) => {
                return Err(CurvspecError::Unsupported(
                    "integral terms need an analytic eigenbasis; sampled drift has none".into(),
                ))
            }
        }
        let lap = self.mode_eigenvalue(kvec)?;
        Ok(IntegralTerms {
            norm_sq: 1.0,
            grad_sq: lap,
            hess_norm_sq: Some(lap * lap),
            ..IntegralTerms::default()
        })
    }

    /// Pointwise Δη. Constant drifts give zero; sampled drifts are
    /// differentiated spectrally on their lattice.
    pub fn laplacian_eta(&self) -> Result<Quantity> {
        match &self.drift {
            TorusDrift::Zero | TorusDrift::Constant(_) => Ok(Quantity::Constant(0.0)),
            TorusDrift::Sampled(lattice) => {
                Ok(Quantity::PerSite(lattice_laplacian(lattice, &self.periods)))
            }
        }
    }
}

fn enumerate_modes(
    ranges: &[i64],
    axis: usize,
    kvec: &mut Vec<i64>,
    visit: &mut impl FnMut(&[i64]),
) {
    if axis == ranges.len() {
        visit(kvec);
        return;
    }
    for k in -ranges[axis]..=ranges[axis] {
        kvec[axis] = k;
        enumerate_modes(ranges, axis + 1, kvec, visit);
    }
}

/// Spectral Laplacian of lattice samples: forward transform along every axis,
/// multiply by −|ω|², invert.
fn lattice_laplacian(lattice: &TorusLattice, periods: &[f64]) -> Vec<f64> {
    let shape = &lattice.shape;
    let total: usize = shape.iter().product();
    let mut data: Vec<Complex<f64>> =
        lattice.values.iter().map(|&v| Complex::new(v, 0.0)).collect();

    let mut strides = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &m in shape {
        strides.push(acc);
        acc *= m;
    }

    let transform = |data: &mut Vec<Complex<f64>>, forward: bool| {
        for (axis, &m) in shape.iter().enumerate() {
            let stride = strides[axis];
            let mut line = vec![Complex::new(0.0, 0.0); m];
            let lines = total / m;
            for l in 0..lines {
                // decompose l into (inner, outer) around this axis
                let inner = l % stride;
                let outer = l / stride;
                let base = outer * stride * m + inner;
                for t in 0..m {
                    line[t] = data[base + t * stride];
                }
                fft_line(&mut line, forward);
                for t in 0..m {
                    data[base + t * stride] = line[t];
                }
            }
        }
    };

    transform(&mut data, true);
    for flat in 0..total {
        let mut rest = flat;
        let mut omega_sq = 0.0;
        for (axis, &m) in shape.iter().enumerate() {
            let idx = rest % m;
            rest /= m;
            let signed = if idx <= m / 2 { idx as i64 } else { idx as i64 - m as i64 };
            let w = std::f64::consts::TAU * signed as f64 / periods[axis];
            omega_sq += w * w;
        }
        data[flat] *= -omega_sq;
    }
    transform(&mut data, false);
    let norm = 1.0 / total as f64;
    data.iter().map(|c| c.re * norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sphere_volumes_match_known_values() {
        let s2 = SphereState::new(2, 1.0).unwrap();
        assert_relative_eq!(s2.weighted_volume(), 4.0 * std::f64::consts::PI, epsilon = 1e-12);
        let s3 = SphereState::new(3, 1.0).unwrap();
        assert_relative_eq!(
            s3.weighted_volume(),
            2.0 * std::f64::consts::PI * std::f64::consts::PI,
            epsilon = 1e-12
        );
        let s3r = SphereState::new(3, 4.0).unwrap();
        // scaling q by 4 scales volume by q^{3/2} = 8
        assert_relative_eq!(s3r.weighted_volume(), 8.0 * s3.weighted_volume(), epsilon = 1e-9);
    }

    #[test]
    fn harmonic_multiplicities_on_low_spheres() {
        for k in 0..6u32 {
            let expect = if k == 0 { 1 } else { 2 * k as usize + 1 };
            assert_eq!(harmonic_multiplicity(2, k), expect, "S² level {k}");
            assert_eq!(harmonic_multiplicity(3, k), (k as usize + 1).pow(2), "S³ level {k}");
        }
        assert_eq!(harmonic_multiplicity(4, 2), 14);
    }

    #[test]
    fn sphere_spectrum_expands_multiplicities() {
        let s = SphereState::new(3, 1.0).unwrap();
        let pairs = s.eigensolve(0.0, 14).unwrap();
        let lambdas: Vec<f64> = pairs.iter().map(|p| p.lambda).collect();
        assert_eq!(&lambdas[..5], &[0.0, 3.0, 3.0, 3.0, 3.0]);
        assert!(lambdas[5..].iter().all(|&l| (l - 8.0).abs() < 1e-12));
        assert_eq!(pairs[1].multiplicity, 4);
        assert_eq!(pairs[5].multiplicity, 9);
    }

    #[test]
    fn curvature_coupling_shifts_the_spectrum() {
        let s = SphereState::new(3, 1.0).unwrap();
        // R = 6; λ_k = k(k+2) − 6c
        assert_relative_eq!(s.eigenvalue(1, 0.1), 3.0 - 0.6, epsilon = 1e-14);
    }

    #[test]
    fn closed_form_rate_matches_frozen_examples() {
        let ricci_unnormalized = FlowParams::new(1.0, 0.0, 0.0, 2, false).unwrap();
        let s2 = SphereState::new(2, 1.0).unwrap();
        assert_relative_eq!(s2.rhs_closed_form(1, &ricci_unnormalized), 4.0, epsilon = 1e-12);

        let params3 = FlowParams::new(1.0, 0.0, 0.0, 3, false).unwrap();
        let s3 = SphereState::new(3, 1.0).unwrap();
        assert_relative_eq!(s3.rhs_closed_form(1, &params3), 12.0, epsilon = 1e-12);

        let normalized = FlowParams::new(1.0, 0.0, 0.15, 3, true).unwrap();
        assert_relative_eq!(s3.rhs_closed_form(2, &normalized), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn radius_rate_matches_flow_mode() {
        let s3 = SphereState::new(3, 1.0).unwrap();
        let off = FlowParams::new(1.0, 0.0, 0.0, 3, false).unwrap();
        assert_relative_eq!(s3.radius_sq_rate(&off), -4.0, epsilon = 1e-14);
        let on = FlowParams::new(1.0, 0.0, 0.0, 3, true).unwrap();
        assert_eq!(s3.radius_sq_rate(&on), 0.0);
    }

    #[test]
    fn torus_prefix_and_multiplicities() {
        let t = FlatTorusState::square(std::f64::consts::TAU).unwrap();
        let pairs = t.eigensolve(0.0, 6).unwrap();
        let expected = [0.0, 1.0, 1.0, 1.0, 1.0, 2.0];
        for (pair, want) in pairs.iter().zip(expected) {
            assert_relative_eq!(pair.lambda, want, epsilon = 1e-12);
        }
        assert_eq!(pairs[0].multiplicity, 1);
        assert_eq!(pairs[1].multiplicity, 4);
        assert_eq!(pairs[5].multiplicity, 4);
    }

    #[test]
    fn anisotropic_torus_splits_levels() {
        let t = FlatTorusState::new(vec![std::f64::consts::TAU, std::f64::consts::PI], TorusDrift::Zero)
            .unwrap();
        let pairs = t.eigensolve(0.0, 4).unwrap();
        // x-modes at 1, y-modes at 4
        assert_relative_eq!(pairs[1].lambda, 1.0, epsilon = 1e-12);
        assert_eq!(pairs[1].multiplicity, 2);
        assert_relative_eq!(pairs[3].lambda, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn sampled_drift_laplacian_matches_closed_form() {
        let m = 16;
        let period = std::f64::consts::TAU;
        let mut values = Vec::with_capacity(m * m * m);
        for iz in 0..m {
            for iy in 0..m {
                for ix in 0..m {
                    let x = period * ix as f64 / m as f64;
                    let _ = (iy, iz);
                    values.push(0.3 * x.cos());
                }
            }
        }
        let lattice = TorusLattice::new(vec![m, m, m], values).unwrap();
        let t = FlatTorusState::new(vec![period; 3], TorusDrift::Sampled(lattice)).unwrap();
        let lap = t.laplacian_eta().unwrap();
        let per_site = lap.per_site().unwrap();
        for iz in 0..m {
            for iy in 0..m {
                for ix in 0..m {
                    let x = period * ix as f64 / m as f64;
                    let idx = (iz * m + iy) * m + ix;
                    assert_relative_eq!(per_site[idx], -0.3 * x.cos(), epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn sampled_drift_refuses_eigensolve() {
        let lattice = TorusLattice::new(vec![4, 4], vec![0.1; 16]).unwrap();
        let t = FlatTorusState::new(vec![1.0, 1.0], TorusDrift::Sampled(lattice)).unwrap();
        assert!(matches!(t.eigensolve(0.0, 3), Err(CurvspecError::Unsupported(_))));
    }
}
