//! Flow parameters (a, ρ, c, n, r-mode) and the derived coefficients
//! φ = −a + nρ and ψ = a − 2(n−1)ρ used throughout the evolution formulas.

use serde::{Deserialize, Serialize};

use crate::error::{CurvspecError, Result};

/// Parameter quadruple of the unified flow ∂g/∂t = −2a·Ric + 2(ρR − (φ/n)r)g
/// together with the spectral coupling c of the operator 𝕃 = L + cR.
///
/// `use_average_term` toggles the r term of the flow ("r-mode"); φ and ψ are
/// derived once at construction and kept exact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowParams {
    pub a: f64,
    pub rho: f64,
    pub c: f64,
    pub n: u32,
    pub use_average_term: bool,
    phi: f64,
    psi: f64,
}

/// Named specializations of the unified flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlowClass {
    RicciBourguignon,
    NormalizedRicci,
    UnnormalizedRicci,
    NormalizedYamabe,
    GeneralFlow,
}

/// (φ, ψ) = (−a + nρ, a − 2(n−1)ρ). Rejects n < 2.
pub fn derive_coefficients(a: f64, rho: f64, n: u32) -> Result<(f64, f64)> {
    if n < 2 {
        return Err(CurvspecError::InvalidParams(format!(
            "dimension n must be at least 2, got {n}"
        )));
    }
    let nf = n as f64;
    Ok((-a + nf * rho, a - 2.0 * (nf - 1.0) * rho))
}

impl FlowParams {
    pub fn new(a: f64, rho: f64, c: f64, n: u32, use_average_term: bool) -> Result<Self> {
        if !(a.is_finite() && rho.is_finite() && c.is_finite()) {
            return Err(CurvspecError::InvalidParams(
                "a, rho, c must be finite".into(),
            ));
        }
        let (phi, psi) = derive_coefficients(a, rho, n)?;
        Ok(FlowParams { a, rho, c, n, use_average_term, phi, psi })
    }

    /// Ricci flow with the average term: the classical normalization.
    pub fn normalized_ricci(c: f64, n: u32) -> Self {
        FlowParams::new(1.0, 0.0, c, n, true).expect("valid by construction")
    }

    /// Ricci flow without the average term.
    pub fn unnormalized_ricci(c: f64, n: u32) -> Self {
        FlowParams::new(1.0, 0.0, c, n, false).expect("valid by construction")
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn psi(&self) -> f64 {
        self.psi
    }

    pub fn dim(&self) -> f64 {
        self.n as f64
    }

    /// 2cψ − φ, the coefficient whose positivity drives the monotonicity
    /// argument in flow G. Expands to a(1+2c) − ρ(4c(n−1)+n).
    pub fn coupling_coefficient(&self) -> f64 {
        2.0 * self.c * self.psi - self.phi
    }

    /// Threshold ρ* = a/(2(n−1)); flow F requires ρ ≤ ρ*, flow G ρ < ρ*.
    pub fn rho_threshold(&self) -> f64 {
        self.a / (2.0 * (self.dim() - 1.0))
    }
}

/// Pure function of (a, ρ, r-mode); the classically named flows, else GeneralFlow.
pub fn classify_flow(params: &FlowParams) -> FlowClass {
    let FlowParams { a, rho, use_average_term, .. } = *params;
    if a == 1.0 && rho == 0.0 {
        if use_average_term {
            FlowClass::NormalizedRicci
        } else {
            FlowClass::UnnormalizedRicci
        }
    } else if a == 1.0 && rho != 0.0 && !use_average_term {
        FlowClass::RicciBourguignon
    } else if a == 0.0 && rho == -0.5 && use_average_term {
        FlowClass::NormalizedYamabe
    } else {
        FlowClass::GeneralFlow
    }
}

/// Membership in flow F: a ≥ 0 and ρ ≤ a/(2(n−1)).
pub fn in_flow_f(params: &FlowParams) -> bool {
    params.a >= 0.0 && params.rho <= params.rho_threshold()
}

/// Membership in flow G: r-mode off, −1/4 < c < 0, a ≥ 0, ρ < a/(2(n−1)).
/// Note the strict ρ inequality, unlike flow F.
pub fn in_flow_g(params: &FlowParams) -> bool {
    !params.use_average_term
        && params.c > -0.25
        && params.c < 0.0
        && params.a >= 0.0
        && params.rho < params.rho_threshold()
}

/// Human-readable warning when parameters fall outside both proved-monotone
/// regimes; surfaced by the CLI, never fatal.
pub fn monotonicity_domain_warning(params: &FlowParams) -> Option<String> {
    if in_flow_f(params) || in_flow_g(params) {
        None
    } else {
        Some(format!(
            "params (a={}, rho={}, c={}) lie outside flows F and G; no monotonicity is guaranteed",
            params.a, params.rho, params.c
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn coefficients_match_defining_formulas() {
        assert_eq!(derive_coefficients(1.0, 0.0, 3).unwrap(), (-1.0, 1.0));
        assert_eq!(derive_coefficients(0.0, -0.5, 4).unwrap(), (-2.0, 3.0));
        assert_eq!(derive_coefficients(0.0, 0.0, 5).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dimension_below_two_is_rejected() {
        assert!(derive_coefficients(1.0, 0.0, 1).is_err());
        assert!(FlowParams::new(1.0, 0.0, 0.0, 0, true).is_err());
    }

    #[test]
    fn classification_of_named_flows() {
        let cases = [
            (1.0, 0.1, false, FlowClass::RicciBourguignon),
            (1.0, 0.0, true, FlowClass::NormalizedRicci),
            (1.0, 0.0, false, FlowClass::UnnormalizedRicci),
            (0.0, -0.5, true, FlowClass::NormalizedYamabe),
            (2.0, 1.0, true, FlowClass::GeneralFlow),
        ];
        for (a, rho, avg, expected) in cases {
            let p = FlowParams::new(a, rho, 0.0, 3, avg).unwrap();
            assert_eq!(classify_flow(&p), expected, "a={a}, rho={rho}, avg={avg}");
        }
    }

    #[test]
    fn flow_f_membership() {
        let p = |a, rho| FlowParams::new(a, rho, 0.0, 3, true).unwrap();
        assert!(in_flow_f(&p(1.0, 0.0)));
        assert!(!in_flow_f(&p(0.0, 0.5)));
        assert!(in_flow_f(&p(2.0, 0.5))); // 0.5 ≤ 2/4, boundary included
    }

    #[test]
    fn flow_g_membership() {
        let p = |c, avg| FlowParams::new(1.0, 0.0, c, 3, avg).unwrap();
        assert!(in_flow_g(&p(-0.1, false)));
        assert!(!in_flow_g(&p(0.1, false)), "c must be negative");
        assert!(!in_flow_g(&p(-0.1, true)), "average term must be off");
        // boundary ρ = a/(2(n−1)) is excluded for flow G
        let boundary = FlowParams::new(1.0, 0.25, -0.1, 3, false).unwrap();
        assert!(!in_flow_g(&boundary));
    }

    #[test]
    fn coupling_coefficient_expansion() {
        // 2cψ − φ = a(1+2c) − ρ(4c(n−1)+n)
        let p = FlowParams::new(1.3, -0.2, -0.15, 4, false).unwrap();
        let direct = 2.0 * p.c * p.psi() - p.phi();
        let expanded = p.a * (1.0 + 2.0 * p.c) - p.rho * (4.0 * p.c * 3.0 + 4.0);
        assert!((direct - expanded).abs() < 1e-15);
        assert!((p.coupling_coefficient() - direct).abs() == 0.0);
    }

    proptest! {
        // In flow G with n > 2 the coupling coefficient is strictly positive:
        // 2cψ − φ ≥ a(n−2)/(2(n−1)) > 0 at the ρ boundary, and grows as ρ decreases.
        #[test]
        fn coupling_positive_inside_flow_g(
            n in 3u32..=10,
            c in -0.249f64..-0.001,
            a in 0.0f64..5.0,
            slack in 1e-9f64..3.0,
        ) {
            let rho = a / (2.0 * (n as f64 - 1.0)) - slack;
            let p = FlowParams::new(a, rho, c, n, false).unwrap();
            prop_assume!(in_flow_g(&p));
            prop_assert!(p.coupling_coefficient() > 0.0);
        }

        #[test]
        fn classification_never_general_for_named_settings(avg in any::<bool>()) {
            for (a, rho) in [(1.0, 0.0), (0.0, -0.5)] {
                let p = FlowParams::new(a, rho, 0.0, 3, avg).unwrap();
                if (a, rho) == (1.0, 0.0) {
                    prop_assert_ne!(classify_flow(&p), FlowClass::GeneralFlow);
                } else if avg {
                    prop_assert_ne!(classify_flow(&p), FlowClass::GeneralFlow);
                }
            }
        }
    }
}
