//! curvspec: a numerical laboratory for the spectrum of drift Laplacians on
//! closed manifolds whose metric evolves by an intrinsic curvature flow
//!
//!     ∂g/∂t = −2a·Ric + 2(ρR − (φ/n)·r)·g,     φ = −a + nρ
//!
//! where `r` is the (optionally measure-weighted) average of the scalar
//! curvature R.  The operator of interest is −𝕃 with 𝕃 = Δ − g(∇η, ∇·) + cR,
//! self-adjoint in the weighted measure dm = e^{−η} dM.
//!
//! Four geometric backends share one interface:
//! * round spheres and flat tori with closed-form curvature and spectra,
//! * a conformally flat 2-torus discretized spectrally on a periodic grid,
//! * closed triangle meshes carrying intrinsic (conformally scaled) lengths.
//!
//! The crate is split into the flow-parameter algebra ([`params`]), the
//! backends ([`analytic`], [`grid`], [`mesh`]), a shared block eigensolver
//! ([`eigen`]), the time-stepping engine with eigenvalue continuation
//! ([`engine`]), and the identity / monotonicity verifier ([`verifier`]).
//! All floating-point reductions use a fixed summation order, so equal
//! configurations reproduce equal bytes.

pub mod analytic;
pub mod engine;
pub mod eigen;
pub mod error;
pub mod expr;
pub mod grid;
pub mod mesh;
pub mod params;
pub mod state;
pub mod verifier;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use error::{CurvspecError, Result};
pub use params::{FlowClass, FlowParams};
pub use state::{AverageMeasure, CurvatureBundle, EigenPair, GeometryState, IntegralTerms, Quantity};
