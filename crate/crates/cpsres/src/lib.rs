//! Analysis toolkit for coplanar-stripline (CPS) microwave resonator loss
//! experiments.
//!
//! The crate covers the full desk-side analysis chain for single-port
//! reflection measurements of superconducting resonators:
//!
//! * [`trace_fit`] — synthesize and fit complex reflection traces to the
//!   single-port resonance model, with photon-number calibration.
//! * [`tls_model`] — two-level-system loss fits in photon number and
//!   temperature, plus interface and quasiparticle upper bounds.
//! * [`field_solver`] — 2D electrostatics of the CPS cross-section:
//!   capacitance per unit length, interface participation ratios, and the
//!   relative capacitance shifts used by the oxide-regrowth model.
//! * [`inductance_solver`] — filament partial-inductance extraction for the
//!   two strips, kinetic-inductance fraction, and metal-thinning shifts.
//! * [`regrowth`] — Nb oxide regrowth stoichiometry, the forward
//!   frequency-shift model, thickness inversion, and metal-air loss-tangent
//!   extraction.
//! * [`loss_budget`] — intrinsic/extrinsic splitting, anomalous-skin-effect
//!   scalings, and the multi-interface loss-budget system with conditioning
//!   diagnostics.
//! * [`cli_io`] — configuration, CSV ingestion, and deterministic reports
//!   behind the `cpsres` command-line tool.

pub mod cli_io;
pub mod constants;
pub mod field_solver;
pub mod inductance_solver;
pub mod loss_budget;
pub mod optim;
pub mod regrowth;
pub mod tls_model;
pub mod trace_fit;

pub use field_solver::CpsGeometry;
